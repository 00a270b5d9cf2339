#include "mmfusion/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <type_traits>

#include "CLI11.hpp"
#include "mmfusion/synth.hpp"
#include "mmfusion/train.hpp"
#include "mmfusion/verify.hpp"

namespace mmf::cli {

namespace {

namespace fs = std::filesystem;

// Calls fn.template operator()<T>() for the runtime precision.
template <class Fn>
decltype(auto) with_precision(Precision p, Fn&& fn) {
  if (p == Precision::F32) return fn(std::type_identity<float>{});
  return fn(std::type_identity<double>{});
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os || !(os << text)) throw IoError("cannot write " + path.string());
}

struct CommonTrainFlags {
  std::string manifest;
  std::string config_path;
  std::string task;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string precision;
  std::vector<std::string> overrides;

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) cfg.apply(read_key_value_file(config_path));
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!task.empty()) cfg.task = parse_task(task);
    if (seed) cfg.seed = *seed;
    if (epochs) cfg.epochs = *epochs;
    if (!precision.empty()) cfg.precision = parse_precision(precision);
    return cfg;
  }

  void attach(CLI::App* sub) {
    sub->add_option("--manifest", manifest, "Corpus manifest CSV")->required();
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--seed", seed, "Random seed (overrides config)");
    sub->add_option("--epochs", epochs, "Epoch count (overrides config)");
    sub->add_option("--precision", precision, "32 or 64 (overrides config)");
    sub->add_option("--set", overrides, "Extra key=value config overrides");
  }
};

struct TrainOutcome {
  Metrics validation;
  std::size_t params = 0;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

TrainOutcome train_and_save(const TrainConfig& cfg, const std::vector<ProcessedSample>& corpus,
                            const fs::path& out_dir, std::ostream& log) {
  return with_precision(cfg.precision, [&]<class T>(std::type_identity<T>) {
    const auto start = std::chrono::steady_clock::now();
    auto result = run_training<T>(corpus, cfg, &log);
    TrainOutcome o;
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.validation = result.best_validation;
    o.params = parameter_count(result.model).total;
    o.best_epoch = result.best_epoch;
    ensure_dir(out_dir);
    save_checkpoint(out_dir / "checkpoint.bin", result.model,
                    preprocessing_extras(cfg, result.standardizer));
    write_history_csv(out_dir / "history.csv", result.history);
    write_text(out_dir / "metrics.json",
               metrics_json(cfg.task, cfg.topology, Split::Validation, o.validation).dump() + "\n");
    return o;
  });
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  auto kv = read_key_value_file(spec_path);
  if (seed) kv["seed"] = std::to_string(*seed);
  const auto spec = SynthSpec::from_key_values(kv);
  const auto manifest = synth_generate(spec, out_dir);
  err << "wrote " << spec.n_samples << " samples to " << out_dir << "\n";
  out << manifest.string() << "\n";
  return kOk;
}

int cmd_train(const CommonTrainFlags& flags, const std::string& topology, const std::string& out_dir,
              std::ostream& out, std::ostream& err) {
  auto cfg = flags.resolve();
  if (!topology.empty()) cfg.topology = parse_topology(topology);
  cfg.validate();
  const auto corpus = load_corpus(flags.manifest, cfg.task, cfg.features, cfg.window_seconds, &err);
  const auto o = train_and_save(cfg, corpus, out_dir, err);
  err << "best epoch " << o.best_epoch << ", validation " << o.validation.name << " "
      << o.validation.value << " (" << o.params << " parameters, " << o.seconds << " s)\n";
  out << metrics_json(cfg.task, cfg.topology, Split::Validation, o.validation).dump() << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split,
             std::ostream& out, std::ostream& err) {
  const auto info = peek_checkpoint(checkpoint);
  const auto& ex = info.extras;
  FeatureDims dims;
  dims.face = ex.value("face_features", kFaceFeatures);
  dims.pose = ex.value("pose_features", kPoseFeatures);
  const double window = ex.value("window_seconds", 3.0);
  auto corpus = load_corpus(manifest, info.task, dims, window, &err);
  const auto st = standardizer_from_extras(ex);
  for (auto& s : corpus) st.apply(s);
  const Split sp = parse_split(split);
  const auto m = with_precision(info.precision, [&]<class T>(std::type_identity<T>) {
    const auto model = load_checkpoint<T>(checkpoint);
    return evaluate_metrics(model, corpus, sp);
  });
  out << metrics_json(info.task, info.topology, sp, m).dump() << "\n";
  return kOk;
}

int cmd_gradcheck(const std::string& topology, bool all, const std::string& task,
                  std::uint64_t seed, std::ostream& out, std::ostream& err) {
  std::vector<Topology> targets;
  if (all || topology.empty())
    targets.assign(kAllTopologies.begin(), kAllTopologies.end());
  else
    targets.push_back(parse_topology(topology));
  const Task t = parse_task(task);
  bool ok = true;
  for (const auto topo : targets) {
    const auto start = std::chrono::steady_clock::now();
    const auto report = topology_gradcheck(topo, t, seed);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ok = ok && report.passed;
    out << (report.passed ? "PASS " : "FAIL ") << topology_name(topo)
        << " max_rel_error=" << std::scientific << std::setprecision(3) << report.max_rel_error
        << std::defaultfloat << "\n";
    if (!report.failure.empty()) err << topology_name(topo) << ": " << report.failure << "\n";
    err << topology_name(topo) << ": " << report.params.size() << " tensors checked in " << secs
        << " s\n";
  }
  return ok ? kOk : kGradcheckFailed;
}

int cmd_sweep(const CommonTrainFlags& flags, const std::string& out_dir, std::size_t jobs,
              std::ostream& out, std::ostream& err) {
  const auto base = flags.resolve();
  const auto corpus =
      load_corpus(flags.manifest, base.task, base.features, base.window_seconds, &err);
  ensure_dir(out_dir);

  std::vector<TrainOutcome> results(kAllTopologies.size());
  std::vector<std::exception_ptr> errors(kAllTopologies.size());
  std::mutex log_mutex;
  auto run_one = [&](std::size_t i) {
    try {
      auto cfg = base;
      cfg.topology = kAllTopologies[i];
      cfg.validate();
      std::ostringstream log;
      results[i] = train_and_save(cfg, corpus, fs::path(out_dir) / topology_name(cfg.topology), log);
      std::lock_guard lock(log_mutex);
      err << log.str() << topology_name(cfg.topology) << ": " << results[i].validation.name << " "
          << results[i].validation.value << " in " << results[i].seconds << " s\n";
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, kAllTopologies.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < kAllTopologies.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < kAllTopologies.size();) run_one(i);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::ostringstream csv, table;
  csv << "topology,metric,params,seconds\n";
  const std::string metric_name = base.task == Task::Detection ? "val_accuracy" : "val_mse";
  table << std::left << std::setw(18) << "topology" << std::right << std::setw(14) << metric_name
        << std::setw(12) << "params" << std::setw(12) << "seconds" << "\n";
  for (std::size_t i = 0; i < kAllTopologies.size(); ++i) {
    const auto& r = results[i];
    const auto name = topology_name(kAllTopologies[i]);
    csv << name << ',' << r.validation.value << ',' << r.params << ',' << r.seconds << '\n';
    table << std::left << std::setw(18) << name << std::right << std::setw(14) << std::fixed
          << std::setprecision(4) << r.validation.value << std::setw(12) << r.params
          << std::setw(12) << std::setprecision(2) << r.seconds << "\n";
  }
  write_text(fs::path(out_dir) / "results.csv", csv.str());
  write_text(fs::path(out_dir) / "results.txt", table.str());
  err << table.str();
  out << csv.str();
  return kOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal transformer fusion for backchannel detection and agreement estimation",
               "mmfusion"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, topology, checkpoint, split = "validation", task;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--spec", spec_path, "Synthetic corpus spec (key = value)")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Seed (overrides the value in the --spec file)");

  CommonTrainFlags train_flags;
  auto* train = app.add_subcommand("train", "Train one topology");
  train_flags.attach(train);
  train->add_option("--topology", topology, "Fusion topology");
  train->add_option("--task", train_flags.task, "detection or agreement");
  train->add_option("--out", out_dir, "Output directory")->required();

  std::string eval_manifest;
  std::optional<std::uint64_t> eval_seed;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "Corpus manifest CSV")->required();
  eval->add_option("--split", split, "train, validation or test");
  eval->add_option("--seed", eval_seed, "Accepted for uniformity; evaluation is deterministic");

  bool all = false;
  std::string gc_task = "detection";
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradcheck->add_option("--topology", topology, "Single topology to check");
  gradcheck->add_flag("--all", all, "Check every topology (default)");
  gradcheck->add_option("--task", gc_task, "detection or agreement");
  gradcheck->add_option("--seed", gc_seed, "Seed for weights and inputs");

  CommonTrainFlags sweep_flags;
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Train all eight topologies");
  sweep_flags.attach(sweep);
  sweep->add_option("--task", sweep_flags.task, "detection or agreement");
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--jobs", jobs, "Topologies trained concurrently");

  std::vector<std::string> argv_store{"mmfusion"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kUsageOrContract;
  }

  try {
    if (*synth) return cmd_synth(spec_path, out_dir, synth_seed, out, err);
    if (*train) return cmd_train(train_flags, topology, out_dir, out, err);
    if (*eval) return cmd_eval(checkpoint, eval_manifest, split, out, err);
    if (*gradcheck) return cmd_gradcheck(topology, all, gc_task, gc_seed, out, err);
    if (*sweep) return cmd_sweep(sweep_flags, out_dir, jobs, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageOrContract;
  }
  return kUsageOrContract;
}

}  // namespace mmf::cli

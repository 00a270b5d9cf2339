#include "mmfusion/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "mmfusion/synth.hpp"

namespace mmf {

namespace {

std::vector<double> parse_weight_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    auto end = value.find(',', start);
    if (end == std::string::npos) end = value.size();
    std::string item = value.substr(start, end - start);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    out.push_back(parse_real(key, item));
    start = end + 1;
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto& m = model;
  if (key == "learning_rate") learning_rate = parse_real(key, value);
  else if (key == "weight_decay") weight_decay = parse_real(key, value);
  else if (key == "epochs") epochs = parse_size(key, value);
  else if (key == "batch_size") batch_size = parse_size(key, value);
  else if (key == "window_seconds") window_seconds = parse_real(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "task") task = parse_task(value);
  else if (key == "topology") topology = parse_topology(value);
  else if (key == "precision") precision = parse_precision(value);
  else if (key == "face_features") features.face = parse_size(key, value);
  else if (key == "pose_features") features.pose = parse_size(key, value);
  else if (key == "standardize") standardize = parse_bool(key, value);
  else if (key == "face_dim") m.face_dim = parse_size(key, value);
  else if (key == "pose_dim") m.pose_dim = parse_size(key, value);
  else if (key == "cross_dim") m.cross_dim = parse_size(key, value);
  else if (key == "face_heads") m.face_heads = parse_size(key, value);
  else if (key == "pose_heads") m.pose_heads = parse_size(key, value);
  else if (key == "fused_heads") m.fused_heads = parse_size(key, value);
  else if (key == "cross_fused_heads") m.cross_fused_heads = parse_size(key, value);
  else if (key == "ffn_multiplier") m.ffn_multiplier = parse_size(key, value);
  else if (key == "ff_hidden") m.ff_hidden = parse_size(key, value);
  else if (key == "dropout") m.dropout = parse_real(key, value);
  else if (key == "pre_norm") m.pre_norm = parse_bool(key, value);
  else if (key == "log_every") log_every = parse_size(key, value);
  else if (key.rfind("loss_weights.", 0) == 0)
    loss_weights.set(parse_topology(key.substr(13)), parse_weight_list(key, value));
  else throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

ModelConfig TrainConfig::resolved_model() const {
  ModelConfig m = model;
  m.face_in = features.face + 1;
  m.pose_in = features.pose + 1;
  return m;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(window_seconds > 0.0)) throw ConfigError("window_seconds must be positive");
  resolved_model().validate(topology);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> to_tensors(const ProcessedSample& s) {
  auto convert = [](const FrameMatrix& m) {
    std::vector<T> v(m.values.begin(), m.values.end());
    return Tensor<T>({m.rows, m.cols}, std::move(v));
  };
  return {convert(s.face), convert(s.pose)};
}

template <class T>
std::vector<double> predict(const FusionModel<T>& model, const std::vector<ProcessedSample>& samples,
                            Split split) {
  std::vector<double> out;
  for (const auto& s : samples) {
    if (s.split != split) continue;
    const auto [face, pose] = to_tensors<T>(s);
    out.push_back(static_cast<double>(model.forward(face, pose, {}).final.item()));
  }
  return out;
}

template <class T>
Metrics evaluate_metrics(const FusionModel<T>& model, const std::vector<ProcessedSample>& samples,
                         Split split) {
  const auto preds = predict(model, samples, split);
  if (preds.empty())
    throw ConfigError("evaluation split '" + std::string(split_name(split)) + "' is empty");
  std::vector<double> labels;
  for (const auto& s : samples)
    if (s.split == split) labels.push_back(s.label);
  Metrics m;
  m.n = preds.size();
  if (model.task() == Task::Detection) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      correct += ((preds[i] >= 0.5 ? 1.0 : 0.0) == labels[i]) ? 1 : 0;
    m.name = "accuracy";
    m.value = static_cast<double>(correct) / static_cast<double>(m.n);
  } else {
    m.name = "mse";
    m.value = mse_value(preds, labels);
  }
  return m;
}

template <class T>
TrainResult<T> run_training(const std::vector<ProcessedSample>& corpus, const TrainConfig& config,
                            std::ostream* log) {
  config.validate();
  const Task task = config.task;
  for (const auto& s : corpus) validate_label(s.label, task, "sample " + s.id);

  std::vector<ProcessedSample> samples = corpus;
  FeatureStandardizer standardizer;
  if (config.standardize) {
    standardizer = FeatureStandardizer::fit(samples);
    for (auto& s : samples) standardizer.apply(s);
  }

  std::vector<std::size_t> train_idx;
  std::size_t n_val = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == Split::Train) train_idx.push_back(i);
    if (samples[i].split == Split::Validation) ++n_val;
  }
  if (train_idx.empty()) throw ConfigError("training split is empty");
  if (n_val == 0) throw ConfigError("validation split is empty");

  std::vector<std::pair<Tensor<T>, Tensor<T>>> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(to_tensors<T>(s));

  TrainResult<T> result{FusionModel<T>::build(config.topology, task, config.resolved_model(),
                                              config.seed),
                        {}, 0, {}, standardizer};
  auto& model = result.model;
  auto params = model.parameters();
  const auto& weights = config.loss_weights.get(config.topology);
  AdamState<T> adam;
  Rng shuffle_rng(sample_seed(config.seed, 0));
  Rng dropout_rng(sample_seed(config.seed, 1));
  const bool higher_is_better = task == Task::Detection;

  std::vector<std::vector<T>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& [name, p] : params) best.emplace_back(p.data().begin(), p.data().end());
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < train_idx.size(); b += config.batch_size) {
      const std::size_t e = std::min(train_idx.size(), b + config.batch_size);
      const T inv_batch = T(1) / static_cast<T>(e - b);
      for (auto& [name, p] : params) p.zero_grad();
      for (std::size_t i = b; i < e; ++i) {
        const auto idx = train_idx[i];
        Tape<T> tape;
        TapeScope<T> scope(tape);
        const auto out = model.forward(inputs[idx].first, inputs[idx].second,
                                       {true, &dropout_rng});
        const auto loss = combined_loss(out, samples[idx].label, weights, task);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv))
          throw DivergenceError("training diverged: non-finite loss at epoch " +
                                std::to_string(epoch));
        loss_sum += lv;
        backward(scale(loss, inv_batch), tape);
      }
      adam_step(params, adam, config.learning_rate, config.weight_decay);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_idx.size());
    const auto val = evaluate_metrics(model, samples, Split::Validation);
    rec.val_metric = val.value;
    result.history.push_back(rec);

    const bool improved = result.best_epoch == 0 ||
                          (higher_is_better ? val.value > result.best_validation.value
                                            : val.value < result.best_validation.value);
    if (improved) {
      result.best_epoch = epoch;
      result.best_validation = val;
      snapshot();
    }
    if (log && config.log_every && (epoch % config.log_every == 0 || epoch == config.epochs))
      *log << topology_name(config.topology) << " epoch " << epoch << " train_loss "
           << rec.train_loss << " val_" << val.name << " " << val.value << "\n";
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].second.mutable_data();
    std::copy(best[k].begin(), best[k].end(), dst.begin());
    params[k].second.zero_grad();
  }
  return result;
}

nlohmann::json preprocessing_extras(const TrainConfig& config, const FeatureStandardizer& st) {
  nlohmann::json j = {{"window_seconds", config.window_seconds},
                      {"face_features", config.features.face},
                      {"pose_features", config.features.pose},
                      {"seed", config.seed}};
  if (!st.empty())
    j["standardizer"] = {{"face_mean", st.face_mean},
                         {"face_scale", st.face_scale},
                         {"pose_mean", st.pose_mean},
                         {"pose_scale", st.pose_scale}};
  return j;
}

FeatureStandardizer standardizer_from_extras(const nlohmann::json& extras) {
  FeatureStandardizer st;
  if (!extras.contains("standardizer")) return st;
  const auto& s = extras.at("standardizer");
  st.face_mean = s.at("face_mean").get<std::vector<double>>();
  st.face_scale = s.at("face_scale").get<std::vector<double>>();
  st.pose_mean = s.at("pose_mean").get<std::vector<double>>();
  st.pose_scale = s.at("pose_scale").get<std::vector<double>>();
  return st;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write history " + path.string());
  os << "epoch,train_loss,val_metric\n";
  for (const auto& r : history)
    os << r.epoch << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.val_metric) << '\n';
  if (!os) throw IoError("failed writing history " + path.string());
}

nlohmann::json metrics_json(Task task, Topology topology, Split split, const Metrics& m) {
  return {{"task", task_name(task)},       {"topology", topology_name(topology)},
          {"split", split_name(split)},    {"metric_name", m.name},
          {"value", m.value},              {"n", m.n}};
}

#define MMF_INSTANTIATE(T)                                                                      \
  template std::pair<Tensor<T>, Tensor<T>> to_tensors<T>(const ProcessedSample&);              \
  template std::vector<double> predict<T>(const FusionModel<T>&,                               \
                                          const std::vector<ProcessedSample>&, Split);          \
  template Metrics evaluate_metrics<T>(const FusionModel<T>&,                                  \
                                       const std::vector<ProcessedSample>&, Split);             \
  template TrainResult<T> run_training<T>(const std::vector<ProcessedSample>&,                 \
                                          const TrainConfig&, std::ostream*);

MMF_INSTANTIATE(float)
MMF_INSTANTIATE(double)
#undef MMF_INSTANTIATE

}  // namespace mmf

#include "mmfusion/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mmfusion/config.hpp"

namespace mmf {

namespace fs = std::filesystem;

std::string_view signal_kind_name(SignalKind k) {
  switch (k) {
    case SignalKind::SingleModality: return "single";
    case SignalKind::Redundant: return "redundant";
    case SignalKind::XorCrossModal: return "xor";
  }
  return "redundant";
}

SignalKind parse_signal_kind(std::string_view s) {
  if (s == "single" || s == "single-modality") return SignalKind::SingleModality;
  if (s == "redundant") return SignalKind::Redundant;
  if (s == "xor" || s == "xor-cross-modal") return SignalKind::XorCrossModal;
  throw ConfigError("unknown signal kind '" + std::string(s) + "'");
}

void SynthSpec::validate() const {
  if (n_samples < 2) throw ConfigError("synth: n_samples must be >= 2");
  if (task == Task::Detection && n_samples % 2 != 0)
    throw ConfigError("synth: detection corpora need an even n_samples for class balance");
  if (t_raw < 2) throw ConfigError("synth: t_raw must be >= 2");
  if (!(fps > 0.0)) throw ConfigError("synth: fps must be positive");
  if (noise < 0.0) throw ConfigError("synth: noise must be non-negative");
  if (face_features == 0 || pose_features == 0) throw ConfigError("synth: feature counts must be positive");
  if (signal_features == 0 || signal_features > std::min(face_features, pose_features))
    throw ConfigError("synth: signal_features must be in [1, min(face, pose features)]");
  if (validation_fraction < 0.0 || test_fraction < 0.0 || validation_fraction + test_fraction >= 1.0)
    throw ConfigError("synth: split fractions must be non-negative and leave training samples");
}

SynthSpec SynthSpec::from_key_values(const std::map<std::string, std::string>& kv) {
  SynthSpec s;
  for (const auto& [k, v] : kv) {
    if (k == "n_samples") s.n_samples = parse_size(k, v);
    else if (k == "t_raw") s.t_raw = parse_size(k, v);
    else if (k == "fps") s.fps = parse_real(k, v);
    else if (k == "kind") s.kind = parse_signal_kind(v);
    else if (k == "noise") s.noise = parse_real(k, v);
    else if (k == "seed") s.seed = parse_u64(k, v);
    else if (k == "task") s.task = parse_task(v);
    else if (k == "face_features") s.face_features = parse_size(k, v);
    else if (k == "pose_features") s.pose_features = parse_size(k, v);
    else if (k == "signal_features") s.signal_features = parse_size(k, v);
    else if (k == "amplitude") s.amplitude = parse_real(k, v);
    else if (k == "burst_seconds") s.burst_seconds = parse_real(k, v);
    else if (k == "validation_fraction") s.validation_fraction = parse_real(k, v);
    else if (k == "test_fraction") s.test_fraction = parse_real(k, v);
    else throw ConfigError("synth spec: unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

FrameMatrix noise_block(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  FrameMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.values.resize(rows * cols);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : m.values) v = sigma * dist(rng);
  return m;
}

void plant_burst(FrameMatrix& m, std::size_t channels, std::size_t burst_frames, double amplitude) {
  const std::size_t first = m.rows - std::min(burst_frames, m.rows);
  for (std::size_t r = first; r < m.rows; ++r) {
    const double sign = (r % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t c = 0; c < channels; ++c) m.at(r, c) += sign * amplitude;
  }
}

std::vector<Split> assign_splits(const SynthSpec& spec) {
  // Samples come in (label 0, label 1) pairs; whole pairs are assigned so every
  // split stays class balanced.
  const std::size_t pairs = (spec.n_samples + 1) / 2;
  std::vector<std::size_t> order(pairs);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sample_seed(spec.seed, static_cast<std::size_t>(-1)));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(spec.validation_fraction * double(pairs)));
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * double(pairs)));
  std::vector<Split> pair_split(pairs, Split::Train);
  for (std::size_t i = 0; i < pairs; ++i) {
    if (i < n_val) pair_split[order[i]] = Split::Validation;
    else if (i < n_val + n_test) pair_split[order[i]] = Split::Test;
  }
  std::vector<Split> out(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) out[i] = pair_split[i / 2];
  return out;
}

RawSample make_sample(const SynthSpec& spec, std::size_t index, Split split) {
  Rng rng(sample_seed(spec.seed, index));
  const auto burst = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(spec.burst_seconds * spec.fps)));
  RawSample s;
  char id[32];
  std::snprintf(id, sizeof id, "s%05zu", index);
  s.id = id;
  s.fps = spec.fps;
  s.split = split;
  s.face = noise_block(spec.t_raw, spec.face_features, spec.noise, rng);
  s.pose = noise_block(spec.t_raw, spec.pose_features, spec.noise, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  double face_amp = 0.0, pose_amp = 0.0;
  if (spec.task == Task::Detection) {
    const bool y = index % 2 == 1;
    s.label = y ? 1.0 : 0.0;
    switch (spec.kind) {
      case SignalKind::SingleModality:
        face_amp = y ? spec.amplitude : 0.0;
        break;
      case SignalKind::Redundant:
        face_amp = pose_amp = y ? spec.amplitude : 0.0;
        break;
      case SignalKind::XorCrossModal: {
        const bool a = coin(rng);
        const bool b = a != y;
        face_amp = a ? spec.amplitude : 0.0;
        pose_amp = b ? spec.amplitude : 0.0;
        break;
      }
    }
  } else {
    switch (spec.kind) {
      case SignalKind::SingleModality:
      case SignalKind::Redundant: {
        s.label = 2.0 * unit(rng) - 1.0;
        const double a = spec.amplitude * (s.label + 1.0) / 2.0;
        face_amp = a;
        if (spec.kind == SignalKind::Redundant) pose_amp = a;
        break;
      }
      case SignalKind::XorCrossModal: {
        const bool a = coin(rng), b = coin(rng);
        const double mag = 0.25 + 0.75 * unit(rng);
        s.label = (a != b) ? mag : -mag;
        face_amp = a ? spec.amplitude * mag : 0.0;
        pose_amp = b ? spec.amplitude * mag : 0.0;
        break;
      }
    }
  }
  if (face_amp != 0.0) plant_burst(s.face, spec.signal_features, burst, face_amp);
  if (pose_amp != 0.0) plant_burst(s.pose, spec.signal_features, burst, pose_amp);
  return s;
}

}  // namespace

SynthCorpus synth_corpus(const SynthSpec& spec) {
  spec.validate();
  const auto splits = assign_splits(spec);
  SynthCorpus c;
  c.samples.resize(spec.n_samples);
  const auto n = static_cast<std::ptrdiff_t>(spec.n_samples);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    c.samples[i] = make_sample(spec, static_cast<std::size_t>(i), splits[i]);
  for (const auto& s : c.samples) {
    SampleDescriptor d;
    d.id = s.id;
    d.face_path = fs::path("samples") / (s.id + "_face.csv");
    d.pose_path = fs::path("samples") / (s.id + "_pose.csv");
    d.fps = s.fps;
    d.label = s.label;
    d.split = s.split;
    c.manifest.push_back(d);
  }
  return c;
}

fs::path synth_generate(const SynthSpec& spec, const fs::path& out_dir) {
  auto corpus = synth_corpus(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "samples", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "samples").string() + ": " + ec.message());
  for (auto& d : corpus.manifest) {
    d.face_path = out_dir / d.face_path;
    d.pose_path = out_dir / d.pose_path;
  }
  const auto n = static_cast<std::ptrdiff_t>(corpus.samples.size());
  std::vector<std::exception_ptr> errors(corpus.samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      write_feature_csv(corpus.manifest[i].face_path, corpus.samples[i].face);
      write_feature_csv(corpus.manifest[i].pose_path, corpus.samples[i].pose);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  const auto manifest = out_dir / "manifest.csv";
  write_manifest(manifest, corpus.manifest);
  return manifest;
}

}  // namespace mmf

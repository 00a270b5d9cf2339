#pragma once

// Synthetic corpora with planted motion bursts.
//
// Each modality is i.i.d. Gaussian noise per frame and feature. A burst is an
// alternating +-amplitude pattern on the first `signal_features` columns over
// the final `burst_seconds` of the recording, which turns into a run of large
// absolute frame differences after preprocessing.
//
// Signal kinds (detection):
//   single     burst in the face stream iff label == 1; pose carries nothing
//   redundant  burst in both streams iff label == 1
//   xor        independent bits a, b with label = a XOR b; face bursts iff a,
//              pose bursts iff b. Neither stream alone predicts the label.
// For agreement corpora the label is uniform in [-1,1] and scales the burst
// amplitude (xor: the XOR bit picks the label's sign).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmfusion/data.hpp"

namespace mmf {

enum class SignalKind { SingleModality, Redundant, XorCrossModal };

std::string_view signal_kind_name(SignalKind k);
SignalKind parse_signal_kind(std::string_view s);

struct SynthSpec {
  std::size_t n_samples = 100;
  std::size_t t_raw = 90;
  double fps = 30.0;
  SignalKind kind = SignalKind::Redundant;
  double noise = 0.1;
  std::uint64_t seed = 0;
  Task task = Task::Detection;
  std::size_t face_features = kFaceFeatures;
  std::size_t pose_features = kPoseFeatures;
  std::size_t signal_features = 4;
  double amplitude = 1.0;
  double burst_seconds = 1.0;
  double validation_fraction = 0.2;
  double test_fraction = 0.0;

  void validate() const;
  /// Keys match the field names; unknown keys are rejected.
  static SynthSpec from_key_values(const std::map<std::string, std::string>& kv);
};

/// Per-sample seed derived from (spec seed, sample index).
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);

struct SynthCorpus {
  std::vector<SampleDescriptor> manifest;
  std::vector<RawSample> samples;
};

/// In-memory generation; identical to what synth_generate writes.
SynthCorpus synth_corpus(const SynthSpec& spec);

/// Writes `<out>/manifest.csv` and `<out>/samples/<id>_{face,pose}.csv`.
/// Returns the manifest path.
std::filesystem::path synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace mmf

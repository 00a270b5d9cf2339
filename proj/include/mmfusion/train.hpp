#pragma once

// Training loop with best-on-validation model selection, plus evaluation.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmfusion/checkpoint.hpp"
#include "mmfusion/config.hpp"
#include "mmfusion/data.hpp"
#include "mmfusion/losses.hpp"
#include "mmfusion/optim.hpp"

namespace mmf {

struct TrainConfig {
  double learning_rate = 0.0005;
  double weight_decay = 0.0005;
  std::size_t epochs = 350;
  std::size_t batch_size = 32;
  double window_seconds = 3.0;
  std::uint64_t seed = 0;
  Task task = Task::Detection;
  Topology topology = Topology::OneStream;
  Precision precision = Precision::F64;
  FeatureDims features;
  bool standardize = false;
  ModelConfig model;
  LossWeights loss_weights = LossWeights::defaults();
  // Progress lines on the log stream every N epochs (0 = silent).
  std::size_t log_every = 0;

  void validate() const;
  /// Applies one `key = value` setting. Unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& kv);

  /// Model input widths follow from the feature counts (+1 frame index).
  ModelConfig resolved_model() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct Metrics {
  std::string name;  // "accuracy" or "mse"
  double value = 0.0;
  std::size_t n = 0;
};

template <class T>
struct TrainResult {
  FusionModel<T> model;  // restored to the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  Metrics best_validation;
  FeatureStandardizer standardizer;
};

/// Converts a processed sample to model inputs.
template <class T>
std::pair<Tensor<T>, Tensor<T>> to_tensors(const ProcessedSample& s);

/// Final-head predictions (no tape, no dropout) for every sample of `split`.
template <class T>
std::vector<double> predict(const FusionModel<T>& model, const std::vector<ProcessedSample>& samples,
                            Split split);

/// Accuracy at threshold 0.5 (detection) or MSE (agreement) over `split`.
template <class T>
Metrics evaluate_metrics(const FusionModel<T>& model, const std::vector<ProcessedSample>& samples,
                         Split split);

/// Trains on the Train split, selects on the Validation split. Ties keep the
/// earlier epoch. Samples are used as given; standardization (if configured)
/// is fitted and applied internally.
template <class T>
TrainResult<T> run_training(const std::vector<ProcessedSample>& corpus, const TrainConfig& config,
                            std::ostream* log = nullptr);

/// Checkpoint extras recording preprocessing so `eval` can reproduce inputs.
nlohmann::json preprocessing_extras(const TrainConfig& config, const FeatureStandardizer& st);
FeatureStandardizer standardizer_from_extras(const nlohmann::json& extras);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

nlohmann::json metrics_json(Task task, Topology topology, Split split, const Metrics& m);

}  // namespace mmf

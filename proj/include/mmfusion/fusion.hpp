#pragma once

// The eight model wirings: six two-modality fusion topologies plus the
// face-only and pose-only single-stream ablations.
//
//   OneStream       O = FC(TF1(C(f, p)))
//   OneToOne        O = FC(TF2(TF1(C(f, p))))
//   OneToTwo        f', p' = S(TF1(C(f, p))); O = FF(C(pool TF2(f'), pool TF3(p')))
//   TwoToOne        O = FC(TF3(C(TF1(f), TF2(p))))
//   CrossAttention  O = FC(C(pool TF1'(f | q=p), pool TF2'(p | q=f)))
//   CrossToOne      O = FC(TF3(C(TF1'(f | q=p), TF2'(p | q=f))))
//
// f and p are the projected face and pose sequences, C is per-frame
// concatenation along the feature axis and S splits it back at the face
// width. Every sequence is mean-pooled over time before a head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/layers.hpp"

namespace mmf {

enum class Topology { OneStream, OneToOne, OneToTwo, TwoToOne, CrossAttention, CrossToOne, FaceOnly, PoseOnly };

inline constexpr std::array<Topology, 8> kAllTopologies = {
    Topology::OneStream,      Topology::OneToOne,   Topology::OneToTwo, Topology::TwoToOne,
    Topology::CrossAttention, Topology::CrossToOne, Topology::FaceOnly, Topology::PoseOnly};

enum class Task { Detection, Regression };

std::string_view topology_name(Topology t);
Topology parse_topology(std::string_view name);
std::string_view task_name(Task t);
Task parse_task(std::string_view name);

/// Layer tags of the supervised transformer layers, in loss-weight order.
std::vector<std::string> supervised_layers(Topology t);

struct ModelConfig {
  // Model input widths: raw features plus the frame-index column.
  std::size_t face_in = 675;
  std::size_t pose_in = 77;
  // Projected stream widths. The fused width is face_dim + pose_dim.
  std::size_t face_dim = 676;
  std::size_t pose_dim = 74;
  // Common width of both streams in the cross-attention topologies.
  std::size_t cross_dim = 304;
  std::size_t face_heads = 4;
  std::size_t pose_heads = 2;
  std::size_t fused_heads = 10;
  std::size_t cross_fused_heads = 8;
  std::size_t ffn_multiplier = 2;
  std::size_t ff_hidden = 64;
  double dropout = 0.1;
  bool pre_norm = false;

  std::size_t fused_dim() const { return face_dim + pose_dim; }
  void validate(Topology t) const;

  /// Small dimensions used for gradient checks and fast tests.
  static ModelConfig toy();
};

template <class T>
struct ForwardOutput {
  Tensor<T> final;
  std::vector<std::pair<std::string, Tensor<T>>> intermediates;
};

struct ParameterCount {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_component;
};

template <class T>
class FusionModel {
 public:
  static FusionModel build(Topology topology, Task task, const ModelConfig& config,
                           std::uint64_t seed);

  Topology topology() const { return topology_; }
  Task task() const { return task_; }
  const ModelConfig& config() const { return config_; }

  /// face [T x face_in], pose [T x pose_in]. Single-modality topologies
  /// ignore the other stream apart from the length check.
  ForwardOutput<T> forward(const Tensor<T>& face, const Tensor<T>& pose, ForwardMode mode) const;

  /// Every trainable tensor, in a stable order. The handles alias the model.
  NamedParams<T> parameters() const;

 private:
  Tensor<T> head(const Linear<T>& fc, const Tensor<T>& pooled) const;

  Topology topology_ = Topology::OneStream;
  Task task_ = Task::Detection;
  ModelConfig config_;

  Linear<T> face_proj_;
  Linear<T> pose_proj_;
  std::vector<TransformerLayerParams<T>> layers_;  // tf1..tfN
  std::vector<Linear<T>> aux_heads_;               // one per supervised layer
  std::vector<std::string> aux_tags_;
  Linear<T> fc_;      // final head (all but OneToTwo)
  Linear<T> ff_in_;   // OneToTwo FF
  Linear<T> ff_out_;
};

template <class T>
FusionModel<T> build_model(Topology topology, Task task, const ModelConfig& config,
                           std::uint64_t seed) {
  return FusionModel<T>::build(topology, task, config, seed);
}

/// Splits [T x (a+b)] at feature column `width_a`.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_streams(const Tensor<T>& x, std::size_t width_a);

template <class T>
ParameterCount parameter_count(const FusionModel<T>& model);

}  // namespace mmf

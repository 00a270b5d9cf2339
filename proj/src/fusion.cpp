#include "mmfusion/fusion.hpp"

namespace mmf {

namespace {

constexpr std::array<std::string_view, 8> kTopologyNames = {
    "one_stream", "one_to_one", "one_to_two", "two_to_one",
    "cross_attention", "cross_to_one", "face_only", "pose_only"};

bool is_cross(Topology t) { return t == Topology::CrossAttention || t == Topology::CrossToOne; }

void require_even(std::size_t d, const char* what) {
  if (d % 2 != 0)
    throw ConfigError(std::string(what) + " width " + std::to_string(d) +
                      " must be even for sinusoidal positional encoding");
}

void require_heads(std::size_t d, std::size_t heads, const char* what) {
  if (heads == 0 || d == 0 || d % heads != 0)
    throw ConfigError(std::string(what) + " width " + std::to_string(d) +
                      " is not divisible by its head count " + std::to_string(heads));
}

}  // namespace

std::string_view topology_name(Topology t) { return kTopologyNames[static_cast<std::size_t>(t)]; }

Topology parse_topology(std::string_view name) {
  for (std::size_t i = 0; i < kTopologyNames.size(); ++i)
    if (kTopologyNames[i] == name) return static_cast<Topology>(i);
  throw ConfigError("unknown topology '" + std::string(name) + "'");
}

std::string_view task_name(Task t) { return t == Task::Detection ? "detection" : "agreement"; }

Task parse_task(std::string_view name) {
  if (name == "detection") return Task::Detection;
  if (name == "agreement" || name == "regression") return Task::Regression;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::vector<std::string> supervised_layers(Topology t) {
  switch (t) {
    case Topology::OneToOne:
      return {"tf1", "tf2"};
    case Topology::OneToTwo:
    case Topology::TwoToOne:
    case Topology::CrossToOne:
      return {"tf1", "tf2", "tf3"};
    default:
      return {};
  }
}

void ModelConfig::validate(Topology t) const {
  if (face_in == 0 || pose_in == 0) throw ConfigError("input widths must be positive");
  if (ffn_multiplier == 0 || ff_hidden == 0) throw ConfigError("hidden widths must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  switch (t) {
    case Topology::OneStream:
    case Topology::OneToOne:
    case Topology::OneToTwo:
      require_heads(fused_dim(), fused_heads, "fused stream");
      require_even(fused_dim(), "fused stream");
      if (t == Topology::OneToTwo) {
        require_heads(face_dim, face_heads, "face stream");
        require_heads(pose_dim, pose_heads, "pose stream");
      }
      break;
    case Topology::TwoToOne:
      require_heads(face_dim, face_heads, "face stream");
      require_heads(pose_dim, pose_heads, "pose stream");
      require_heads(fused_dim(), fused_heads, "fused stream");
      require_even(face_dim, "face stream");
      require_even(pose_dim, "pose stream");
      break;
    case Topology::CrossAttention:
    case Topology::CrossToOne:
      require_heads(cross_dim, face_heads, "cross face stream");
      require_heads(cross_dim, pose_heads, "cross pose stream");
      require_even(cross_dim, "cross stream");
      if (t == Topology::CrossToOne) require_heads(2 * cross_dim, cross_fused_heads, "cross fused stream");
      break;
    case Topology::FaceOnly:
      require_heads(face_dim, face_heads, "face stream");
      require_even(face_dim, "face stream");
      break;
    case Topology::PoseOnly:
      require_heads(pose_dim, pose_heads, "pose stream");
      require_even(pose_dim, "pose stream");
      break;
  }
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.face_in = 12;
  c.pose_in = 6;
  c.face_dim = 8;
  c.pose_dim = 4;
  c.cross_dim = 8;
  c.face_heads = 4;
  c.pose_heads = 2;
  c.fused_heads = 4;
  c.cross_fused_heads = 4;
  c.ff_hidden = 8;
  c.dropout = 0.0;
  return c;
}

template <class T>
FusionModel<T> FusionModel<T>::build(Topology topology, Task task, const ModelConfig& config,
                                     std::uint64_t seed) {
  config.validate(topology);
  FusionModel m;
  m.topology_ = topology;
  m.task_ = task;
  m.config_ = config;
  Rng rng(seed);
  const auto& c = config;
  auto layer = [&](std::size_t d, std::size_t heads) {
    return TransformerLayerParams<T>::create(d, heads, c.ffn_multiplier * d, c.dropout, c.pre_norm,
                                             rng);
  };

  const bool cross = is_cross(topology);
  if (topology != Topology::PoseOnly)
    m.face_proj_ = Linear<T>::create(c.face_in, cross ? c.cross_dim : c.face_dim, rng);
  if (topology != Topology::FaceOnly)
    m.pose_proj_ = Linear<T>::create(c.pose_in, cross ? c.cross_dim : c.pose_dim, rng);

  std::vector<std::size_t> widths;  // per transformer layer, for the heads below
  switch (topology) {
    case Topology::OneStream:
      widths = {c.fused_dim()};
      m.layers_.push_back(layer(c.fused_dim(), c.fused_heads));
      break;
    case Topology::OneToOne:
      widths = {c.fused_dim(), c.fused_dim()};
      m.layers_.push_back(layer(c.fused_dim(), c.fused_heads));
      m.layers_.push_back(layer(c.fused_dim(), c.fused_heads));
      break;
    case Topology::OneToTwo:
      widths = {c.fused_dim(), c.face_dim, c.pose_dim};
      m.layers_.push_back(layer(c.fused_dim(), c.fused_heads));
      m.layers_.push_back(layer(c.face_dim, c.face_heads));
      m.layers_.push_back(layer(c.pose_dim, c.pose_heads));
      break;
    case Topology::TwoToOne:
      widths = {c.face_dim, c.pose_dim, c.fused_dim()};
      m.layers_.push_back(layer(c.face_dim, c.face_heads));
      m.layers_.push_back(layer(c.pose_dim, c.pose_heads));
      m.layers_.push_back(layer(c.fused_dim(), c.fused_heads));
      break;
    case Topology::CrossAttention:
      widths = {c.cross_dim, c.cross_dim};
      m.layers_.push_back(layer(c.cross_dim, c.face_heads));
      m.layers_.push_back(layer(c.cross_dim, c.pose_heads));
      break;
    case Topology::CrossToOne:
      widths = {c.cross_dim, c.cross_dim, 2 * c.cross_dim};
      m.layers_.push_back(layer(c.cross_dim, c.face_heads));
      m.layers_.push_back(layer(c.cross_dim, c.pose_heads));
      m.layers_.push_back(layer(2 * c.cross_dim, c.cross_fused_heads));
      break;
    case Topology::FaceOnly:
      widths = {c.face_dim};
      m.layers_.push_back(layer(c.face_dim, c.face_heads));
      break;
    case Topology::PoseOnly:
      widths = {c.pose_dim};
      m.layers_.push_back(layer(c.pose_dim, c.pose_heads));
      break;
  }

  m.aux_tags_ = supervised_layers(topology);
  for (std::size_t i = 0; i < m.aux_tags_.size(); ++i)
    m.aux_heads_.push_back(Linear<T>::create(widths[i], 1, rng));

  switch (topology) {
    case Topology::OneToTwo:
      m.ff_in_ = Linear<T>::create(c.fused_dim(), c.ff_hidden, rng);
      m.ff_out_ = Linear<T>::create(c.ff_hidden, 1, rng);
      break;
    case Topology::CrossAttention:
      m.fc_ = Linear<T>::create(2 * c.cross_dim, 1, rng);
      break;
    default:
      m.fc_ = Linear<T>::create(widths.back(), 1, rng);
      break;
  }
  return m;
}

template <class T>
Tensor<T> FusionModel<T>::head(const Linear<T>& fc, const Tensor<T>& pooled) const {
  auto out = fc.forward(pooled);
  return task_ == Task::Detection ? sigmoid(out) : out;
}

template <class T>
ForwardOutput<T> FusionModel<T>::forward(const Tensor<T>& face, const Tensor<T>& pose,
                                         ForwardMode mode) const {
  const bool needs_face = topology_ != Topology::PoseOnly;
  const bool needs_pose = topology_ != Topology::FaceOnly;
  if (face.rank() != 2 || pose.rank() != 2)
    throw ShapeError("forward: face and pose must be [T x features]");
  if (face.dim(0) != pose.dim(0))
    throw ShapeError("forward: modalities are not aligned (" + std::to_string(face.dim(0)) +
                     " face frames vs " + std::to_string(pose.dim(0)) + " pose frames)");
  if (face.dim(0) == 0) throw ShapeError("forward: empty sequence");
  if (needs_face && face.dim(1) != config_.face_in)
    throw ShapeError("forward: face width " + std::to_string(face.dim(1)) + ", expected " +
                     std::to_string(config_.face_in));
  if (needs_pose && pose.dim(1) != config_.pose_in)
    throw ShapeError("forward: pose width " + std::to_string(pose.dim(1)) + ", expected " +
                     std::to_string(config_.pose_in));

  ForwardOutput<T> out;
  std::vector<Tensor<T>> supervised;  // pooled outputs of the supervised layers
  auto tf = [&](std::size_t i, const Tensor<T>& x) {
    return transformer_layer_forward(x, layers_[i], mode);
  };
  auto cross_tf = [&](std::size_t i, const Tensor<T>& x, const Tensor<T>& q) {
    return cross_transformer_layer_forward(x, q, layers_[i], mode);
  };

  Tensor<T> f, p;
  if (needs_face) f = face_proj_.forward(face);
  if (needs_pose) p = pose_proj_.forward(pose);

  switch (topology_) {
    case Topology::OneStream: {
      const auto h1 = tf(0, add_positional_encoding(concat_cols<T>({f, p})));
      out.final = head(fc_, mean_pool(h1));
      break;
    }
    case Topology::OneToOne: {
      const auto h1 = tf(0, add_positional_encoding(concat_cols<T>({f, p})));
      const auto h2 = tf(1, h1);
      supervised = {mean_pool(h1), mean_pool(h2)};
      out.final = head(fc_, supervised.back());
      break;
    }
    case Topology::OneToTwo: {
      const auto h1 = tf(0, add_positional_encoding(concat_cols<T>({f, p})));
      const auto [face_ch, pose_ch] = split_streams(h1, config_.face_dim);
      const auto o1 = mean_pool(tf(1, face_ch));
      const auto o2 = mean_pool(tf(2, pose_ch));
      supervised = {mean_pool(h1), o1, o2};
      auto z = ff_out_.forward(relu(ff_in_.forward(concat_cols<T>({o1, o2}))));
      out.final = task_ == Task::Detection ? sigmoid(z) : z;
      break;
    }
    case Topology::TwoToOne: {
      const auto h1 = tf(0, add_positional_encoding(f));
      const auto h2 = tf(1, add_positional_encoding(p));
      const auto h3 = tf(2, concat_cols<T>({h1, h2}));
      supervised = {mean_pool(h1), mean_pool(h2), mean_pool(h3)};
      out.final = head(fc_, supervised.back());
      break;
    }
    case Topology::CrossAttention:
    case Topology::CrossToOne: {
      const auto fe = add_positional_encoding(f);
      const auto pe = add_positional_encoding(p);
      const auto h1 = cross_tf(0, fe, pe);  // face stream, pose queries
      const auto h2 = cross_tf(1, pe, fe);  // pose stream, face queries
      if (topology_ == Topology::CrossAttention) {
        out.final = head(fc_, concat_cols<T>({mean_pool(h1), mean_pool(h2)}));
      } else {
        const auto h3 = tf(2, concat_cols<T>({h1, h2}));
        supervised = {mean_pool(h1), mean_pool(h2), mean_pool(h3)};
        out.final = head(fc_, supervised.back());
      }
      break;
    }
    case Topology::FaceOnly:
      out.final = head(fc_, mean_pool(tf(0, add_positional_encoding(f))));
      break;
    case Topology::PoseOnly:
      out.final = head(fc_, mean_pool(tf(0, add_positional_encoding(p))));
      break;
  }

  for (std::size_t i = 0; i < aux_heads_.size(); ++i)
    out.intermediates.emplace_back(aux_tags_[i], head(aux_heads_[i], supervised[i]));
  return out;
}

template <class T>
NamedParams<T> FusionModel<T>::parameters() const {
  NamedParams<T> out;
  if (face_proj_.weight.defined()) face_proj_.collect("face_proj", out);
  if (pose_proj_.weight.defined()) pose_proj_.collect("pose_proj", out);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect("tf" + std::to_string(i + 1), out);
  for (std::size_t i = 0; i < aux_heads_.size(); ++i)
    aux_heads_[i].collect("head_" + aux_tags_[i], out);
  if (fc_.weight.defined()) fc_.collect("fc", out);
  if (ff_in_.weight.defined()) {
    ff_in_.collect("ff_in", out);
    ff_out_.collect("ff_out", out);
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_streams(const Tensor<T>& x, std::size_t width_a) {
  if (x.rank() != 2) throw ShapeError("split: expected [T x d], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  if (width_a == 0 || width_a >= d)
    throw ShapeError("split: index " + std::to_string(width_a) + " out of range for width " +
                     std::to_string(d));
  return {slice_cols(x, 0, width_a), slice_cols(x, width_a, d)};
}

template <class T>
ParameterCount parameter_count(const FusionModel<T>& model) {
  ParameterCount pc;
  for (const auto& [name, t] : model.parameters()) {
    pc.total += t.numel();
    pc.by_component[name.substr(0, name.find('.'))] += t.numel();
  }
  return pc;
}

template class FusionModel<float>;
template class FusionModel<double>;
template std::pair<Tensor<float>, Tensor<float>> split_streams(const Tensor<float>&, std::size_t);
template std::pair<Tensor<double>, Tensor<double>> split_streams(const Tensor<double>&, std::size_t);
template ParameterCount parameter_count(const FusionModel<float>&);
template ParameterCount parameter_count(const FusionModel<double>&);

}  // namespace mmf

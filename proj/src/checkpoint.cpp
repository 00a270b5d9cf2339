#include "mmfusion/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace mmf {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in native order; big-endian hosts need byte swaps");

template <class U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_pod(std::istream& is, const std::filesystem::path& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U)))
    throw IoError("truncated checkpoint " + path.string());
  return v;
}

struct Header {
  CheckpointInfo info;
  nlohmann::json tensors;
};

Header read_header(std::ifstream& is, const std::filesystem::path& path) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a model checkpoint: " + path.string());
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " +
                  path.string());
  const auto len = read_pod<std::uint64_t>(is, path);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len)))
    throw IoError("truncated checkpoint header in " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  Header h;
  h.info.topology = parse_topology(j.at("topology").get<std::string>());
  h.info.task = parse_task(j.at("task").get<std::string>());
  h.info.precision = parse_precision(j.at("dtype").get<std::string>());
  h.info.config = model_config_from_json(j.at("config"));
  h.info.extras = j.value("extras", nlohmann::json::object());
  h.tensors = j.at("tensors");
  return h;
}

}  // namespace

std::string_view precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32" || s == "32" || s == "float32") return Precision::F32;
  if (s == "f64" || s == "64" || s == "float64") return Precision::F64;
  throw ConfigError("unknown precision '" + std::string(s) + "' (use 32 or 64)");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"face_in", c.face_in},
          {"pose_in", c.pose_in},
          {"face_dim", c.face_dim},
          {"pose_dim", c.pose_dim},
          {"cross_dim", c.cross_dim},
          {"face_heads", c.face_heads},
          {"pose_heads", c.pose_heads},
          {"fused_heads", c.fused_heads},
          {"cross_fused_heads", c.cross_fused_heads},
          {"ffn_multiplier", c.ffn_multiplier},
          {"ff_hidden", c.ff_hidden},
          {"dropout", c.dropout},
          {"pre_norm", c.pre_norm}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.face_in = j.at("face_in");
  c.pose_in = j.at("pose_in");
  c.face_dim = j.at("face_dim");
  c.pose_dim = j.at("pose_dim");
  c.cross_dim = j.at("cross_dim");
  c.face_heads = j.at("face_heads");
  c.pose_heads = j.at("pose_heads");
  c.fused_heads = j.at("fused_heads");
  c.cross_fused_heads = j.at("cross_fused_heads");
  c.ffn_multiplier = j.at("ffn_multiplier");
  c.ff_hidden = j.at("ff_hidden");
  c.dropout = j.at("dropout");
  c.pre_norm = j.at("pre_norm");
  return c;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const FusionModel<T>& model,
                     const nlohmann::json& extras) {
  const auto params = model.parameters();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : params) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  const nlohmann::json header = {{"format", "mmfusion-checkpoint"},
                                 {"version", kVersion},
                                 {"topology", topology_name(model.topology())},
                                 {"task", task_name(model.task())},
                                 {"dtype", precision_name(precision_of<T>())},
                                 {"config", model_config_to_json(model.config())},
                                 {"extras", extras},
                                 {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, 8);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params) {
    const auto d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(T)));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

CheckpointInfo peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_header(is, path).info;
}

template <class T>
FusionModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  const auto header = read_header(is, path);
  if (header.info.precision != precision_of<T>())
    throw ConfigError("checkpoint " + path.string() + " stores " +
                      std::string(precision_name(header.info.precision)) + " parameters");
  auto model = FusionModel<T>::build(header.info.topology, header.info.task, header.info.config, 0);
  auto params = model.parameters();
  if (params.size() != header.tensors.size())
    throw IoError("checkpoint " + path.string() + " has " +
                  std::to_string(header.tensors.size()) + " tensors, model expects " +
                  std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& entry = header.tensors[i];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("shape").get<Shape>() != t.shape())
      throw IoError("checkpoint tensor " + entry.at("name").get<std::string>() +
                    " does not match model parameter " + name + " " + shape_str(t.shape()));
    auto dst = t.mutable_data();
    if (!is.read(reinterpret_cast<char*>(dst.data()),
                 static_cast<std::streamsize>(dst.size() * sizeof(T))))
      throw IoError("truncated checkpoint payload in " + path.string());
  }
  if (info) *info = header.info;
  return model;
}

template void save_checkpoint<float>(const std::filesystem::path&, const FusionModel<float>&,
                                     const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const FusionModel<double>&,
                                      const nlohmann::json&);
template FusionModel<float> load_checkpoint<float>(const std::filesystem::path&, CheckpointInfo*);
template FusionModel<double> load_checkpoint<double>(const std::filesystem::path&, CheckpointInfo*);

}  // namespace mmf

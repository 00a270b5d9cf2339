#pragma once

// Model checkpoint container, version 1.
//
//   bytes 0..7    magic "MMFCKPT1"
//   u32 LE        format version (1)
//   u64 LE        header length N
//   N bytes       UTF-8 JSON header:
//                   {"format":"mmfusion-checkpoint","version":1,
//                    "topology":..., "task":..., "dtype":"f32"|"f64",
//                    "config":{...ModelConfig...}, "extras":{...},
//                    "tensors":[{"name":..., "shape":[...]}, ...]}
//   payload       tensors in header order, each element as raw
//                 little-endian IEEE-754 of the header's dtype
//
// Loading rebuilds the model skeleton from topology/task/config and overwrites
// every parameter, so outputs of a loaded model match the saved one bitwise.

#include <filesystem>
#include <string>

#include "mmfusion/fusion.hpp"
#include "json.hpp"

namespace mmf {

enum class Precision { F32, F64 };

template <class T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::F32 : Precision::F64;
}

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view s);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointInfo {
  Topology topology = Topology::OneStream;
  Task task = Task::Detection;
  Precision precision = Precision::F64;
  ModelConfig config;
  nlohmann::json extras;
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const FusionModel<T>& model,
                     const nlohmann::json& extras = nlohmann::json::object());

/// Reads only the header.
CheckpointInfo peek_checkpoint(const std::filesystem::path& path);

template <class T>
FusionModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace mmf

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "secnn/data.hpp"
#include "secnn/model.hpp"

namespace secnn {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kWeightsFile = "weights.bin";

nlohmann::json descriptor_to_json(const ArchitectureDescriptor& descriptor);
ArchitectureDescriptor descriptor_from_json(const nlohmann::json& j);

// Training progress stored alongside the weights. Optimizer moments and the
// rng stream are not persisted.
struct CheckpointState {
  std::size_t epoch = 0;
  float lr = 0.0f;
  double best_val_accuracy = -1.0;
  std::size_t epochs_since_improvement = 0;
  std::size_t cooldown_remaining = 0;
  std::string reason;

  bool operator==(const CheckpointState&) const = default;
};

struct CheckpointMeta {
  CheckpointState state;
  nlohmann::json config = nlohmann::json::object();  // resolved run configuration
  data::Normalization normalization;
};

struct LoadedCheckpoint {
  SecnnModel model;
  CheckpointMeta meta;
  nlohmann::json manifest;
};

// Little-endian f32: parameters in walker order, then running statistics.
std::vector<std::uint8_t> weights_blob(const SecnnModel& model);

// Writes `dir`/manifest.json and `dir`/weights.bin through a sibling temp
// directory that is renamed into place.
void save_checkpoint(const SecnnModel& model, const CheckpointMeta& meta, const std::filesystem::path& dir);

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes);

}  // namespace secnn

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "secnn/data.hpp"
#include "secnn/model.hpp"
#include "secnn/trainer.hpp"

namespace secnn {

struct ArchitectureConfig {
  std::size_t num_blocks = 3;
  std::size_t initial_channels = 16;
  // Maximum conv units per block.
  std::size_t block_capacity = 10;
  // Maximum channels per block; zero means unbounded.
  std::size_t channel_ceiling = 0;
  ModelConfig model;

  bool operator==(const ArchitectureConfig&) const = default;
};

struct RunConfig {
  TrainConfig train;
  ArchitectureConfig arch;
  // Directory with the CIFAR-10 binary batches, or "synthetic:KIND".
  std::string dataset;
  std::string out = "run";
  // Class-balanced subsampling; zero keeps the whole split.
  std::size_t train_per_class = 0;
  std::size_t val_per_class = 0;
  std::size_t synthetic_train_size = 2000;
  std::size_t synthetic_val_size = 500;
  std::uint64_t data_seed = 1234;
  std::string kernel_backend = "auto";

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Every recognized key, in canonical order.
const std::vector<ConfigKey>& config_keys();

void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

// `key = value` lines; blank lines and lines starting with '#' are skipped.
// Unknown keys and malformed values raise Config errors naming the line.
void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical text that reproduces `config` exactly when parsed.
std::string to_config_text(const RunConfig& config);
nlohmann::json to_json(const RunConfig& config);

struct Datasets {
  data::Dataset train;
  data::Dataset val;
  data::Normalization normalization;
};

// Resolves `dataset` (path or synthetic:KIND) and applies subsampling.
Datasets load_datasets(const RunConfig& config);

SecnnModel build_model(const RunConfig& config);

}  // namespace secnn

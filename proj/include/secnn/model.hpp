#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "secnn/autograd.hpp"
#include "secnn/ops.hpp"
#include "secnn/random.hpp"
#include "secnn/tensor.hpp"

namespace secnn {

struct ModelConfig {
  std::size_t image_channels = 3;
  std::size_t image_size = 32;
  std::size_t num_classes = 10;
  std::size_t head_channels = 8;
  std::size_t hidden_units = 20;
  float leaky_slope = 0.2f;
  float dropout_conv = 0.1f;
  float dropout_fc = 0.05f;

  bool operator==(const ModelConfig&) const = default;
};

// conv 3x3 (pad 1) -> batchnorm -> leaky relu -> dropout
struct ConvUnit {
  Parameter weight;  // [Cout, Cin, 3, 3]
  Parameter bias;    // [Cout]
  Parameter gamma;   // [Cout]
  Parameter beta;    // [Cout]
  ops::BatchNormStats stats;
  // Current negative slope. Freshly inserted units start at 1 (exact identity)
  // and are annealed toward ModelConfig::leaky_slope by the trainer.
  float slope = 0.2f;

  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t in_channels() const { return weight.value.dim(1); }
};

struct ConvBlock {
  std::vector<ConvUnit> units;
  std::size_t out_channels = 0;
  std::size_t capacity = 1;
};

struct BlockDescriptor {
  std::size_t units = 0;
  std::size_t out_channels = 0;
  std::vector<float> slopes;

  bool operator==(const BlockDescriptor&) const = default;
};

struct ArchitectureDescriptor {
  ModelConfig config;
  std::size_t capacity = 0;
  std::size_t channel_ceiling = 0;
  std::vector<BlockDescriptor> blocks;
  std::size_t param_count = 0;

  bool operator==(const ArchitectureDescriptor&) const = default;
};

// How one parameter tensor changed shape under a mutation. New entries are
// appended at the end of `axis`.
struct ParameterGrowth {
  std::uint64_t id = 0;
  std::size_t axis = 0;
  std::size_t old_extent = 0;
  std::size_t new_extent = 0;
};

struct MutationReport {
  std::int64_t delta_p = 0;
  std::vector<std::uint64_t> created;
  std::vector<ParameterGrowth> grown;
};

struct NamedParameter {
  std::string name;
  const Parameter* parameter;
};

// Block-based CNN that grows in depth (identity units) and width (channels).
//
// Layout: blocks separated by 2x2 max pooling; block-0 output is average-pooled
// to the last block's resolution, projected by a 1x1 conv and added to the last
// block's output before its pooling; the head is 1x1 conv -> leaky relu ->
// flatten -> FC hidden -> leaky relu -> dropout -> FC output.
//
// Copying a model deep-copies every tensor.
class SecnnModel {
 public:
  static SecnnModel build_initial(std::size_t num_blocks, std::size_t channels, std::size_t capacity,
                                  const ModelConfig& config, Rng& rng);

  // Same architecture with identity batchnorm and zero weights; used to load checkpoints.
  static SecnnModel from_descriptor(const ArchitectureDescriptor& descriptor);

  SecnnModel clone() const { return *this; }

  // Logits [N, num_classes]. Train mode updates batchnorm running stats and
  // draws dropout masks from `rng`.
  Var forward(Graph& graph, const Tensor& batch, Mode mode, Rng& rng);

  // Eval-mode logits without gradient tracking.
  Tensor predict(const Tensor& batch) const;

  MutationReport insert_identity_unit(std::size_t block_idx, float noise_std, Rng& rng);
  MutationReport widen_block(std::size_t block_idx, std::size_t increment, float noise_coeff, Rng& rng);

  std::size_t param_count() const;

  // Canonical walker order: per block, per unit (conv weight, conv bias,
  // bn gamma, bn beta); skip (weight, bias); head squeeze, hidden, output.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<NamedParameter> named_parameters() const;

  // Per unit: running mean then running var, in block/unit order.
  std::vector<Tensor*> running_stats();
  std::vector<const Tensor*> running_stats() const;
  std::vector<std::string> running_stat_names() const;

  void zero_grad();

  // Moves every unit's slope toward the configured slope by at most `step`.
  void anneal_activations(float step);

  ArchitectureDescriptor describe() const;

  const std::vector<ConvBlock>& blocks() const noexcept { return blocks_; }
  const ModelConfig& config() const noexcept { return config_; }
  std::size_t num_units() const;

  // Zero means unbounded.
  std::size_t channel_ceiling() const noexcept { return channel_ceiling_; }
  void set_channel_ceiling(std::size_t ceiling) { channel_ceiling_ = ceiling; }

  void set_dropout(float conv_rate, float fc_rate);

 private:
  SecnnModel() = default;

  Parameter make_parameter(Tensor value) { return Parameter(next_id_++, std::move(value)); }
  ConvUnit make_unit(std::size_t in_channels, std::size_t out_channels);
  std::size_t final_resolution() const;
  std::size_t skip_pool() const;
  void check_block(std::size_t block_idx) const;

  template <typename Self, typename ParamFn>
  static Var run_forward(Self& self, Graph& g, const Tensor& batch, Mode mode, Rng* rng,
                         std::span<ops::BatchNormStats* const> stats, ParamFn&& param);

  template <typename Fn>
  void for_each_parameter(Fn&& fn);
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const;

  ModelConfig config_;
  std::vector<ConvBlock> blocks_;
  Parameter skip_weight_;
  Parameter skip_bias_;
  Parameter squeeze_weight_;
  Parameter squeeze_bias_;
  Parameter hidden_weight_;
  Parameter hidden_bias_;
  Parameter output_weight_;
  Parameter output_bias_;
  std::size_t channel_ceiling_ = 0;
  std::uint64_t next_id_ = 1;
};

}  // namespace secnn

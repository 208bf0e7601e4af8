#include "secnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "secnn/errors.hpp"

namespace secnn {
namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, float slope, Rng& rng) {
  const float gain = std::sqrt(2.0f / (1.0f + slope * slope));
  const float bound = gain * std::sqrt(3.0f / static_cast<float>(fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = (2.0f * uniform01(rng) - 1.0f) * bound;
  return t;
}

void grow_parameter(Parameter& p, std::size_t axis, std::size_t new_extent, float noise, Rng& rng,
                    MutationReport& report) {
  const std::size_t old_extent = p.value.dim(axis);
  p.value = grow_axis(p.value, axis, new_extent, [&] { return noise == 0.0f ? 0.0f : gaussian(rng) * noise; });
  p.grad = Tensor(p.value.shape(), 0.0f);
  report.grown.push_back(ParameterGrowth{p.id, axis, old_extent, new_extent});
}

void grow_constant(Parameter& p, std::size_t new_extent, float fill, MutationReport& report) {
  const std::size_t old_extent = p.value.dim(0);
  p.value = grow_axis(p.value, 0, new_extent, [fill] { return fill; });
  p.grad = Tensor(p.value.shape(), 0.0f);
  report.grown.push_back(ParameterGrowth{p.id, 0, old_extent, new_extent});
}

}  // namespace

template <typename Fn>
void SecnnModel::for_each_parameter(Fn&& fn) {
  for (auto& block : blocks_) {
    for (auto& unit : block.units) {
      fn(unit.weight);
      fn(unit.bias);
      fn(unit.gamma);
      fn(unit.beta);
    }
  }
  fn(skip_weight_);
  fn(skip_bias_);
  fn(squeeze_weight_);
  fn(squeeze_bias_);
  fn(hidden_weight_);
  fn(hidden_bias_);
  fn(output_weight_);
  fn(output_bias_);
}

template <typename Fn>
void SecnnModel::for_each_parameter(Fn&& fn) const {
  const_cast<SecnnModel*>(this)->for_each_parameter([&](Parameter& p) { fn(static_cast<const Parameter&>(p)); });
}

ConvUnit SecnnModel::make_unit(std::size_t in_channels, std::size_t out_channels) {
  ConvUnit unit;
  unit.weight = make_parameter(Tensor(Shape{out_channels, in_channels, 3, 3}, 0.0f));
  unit.bias = make_parameter(Tensor(Shape{out_channels}, 0.0f));
  unit.gamma = make_parameter(Tensor(Shape{out_channels}, 1.0f));
  unit.beta = make_parameter(Tensor(Shape{out_channels}, 0.0f));
  unit.stats.running_mean = Tensor(Shape{out_channels}, 0.0f);
  unit.stats.running_var = Tensor(Shape{out_channels}, 1.0f);
  unit.slope = config_.leaky_slope;
  return unit;
}

std::size_t SecnnModel::final_resolution() const { return config_.image_size >> blocks_.size(); }

std::size_t SecnnModel::skip_pool() const { return std::size_t{1} << (blocks_.size() - 1); }

void SecnnModel::check_block(std::size_t block_idx) const {
  if (block_idx >= blocks_.size())
    fail(ErrorCode::InvalidArgument,
         "block index " + std::to_string(block_idx) + " out of range (" + std::to_string(blocks_.size()) + " blocks)");
}

static void validate_layout(const ModelConfig& config, std::size_t num_blocks, std::size_t channels,
                            std::size_t capacity) {
  if (num_blocks == 0 || channels == 0 || capacity == 0)
    fail(ErrorCode::InvalidArgument, "num_blocks, channels and capacity must be positive");
  if (config.image_channels == 0 || config.num_classes == 0 || config.head_channels == 0 || config.hidden_units == 0)
    fail(ErrorCode::InvalidArgument, "model config dimensions must be positive");
  if (num_blocks >= 63 || config.image_size % (std::size_t{1} << num_blocks) != 0)
    fail(ErrorCode::InvalidShape, "image size " + std::to_string(config.image_size) + " does not halve " +
                                      std::to_string(num_blocks) + " times");
}

SecnnModel SecnnModel::build_initial(std::size_t num_blocks, std::size_t channels, std::size_t capacity,
                                     const ModelConfig& config, Rng& rng) {
  validate_layout(config, num_blocks, channels, capacity);
  ArchitectureDescriptor d;
  d.config = config;
  d.capacity = capacity;
  for (std::size_t b = 0; b < num_blocks; ++b)
    d.blocks.push_back(BlockDescriptor{1, channels, {config.leaky_slope}});
  SecnnModel m = from_descriptor(d);

  const float slope = config.leaky_slope;
  for (auto& block : m.blocks_) {
    for (auto& unit : block.units) {
      unit.weight.value = kaiming_uniform(unit.weight.value.shape(), unit.in_channels() * 9, slope, rng);
    }
  }
  const std::size_t c_first = m.blocks_.front().out_channels;
  const std::size_t c_last = m.blocks_.back().out_channels;
  m.skip_weight_.value = kaiming_uniform(m.skip_weight_.value.shape(), c_first, slope, rng);
  m.squeeze_weight_.value = kaiming_uniform(m.squeeze_weight_.value.shape(), c_last, slope, rng);
  m.hidden_weight_.value = kaiming_uniform(m.hidden_weight_.value.shape(), m.hidden_weight_.value.dim(1), slope, rng);
  m.output_weight_.value = kaiming_uniform(m.output_weight_.value.shape(), m.output_weight_.value.dim(1), 1.0f, rng);
  return m;
}

SecnnModel SecnnModel::from_descriptor(const ArchitectureDescriptor& d) {
  if (d.blocks.empty()) fail(ErrorCode::InvalidArgument, "descriptor has no blocks");
  validate_layout(d.config, d.blocks.size(), d.blocks.front().out_channels, d.capacity);
  SecnnModel m;
  m.config_ = d.config;
  m.channel_ceiling_ = d.channel_ceiling;
  std::size_t in_channels = d.config.image_channels;
  for (const auto& bd : d.blocks) {
    if (bd.units == 0 || bd.units > d.capacity || bd.out_channels == 0)
      fail(ErrorCode::InvalidArgument, "descriptor block has invalid units/channels");
    if (!bd.slopes.empty() && bd.slopes.size() != bd.units)
      fail(ErrorCode::InvalidArgument, "descriptor block slope count does not match units");
    ConvBlock block;
    block.out_channels = bd.out_channels;
    block.capacity = d.capacity;
    for (std::size_t u = 0; u < bd.units; ++u) {
      block.units.push_back(m.make_unit(u == 0 ? in_channels : bd.out_channels, bd.out_channels));
      if (!bd.slopes.empty()) block.units.back().slope = bd.slopes[u];
    }
    in_channels = bd.out_channels;
    m.blocks_.push_back(std::move(block));
  }
  const std::size_t c_first = m.blocks_.front().out_channels;
  const std::size_t c_last = m.blocks_.back().out_channels;
  const std::size_t res = m.final_resolution();
  const std::size_t head = d.config.head_channels;
  m.skip_weight_ = m.make_parameter(Tensor(Shape{c_last, c_first, 1, 1}, 0.0f));
  m.skip_bias_ = m.make_parameter(Tensor(Shape{c_last}, 0.0f));
  m.squeeze_weight_ = m.make_parameter(Tensor(Shape{head, c_last, 1, 1}, 0.0f));
  m.squeeze_bias_ = m.make_parameter(Tensor(Shape{head}, 0.0f));
  m.hidden_weight_ = m.make_parameter(Tensor(Shape{d.config.hidden_units, head * res * res}, 0.0f));
  m.hidden_bias_ = m.make_parameter(Tensor(Shape{d.config.hidden_units}, 0.0f));
  m.output_weight_ = m.make_parameter(Tensor(Shape{d.config.num_classes, d.config.hidden_units}, 0.0f));
  m.output_bias_ = m.make_parameter(Tensor(Shape{d.config.num_classes}, 0.0f));
  return m;
}

// Shared by the tracked forward and the const predict path.
template <typename Self, typename ParamFn>
Var SecnnModel::run_forward(Self& self, Graph& g, const Tensor& batch, Mode mode, Rng* rng,
                            std::span<ops::BatchNormStats* const> stats, ParamFn&& param) {
  const ModelConfig& cfg = self.config_;
  if (batch.rank() != 4 || batch.dim(1) != cfg.image_channels || batch.dim(2) != cfg.image_size ||
      batch.dim(3) != cfg.image_size)
    fail(ErrorCode::InvalidShape, "model expects [N," + std::to_string(cfg.image_channels) + "," +
                                      std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                                      "], got " + shape_str(batch.shape()));
  auto& blocks = self.blocks_;
  Var x = g.constant(batch);
  Var skip{};
  std::size_t stat_idx = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (auto& unit : blocks[b].units) {
      x = ops::conv2d(g, x, param(unit.weight), param(unit.bias), 1, 1);
      x = ops::batchnorm2d(g, x, param(unit.gamma), param(unit.beta), *stats[stat_idx++], mode);
      x = ops::leaky_relu(g, x, unit.slope);
      if (mode == Mode::Train) x = ops::dropout(g, x, cfg.dropout_conv, mode, *rng);
    }
    if (b == 0) skip = x;
    if (b + 1 == blocks.size()) {
      Var pooled = ops::avgpool2d(g, skip, self.skip_pool());
      Var projected = ops::conv2d(g, pooled, param(self.skip_weight_), param(self.skip_bias_), 1, 0);
      x = ops::add(g, x, projected);
    }
    x = ops::maxpool2d(g, x, 2, 2);
  }
  x = ops::conv2d(g, x, param(self.squeeze_weight_), param(self.squeeze_bias_), 1, 0);
  x = ops::leaky_relu(g, x, cfg.leaky_slope);
  x = ops::flatten(g, x);
  x = ops::linear(g, x, param(self.hidden_weight_), param(self.hidden_bias_));
  x = ops::leaky_relu(g, x, cfg.leaky_slope);
  if (mode == Mode::Train) x = ops::dropout(g, x, cfg.dropout_fc, mode, *rng);
  return ops::linear(g, x, param(self.output_weight_), param(self.output_bias_));
}

Var SecnnModel::forward(Graph& graph, const Tensor& batch, Mode mode, Rng& rng) {
  std::vector<ops::BatchNormStats*> stats;
  for (auto& block : blocks_)
    for (auto& unit : block.units) stats.push_back(&unit.stats);
  return run_forward(*this, graph, batch, mode, &rng, stats, [&graph](Parameter& p) { return graph.param(p); });
}

Tensor SecnnModel::predict(const Tensor& batch) const {
  Graph graph(false);
  std::vector<ops::BatchNormStats> copies;
  for (const auto& block : blocks_)
    for (const auto& unit : block.units) copies.push_back(unit.stats);
  std::vector<ops::BatchNormStats*> stats;
  for (auto& s : copies) stats.push_back(&s);
  Var out = run_forward(*this, graph, batch, Mode::Eval, nullptr, stats,
                        [&graph](const Parameter& p) { return graph.param(p); });
  return graph.value(out);
}

MutationReport SecnnModel::insert_identity_unit(std::size_t block_idx, float noise_std, Rng& rng) {
  check_block(block_idx);
  ConvBlock& block = blocks_[block_idx];
  if (block.units.size() >= block.capacity)
    fail(ErrorCode::CapacityExceeded, "block " + std::to_string(block_idx) + " already holds " +
                                          std::to_string(block.units.size()) + " units (capacity " +
                                          std::to_string(block.capacity) + ")");
  const std::size_t before = param_count();
  const std::size_t c = block.out_channels;
  ConvUnit unit = make_unit(c, c);
  Tensor& w = unit.weight.value;
  for (std::size_t o = 0; o < c; ++o) w.at(o, o, 1, 1) = 1.0f;
  if (noise_std != 0.0f)
    for (auto& v : w.data()) v += gaussian(rng) * noise_std;
  // running_var + eps == 1 makes the eval-mode batchnorm an exact identity.
  unit.stats.running_var.fill(1.0f - ops::kBatchNormEps);
  unit.slope = 1.0f;

  MutationReport report;
  report.created = {unit.weight.id, unit.bias.id, unit.gamma.id, unit.beta.id};
  block.units.push_back(std::move(unit));
  report.delta_p = static_cast<std::int64_t>(param_count()) - static_cast<std::int64_t>(before);
  return report;
}

MutationReport SecnnModel::widen_block(std::size_t block_idx, std::size_t increment, float noise_coeff, Rng& rng) {
  check_block(block_idx);
  if (increment == 0) fail(ErrorCode::InvalidArgument, "channel increment must be positive");
  ConvBlock& block = blocks_[block_idx];
  const std::size_t widened = block.out_channels + increment;
  if (channel_ceiling_ != 0 && widened > channel_ceiling_)
    fail(ErrorCode::CapacityExceeded, "widening block " + std::to_string(block_idx) + " to " + std::to_string(widened) +
                                          " exceeds channel ceiling " + std::to_string(channel_ceiling_));
  const std::size_t before = param_count();
  MutationReport report;
  for (std::size_t u = 0; u < block.units.size(); ++u) {
    ConvUnit& unit = block.units[u];
    grow_parameter(unit.weight, 0, widened, noise_coeff, rng, report);
    if (u > 0) grow_parameter(unit.weight, 1, widened, noise_coeff, rng, report);
    grow_constant(unit.bias, widened, 0.0f, report);
    grow_constant(unit.gamma, widened, 1.0f, report);
    grow_constant(unit.beta, widened, 0.0f, report);
    unit.stats.running_mean = grow_axis(unit.stats.running_mean, 0, widened, [] { return 0.0f; });
    unit.stats.running_var = grow_axis(unit.stats.running_var, 0, widened, [] { return 1.0f; });
  }
  block.out_channels = widened;

  if (block_idx + 1 < blocks_.size()) {
    grow_parameter(blocks_[block_idx + 1].units.front().weight, 1, widened, noise_coeff, rng, report);
  }
  if (block_idx == 0) {
    grow_parameter(skip_weight_, 1, widened, noise_coeff, rng, report);
  }
  if (block_idx + 1 == blocks_.size()) {
    grow_parameter(skip_weight_, 0, widened, noise_coeff, rng, report);
    grow_constant(skip_bias_, widened, 0.0f, report);
    grow_parameter(squeeze_weight_, 1, widened, noise_coeff, rng, report);
  }
  report.delta_p = static_cast<std::int64_t>(param_count()) - static_cast<std::int64_t>(before);
  return report;
}

std::size_t SecnnModel::param_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const Parameter& p) { n += p.value.numel(); });
  return n;
}

std::vector<Parameter*> SecnnModel::parameters() {
  std::vector<Parameter*> out;
  for_each_parameter([&](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> SecnnModel::parameters() const {
  std::vector<const Parameter*> out;
  for_each_parameter([&](const Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<NamedParameter> SecnnModel::named_parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t u = 0; u < blocks_[b].units.size(); ++u) {
      const ConvUnit& unit = blocks_[b].units[u];
      const std::string prefix = "blocks." + std::to_string(b) + ".units." + std::to_string(u) + ".";
      out.push_back({prefix + "conv.weight", &unit.weight});
      out.push_back({prefix + "conv.bias", &unit.bias});
      out.push_back({prefix + "bn.gamma", &unit.gamma});
      out.push_back({prefix + "bn.beta", &unit.beta});
    }
  }
  out.push_back({"skip.weight", &skip_weight_});
  out.push_back({"skip.bias", &skip_bias_});
  out.push_back({"head.squeeze.weight", &squeeze_weight_});
  out.push_back({"head.squeeze.bias", &squeeze_bias_});
  out.push_back({"head.hidden.weight", &hidden_weight_});
  out.push_back({"head.hidden.bias", &hidden_bias_});
  out.push_back({"head.output.weight", &output_weight_});
  out.push_back({"head.output.bias", &output_bias_});
  return out;
}

std::vector<Tensor*> SecnnModel::running_stats() {
  std::vector<Tensor*> out;
  for (auto& block : blocks_)
    for (auto& unit : block.units) {
      out.push_back(&unit.stats.running_mean);
      out.push_back(&unit.stats.running_var);
    }
  return out;
}

std::vector<const Tensor*> SecnnModel::running_stats() const {
  std::vector<const Tensor*> out;
  for (const auto& block : blocks_)
    for (const auto& unit : block.units) {
      out.push_back(&unit.stats.running_mean);
      out.push_back(&unit.stats.running_var);
    }
  return out;
}

std::vector<std::string> SecnnModel::running_stat_names() const {
  std::vector<std::string> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    for (std::size_t u = 0; u < blocks_[b].units.size(); ++u) {
      const std::string prefix = "blocks." + std::to_string(b) + ".units." + std::to_string(u) + ".bn.";
      out.push_back(prefix + "running_mean");
      out.push_back(prefix + "running_var");
    }
  return out;
}

void SecnnModel::zero_grad() {
  for_each_parameter([](Parameter& p) { p.zero_grad(); });
}

void SecnnModel::anneal_activations(float step) {
  const float target = config_.leaky_slope;
  for (auto& block : blocks_)
    for (auto& unit : block.units) {
      if (unit.slope > target) unit.slope = std::max(target, unit.slope - step);
      else if (unit.slope < target) unit.slope = std::min(target, unit.slope + step);
    }
}

ArchitectureDescriptor SecnnModel::describe() const {
  ArchitectureDescriptor d;
  d.config = config_;
  d.capacity = blocks_.front().capacity;
  d.channel_ceiling = channel_ceiling_;
  for (const auto& block : blocks_) {
    BlockDescriptor bd;
    bd.units = block.units.size();
    bd.out_channels = block.out_channels;
    for (const auto& unit : block.units) bd.slopes.push_back(unit.slope);
    d.blocks.push_back(std::move(bd));
  }
  d.param_count = param_count();
  return d;
}

std::size_t SecnnModel::num_units() const {
  std::size_t n = 0;
  for (const auto& block : blocks_) n += block.units.size();
  return n;
}

void SecnnModel::set_dropout(float conv_rate, float fc_rate) {
  if (conv_rate < 0.0f || conv_rate >= 1.0f || fc_rate < 0.0f || fc_rate >= 1.0f)
    fail(ErrorCode::InvalidArgument, "dropout rates must be in [0, 1)");
  config_.dropout_conv = conv_rate;
  config_.dropout_fc = fc_rate;
}

}  // namespace secnn

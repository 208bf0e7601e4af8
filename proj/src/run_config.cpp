#include "secnn/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "secnn/errors.hpp"
#include "secnn/kernels.hpp"

namespace secnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  fail(ErrorCode::Config,
       "invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " + std::string(expected) + ")");
}

template <typename T>
T parse_value(std::string_view key, std::string_view text);

template <>
std::size_t parse_value<std::size_t>(std::string_view key, std::string_view text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) bad_value(key, text, "a non-negative integer");
  return v;
}

template <>
float parse_value<float>(std::string_view key, std::string_view text) {
  float v = 0.0f;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) bad_value(key, text, "a number");
  return v;
}

template <>
bool parse_value<bool>(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  bad_value(key, text, "true or false");
}

template <>
std::string parse_value<std::string>(std::string_view, std::string_view text) {
  return std::string(text);
}

template <>
OptimizerKind parse_value<OptimizerKind>(std::string_view, std::string_view text) {
  return optimizer_kind_from_string(text);
}

std::string format_value(std::size_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(OptimizerKind v) { return std::string(to_string(v)); }
std::string format_value(float v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename Access>
ConfigKey make_key(std::string name, std::string help, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  ConfigKey key;
  key.name = name;
  key.help = std::move(help);
  key.set = [access, name](RunConfig& c, std::string_view v) { access(c) = parse_value<T>(name, v); };
  key.get = [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); };
  return key;
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back(make_key("epochs", "training epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
  k.push_back(make_key("batch_size", "minibatch size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
  k.push_back(make_key("initial_lr", "initial learning rate", [](RunConfig& c) -> auto& { return c.train.initial_lr; }));
  k.push_back(make_key("lr_patience", "epochs without improvement before halving the lr",
                       [](RunConfig& c) -> auto& { return c.train.lr_patience; }));
  k.push_back(make_key("dropout_conv", "dropout after conv units", [](RunConfig& c) -> auto& { return c.train.dropout_conv; }));
  k.push_back(make_key("dropout_fc", "dropout after the hidden layer", [](RunConfig& c) -> auto& { return c.train.dropout_fc; }));
  k.push_back(make_key("l1_coeff", "L1 penalty coefficient", [](RunConfig& c) -> auto& { return c.train.l1_coeff; }));
  k.push_back(make_key("seed", "training seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
  k.push_back(make_key("flip_probability", "horizontal flip probability",
                       [](RunConfig& c) -> auto& { return c.train.flip_probability; }));
  k.push_back(make_key("optimizer", "adam or sgd", [](RunConfig& c) -> auto& { return c.train.optimizer; }));
  k.push_back(make_key("activation_anneal_epochs", "epochs to anneal a new unit's slope from 1",
                       [](RunConfig& c) -> auto& { return c.train.activation_anneal_epochs; }));
  k.push_back(make_key("expansion_enabled", "run the expansion check each epoch",
                       [](RunConfig& c) -> auto& { return c.train.expansion_enabled; }));
  k.push_back(make_key("tau", "expansion score ratio threshold", [](RunConfig& c) -> auto& { return c.train.expansion.tau; }));
  k.push_back(make_key("lambda_n", "parameter-growth penalty", [](RunConfig& c) -> auto& { return c.train.expansion.lambda_n; }));
  k.push_back(make_key("channel_increment", "channels added per widening",
                       [](RunConfig& c) -> auto& { return c.train.expansion.channel_increment; }));
  k.push_back(make_key("noise_coeff", "std of noise on new weights",
                       [](RunConfig& c) -> auto& { return c.train.expansion.noise_coeff; }));
  k.push_back(make_key("fisher_damping", "added to Fisher diagonal entries",
                       [](RunConfig& c) -> auto& { return c.train.expansion.fisher_damping; }));
  k.push_back(make_key("score_batch_size", "training samples used for scoring",
                       [](RunConfig& c) -> auto& { return c.train.expansion.score_batch_size; }));
  k.push_back(make_key("cooldown_epochs", "epochs without checks after an expansion",
                       [](RunConfig& c) -> auto& { return c.train.expansion.cooldown_epochs; }));
  k.push_back(make_key("num_blocks", "initial number of blocks", [](RunConfig& c) -> auto& { return c.arch.num_blocks; }));
  k.push_back(make_key("initial_channels", "initial channels per block",
                       [](RunConfig& c) -> auto& { return c.arch.initial_channels; }));
  k.push_back(make_key("block_capacity", "maximum conv units per block",
                       [](RunConfig& c) -> auto& { return c.arch.block_capacity; }));
  k.push_back(make_key("channel_ceiling", "maximum channels per block (0 = none)",
                       [](RunConfig& c) -> auto& { return c.arch.channel_ceiling; }));
  k.push_back(make_key("leaky_slope", "LeakyReLU negative slope", [](RunConfig& c) -> auto& { return c.arch.model.leaky_slope; }));
  k.push_back(make_key("head_channels", "channels after the 1x1 squeeze",
                       [](RunConfig& c) -> auto& { return c.arch.model.head_channels; }));
  k.push_back(make_key("hidden_units", "hidden FC width", [](RunConfig& c) -> auto& { return c.arch.model.hidden_units; }));
  k.push_back(make_key("dataset", "CIFAR-10 directory or synthetic:KIND", [](RunConfig& c) -> auto& { return c.dataset; }));
  k.push_back(make_key("out", "run directory", [](RunConfig& c) -> auto& { return c.out; }));
  k.push_back(make_key("train_per_class", "training samples per class (0 = all)",
                       [](RunConfig& c) -> auto& { return c.train_per_class; }));
  k.push_back(make_key("val_per_class", "validation samples per class (0 = all)",
                       [](RunConfig& c) -> auto& { return c.val_per_class; }));
  k.push_back(make_key("synthetic_train_size", "synthetic training samples",
                       [](RunConfig& c) -> auto& { return c.synthetic_train_size; }));
  k.push_back(make_key("synthetic_val_size", "synthetic validation samples",
                       [](RunConfig& c) -> auto& { return c.synthetic_val_size; }));
  k.push_back(make_key("data_seed", "seed for synthetic data and subsets", [](RunConfig& c) -> auto& { return c.data_seed; }));
  k.push_back(make_key("kernel_backend", "auto, scalar or avx2", [](RunConfig& c) -> auto& { return c.kernel_backend; }));
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == key) {
      k.set(config, trim(value));
      return;
    }
  }
  fail(ErrorCode::Config, "unknown configuration key '" + std::string(key) + "'");
}

void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) fail(ErrorCode::Config, where + "expected 'key = value'");
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.code(), where + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_config_text(config, ss.str(), path.string());
  return config;
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const ConfigKey& k : config_keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

nlohmann::json to_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const ConfigKey& k : config_keys()) j[k.name] = k.get(config);
  return j;
}

void RunConfig::validate() const {
  train.validate();
  if (arch.num_blocks == 0) fail(ErrorCode::Config, "num_blocks must be positive");
  if (arch.initial_channels == 0) fail(ErrorCode::Config, "initial_channels must be positive");
  if (arch.block_capacity == 0) fail(ErrorCode::Config, "block_capacity must be positive");
  if (arch.channel_ceiling != 0 && arch.channel_ceiling < arch.initial_channels)
    fail(ErrorCode::Config, "channel_ceiling is below initial_channels");
  if (arch.model.head_channels == 0 || arch.model.hidden_units == 0)
    fail(ErrorCode::Config, "head_channels and hidden_units must be positive");
  if (!(arch.model.leaky_slope >= 0.0f && arch.model.leaky_slope < 1.0f))
    fail(ErrorCode::Config, "leaky_slope must be in [0, 1)");
  if (out.empty()) fail(ErrorCode::Config, "out must not be empty");
  if (kernel_backend != "auto" && kernel_backend != "scalar" && kernel_backend != "avx2")
    fail(ErrorCode::Config, "kernel_backend must be auto, scalar or avx2");
}

Datasets load_datasets(const RunConfig& config) {
  if (config.dataset.empty()) fail(ErrorCode::Config, "no dataset given (use --dataset PATH or synthetic:KIND)");
  Datasets out;
  constexpr std::string_view prefix = "synthetic:";
  if (config.dataset.starts_with(prefix)) {
    const auto kind = data::synthetic_kind_from_string(std::string_view(config.dataset).substr(prefix.size()));
    const std::size_t classes = config.arch.model.num_classes;
    out.train = data::synthetic_dataset(kind, config.synthetic_train_size, classes, derive_seed(config.data_seed, 1));
    out.val = data::synthetic_dataset(kind, config.synthetic_val_size, classes, derive_seed(config.data_seed, 2));
  } else {
    const std::filesystem::path dir(config.dataset);
    if (!std::filesystem::is_directory(dir)) fail(ErrorCode::Io, "dataset directory " + dir.string() + " does not exist");
    auto [train, val] = data::load_cifar10(dir);
    out.train = std::move(train);
    out.val = std::move(val);
    out.normalization = data::kCifar10Normalization;
  }
  if (config.train_per_class > 0) out.train = data::subset(out.train, config.train_per_class, derive_seed(config.data_seed, 3));
  if (config.val_per_class > 0) out.val = data::subset(out.val, config.val_per_class, derive_seed(config.data_seed, 4));
  return out;
}

SecnnModel build_model(const RunConfig& config) {
  Rng rng(derive_seed(config.train.seed, 0x696e6974ULL));
  SecnnModel model = SecnnModel::build_initial(config.arch.num_blocks, config.arch.initial_channels,
                                               config.arch.block_capacity, config.arch.model, rng);
  model.set_channel_ceiling(config.arch.channel_ceiling);
  return model;
}

}  // namespace secnn

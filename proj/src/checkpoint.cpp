#include "secnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <system_error>

#include <zlib.h>

#include "secnn/errors.hpp"

namespace secnn {

using nlohmann::json;
namespace fs = std::filesystem;

json descriptor_to_json(const ArchitectureDescriptor& d) {
  json blocks = json::array();
  for (const auto& b : d.blocks) blocks.push_back({{"units", b.units}, {"out_channels", b.out_channels}, {"slopes", b.slopes}});
  const ModelConfig& c = d.config;
  return {{"config",
           {{"image_channels", c.image_channels},
            {"image_size", c.image_size},
            {"num_classes", c.num_classes},
            {"head_channels", c.head_channels},
            {"hidden_units", c.hidden_units},
            {"leaky_slope", c.leaky_slope},
            {"dropout_conv", c.dropout_conv},
            {"dropout_fc", c.dropout_fc}}},
          {"capacity", d.capacity},
          {"channel_ceiling", d.channel_ceiling},
          {"blocks", blocks},
          {"param_count", d.param_count}};
}

ArchitectureDescriptor descriptor_from_json(const json& j) {
  try {
    ArchitectureDescriptor d;
    const json& c = j.at("config");
    d.config.image_channels = c.at("image_channels").get<std::size_t>();
    d.config.image_size = c.at("image_size").get<std::size_t>();
    d.config.num_classes = c.at("num_classes").get<std::size_t>();
    d.config.head_channels = c.at("head_channels").get<std::size_t>();
    d.config.hidden_units = c.at("hidden_units").get<std::size_t>();
    d.config.leaky_slope = c.at("leaky_slope").get<float>();
    d.config.dropout_conv = c.at("dropout_conv").get<float>();
    d.config.dropout_fc = c.at("dropout_fc").get<float>();
    d.capacity = j.at("capacity").get<std::size_t>();
    d.channel_ceiling = j.at("channel_ceiling").get<std::size_t>();
    d.param_count = j.at("param_count").get<std::size_t>();
    for (const json& b : j.at("blocks")) {
      BlockDescriptor bd;
      bd.units = b.at("units").get<std::size_t>();
      bd.out_channels = b.at("out_channels").get<std::size_t>();
      bd.slopes = b.at("slopes").get<std::vector<float>>();
      d.blocks.push_back(std::move(bd));
    }
    return d;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptData, std::string("malformed architecture descriptor: ") + e.what());
  }
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

namespace {

void append_le(std::vector<std::uint8_t>& out, const Tensor& t) {
  const std::size_t start = out.size();
  out.resize(start + t.numel() * 4);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(out.data() + start + i * 4, &bits, 4);
  }
}

void read_le(const std::uint8_t* src, Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, src + i * 4, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    t[i] = std::bit_cast<float>(bits);
  }
}

std::size_t expected_blob_bytes(const SecnnModel& model) {
  std::size_t n = 0;
  for (const Parameter* p : model.parameters()) n += p->value.numel();
  for (const Tensor* t : model.running_stats()) n += t->numel();
  return n * 4;
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot create " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  out.flush();
  if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> weights_blob(const SecnnModel& model) {
  std::vector<std::uint8_t> blob;
  blob.reserve(expected_blob_bytes(model));
  for (const Parameter* p : model.parameters()) append_le(blob, p->value);
  for (const Tensor* t : model.running_stats()) append_le(blob, *t);
  return blob;
}

void save_checkpoint(const SecnnModel& model, const CheckpointMeta& meta, const fs::path& dir) {
  const std::vector<std::uint8_t> blob = weights_blob(model);
  json params = json::array();
  for (const auto& np : model.named_parameters())
    params.push_back({{"name", np.name}, {"shape", np.parameter->value.shape()}});
  json stats = json::array();
  const auto stat_names = model.running_stat_names();
  const auto stat_tensors = model.running_stats();
  for (std::size_t i = 0; i < stat_names.size(); ++i)
    stats.push_back({{"name", stat_names[i]}, {"shape", stat_tensors[i]->shape()}});

  const CheckpointState& s = meta.state;
  const json manifest = {
      {"format", "secnn-checkpoint"},
      {"format_version", kCheckpointFormatVersion},
      {"architecture", descriptor_to_json(model.describe())},
      {"config", meta.config},
      {"state",
       {{"epoch", s.epoch},
        {"lr", s.lr},
        {"best_val_accuracy", s.best_val_accuracy},
        {"epochs_since_improvement", s.epochs_since_improvement},
        {"cooldown_remaining", s.cooldown_remaining},
        {"reason", s.reason}}},
      {"normalization", {{"mean", meta.normalization.mean}, {"stddev", meta.normalization.stddev}}},
      {"parameters", params},
      {"running_stats", stats},
      {"weights", {{"file", kWeightsFile}, {"bytes", blob.size()}, {"crc32", crc32_of(blob)}}},
  };

  const fs::path target = fs::absolute(dir);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  const fs::path old = target.parent_path() / (target.filename().string() + ".old");
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  fs::remove_all(tmp, ec);
  if (!fs::create_directories(tmp, ec) || ec) fail(ErrorCode::Io, "cannot create " + tmp.string());
  write_file(tmp / kWeightsFile, blob.data(), blob.size());
  const std::string text = manifest.dump(2) + "\n";
  write_file(tmp / kManifestFile, text.data(), text.size());

  fs::remove_all(old, ec);
  if (fs::exists(target)) {
    fs::rename(target, old, ec);
    if (ec) fail(ErrorCode::Io, "cannot move aside " + target.string() + ": " + ec.message());
  }
  fs::rename(tmp, target, ec);
  if (ec) fail(ErrorCode::Io, "cannot move " + tmp.string() + " to " + target.string() + ": " + ec.message());
  fs::remove_all(old, ec);
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const auto manifest_bytes = read_bytes(dir / kManifestFile);
  json manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end(), nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object())
    fail(ErrorCode::CorruptData, (dir / kManifestFile).string() + " is not valid JSON");
  try {
    if (manifest.at("format").get<std::string>() != "secnn-checkpoint")
      fail(ErrorCode::CorruptData, (dir / kManifestFile).string() + " is not a checkpoint manifest");
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      fail(ErrorCode::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                           " is not supported (expected " + std::to_string(kCheckpointFormatVersion) +
                                           ")");

    const json& w = manifest.at("weights");
    const auto blob = read_bytes(dir / kWeightsFile);
    if (blob.size() != w.at("bytes").get<std::size_t>() || crc32_of(blob) != w.at("crc32").get<std::uint32_t>())
      fail(ErrorCode::ChecksumMismatch, (dir / kWeightsFile).string() + " does not match its recorded checksum");

    const ArchitectureDescriptor descriptor = descriptor_from_json(manifest.at("architecture"));
    SecnnModel model = SecnnModel::from_descriptor(descriptor);
    if (model.param_count() != descriptor.param_count)
      fail(ErrorCode::LengthMismatch, "manifest param_count " + std::to_string(descriptor.param_count) +
                                          " disagrees with the architecture (" + std::to_string(model.param_count()) +
                                          ")");
    if (blob.size() != expected_blob_bytes(model))
      fail(ErrorCode::LengthMismatch, "weights blob holds " + std::to_string(blob.size()) + " bytes, architecture needs " +
                                          std::to_string(expected_blob_bytes(model)));
    const json& shapes = manifest.at("parameters");
    const auto named = model.named_parameters();
    if (shapes.size() != named.size()) fail(ErrorCode::LengthMismatch, "parameter list length disagrees");
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (shapes[i].at("name").get<std::string>() != named[i].name ||
          shapes[i].at("shape").get<Shape>() != named[i].parameter->value.shape())
        fail(ErrorCode::LengthMismatch, "parameter " + named[i].name + " disagrees with the manifest");
    }

    const std::uint8_t* src = blob.data();
    for (Parameter* p : model.parameters()) {
      read_le(src, p->value);
      src += p->value.numel() * 4;
    }
    for (Tensor* t : model.running_stats()) {
      read_le(src, *t);
      src += t->numel() * 4;
    }

    CheckpointMeta meta;
    const json& s = manifest.at("state");
    meta.state.epoch = s.at("epoch").get<std::size_t>();
    meta.state.lr = s.at("lr").get<float>();
    meta.state.best_val_accuracy = s.at("best_val_accuracy").get<double>();
    meta.state.epochs_since_improvement = s.at("epochs_since_improvement").get<std::size_t>();
    meta.state.cooldown_remaining = s.at("cooldown_remaining").get<std::size_t>();
    meta.state.reason = s.at("reason").get<std::string>();
    meta.config = manifest.at("config");
    meta.normalization.mean = manifest.at("normalization").at("mean").get<std::array<float, 3>>();
    meta.normalization.stddev = manifest.at("normalization").at("stddev").get<std::array<float, 3>>();
    return LoadedCheckpoint{std::move(model), std::move(meta), std::move(manifest)};
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptData, (dir / kManifestFile).string() + ": " + e.what());
  }
}

}  // namespace secnn

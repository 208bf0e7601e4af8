#include "secnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "secnn/errors.hpp"

namespace secnn::data {

Dataset parse_cifar10_records(std::span<const std::uint8_t> bytes, const Normalization& norm) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    fail(ErrorCode::CorruptData, "CIFAR-10 payload of " + std::to_string(bytes.size()) +
                                     " bytes is not a whole number of 3073-byte records");
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.class_count = 10;
  ds.images = Tensor(Shape{count, 3, 32, 32});
  ds.labels.resize(count);
  float* out = ds.images.ptr();
  for (std::size_t r = 0; r < count; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) fail(ErrorCode::CorruptData, "record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
    ds.labels[r] = rec[0];
    for (std::size_t i = 0; i < kCifarImageBytes; ++i) {
      const std::size_t c = i / 1024;
      out[r * kCifarImageBytes + i] = (static_cast<float>(rec[1 + i]) / 255.0f - norm.mean[c]) / norm.stddev[c];
    }
  }
  return ds;
}

std::vector<std::uint8_t> encode_cifar10_records(const Dataset& dataset, const Normalization& norm) {
  std::vector<std::uint8_t> bytes(dataset.size() * kCifarRecordBytes);
  const float* src = dataset.images.ptr();
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    rec[0] = static_cast<std::uint8_t>(dataset.labels[r]);
    for (std::size_t i = 0; i < kCifarImageBytes; ++i) {
      const std::size_t c = i / 1024;
      const float unit = src[r * kCifarImageBytes + i] * norm.stddev[c] + norm.mean[c];
      rec[1 + i] = static_cast<std::uint8_t>(std::clamp(std::lround(unit * 255.0f), 0L, 255L));
    }
  }
  return bytes;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

Dataset concat(std::vector<Dataset> parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Dataset out;
  out.class_count = parts.front().class_count;
  std::vector<float> pixels;
  pixels.reserve(total * kCifarImageBytes);
  for (auto& p : parts) {
    pixels.insert(pixels.end(), p.images.data().begin(), p.images.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.images = Tensor(Shape{total, 3, 32, 32}, std::move(pixels));
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir, const Normalization& norm) {
  std::vector<Dataset> train_parts;
  for (int i = 1; i <= 5; ++i) {
    const auto path = dir / ("data_batch_" + std::to_string(i) + ".bin");
    const auto bytes = read_file(path);
    if (bytes.size() != 10000 * kCifarRecordBytes)
      fail(ErrorCode::CorruptData, path.string() + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                                       std::to_string(10000 * kCifarRecordBytes));
    train_parts.push_back(parse_cifar10_records(bytes, norm));
  }
  const auto test_path = dir / "test_batch.bin";
  const auto test_bytes = read_file(test_path);
  if (test_bytes.size() != 10000 * kCifarRecordBytes)
    fail(ErrorCode::CorruptData, test_path.string() + " has the wrong size");
  return {concat(std::move(train_parts)), parse_cifar10_records(test_bytes, norm)};
}

void random_hflip(Tensor& batch, float probability, Rng& rng) {
  if (probability < 0.0f || probability > 1.0f) fail(ErrorCode::InvalidArgument, "flip probability must be in [0, 1]");
  if (batch.rank() != 4) fail(ErrorCode::InvalidShape, "random_hflip expects [N,C,H,W]");
  const std::size_t n = batch.dim(0), planes = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = probability >= 1.0f || (probability > 0.0f && uniform01(rng) < probability);
    if (!flip) continue;
    for (std::size_t c = 0; c < planes; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        float* row = batch.ptr() + ((i * planes + c) * h + y) * w;
        std::reverse(row, row + w);
      }
    }
  }
}

SyntheticKind synthetic_kind_from_string(std::string_view text) {
  if (text == "separable-blobs") return SyntheticKind::SeparableBlobs;
  if (text == "striped-patterns") return SyntheticKind::StripedPatterns;
  fail(ErrorCode::Config, "unknown synthetic dataset '" + std::string(text) +
                              "' (expected separable-blobs or striped-patterns)");
}

std::string_view to_string(SyntheticKind kind) {
  return kind == SyntheticKind::SeparableBlobs ? "separable-blobs" : "striped-patterns";
}

namespace {

constexpr float kTwoPi = 2.0f * std::numbers::pi_v<float>;

Tensor blob_prototype(Rng& rng) {
  Tensor proto(Shape{3, 32, 32});
  for (std::size_t c = 0; c < 3; ++c) {
    for (int wave = 0; wave < 3; ++wave) {
      const float fx = static_cast<float>(rng() % 4), fy = static_cast<float>(rng() % 4);
      const float phase = kTwoPi * uniform01(rng);
      const float amp = 0.5f + uniform01(rng);
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
          proto[(c * 32 + y) * 32 + x] +=
              amp * std::sin(kTwoPi * (fx * static_cast<float>(x) + fy * static_cast<float>(y)) / 32.0f + phase);
    }
  }
  double ss = 0.0;
  for (float v : proto.data()) ss += static_cast<double>(v) * v;
  const float rms = static_cast<float>(std::sqrt(ss / static_cast<double>(proto.numel())));
  for (auto& v : proto.data()) v /= rms > 0.0f ? rms : 1.0f;
  return proto;
}

}  // namespace

Dataset synthetic_dataset(SyntheticKind kind, std::size_t size, std::size_t classes, std::uint64_t seed) {
  if (classes == 0 || size < classes) fail(ErrorCode::InvalidArgument, "synthetic dataset needs size >= classes >= 1");
  Dataset ds;
  ds.class_count = classes;
  ds.images = Tensor(Shape{size, 3, 32, 32});
  ds.labels.resize(size);
  for (std::size_t i = 0; i < size; ++i) ds.labels[i] = static_cast<int>(i % classes);
  Rng order(derive_seed(seed, 1));
  std::shuffle(ds.labels.begin(), ds.labels.end(), order);

  std::vector<Tensor> prototypes;
  if (kind == SyntheticKind::SeparableBlobs) {
    // Prototypes depend on the class count only, so splits drawn with different seeds share one task.
    Rng proto_rng(derive_seed(0x626c6f6273, classes));
    for (std::size_t c = 0; c < classes; ++c) prototypes.push_back(blob_prototype(proto_rng));
  }
  const std::size_t orientations = std::min<std::size_t>(classes, 5);
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng(derive_seed(seed, 3, i));
    const auto label = static_cast<std::size_t>(ds.labels[i]);
    float* img = ds.images.ptr() + i * kCifarImageBytes;
    if (kind == SyntheticKind::SeparableBlobs) {
      const Tensor& proto = prototypes[label];
      for (std::size_t p = 0; p < kCifarImageBytes; ++p) img[p] = proto[p] + gaussian(rng, 1.5f);
      continue;
    }
    const float angle = std::numbers::pi_v<float> * static_cast<float>(label % orientations) /
                        static_cast<float>(orientations);
    const float cycles = 2.5f * static_cast<float>(1 + label / orientations);
    const float phase = kTwoPi * uniform01(rng);
    const float dx = std::cos(angle), dy = std::sin(angle);
    std::array<float, 3> colour{};
    for (auto& c : colour) c = 0.5f + uniform01(rng);
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        const float t = (dx * static_cast<float>(x) + dy * static_cast<float>(y)) / 32.0f;
        const float wave = std::sin(kTwoPi * cycles * t + phase);
        for (std::size_t c = 0; c < 3; ++c) img[(c * 32 + y) * 32 + x] = colour[c] * wave + gaussian(rng, 0.5f);
      }
    }
  }
  return ds;
}

Dataset gather(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorCode::InvalidArgument, "cannot gather an empty dataset");
  const std::size_t row = dataset.images.numel() / dataset.images.dim(0);
  Shape shape = dataset.images.shape();
  shape[0] = indices.size();
  std::vector<float> pixels(indices.size() * row);
  Dataset out;
  out.class_count = dataset.class_count;
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= dataset.size()) fail(ErrorCode::InvalidArgument, "gather index out of range");
    std::copy_n(dataset.images.ptr() + src * row, row, pixels.data() + i * row);
    out.labels.push_back(dataset.labels[src]);
  }
  out.images = Tensor(std::move(shape), std::move(pixels));
  return out;
}

Dataset subset(const Dataset& dataset, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(dataset.class_count);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  Rng rng(derive_seed(seed, 4));
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (per_class > idx.size())
      fail(ErrorCode::InvalidArgument, "subset wants " + std::to_string(per_class) + " samples of class " +
                                           std::to_string(c) + " but only " + std::to_string(idx.size()) + " exist");
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  std::sort(chosen.begin(), chosen.end());
  return gather(dataset, chosen);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

std::vector<std::size_t> class_histogram(const Dataset& dataset) {
  std::vector<std::size_t> hist(dataset.class_count, 0);
  for (int l : dataset.labels) ++hist.at(static_cast<std::size_t>(l));
  return hist;
}

}  // namespace secnn::data

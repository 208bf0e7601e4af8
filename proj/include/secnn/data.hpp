#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "secnn/random.hpp"
#include "secnn/tensor.hpp"

namespace secnn::data {

// Per-channel standardization applied after scaling bytes to [0, 1].
struct Normalization {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};

  bool operator==(const Normalization&) const = default;
};

// Published CIFAR-10 training-set channel statistics.
inline constexpr Normalization kCifar10Normalization{{0.4914f, 0.4822f, 0.4465f}, {0.2470f, 0.2435f, 0.2616f}};

struct Dataset {
  Tensor images;  // [M, 3, 32, 32]
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
};

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;

// Each record: 1 label byte, then R, G and B planes of 32x32 bytes, row-major.
Dataset parse_cifar10_records(std::span<const std::uint8_t> bytes, const Normalization& norm);

// Inverse of parse_cifar10_records (pixels rounded back to bytes).
std::vector<std::uint8_t> encode_cifar10_records(const Dataset& dataset, const Normalization& norm);

// Reads data_batch_1..5.bin (train) and test_batch.bin (test).
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir,
                                         const Normalization& norm = kCifar10Normalization);

// Mirrors each image across its vertical axis with the given probability.
void random_hflip(Tensor& batch, float probability, Rng& rng);

enum class SyntheticKind { SeparableBlobs, StripedPatterns };

SyntheticKind synthetic_kind_from_string(std::string_view text);
std::string_view to_string(SyntheticKind kind);

// Deterministic labelled 3x32x32 images; labels are balanced to within one.
// SeparableBlobs: per-class smooth prototype plus pixel noise (linearly separable).
// The prototypes are fixed per class count; `seed` only drives sampling.
// StripedPatterns: class = stripe orientation and frequency with random phase
// and colour, so class means vanish and a linear probe stays near chance.
Dataset synthetic_dataset(SyntheticKind kind, std::size_t size, std::size_t classes, std::uint64_t seed);

// Class-balanced deterministic subset with `per_class` samples of each class.
Dataset subset(const Dataset& dataset, std::size_t per_class, std::uint64_t seed);

Dataset gather(const Dataset& dataset, std::span<const std::size_t> indices);

// A fresh permutation of [0, n) for one epoch.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

std::vector<std::size_t> class_histogram(const Dataset& dataset);

}  // namespace secnn::data

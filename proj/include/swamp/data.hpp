#pragma once

// Datasets (IDX files, synthetic generators), train-split normalization and
// seeded mini-batch order.

#include "swamp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace swamp {

enum class Split { Train, Test, Holdout };

struct NormStats {
  std::vector<float> mean;
  std::vector<float> stddev;  // per channel
};

struct Dataset {
  RowMatrixXf inputs;     // one row per sample
  Shape feature_shape;    // {F} or {C,H,W}
  std::vector<int> labels;
  int classes = 0;
  Split split = Split::Train;
  NormStats stats;
  bool standardized = false;

  Index size() const { return inputs.rows(); }

  /// Samples at `indices` as a [n, feature_shape...] tensor.
  Tensorf batch(std::span<const Index> indices) const;
  std::vector<int> batch_labels(std::span<const Index> indices) const;
  /// The whole dataset in file order.
  Tensorf all() const;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Per-channel mean and standard deviation. Rank-1 features count each
/// feature as a channel; {C,H,W} features have C channels.
NormStats compute_stats(const Dataset& ds);

/// Applies (x - mean) / std once; a second call throws DataError.
void standardize(Dataset& ds, const NormStats& stats);

/// Reads big-endian IDX image/label files. Pixels are scaled to [0, 1] and
/// standardized with `train_stats`, or with this file's own statistics when
/// none are given (the training split).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<Index> limit = std::nullopt, const NormStats* train_stats = nullptr);

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               std::span<const std::uint8_t> pixels, Index rows, Index cols, std::span<const std::uint8_t> label_bytes);

enum class SyntheticKind { Blobs, Spirals };

SyntheticKind synthetic_kind_from(const std::string& name);

/// Deterministic 2-D classification data: blobs are Gaussian clusters centred
/// on a circle of radius 3; spirals are interleaved Archimedean arms with
/// radial noise, positions along each arm drawn uniformly. Sample i belongs
/// to class i % classes. Not standardized.
Dataset make_synthetic(SyntheticKind kind, Index n, int classes, double noise, std::uint64_t seed);

/// Splits off the last `fraction` of samples (file order) as a holdout set.
std::pair<Dataset, Dataset> split_holdout(const Dataset& train, double fraction);

struct BatchStream {
  Index length = 0;
  Index batch_size = 1;
  long epochs = 1;
  std::uint64_t seed = 0;

  Index batches_per_epoch() const { return (length + batch_size - 1) / batch_size; }
};

/// Fisher-Yates permutation keyed by (seed, epoch). The final partial batch is kept.
std::vector<Index> batch_order(const BatchStream& stream, long epoch);

}  // namespace swamp

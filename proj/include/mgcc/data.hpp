#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgcc/random.hpp"

namespace mgcc::data {

// Row-major H×W array.
template <class T>
struct Grid {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(std::int64_t h, std::int64_t w, T fill = T{})
      : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}

  T& at(std::int64_t r, std::int64_t c) { return values[static_cast<std::size_t>(r * width + c)]; }
  const T& at(std::int64_t r, std::int64_t c) const { return values[static_cast<std::size_t>(r * width + c)]; }
  std::size_t size() const noexcept { return values.size(); }
  bool same_shape(std::int64_t h, std::int64_t w) const noexcept { return height == h && width == w; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Image = Grid<float>;         // luminance in [0, 1]
using Mask = Grid<std::uint8_t>;   // {0, 1}

enum class Source { kRealLabeled, kRealUnlabeled, kSynthetic };

std::string to_string(Source s);
Source source_from_string(const std::string& s);

struct Sample {
  std::string id;
  Image image;
  std::optional<Mask> mask;
  Source source = Source::kRealLabeled;

  // Throws DataError when shapes differ or values leave their ranges.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Directory ingestion

struct LoadOptions {
  // Target side length; images are resized to size×size. 0 keeps native size.
  std::int64_t size = 256;
  std::string mask_suffix = "_mask";
  // When unset, the source is inferred: ids starting with "synth_" are
  // synthetic, images with at least one mask file are labeled, others
  // unlabeled.
  std::optional<Source> source;
};

// Recursively loads `<root>/**/<name>.{png,jpg,jpeg,bmp}` with masks
// `<name><suffix>.png` and `<name><suffix>_<n>.png`. Several masks for one
// image are merged with pixel-wise OR. The id is the file stem and must be
// unique under the root. Result is sorted by id.
std::vector<Sample> load_directory(const std::filesystem::path& root, const LoadOptions& options = {});

// Writes `<root>/<subdir>/<id>.png` and, for samples with a mask,
// `<id><suffix>.png`, both 8-bit grayscale.
void write_directory(const std::vector<Sample>& samples, const std::filesystem::path& root,
                     const std::string& subdir, const std::string& mask_suffix = "_mask");

// ---------------------------------------------------------------------------
// Split protocol

struct DatasetSplit {
  int repeat_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> labeled_ids;
  std::uint64_t seed = 0;

  // Train ids that are not labeled, in train order.
  std::vector<std::string> unlabeled_ids() const;
};

// Nearest integer with ties rounded toward the lower value (1359 * 0.5 -> 679).
std::int64_t round_half_down(double x);

struct SplitOptions {
  double train_ratio = 0.7;
  // Overrides train_ratio when set.
  std::optional<std::int64_t> train_count;
  int repeats = 3;
  std::uint64_t seed = 0;
};

std::vector<DatasetSplit> make_splits(const std::vector<std::string>& ids, const SplitOptions& options);
std::vector<DatasetSplit> make_splits(const std::vector<Sample>& samples, const SplitOptions& options);

DatasetSplit partition_labels(const DatasetSplit& split, double labeled_fraction, std::uint64_t seed);

// `split<k>_{train,val,labeled}.txt`, one id per line.
void write_split_manifests(const DatasetSplit& split, const std::filesystem::path& dir);
DatasetSplit read_split_manifests(const std::filesystem::path& dir, int repeat_index);

std::vector<std::string> read_id_list(const std::filesystem::path& file);
void write_id_list(const std::vector<std::string>& ids, const std::filesystem::path& file, bool append = false);

// Returns the samples whose ids appear in `ids`, in `ids` order. Missing ids
// raise DataError.
std::vector<Sample> select(const std::vector<Sample>& samples, const std::vector<std::string>& ids);

// ---------------------------------------------------------------------------
// Augmentation

enum class Rotation { kNone, kRightAngles };

struct AugmentationConfig {
  double flip_horizontal_prob = 0.5;
  double flip_vertical_prob = 0.5;
  Rotation rotation = Rotation::kRightAngles;
  std::uint64_t seed = 0;

  void validate() const;
};

template <class T>
Grid<T> flip_horizontal(const Grid<T>& g);
template <class T>
Grid<T> flip_vertical(const Grid<T>& g);
// Counter-clockwise quarter turns; non-square grids only accept even counts.
template <class T>
Grid<T> rotate90(const Grid<T>& g, int quarter_turns);

Sample augment(const Sample& sample, const AugmentationConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Batching

struct MixedBatch {
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
};

struct BatchPlan {
  int labeled_per_batch = 4;
  int unlabeled_per_batch = 4;
  std::uint64_t seed = 0;
  std::optional<AugmentationConfig> augmentation;
};

// Batch `step` is a pure function of (pools, plan, step): the labeled pool is
// reshuffled every epoch, the unlabeled pool every time it is exhausted.
class BatchComposer {
 public:
  BatchComposer(std::vector<Sample> labeled, std::vector<Sample> unlabeled, BatchPlan plan);

  // ceil(|labeled| / labeled_per_batch)
  std::int64_t batches_per_epoch() const noexcept { return batches_per_epoch_; }
  MixedBatch batch_at(std::int64_t step) const;

  // Pool indices used by batch `step` (for order tests).
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> indices_at(std::int64_t step) const;

  const std::vector<Sample>& labeled_pool() const noexcept { return labeled_; }
  const std::vector<Sample>& unlabeled_pool() const noexcept { return unlabeled_; }
  const BatchPlan& plan() const noexcept { return plan_; }

 private:
  std::vector<std::size_t> permutation(std::uint64_t stream_id, std::uint64_t cycle, std::size_t n) const;

  std::vector<Sample> labeled_;
  std::vector<Sample> unlabeled_;
  BatchPlan plan_;
  std::int64_t batches_per_epoch_ = 0;
};

// FNV-1a over ids and pixel bytes; recorded in run manifests.
std::uint64_t dataset_hash(const std::vector<Sample>& samples);

}  // namespace mgcc::data

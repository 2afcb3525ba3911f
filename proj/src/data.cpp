#include "mgcc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <set>

#include "mgcc/error.hpp"
#include "mgcc/image_io.hpp"

namespace fs = std::filesystem;

namespace mgcc::data {

std::string to_string(Source s) {
  switch (s) {
    case Source::kRealLabeled:
      return "real-labeled";
    case Source::kRealUnlabeled:
      return "real-unlabeled";
    case Source::kSynthetic:
      return "synthetic";
  }
  return "?";
}

Source source_from_string(const std::string& s) {
  if (s == "real-labeled") return Source::kRealLabeled;
  if (s == "real-unlabeled") return Source::kRealUnlabeled;
  if (s == "synthetic") return Source::kSynthetic;
  throw ConfigError("unknown sample source '" + s + "'");
}

void Sample::validate() const {
  if (image.size() != static_cast<std::size_t>(image.height * image.width)) {
    throw DataError(id + ": image storage does not match its shape");
  }
  for (float v : image.values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError(id + ": image value outside [0,1]");
  }
  if (mask) {
    if (!mask->same_shape(image.height, image.width) ||
        mask->size() != static_cast<std::size_t>(image.height * image.width)) {
      throw DataError(id + ": mask shape differs from image shape");
    }
    for (auto v : mask->values) {
      if (v > 1) throw DataError(id + ": mask value outside {0,1}");
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

bool is_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::string escape_regex(const std::string& s) {
  static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
  return std::regex_replace(s, special, R"(\$&)");
}

}  // namespace

std::vector<Sample> load_directory(const fs::path& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) {
    throw DataError("not a directory: " + root.string());
  }
  const std::regex mask_pattern("^(.*)" + escape_regex(options.mask_suffix) + "(_[0-9]+)?$");

  std::map<std::string, fs::path> images;
  std::map<std::string, std::vector<fs::path>> masks;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || !is_image_extension(entry.path())) continue;
    const std::string stem = entry.path().stem().string();
    std::smatch m;
    if (std::regex_match(stem, m, mask_pattern)) {
      masks[m[1].str()].push_back(entry.path());
      continue;
    }
    auto [it, inserted] = images.emplace(stem, entry.path());
    if (!inserted) {
      throw DataError("duplicate image id '" + stem + "': " + it->second.string() + " and " +
                      entry.path().string());
    }
  }
  if (images.empty()) {
    throw DataError("no images found under " + root.string());
  }
  for (const auto& [stem, files] : masks) {
    if (!images.contains(stem)) {
      throw DataError("mask without image: " + files.front().string());
    }
  }

  std::vector<Sample> samples;
  samples.reserve(images.size());
  for (const auto& [id, path] : images) {
    Sample s;
    s.id = id;
    s.image = image_io::read_luminance(path);
    if (auto it = masks.find(id); it != masks.end()) {
      std::vector<fs::path> files = it->second;
      std::sort(files.begin(), files.end());
      Mask merged(s.image.height, s.image.width);
      for (const auto& f : files) {
        Mask m = image_io::read_mask(f);
        if (!m.same_shape(s.image.height, s.image.width)) {
          throw DataError("mask size " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                          " differs from image size " + std::to_string(s.image.height) + "x" +
                          std::to_string(s.image.width) + ": " + f.string());
        }
        for (std::size_t i = 0; i < merged.size(); ++i) merged.values[i] |= m.values[i];
      }
      s.mask = std::move(merged);
    }
    if (options.size > 0) {
      s.image = image_io::resize_bilinear(s.image, options.size, options.size);
      if (s.mask) s.mask = image_io::resize_nearest(*s.mask, options.size, options.size);
    }
    if (options.source) {
      s.source = *options.source;
    } else if (id.starts_with("synth_")) {
      s.source = Source::kSynthetic;
    } else {
      s.source = s.mask ? Source::kRealLabeled : Source::kRealUnlabeled;
    }
    s.validate();
    samples.push_back(std::move(s));
  }
  return samples;  // std::map iteration is already sorted by id
}

void write_directory(const std::vector<Sample>& samples, const fs::path& root, const std::string& subdir,
                     const std::string& mask_suffix) {
  const fs::path dir = root / subdir;
  fs::create_directories(dir);
  for (const auto& s : samples) {
    image_io::write_image(s.image, dir / (s.id + ".png"));
    if (s.mask) image_io::write_mask(*s.mask, dir / (s.id + mask_suffix + ".png"));
  }
}

// ---------------------------------------------------------------------------

std::vector<std::string> DatasetSplit::unlabeled_ids() const {
  std::set<std::string> labeled(labeled_ids.begin(), labeled_ids.end());
  std::vector<std::string> out;
  for (const auto& id : train_ids) {
    if (!labeled.contains(id)) out.push_back(id);
  }
  return out;
}

std::int64_t round_half_down(double x) { return static_cast<std::int64_t>(std::ceil(x - 0.5)); }

std::vector<DatasetSplit> make_splits(const std::vector<std::string>& ids_in, const SplitOptions& options) {
  const auto n = static_cast<std::int64_t>(ids_in.size());
  if (n < 2) throw DataError("make_splits needs at least 2 samples, got " + std::to_string(n));
  if (options.repeats < 1) throw ConfigError("repeats must be >= 1");

  std::int64_t n_train;
  if (options.train_count) {
    n_train = *options.train_count;
    if (n_train < 1 || n_train >= n) {
      throw ConfigError("train_count must lie in [1, " + std::to_string(n - 1) + "]");
    }
  } else {
    if (!(options.train_ratio > 0.0 && options.train_ratio < 1.0)) {
      throw ConfigError("train_ratio must lie in (0, 1)");
    }
    n_train = std::clamp<std::int64_t>(round_half_down(options.train_ratio * static_cast<double>(n)), 1, n - 1);
  }

  std::vector<std::string> ids = ids_in;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw DataError("duplicate ids passed to make_splits");
  }

  std::vector<DatasetSplit> splits;
  for (int r = 0; r < options.repeats; ++r) {
    DatasetSplit split;
    split.repeat_index = r;
    split.seed = derive_seed(options.seed, {stream::kSplit, static_cast<std::uint64_t>(r)});
    std::vector<std::string> order = ids;
    Rng rng(split.seed);
    shuffle_in_place(order, rng);
    split.train_ids.assign(order.begin(), order.begin() + n_train);
    split.val_ids.assign(order.begin() + n_train, order.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

std::vector<DatasetSplit> make_splits(const std::vector<Sample>& samples, const SplitOptions& options) {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id);
  return make_splits(ids, options);
}

DatasetSplit partition_labels(const DatasetSplit& split, double labeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw ConfigError("labeled_fraction must lie in (0, 1]");
  }
  const auto n = static_cast<std::int64_t>(split.train_ids.size());
  const std::int64_t n_labeled =
      std::clamp<std::int64_t>(round_half_down(labeled_fraction * static_cast<double>(n)), 0, n);

  std::vector<std::string> order = split.train_ids;
  Rng rng(derive_seed(seed, {stream::kPartition, static_cast<std::uint64_t>(split.repeat_index)}));
  shuffle_in_place(order, rng);

  DatasetSplit out = split;
  out.labeled_ids.assign(order.begin(), order.begin() + n_labeled);
  std::sort(out.labeled_ids.begin(), out.labeled_ids.end());
  return out;
}

std::vector<std::string> read_id_list(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest: " + file.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void write_id_list(const std::vector<std::string>& ids, const fs::path& file, bool append) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + file.string());
  for (const auto& id : ids) out << id << '\n';
}

namespace {
fs::path manifest_path(const fs::path& dir, int k, const char* kind) {
  return dir / ("split" + std::to_string(k) + "_" + kind + ".txt");
}
}  // namespace

void write_split_manifests(const DatasetSplit& split, const fs::path& dir) {
  write_id_list(split.train_ids, manifest_path(dir, split.repeat_index, "train"));
  write_id_list(split.val_ids, manifest_path(dir, split.repeat_index, "val"));
  write_id_list(split.labeled_ids, manifest_path(dir, split.repeat_index, "labeled"));
}

DatasetSplit read_split_manifests(const fs::path& dir, int repeat_index) {
  DatasetSplit split;
  split.repeat_index = repeat_index;
  for (const char* kind : {"train", "val", "labeled"}) {
    const fs::path p = manifest_path(dir, repeat_index, kind);
    if (!fs::exists(p)) throw DataError("missing split manifest: " + p.string());
  }
  split.train_ids = read_id_list(manifest_path(dir, repeat_index, "train"));
  split.val_ids = read_id_list(manifest_path(dir, repeat_index, "val"));
  split.labeled_ids = read_id_list(manifest_path(dir, repeat_index, "labeled"));
  return split;
}

std::vector<Sample> select(const std::vector<Sample>& samples, const std::vector<std::string>& ids) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.id, &s);
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("id '" + id + "' not found in dataset");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

void AugmentationConfig::validate() const {
  auto ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!ok(flip_horizontal_prob) || !ok(flip_vertical_prob)) {
    throw ConfigError("augmentation probabilities must lie in [0, 1]");
  }
}

template <class T>
Grid<T> flip_horizontal(const Grid<T>& g) {
  Grid<T> out(g.height, g.width);
  for (std::int64_t r = 0; r < g.height; ++r)
    for (std::int64_t c = 0; c < g.width; ++c) out.at(r, g.width - 1 - c) = g.at(r, c);
  return out;
}

template <class T>
Grid<T> flip_vertical(const Grid<T>& g) {
  Grid<T> out(g.height, g.width);
  for (std::int64_t r = 0; r < g.height; ++r)
    for (std::int64_t c = 0; c < g.width; ++c) out.at(g.height - 1 - r, c) = g.at(r, c);
  return out;
}

template <class T>
Grid<T> rotate90(const Grid<T>& g, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k % 2 == 1 && g.height != g.width) {
    throw DataError("odd quarter turns would change the shape of a non-square grid");
  }
  Grid<T> cur = g;
  for (int i = 0; i < k; ++i) {
    Grid<T> next(cur.width, cur.height);
    // (r, c) -> (W-1-c, r): counter-clockwise
    for (std::int64_t r = 0; r < cur.height; ++r)
      for (std::int64_t c = 0; c < cur.width; ++c) next.at(cur.width - 1 - c, r) = cur.at(r, c);
    cur = std::move(next);
  }
  return cur;
}

template Grid<float> flip_horizontal(const Grid<float>&);
template Grid<std::uint8_t> flip_horizontal(const Grid<std::uint8_t>&);
template Grid<float> flip_vertical(const Grid<float>&);
template Grid<std::uint8_t> flip_vertical(const Grid<std::uint8_t>&);
template Grid<float> rotate90(const Grid<float>&, int);
template Grid<std::uint8_t> rotate90(const Grid<std::uint8_t>&, int);

Sample augment(const Sample& sample, const AugmentationConfig& config, Rng& rng) {
  // Draw every decision up front so the stream consumption is fixed.
  const bool flip_h = uniform01(rng) < config.flip_horizontal_prob;
  const bool flip_v = uniform01(rng) < config.flip_vertical_prob;
  int turns = 0;
  if (config.rotation == Rotation::kRightAngles) {
    const bool square = sample.image.height == sample.image.width;
    turns = square ? static_cast<int>(uniform_index(rng, 4)) : 2 * static_cast<int>(uniform_index(rng, 2));
  }

  Sample out = sample;
  auto apply = [&](auto grid) {
    if (flip_h) grid = flip_horizontal(grid);
    if (flip_v) grid = flip_vertical(grid);
    if (turns) grid = rotate90(grid, turns);
    return grid;
  };
  out.image = apply(sample.image);
  if (sample.mask) out.mask = apply(*sample.mask);
  return out;
}

// ---------------------------------------------------------------------------

BatchComposer::BatchComposer(std::vector<Sample> labeled, std::vector<Sample> unlabeled, BatchPlan plan)
    : labeled_(std::move(labeled)), unlabeled_(std::move(unlabeled)), plan_(std::move(plan)) {
  if (plan_.labeled_per_batch < 1) throw ConfigError("labeled_per_batch must be >= 1");
  if (plan_.unlabeled_per_batch < 0) throw ConfigError("unlabeled_per_batch must be >= 0");
  if (labeled_.empty()) throw DataError("labeled pool is empty");
  if (plan_.unlabeled_per_batch > 0 && unlabeled_.empty()) {
    throw DataError("unlabeled pool is empty but unlabeled_per_batch > 0");
  }
  for (const auto& s : labeled_) {
    if (!s.mask) throw DataError("labeled pool sample '" + s.id + "' has no mask");
  }
  if (plan_.augmentation) plan_.augmentation->validate();
  const auto nl = static_cast<std::int64_t>(labeled_.size());
  batches_per_epoch_ = (nl + plan_.labeled_per_batch - 1) / plan_.labeled_per_batch;
}

std::vector<std::size_t> BatchComposer::permutation(std::uint64_t stream_id, std::uint64_t cycle,
                                                    std::size_t n) const {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(derive_seed(plan_.seed, {stream_id, cycle}));
  shuffle_in_place(perm, rng);
  return perm;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> BatchComposer::indices_at(std::int64_t step) const {
  if (step < 0) throw ConfigError("negative step");
  const std::int64_t epoch = step / batches_per_epoch_;
  const std::int64_t within = step % batches_per_epoch_;

  std::vector<std::size_t> li;
  const auto perm = permutation(stream::kLabeledOrder, static_cast<std::uint64_t>(epoch), labeled_.size());
  for (int i = 0; i < plan_.labeled_per_batch; ++i) {
    // The final batch of an epoch wraps onto the start of the same permutation.
    li.push_back(perm[static_cast<std::size_t>(within * plan_.labeled_per_batch + i) % perm.size()]);
  }

  std::vector<std::size_t> ui;
  if (plan_.unlabeled_per_batch > 0) {
    const auto nu = static_cast<std::int64_t>(unlabeled_.size());
    std::int64_t cached_cycle = -1;
    std::vector<std::size_t> uperm;
    for (int i = 0; i < plan_.unlabeled_per_batch; ++i) {
      const std::int64_t pos = step * plan_.unlabeled_per_batch + i;
      const std::int64_t cycle = pos / nu;
      if (cycle != cached_cycle) {
        uperm = permutation(stream::kUnlabeledOrder, static_cast<std::uint64_t>(cycle), unlabeled_.size());
        cached_cycle = cycle;
      }
      ui.push_back(uperm[static_cast<std::size_t>(pos % nu)]);
    }
  }
  return {li, ui};
}

MixedBatch BatchComposer::batch_at(std::int64_t step) const {
  auto [li, ui] = indices_at(step);
  MixedBatch batch;
  std::uint64_t slot = 0;
  auto take = [&](const Sample& s) {
    if (!plan_.augmentation) return s;
    Rng rng(derive_seed(plan_.seed, {stream::kAugment, static_cast<std::uint64_t>(step), slot}));
    return augment(s, *plan_.augmentation, rng);
  };
  for (auto i : li) {
    batch.labeled.push_back(take(labeled_[i]));
    ++slot;
  }
  for (auto i : ui) {
    batch.unlabeled.push_back(take(unlabeled_[i]));
    ++slot;
  }
  return batch;
}

std::uint64_t dataset_hash(const std::vector<Sample>& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : samples) {
    feed(s.id.data(), s.id.size());
    feed(s.image.values.data(), s.image.values.size() * sizeof(float));
    if (s.mask) feed(s.mask->values.data(), s.mask->values.size());
  }
  return h;
}

}  // namespace mgcc::data

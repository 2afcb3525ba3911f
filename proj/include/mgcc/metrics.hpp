#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mgcc/data.hpp"

namespace mgcc::metrics {

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const noexcept { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Throws DataError on shape mismatch or non-binary values.
Confusion confusion(const data::Mask& pred, const data::Mask& gt);
Confusion confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

// A 0/0 ratio is 1.0 when prediction and ground truth are both empty, else 0.0.
double iou(const Confusion& c);
double precision(const Confusion& c);
double recall(const Confusion& c);
double f1(const Confusion& c);

struct Scores {
  double iou = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

Scores scores(const Confusion& c);

// Per-image scores averaged over images (macro) or scores of the summed
// confusion (micro).
enum class Averaging { kMacro, kMicro };
Scores average(const std::vector<Confusion>& per_image, Averaging mode);

struct MeanStd {
  double mean = 0.0;
  double stdev = 0.0;  // sample stdev (n−1); 0 for a single value
};

MeanStd mean_std(const std::vector<double>& values);

struct RunScores {
  std::string name;
  Scores scores;
};

struct Summary {
  MeanStd iou, recall, precision, f1;
  std::size_t runs = 0;
};

Summary aggregate(const std::vector<RunScores>& runs);

// Column order IoU, Recall, Precision, F1. CSV holds fractions; the text table
// prints percentages as mean±stdev. Both carry the convention footer.
std::string summary_csv(const std::vector<RunScores>& runs, const Summary& summary);
std::string summary_table(const std::vector<RunScores>& runs, const Summary& summary);

inline constexpr const char* kConventionNote =
    "per-image metrics; empty prediction on empty ground truth scores 1.0; stdev is the sample stdev (n-1) over runs";

}  // namespace mgcc::metrics

#pragma once

// Reference implementations written independently of the library code.

#include <cmath>
#include <cstdint>
#include <vector>

namespace testing::oracle {

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && gt[i] == 1) c.tp++;
    if (pred[i] == 1 && gt[i] == 0) c.fp++;
    if (pred[i] == 0 && gt[i] == 1) c.fn++;
    if (pred[i] == 0 && gt[i] == 0) c.tn++;
  }
  return c;
}

inline double ratio(std::int64_t num, std::int64_t den, bool both_empty) {
  if (den == 0) return both_empty ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline bool both_empty(const Counts& c) { return c.tp + c.fp == 0 && c.tp + c.fn == 0; }

inline double iou(const Counts& c) { return ratio(c.tp, c.tp + c.fp + c.fn, both_empty(c)); }
inline double precision(const Counts& c) { return ratio(c.tp, c.tp + c.fp, both_empty(c)); }
inline double recall(const Counts& c) { return ratio(c.tp, c.tp + c.fn, both_empty(c)); }
inline double f1(const Counts& c) {
  if (both_empty(c)) return 1.0;
  // 2TP / (2TP + FP + FN) is the same quantity as 2PR/(P+R) without the 0/0 corner.
  return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, false);
}

inline double sample_stdev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace testing::oracle

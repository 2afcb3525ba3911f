#include "mgcc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "mgcc/error.hpp"

namespace mgcc::metrics {

Confusion confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw DataError("confusion: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                    std::to_string(gt.size()));
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred[i], g = gt[i];
    if (p > 1 || g > 1) throw DataError("confusion: masks must be binary");
    c.tp += p & g;
    c.fp += p & (g ^ 1);
    c.fn += (p ^ 1) & g;
    c.tn += (p ^ 1) & (g ^ 1);
  }
  return c;
}

Confusion confusion(const data::Mask& pred, const data::Mask& gt) {
  if (!pred.same_shape(gt.height, gt.width)) {
    throw DataError("confusion: shape " + std::to_string(pred.height) + "x" + std::to_string(pred.width) + " vs " +
                    std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  return confusion(std::span<const std::uint8_t>(pred.values), std::span<const std::uint8_t>(gt.values));
}

namespace {

bool both_empty(const Confusion& c) { return c.tp == 0 && c.fp == 0 && c.fn == 0; }

double ratio(std::int64_t num, std::int64_t den, const Confusion& c) {
  if (den == 0) return both_empty(c) ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double iou(const Confusion& c) { return ratio(c.tp, c.tp + c.fp + c.fn, c); }
double precision(const Confusion& c) { return ratio(c.tp, c.tp + c.fp, c); }
double recall(const Confusion& c) { return ratio(c.tp, c.tp + c.fn, c); }
// 2pr/(p+r) reduces to 2tp/(2tp+fp+fn).
double f1(const Confusion& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c); }

Scores scores(const Confusion& c) { return {iou(c), recall(c), precision(c), f1(c)}; }

Scores average(const std::vector<Confusion>& per_image, Averaging mode) {
  if (per_image.empty()) throw DataError("average: no images");
  if (mode == Averaging::kMicro) {
    Confusion sum;
    for (const auto& c : per_image) sum += c;
    return scores(sum);
  }
  Scores acc;
  for (const auto& c : per_image) {
    const auto s = scores(c);
    acc.iou += s.iou;
    acc.recall += s.recall;
    acc.precision += s.precision;
    acc.f1 += s.f1;
  }
  const double n = static_cast<double>(per_image.size());
  return {acc.iou / n, acc.recall / n, acc.precision / n, acc.f1 / n};
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw DataError("mean_std: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

Summary aggregate(const std::vector<RunScores>& runs) {
  if (runs.empty()) throw DataError("aggregate: at least one run is required");
  std::vector<double> iou_v, rec_v, prec_v, f1_v;
  for (const auto& r : runs) {
    iou_v.push_back(r.scores.iou);
    rec_v.push_back(r.scores.recall);
    prec_v.push_back(r.scores.precision);
    f1_v.push_back(r.scores.f1);
  }
  return {mean_std(iou_v), mean_std(rec_v), mean_std(prec_v), mean_std(f1_v), runs.size()};
}

std::string summary_csv(const std::vector<RunScores>& runs, const Summary& s) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "run,iou,recall,precision,f1\n";
  for (const auto& r : runs) {
    os << r.name << ',' << r.scores.iou << ',' << r.scores.recall << ',' << r.scores.precision << ','
       << r.scores.f1 << '\n';
  }
  os << "mean," << s.iou.mean << ',' << s.recall.mean << ',' << s.precision.mean << ',' << s.f1.mean << '\n';
  os << "stdev," << s.iou.stdev << ',' << s.recall.stdev << ',' << s.precision.stdev << ',' << s.f1.stdev << '\n';
  os << "# " << kConventionNote << '\n';
  return os.str();
}

std::string summary_table(const std::vector<RunScores>& runs, const Summary& s) {
  std::size_t name_w = 4;
  for (const auto& r : runs) name_w = std::max(name_w, r.name.size());
  char buf[256];
  std::ostringstream os;
  std::snprintf(buf, sizeof buf, "%-*s  %12s  %12s  %12s  %12s\n", static_cast<int>(name_w), "Run", "IoU", "Recall",
                "Precision", "F1");
  os << buf;
  for (const auto& r : runs) {
    std::snprintf(buf, sizeof buf, "%-*s  %12.2f  %12.2f  %12.2f  %12.2f\n", static_cast<int>(name_w), r.name.c_str(),
                  100.0 * r.scores.iou, 100.0 * r.scores.recall, 100.0 * r.scores.precision, 100.0 * r.scores.f1);
    os << buf;
  }
  auto cell = [](const MeanStd& m) {
    char c[64];
    std::snprintf(c, sizeof c, "%.2f±%.2f", 100.0 * m.mean, 100.0 * m.stdev);
    return std::string(c);
  };
  // "±" is two bytes in UTF-8; pad by one extra so columns line up.
  std::snprintf(buf, sizeof buf, "%-*s  %13s  %13s  %13s  %13s\n", static_cast<int>(name_w), "Mean", cell(s.iou).c_str(),
                cell(s.recall).c_str(), cell(s.precision).c_str(), cell(s.f1).c_str());
  os << buf;
  os << "(" << s.runs << " runs, metrics in %; " << kConventionNote << ")\n";
  return os.str();
}

}  // namespace mgcc::metrics

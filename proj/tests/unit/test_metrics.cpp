#include "../doctest_torch.hpp"

#include <random>

#include "../oracles.hpp"
#include "mgcc/error.hpp"
#include "mgcc/metrics.hpp"

using namespace mgcc;
using namespace mgcc::metrics;

namespace {

data::Mask random_mask(std::mt19937_64& rng, std::int64_t side, double density) {
  std::bernoulli_distribution d(density);
  data::Mask m(side, side, 0);
  for (auto& v : m.values) v = d(rng) ? 1 : 0;
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("identical masks") {
    data::Mask m(4, 4, 0);
    for (int i = 0; i < 5; ++i) m.values[static_cast<std::size_t>(i * 3)] = 1;
    auto c = confusion(m, m);
    CHECK(c == Confusion{5, 0, 0, 11});
    CHECK(iou(c) == 1.0);
  }

  TEST_CASE("complementary masks") {
    std::mt19937_64 rng(1);
    auto gt = random_mask(rng, 8, 0.4);
    auto pred = gt;
    for (auto& v : pred.values) v = 1 - v;
    auto c = confusion(pred, gt);
    CHECK(c.tp == 0);
    CHECK(c.tn == 0);
    CHECK(c.total() == 64);
  }

  TEST_CASE("metric arithmetic") {
    Confusion c{2, 2, 2, 10};
    CHECK(iou(c) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(precision(c) == 0.5);
    CHECK(recall(c) == 0.5);
    CHECK(f1(c) == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("empty prediction on empty ground truth scores 1") {
    Confusion c{0, 0, 0, 64};
    CHECK(iou(c) == 1.0);
    CHECK(precision(c) == 1.0);
    CHECK(recall(c) == 1.0);
    CHECK(f1(c) == 1.0);
    Confusion miss{0, 0, 5, 59};
    CHECK(iou(miss) == 0.0);
    CHECK(precision(miss) == 0.0);
    CHECK(recall(miss) == 0.0);
  }

  TEST_CASE("brute-force oracle on random pairs") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> dens(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
      auto pred = random_mask(rng, 16, trial % 10 == 0 ? 0.0 : dens(rng));
      auto gt = random_mask(rng, 16, trial % 7 == 0 ? 0.0 : dens(rng));
      auto c = confusion(pred, gt);
      auto o = testing::oracle::confusion(pred.values, gt.values);
      REQUIRE(c.tp == o.tp);
      REQUIRE(c.fp == o.fp);
      REQUIRE(c.fn == o.fn);
      REQUIRE(c.tn == o.tn);
      CHECK(iou(c) == testing::oracle::iou(o));
      CHECK(precision(c) == testing::oracle::precision(o));
      CHECK(recall(c) == testing::oracle::recall(o));
      CHECK(f1(c) == testing::oracle::f1(o));
      CHECK(f1(c) == doctest::Approx(2.0 * iou(c) / (1.0 + iou(c))).epsilon(1e-12));
      if (c.tp > 0) CHECK(iou(c) <= f1(c));
    }
  }

  TEST_CASE("confusion is invariant to a joint permutation") {
    std::mt19937_64 rng(5);
    auto pred = random_mask(rng, 16, 0.3), gt = random_mask(rng, 16, 0.6);
    std::vector<std::size_t> perm(256);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    data::Mask pp(16, 16), pg(16, 16);
    for (std::size_t i = 0; i < 256; ++i) {
      pp.values[i] = pred.values[perm[i]];
      pg.values[i] = gt.values[perm[i]];
    }
    CHECK(confusion(pp, pg) == confusion(pred, gt));
  }

  TEST_CASE("metrics are monotone in tp at fixed totals") {
    // Move one pixel at a time from fn to tp.
    for (std::int64_t tp = 0; tp < 20; ++tp) {
      Confusion a{tp, 3, 20 - tp, 40}, b{tp + 1, 3, 19 - tp, 40};
      CHECK(iou(b) > iou(a));
      CHECK(recall(b) > recall(a));
      CHECK(f1(b) > f1(a));
      CHECK(precision(b) >= precision(a));
      for (double v : {iou(a), precision(a), recall(a), f1(a)}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("errors on mismatched or non-binary masks") {
    CHECK_THROWS_AS(confusion(data::Mask(4, 4, 0), data::Mask(4, 5, 0)), DataError);
    CHECK_THROWS_AS(confusion(data::Mask(2, 2, 2), data::Mask(2, 2, 0)), DataError);
  }

  TEST_CASE("macro and micro averaging") {
    std::vector<Confusion> per{{2, 2, 2, 10}, {0, 0, 0, 16}};
    auto macro = average(per, Averaging::kMacro);
    CHECK(macro.iou == doctest::Approx((1.0 / 3.0 + 1.0) / 2.0));
    auto micro = average(per, Averaging::kMicro);
    CHECK(micro.iou == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(average({}, Averaging::kMacro), DataError);
  }

  TEST_CASE("aggregation uses the sample stdev") {
    auto ms = mean_std({0.66, 0.68, 0.70});
    CHECK(ms.mean == doctest::Approx(0.68));
    CHECK(ms.stdev == doctest::Approx(0.02));
    CHECK(ms.stdev == doctest::Approx(testing::oracle::sample_stdev({0.66, 0.68, 0.70})));
    CHECK(mean_std({0.68, 0.68, 0.68}).stdev == 0.0);
    auto one = mean_std({0.7});
    CHECK(one.mean == 0.7);
    CHECK(one.stdev == 0.0);
  }

  TEST_CASE("summary output carries the column order and convention") {
    std::vector<RunScores> runs{{"split0", {0.66, 0.7, 0.8, 0.75}},
                                {"split1", {0.68, 0.7, 0.8, 0.75}},
                                {"split2", {0.70, 0.7, 0.8, 0.75}}};
    auto s = aggregate(runs);
    CHECK(s.runs == 3);
    CHECK(s.iou.mean == doctest::Approx(0.68));
    CHECK(s.iou.stdev == doctest::Approx(0.02));
    CHECK(s.recall.stdev == doctest::Approx(0.0));
    auto csv = summary_csv(runs, s);
    CHECK(csv.rfind("run,iou,recall,precision,f1\n", 0) == 0);
    CHECK(csv.find("mean,0.680000") != std::string::npos);
    CHECK(csv.find(kConventionNote) != std::string::npos);
    auto table = summary_table(runs, s);
    CHECK(table.find("68.00±2.00") != std::string::npos);
    CHECK(table.find("n-1") != std::string::npos);
  }
}

#include "../doctest_torch.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "../support.hpp"
#include "mgcc/data.hpp"
#include "mgcc/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const fs::path& scratch) {
  const auto log = scratch / "cli.log";
  const std::string cmd = std::string(MGCC_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 32 px images and a two-stage network keep every command fast.
fs::path write_small_config(const fs::path& dir) {
  json cfg = {
      {"data", {{"image_size", 32}, {"toy", {{"image_size", 32}, {"lesion_axis_range", {6.0, 14.0}}}}}},
      {"network",
       {{"encoder_channels", {8, 16}}, {"bottleneck_channels", 32}, {"convmixer_length", 3}, {"convmixer_kernel", 3},
        {"taps", {0, 1, 2, 3}}}},
      {"optim", {{"epochs", 2}, {"eval_every", 1}}},
      {"ldm",
       {{"vae", {{"image_size", 32}, {"base_channels", 8}, {"lr", 1e-3}, {"epochs", 1}, {"batch", 8}}},
        {"denoiser", {{"channels", {8, 16}}, {"time_embedding", 16}, {"lr", 1e-3}, {"epochs", 1}, {"batch", 8}}},
        {"ddim", {{"steps", 5}}}}},
  };
  const auto path = dir / "small.json";
  std::ofstream(path) << cfg.dump(2);
  return path;
}

std::vector<double> csv_column(const fs::path& csv, const std::string& name) {
  std::ifstream in(csv);
  std::string line, cell;
  std::getline(in, line);
  int index = 0;
  {
    std::stringstream hs(line);
    while (std::getline(hs, cell, ',') && cell != name) ++index;
  }
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    for (int i = 0; i <= index; ++i) std::getline(ss, cell, ',');
    out.push_back(std::stod(cell));
  }
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("prepare --toy writes the dataset and is deterministic") {
    testing::TempDir dir("prep");
    const auto cfg = write_small_config(dir.path()).string();
    const std::string base = "prepare --config " + cfg + " --toy 30 --seed 1 --out ";
    auto r1 = run(base + (dir / "a").string(), dir.path());
    REQUIRE_MESSAGE(r1.code == 0, r1.output);
    auto r2 = run(base + (dir / "b").string(), dir.path());
    REQUIRE(r2.code == 0);
    std::size_t pngs = 0;
    for (const auto& e : fs::directory_iterator(dir / "a/images")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 60);
    for (int k = 0; k < 3; ++k) {
      for (const char* part : {"train", "val", "labeled"}) {
        const auto name = "split" + std::to_string(k) + "_" + part + ".txt";
        CHECK(slurp(dir / "a/splits" / name) == slurp(dir / "b/splits" / name));
      }
    }
    auto r3 = run("prepare --config " + cfg + " --toy 30 --seed 2 --out " + (dir / "c").string(), dir.path());
    REQUIRE(r3.code == 0);
    CHECK(slurp(dir / "a/splits/split0_train.txt") != slurp(dir / "c/splits/split0_train.txt"));
  }

  TEST_CASE("prepare on a 780-image directory with a fixed train count") {
    testing::TempDir dir("prep780");
    fs::create_directories(dir / "raw");
    for (int i = 0; i < 780; ++i) {
      auto s = testing::square_sample("case" + std::to_string(i), 16, i % 8, 2, 4);
      mgcc::image_io::write_image(s.image, dir / "raw" / (s.id + ".png"));
      mgcc::image_io::write_mask(*s.mask, dir / "raw" / (s.id + "_mask.png"));
    }
    json cfg = {{"data", {{"image_size", 16}}}, {"network", {{"encoder_channels", {4, 8}}, {"bottleneck_channels", 8}}}};
    std::ofstream(dir / "c.json") << cfg.dump();
    auto r = run("prepare --config " + (dir / "c.json").string() + " --input " + (dir / "raw").string() +
                     " --train-count 526 --out " + (dir / "ds").string(),
                 dir.path());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    for (int k = 0; k < 3; ++k) {
      auto s = mgcc::data::read_split_manifests(dir / "ds/splits", k);
      CHECK(s.train_ids.size() == 526);
      CHECK(s.val_ids.size() == 254);
      CHECK(s.labeled_ids.size() == 263);
    }
  }

  TEST_CASE("config and data errors map to exit codes") {
    testing::TempDir dir("errors");
    std::ofstream(dir / "bad.json") << R"({"optim": {"epochs": 0, "momentum": 2}, "nonsense": 1})";
    auto r = run("train-seg --config " + (dir / "bad.json").string() + " --data " + dir.path().string() + " --out " +
                     (dir / "run").string(),
                 dir.path());
    CHECK(r.code == 2);
    CHECK(r.output.find("nonsense") != std::string::npos);
    CHECK(r.output.find("epochs") != std::string::npos);
    CHECK(r.output.find("momentum") != std::string::npos);

    const auto cfg = write_small_config(dir.path()).string();
    REQUIRE(run("prepare --config " + cfg + " --toy 12 --out " + (dir / "ds").string(), dir.path()).code == 0);
    fs::remove(dir / "ds/splits/split0_labeled.txt");
    auto m = run("train-seg --config " + cfg + " --data " + (dir / "ds").string() + " --out " + (dir / "run").string(),
                 dir.path());
    CHECK(m.code == 3);
    CHECK(m.output.find("split0_labeled.txt") != std::string::npos);

    auto missing = run("eval --ckpt " + (dir / "nope").string() + " --data " + (dir / "ds").string(), dir.path());
    CHECK(missing.code == 3);
    CHECK(run("frobnicate", dir.path()).code != 0);
  }

  TEST_CASE("train-seg modes, report and render") {
    testing::TempDir dir("seg");
    const auto cfg = write_small_config(dir.path()).string();
    REQUIRE(run("prepare --config " + cfg + " --toy 40 --seed 3 --out " + (dir / "ds").string(), dir.path()).code == 0);

    auto sup = run("train-seg --config " + cfg + " --data " + (dir / "ds").string() + " --mode supervised --out " +
                       (dir / "sup").string(),
                   dir.path());
    REQUIRE_MESSAGE(sup.code == 0, sup.output);
    for (const char* f : {"ckpt_best", "ckpt_last", "log.csv", "manifest.json", "final_metrics.json"}) {
      CHECK(fs::exists(dir / "sup" / f));
    }
    for (double v : csv_column(dir / "sup/log.csv", "loss_unsup")) CHECK(v == 0.0);

    auto mg = run("train-seg --config " + cfg + " --data " + (dir / "ds").string() + " --mode mgcc --out " +
                      (dir / "mg").string(),
                  dir.path());
    REQUIRE_MESSAGE(mg.code == 0, mg.output);
    for (double v : csv_column(dir / "mg/log.csv", "loss_unsup")) CHECK(v > 0.0);

    for (const char* copy : {"r1", "r2", "r3"}) fs::copy(dir / "mg", dir / copy, fs::copy_options::recursive);
    auto rep = run("report --runs " + (dir / "r1").string() + " " + (dir / "r2").string() + " " +
                       (dir / "r3").string() + " --csv " + (dir / "summary.csv").string(),
                   dir.path());
    REQUIRE_MESSAGE(rep.code == 0, rep.output);
    const auto csv = slurp(dir / "summary.csv");
    CHECK(csv.find("stdev,0.000000,0.000000,0.000000,0.000000") != std::string::npos);

    auto ren = run("render --config " + cfg + " --ckpt " + (dir / "mg/ckpt_best").string() + " --images " +
                       (dir / "ds/images").string() + " --out " + (dir / "overlays").string(),
                   dir.path());
    REQUIRE_MESSAGE(ren.code == 0, ren.output);
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(dir / "overlays")) {
      if (e.path().extension() != ".png") continue;
      ++count;
      auto img = mgcc::image_io::read_luminance(e.path());
      CHECK(img.width == 3 * 32);
      CHECK(img.height == 32);
    }
    CHECK(count == 40);
    CHECK(fs::exists(dir / "overlays/legend.txt"));
  }

  TEST_CASE("memorized single sample evaluates near perfectly") {
    testing::TempDir dir("memo");
    const auto cfg = write_small_config(dir.path()).string();
    REQUIRE(run("prepare --config " + cfg + " --toy 2 --seed 4 --train-count 1 --labeled-fraction 1 --out " +
                    (dir / "ds").string(),
                dir.path())
                .code == 0);
    // One image per step needs a larger rate than the default.
    json memo = json::parse(slurp(cfg));
    memo["optim"]["lr0"] = 0.1;
    std::ofstream(dir / "memo.json") << memo.dump();
    auto tr = run("train-seg --config " + (dir / "memo.json").string() + " --data " + (dir / "ds").string() +
                      " --mode supervised --epochs 200 --out " + (dir / "run").string(),
                  dir.path());
    REQUIRE_MESSAGE(tr.code == 0, tr.output);
    auto ev = run("eval --config " + cfg + " --ckpt " + (dir / "run/ckpt_last").string() + " --data " +
                      (dir / "ds").string() + " --subset train --json " + (dir / "ev.json").string(),
                  dir.path());
    REQUIRE_MESSAGE(ev.code == 0, ev.output);
    auto j = json::parse(slurp(dir / "ev.json"));
    CHECK(j.at("iou").get<double>() > 0.95);
    CHECK(ev.output.find("n-1") != std::string::npos);
  }

  TEST_CASE("generation is reproducible and feeds train-seg") {
    testing::TempDir dir("gen");
    const auto cfg = write_small_config(dir.path()).string();
    const auto ds = (dir / "ds").string();
    REQUIRE(run("prepare --config " + cfg + " --toy 40 --out " + ds, dir.path()).code == 0);
    auto v = run("train-vae --config " + cfg + " --data " + ds + " --out " + (dir / "vae").string(), dir.path());
    REQUIRE_MESSAGE(v.code == 0, v.output);
    auto l = run("train-ldm --config " + cfg + " --vae " + (dir / "vae").string() + " --data " + ds + " --out " +
                     (dir / "ldm").string(),
                 dir.path());
    REQUIRE_MESSAGE(l.code == 0, l.output);

    const std::string gen = "generate --config " + cfg + " --vae " + (dir / "vae").string() + " --ldm " +
                            (dir / "ldm").string() + " --n 6 --seed 3 --out ";
    REQUIRE(run(gen + (dir / "g1").string(), dir.path()).code == 0);
    REQUIRE(run(gen + (dir / "g2").string(), dir.path()).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "g1")) {
      if (e.path().extension() != ".png") continue;
      ++files;
      CHECK(slurp(e.path()) == slurp(dir / "g2" / e.path().filename()));
    }
    CHECK(files == 6);
    auto side = json::parse(slurp(dir / "g1/generate_3.json"));
    CHECK(side.at("steps").get<int>() == 5);

    auto tr = run("train-seg --config " + cfg + " --data " + ds + " --unlabeled-pool " + (dir / "g1/pool.txt").string() +
                      " --epochs 1 --out " + (dir / "run").string(),
                  dir.path());
    REQUIRE_MESSAGE(tr.code == 0, tr.output);
    auto manifest = json::parse(slurp(dir / "run/manifest.json"));
    CHECK(manifest.at("pool_count").get<int>() == 6);
    CHECK(manifest.at("unlabeled_sources").at("synthetic").get<int>() == 6);
  }
}

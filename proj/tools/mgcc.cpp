// mgcc: dataset preparation, LDM training and sampling, semi-supervised
// segmentation training, evaluation, reporting and overlay rendering.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.

#include <torch/torch.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mgcc/checkpoint.hpp"
#include "mgcc/config.hpp"
#include "mgcc/data.hpp"
#include "mgcc/error.hpp"
#include "mgcc/image_io.hpp"
#include "mgcc/ldm.hpp"
#include "mgcc/metrics.hpp"
#include "mgcc/toy.hpp"
#include "mgcc/trainer.hpp"
#include "render.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgcc;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config; every field is optional");
    cmd->add_option("--seed", seed, "master seed (overrides run.seed)");
  }

  config::RunConfig load() const {
    config::RunConfig cfg = config_path.empty() ? config::RunConfig{} : config::load(config_path);
    if (seed) {
      cfg.run.seed = *seed;
      cfg.data.augmentation.seed = *seed;
      cfg.data.toy.seed = *seed;
      cfg.ldm.ddim.seed = *seed;
    }
    if (cfg.run.threads > 0) torch::set_num_threads(cfg.run.threads);
    return cfg;
  }
};

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<data::Sample> load_images(const fs::path& dir, const config::RunConfig& cfg) {
  if (!fs::is_directory(dir)) throw DataError("image directory not found: " + dir.string());
  data::LoadOptions opts;
  opts.size = cfg.data.image_size;
  opts.mask_suffix = cfg.data.mask_suffix;
  return data::load_directory(dir, opts);
}

// `<dataset>/images` when present, otherwise the directory itself.
fs::path image_root(const fs::path& dataset) {
  return fs::is_directory(dataset / "images") ? dataset / "images" : dataset;
}

std::vector<data::Sample> as_unlabeled(std::vector<data::Sample> samples) {
  for (auto& s : samples) {
    s.mask.reset();
    if (s.source == data::Source::kRealLabeled) s.source = data::Source::kRealUnlabeled;
  }
  return samples;
}

// Pool manifests list ids; the images live next to the manifest.
std::vector<data::Sample> load_pool(const fs::path& pool, const config::RunConfig& cfg) {
  if (!fs::exists(pool)) throw DataError("unlabeled pool manifest not found: " + pool.string());
  const auto ids = data::read_id_list(pool);
  auto dir = pool.parent_path().empty() ? fs::path(".") : pool.parent_path();
  return as_unlabeled(data::select(load_images(dir, cfg), ids));
}

// Train ids of a split when manifests are given, otherwise everything.
std::vector<data::Sample> training_images(const fs::path& dataset, const std::string& splits, int split,
                                          const config::RunConfig& cfg) {
  auto all = load_images(image_root(dataset), cfg);
  if (splits.empty()) return all;
  return data::select(all, data::read_split_manifests(splits, split).train_ids);
}

void print_scores(const std::string& label, const metrics::Scores& s) {
  std::printf("%-12s IoU %.4f  Recall %.4f  Precision %.4f  F1 %.4f\n", label.c_str(), s.iou, s.recall, s.precision,
              s.f1);
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  Common common;
  std::string input, out;
  int toy = 0;
  std::optional<std::int64_t> train_count;
  std::optional<double> labeled_fraction;
};

int run_prepare(const PrepareArgs& a) {
  auto cfg = a.common.load();
  if (a.train_count) cfg.data.train_count = a.train_count;
  if (a.labeled_fraction) cfg.data.labeled_fraction = *a.labeled_fraction;
  if (auto p = cfg.problems(); !p.empty()) throw ConfigError(p.front());
  if (a.input.empty() == (a.toy == 0)) throw ConfigError("prepare needs exactly one of --input or --toy");

  std::vector<data::Sample> samples;
  if (a.toy > 0) {
    samples = data::generate_toy(cfg.data.toy, a.toy);
  } else {
    samples = load_images(a.input, cfg);
  }
  const fs::path out(a.out);
  data::write_directory(samples, out, "images", cfg.data.mask_suffix);

  std::vector<std::string> ids;
  for (const auto& s : samples) {
    if (s.mask) ids.push_back(s.id);
  }
  if (ids.size() != samples.size()) {
    std::fprintf(stderr, "note: %zu images without masks are kept in images/ but excluded from splits\n",
                 samples.size() - ids.size());
  }
  data::SplitOptions so{cfg.data.train_ratio, cfg.data.train_count, cfg.data.repeats, cfg.run.seed};
  const auto splits = data::make_splits(ids, so);
  for (const auto& s : splits) {
    const auto part = data::partition_labels(s, cfg.data.labeled_fraction, cfg.run.seed);
    data::write_split_manifests(part, out / "splits");
    std::printf("split %d: train %zu (labeled %zu, unlabeled %zu), val %zu\n", part.repeat_index,
                part.train_ids.size(), part.labeled_ids.size(), part.unlabeled_ids().size(), part.val_ids.size());
  }
  write_json({{"command", "prepare"},
              {"source", a.toy > 0 ? json("toy") : json(a.input)},
              {"toy_count", a.toy},
              {"seed", cfg.run.seed},
              {"images", samples.size()},
              {"dataset_hash", ckpt::hex(data::dataset_hash(samples))},
              {"config", config::to_json(cfg)}},
             out / "prepare.json");
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainSegArgs {
  Common common;
  std::string mode, data, splits, pool, out;
  int split = -1;
  std::optional<int> epochs;
};

int run_train_seg(const TrainSegArgs& a) {
  auto cfg = a.common.load();
  if (!a.mode.empty()) cfg.optim.mode = train::mode_from_string(a.mode);
  if (a.epochs) cfg.optim.epochs = *a.epochs;
  if (a.split >= 0) cfg.data.split_index = a.split;
  if (!a.out.empty()) cfg.run.output_dir = a.out;
  if (auto p = cfg.problems(); !p.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : p) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

  const fs::path dataset(a.data);
  const fs::path split_dir = a.splits.empty() ? dataset / "splits" : fs::path(a.splits);
  const auto split = data::read_split_manifests(split_dir, cfg.data.split_index);
  const auto all = load_images(image_root(dataset), cfg);

  auto labeled = data::select(all, split.labeled_ids);
  auto unlabeled = as_unlabeled(data::select(all, split.unlabeled_ids()));
  const auto validation = data::select(all, split.val_ids);
  std::size_t pooled = 0;
  if (!a.pool.empty()) {
    auto extra = load_pool(a.pool, cfg);
    pooled = extra.size();
    unlabeled.insert(unlabeled.end(), extra.begin(), extra.end());
  }

  data::BatchPlan plan;
  plan.labeled_per_batch = cfg.data.labeled_per_batch;
  // Supervised-only training never reads the unlabeled half.
  plan.unlabeled_per_batch = cfg.optim.mode == train::Mode::kSupervisedOnly ? 0 : cfg.data.unlabeled_per_batch;
  plan.seed = cfg.run.seed;
  if (cfg.data.augment) {
    plan.augmentation = cfg.data.augmentation;
    plan.augmentation->seed = cfg.run.seed;
  }
  data::BatchComposer composer(labeled, unlabeled, plan);

  std::printf("train-seg: mode %s, %zu labeled, %zu unlabeled (%zu from pool), %zu val, %d epochs x %lld steps\n",
              train::to_string(cfg.optim.mode).c_str(), labeled.size(), unlabeled.size(), pooled, validation.size(),
              cfg.optim.epochs, static_cast<long long>(composer.batches_per_epoch()));

  json extra = {{"config", config::to_json(cfg)},
                {"data", a.data},
                {"splits", split_dir.string()},
                {"split_index", cfg.data.split_index},
                {"unlabeled_pool", a.pool},
                {"pool_count", pooled}};
  json sources = json::object();
  for (const auto& s : unlabeled) {
    const auto key = data::to_string(s.source);
    sources[key] = sources.value(key, 0) + 1;
  }
  extra["unlabeled_sources"] = sources;
  const auto result = train::fit(cfg.trainer_config(), composer, validation, cfg.run.output_dir, extra);
  std::printf("best val IoU %.4f; run written to %s\n", result.state.best_val_iou, cfg.run.output_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainVaeArgs {
  Common common;
  std::string data, splits, out;
  int split = 0;
  std::optional<int> epochs;
};

int run_train_vae(const TrainVaeArgs& a) {
  auto cfg = a.common.load();
  if (a.epochs) cfg.ldm.vae.epochs = *a.epochs;
  cfg.ldm.vae.image_size = cfg.data.image_size;
  if (auto p = cfg.ldm.vae.problems(); !p.empty()) throw ConfigError("vae: " + p.front());

  const auto samples = training_images(a.data, a.splits, a.split, cfg);
  ldm::VAE vae(cfg.ldm.vae, derive_seed(cfg.run.seed, {stream::kInit, 100}));
  const double before = ldm::reconstruction_mse(*vae, samples);
  const auto log = ldm::train_vae(*vae, samples, cfg.ldm.vae, cfg.run.seed);
  const double after = ldm::reconstruction_mse(*vae, samples);
  ldm::save_vae(*vae, a.out, log.epoch_loss);
  std::printf("train-vae: %zu images, %d epochs, reconstruction MSE %.5f -> %.5f; saved %s\n", samples.size(),
              cfg.ldm.vae.epochs, before, after, a.out.c_str());
  return 0;
}

struct TrainLdmArgs {
  Common common;
  std::string vae, data, splits, out;
  int split = 0;
  std::optional<int> epochs;
};

int run_train_ldm(const TrainLdmArgs& a) {
  auto cfg = a.common.load();
  if (a.epochs) cfg.ldm.denoiser.epochs = *a.epochs;
  if (!fs::exists(a.vae)) throw DataError("vae checkpoint not found: " + a.vae);
  auto vae = ldm::load_vae(a.vae);
  cfg.data.image_size = vae->config().image_size;

  const auto samples = training_images(a.data, a.splits, a.split, cfg);
  const auto latents = ldm::encode_all(*vae, samples);
  const double scale = ldm::latent_scale(latents);
  const ldm::DiffusionSchedule schedule(cfg.ldm.diffusion);
  ldm::Denoiser den(vae->config().latent_channels, cfg.ldm.denoiser, derive_seed(cfg.run.seed, {stream::kInit, 101}));
  const auto log = ldm::train_denoiser(*den, latents * scale, schedule, cfg.ldm.denoiser, cfg.run.seed);
  ldm::save_denoiser(*den, schedule, scale, vae->config().latent_channels, ckpt::file_hash(a.vae), a.out,
                     log.epoch_loss);
  std::printf("train-ldm: %zu latents, scale %.4f, %d epochs, loss %.5f -> %.5f; saved %s\n", samples.size(), scale,
              cfg.ldm.denoiser.epochs, log.epoch_loss.front(), log.epoch_loss.back(), a.out.c_str());
  return 0;
}

struct GenerateArgs {
  Common common;
  std::string vae, ldm_ckpt, out, pool, reference;
  int n = 0;
  std::optional<int> steps;
  std::optional<double> eta;
  bool band_filter = false;
};

int run_generate(const GenerateArgs& a) {
  auto cfg = a.common.load();
  if (a.steps) cfg.ldm.ddim.steps = *a.steps;
  if (a.eta) cfg.ldm.ddim.eta = *a.eta;
  for (const auto& p : {a.vae, a.ldm_ckpt}) {
    if (!fs::exists(p)) throw DataError("checkpoint not found: " + p);
  }
  auto vae = ldm::load_vae(a.vae);
  auto den = ldm::load_denoiser(a.ldm_ckpt);
  const auto vae_hash = ckpt::file_hash(a.vae);
  if (den.vae_hash != vae_hash) {
    std::fprintf(stderr, "warning: denoiser was trained on a different VAE checkpoint (%s vs %s)\n",
                 ckpt::hex(den.vae_hash).c_str(), ckpt::hex(vae_hash).c_str());
  }

  ldm::SynthesisOptions opts;
  opts.count = a.n;
  opts.ddim = cfg.ldm.ddim;
  if (a.band_filter || cfg.ldm.band_filter) {
    if (a.reference.empty()) throw ConfigError("the band filter needs --reference <image dir>");
    cfg.data.image_size = vae->config().image_size;
    opts.filter = ldm::BandFilter::from_reference(load_images(a.reference, cfg));
  }
  const auto samples = ldm::synthesize(*vae, *den.denoiser, den.schedule, den.scale, opts);
  if (static_cast<int>(samples.size()) < a.n) {
    std::fprintf(stderr, "warning: band filter accepted only %zu of %d requested images\n", samples.size(), a.n);
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    image_io::write_image(s.image, out / (s.id + ".png"));
    ids.push_back(s.id);
  }
  const fs::path pool = a.pool.empty() ? out / "pool.txt" : fs::path(a.pool);
  data::write_id_list(ids, pool, /*append=*/true);
  write_json({{"command", "generate"},
              {"count", samples.size()},
              {"seed", cfg.ldm.ddim.seed},
              {"steps", cfg.ldm.ddim.steps},
              {"eta", cfg.ldm.ddim.eta},
              {"band_filter", opts.filter.has_value()},
              {"vae_checkpoint", a.vae},
              {"vae_hash", ckpt::hex(vae_hash)},
              {"ldm_checkpoint", a.ldm_ckpt},
              {"ldm_hash", ckpt::hex(ckpt::file_hash(a.ldm_ckpt))},
              {"ids", ids}},
             out / ("generate_" + std::to_string(cfg.ldm.ddim.seed) + ".json"));
  std::printf("generate: %zu images (DDIM %d steps) in %s; pool %s\n", samples.size(), cfg.ldm.ddim.steps,
              out.string().c_str(), pool.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string ckpt, data, splits, subset = "val", json_out;
  int split = 0;
  std::optional<double> threshold;
  std::string averaging;
};

int run_eval(const EvalArgs& a) {
  auto cfg = a.common.load();
  if (!fs::exists(a.ckpt)) throw DataError("checkpoint not found: " + a.ckpt);
  auto state = train::load_checkpoint(a.ckpt);
  const double threshold = a.threshold.value_or(state.config.threshold);
  auto averaging = state.config.averaging;
  if (a.averaging == "micro") averaging = metrics::Averaging::kMicro;
  else if (a.averaging == "macro") averaging = metrics::Averaging::kMacro;
  else if (!a.averaging.empty()) throw ConfigError("unknown averaging '" + a.averaging + "'");

  const fs::path dataset(a.data);
  const auto split = data::read_split_manifests(a.splits.empty() ? dataset / "splits" : fs::path(a.splits), a.split);
  std::vector<std::string> ids;
  if (a.subset == "val") ids = split.val_ids;
  else if (a.subset == "train") ids = split.train_ids;
  else if (a.subset == "labeled") ids = split.labeled_ids;
  else throw ConfigError("unknown subset '" + a.subset + "' (val, train or labeled)");
  const auto samples = data::select(load_images(image_root(dataset), cfg), ids);

  const auto s = train::evaluate(*state.net, samples, threshold, averaging);
  std::printf("# %s\n# %zu images, threshold %.3f, %s averaging\n", metrics::kConventionNote, samples.size(), threshold,
              averaging == metrics::Averaging::kMacro ? "macro" : "micro");
  print_scores(a.subset, s);
  if (!a.json_out.empty()) {
    write_json({{"checkpoint", a.ckpt},
                {"subset", a.subset},
                {"split", a.split},
                {"count", samples.size()},
                {"iou", s.iou},
                {"recall", s.recall},
                {"precision", s.precision},
                {"f1", s.f1}},
               a.json_out);
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string csv, which = "best";
};

int run_report(const ReportArgs& a) {
  std::vector<metrics::RunScores> runs;
  for (const auto& r : a.runs) {
    const auto fm = read_json(fs::path(r) / "final_metrics.json");
    const auto& hist = fm.at("history");
    if (hist.empty()) throw DataError("run " + r + " recorded no validation metrics");
    const json* pick = &hist.back();
    if (a.which == "best") {
      for (const auto& h : hist) {
        if (h.at("scores").at("iou").get<double>() > pick->at("scores").at("iou").get<double>()) pick = &h;
      }
    } else if (a.which != "last") {
      throw ConfigError("--which must be best or last");
    }
    const auto& s = pick->at("scores");
    runs.push_back({fs::path(r).filename().string(),
                    {s.at("iou").get<double>(), s.at("recall").get<double>(), s.at("precision").get<double>(),
                     s.at("f1").get<double>()}});
  }
  const auto summary = metrics::aggregate(runs);
  std::fputs(metrics::summary_table(runs, summary).c_str(), stdout);
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw DataError("cannot write " + a.csv);
    out << metrics::summary_csv(runs, summary);
  }
  return 0;
}

struct RenderArgs {
  Common common;
  std::string ckpt, images, out;
  std::optional<double> threshold;
};

int run_render(const RenderArgs& a) {
  auto cfg = a.common.load();
  if (!fs::exists(a.ckpt)) throw DataError("checkpoint not found: " + a.ckpt);
  auto state = train::load_checkpoint(a.ckpt);
  const auto samples = load_images(a.images, cfg);
  const auto preds = train::predict(*state.net, samples, a.threshold.value_or(state.config.threshold));
  const fs::path out(a.out);
  fs::create_directories(out);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    image_io::write_color(tools::render_overlay(samples[i], preds[i]), out / (samples[i].id + ".png"));
  }
  {
    std::ofstream legend(out / "legend.txt");
    legend << tools::kOverlayLegend;
  }
  std::printf("%srendered %zu overlays to %s\n", tools::kOverlayLegend, samples.size(), out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mgcc: semi-supervised lesion segmentation with latent-diffusion synthetic unlabeled data.\n"
               "Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical abort."};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "write a dataset (toy or resized input) and split manifests");
  prep.common.attach(c_prep);
  auto* in_opt = c_prep->add_option("--input", prep.input, "directory of images and <id>_mask*.png masks");
  auto* toy_opt = c_prep->add_option("--toy", prep.toy, "generate this many procedural images instead");
  in_opt->excludes(toy_opt);
  c_prep->add_option("--out", prep.out, "output dataset directory")->required();
  c_prep->add_option("--train-count", prep.train_count, "fixed training-set size (overrides train_ratio)");
  c_prep->add_option("--labeled-fraction", prep.labeled_fraction, "labeled share of each training split");

  TrainSegArgs seg;
  auto* c_seg = app.add_subcommand("train-seg", "train the segmentation network; writes manifest, log.csv, checkpoints");
  seg.common.attach(c_seg);
  c_seg->add_option("--mode", seg.mode, "mgcc or supervised")->check(CLI::IsMember({"mgcc", "supervised", "supervised-only"}));
  c_seg->add_option("--data", seg.data, "dataset directory from `prepare`")->required();
  c_seg->add_option("--splits", seg.splits, "split manifest directory (default <data>/splits)");
  c_seg->add_option("--split", seg.split, "split repeat index");
  c_seg->add_option("--unlabeled-pool", seg.pool, "extra unlabeled id list; images are read from its directory");
  c_seg->add_option("--out", seg.out, "run directory (overrides run.output_dir)");
  c_seg->add_option("--epochs", seg.epochs, "training epochs");

  TrainVaeArgs vae;
  auto* c_vae = app.add_subcommand("train-vae", "train the latent autoencoder");
  vae.common.attach(c_vae);
  c_vae->add_option("--data", vae.data, "dataset directory")->required();
  c_vae->add_option("--splits", vae.splits, "restrict to the train ids of a split");
  c_vae->add_option("--split", vae.split, "split repeat index");
  c_vae->add_option("--out", vae.out, "checkpoint path")->required();
  c_vae->add_option("--epochs", vae.epochs, "training epochs");

  TrainLdmArgs ldm_args;
  auto* c_ldm = app.add_subcommand("train-ldm", "train the latent denoiser on frozen VAE latents");
  ldm_args.common.attach(c_ldm);
  c_ldm->add_option("--vae", ldm_args.vae, "VAE checkpoint")->required();
  c_ldm->add_option("--data", ldm_args.data, "dataset directory")->required();
  c_ldm->add_option("--splits", ldm_args.splits, "restrict to the train ids of a split");
  c_ldm->add_option("--split", ldm_args.split, "split repeat index");
  c_ldm->add_option("--out", ldm_args.out, "checkpoint path")->required();
  c_ldm->add_option("--epochs", ldm_args.epochs, "training epochs");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "sample synthetic images with DDIM and append them to a pool");
  gen.common.attach(c_gen);
  c_gen->add_option("--vae", gen.vae, "VAE checkpoint")->required();
  c_gen->add_option("--ldm", gen.ldm_ckpt, "denoiser checkpoint")->required();
  c_gen->add_option("--n", gen.n, "number of images")->required()->check(CLI::NonNegativeNumber);
  c_gen->add_option("--steps", gen.steps, "DDIM steps (default from config, 100)");
  c_gen->add_option("--eta", gen.eta, "DDIM eta (0 = deterministic)");
  c_gen->add_option("--out", gen.out, "output directory for PNGs")->required();
  c_gen->add_option("--pool", gen.pool, "pool manifest to append ids to (default <out>/pool.txt)");
  c_gen->add_flag("--band-filter", gen.band_filter, "keep images within 3 sigma of the reference statistics");
  c_gen->add_option("--reference", gen.reference, "reference image directory for the band filter");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on a split subset");
  ev.common.attach(c_eval);
  c_eval->add_option("--ckpt", ev.ckpt, "segmentation checkpoint")->required();
  c_eval->add_option("--data", ev.data, "dataset directory")->required();
  c_eval->add_option("--splits", ev.splits, "split manifest directory (default <data>/splits)");
  c_eval->add_option("--split", ev.split, "split repeat index");
  c_eval->add_option("--subset", ev.subset, "val, train or labeled");
  c_eval->add_option("--threshold", ev.threshold, "probability threshold");
  c_eval->add_option("--averaging", ev.averaging, "macro or micro");
  c_eval->add_option("--json", ev.json_out, "also write the scores as JSON");

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "mean and stdev of validation scores over run directories");
  c_rep->add_option("--runs", rep.runs, "run directories")->required();
  c_rep->add_option("--which", rep.which, "best (default) or last validation record per run");
  c_rep->add_option("--csv", rep.csv, "also write the CSV table here");

  RenderArgs ren;
  auto* c_ren = app.add_subcommand("render", "input | ground truth | prediction overlays");
  ren.common.attach(c_ren);
  c_ren->add_option("--ckpt", ren.ckpt, "segmentation checkpoint")->required();
  c_ren->add_option("--images", ren.images, "image directory (masks optional)")->required();
  c_ren->add_option("--out", ren.out, "output directory")->required();
  c_ren->add_option("--threshold", ren.threshold, "probability threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kConfig);
  }

  try {
    if (*c_prep) return run_prepare(prep);
    if (*c_seg) return run_train_seg(seg);
    if (*c_vae) return run_train_vae(vae);
    if (*c_ldm) return run_train_ldm(ldm_args);
    if (*c_gen) return run_generate(gen);
    if (*c_eval) return run_eval(ev);
    if (*c_rep) return run_report(rep);
    if (*c_ren) return run_render(ren);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

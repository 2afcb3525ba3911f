#include "mgcc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mgcc/checkpoint.hpp"
#include "mgcc/config.hpp"
#include "mgcc/error.hpp"
#include "mgcc/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mgcc::train {

std::string to_string(Mode m) { return m == Mode::kMgcc ? "mgcc" : "supervised"; }

Mode mode_from_string(const std::string& s) {
  if (s == "mgcc") return Mode::kMgcc;
  if (s == "supervised" || s == "supervised-only") return Mode::kSupervisedOnly;
  throw ConfigError("unknown mode '" + s + "' (expected mgcc or supervised)");
}

std::vector<std::string> OptimConfig::problems() const {
  std::vector<std::string> out;
  if (!(lr0 >= 0.0)) out.push_back("lr0 must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) out.push_back("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) out.push_back("weight_decay must be >= 0");
  if (epochs < 1) out.push_back("epochs must be >= 1");
  if (!(poly_power >= 0.0)) out.push_back("poly_power must be >= 0");
  if (eval_every < 1) out.push_back("eval_every must be >= 1");
  return out;
}

double poly_lr(std::int64_t step, std::int64_t total_steps, const OptimConfig& config) {
  if (total_steps < 1) throw ConfigError("poly_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) {
    throw ConfigError("poly_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return config.lr0 * std::pow(frac, config.poly_power);
}

SgdMomentum::SgdMomentum(std::vector<torch::Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.push_back(torch::zeros_like(p));
}

void SgdMomentum::step(double lr) {
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.grad().defined()) continue;
    auto d = p.grad();
    if (weight_decay_ != 0.0) d = d + weight_decay_ * p;
    velocity_[i].mul_(momentum_).add_(d);
    p.sub_(velocity_[i], lr);
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) {
      p.grad().detach_();
      p.grad().zero_();
    }
  }
}

// ---------------------------------------------------------------------------

torch::Tensor images_to_tensor(const std::vector<data::Sample>& samples) {
  if (samples.empty()) return torch::empty({0, 1, 0, 0});
  const auto h = samples.front().image.height, w = samples.front().image.width;
  auto out = torch::empty({static_cast<std::int64_t>(samples.size()), 1, h, w});
  auto* dst = out.data_ptr<float>();
  for (const auto& s : samples) {
    if (!s.image.same_shape(h, w)) throw DataError("sample " + s.id + " has a different size from the batch");
    dst = std::copy(s.image.values.begin(), s.image.values.end(), dst);
  }
  return out;
}

torch::Tensor masks_to_tensor(const std::vector<data::Sample>& samples) {
  if (samples.empty()) return torch::empty({0, 1, 0, 0});
  const auto h = samples.front().image.height, w = samples.front().image.width;
  auto out = torch::empty({static_cast<std::int64_t>(samples.size()), 1, h, w});
  auto* dst = out.data_ptr<float>();
  for (const auto& s : samples) {
    if (!s.mask) throw DataError("sample " + s.id + " has no mask");
    if (!s.mask->same_shape(h, w)) throw DataError("mask of " + s.id + " has a different size from the batch");
    for (auto v : s.mask->values) *dst++ = static_cast<float>(v);
  }
  return out;
}

TrainState make_state(const TrainerConfig& config, std::int64_t total_steps) {
  config.network.validate();
  if (auto p = config.optim.problems(); !p.empty()) throw ConfigError("optim: " + p.front());
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  TrainState s;
  s.config = config;
  s.net = nn::MGCCNet(config.network);
  nn::initialize(*s.net, config.seed);
  s.optimizer = SgdMomentum(s.net->parameters(), config.optim.momentum, config.optim.weight_decay);
  s.total_steps = total_steps;
  return s;
}

objective::LossReport train_step(TrainState& state, const data::MixedBatch& batch) {
  if (batch.labeled.empty()) throw DataError("train_step: batch has no labeled samples");
  const auto& cfg = state.config;
  const bool use_unlabeled = cfg.optim.mode == Mode::kMgcc && !batch.unlabeled.empty();

  auto labeled = images_to_tensor(batch.labeled);
  auto targets = masks_to_tensor(batch.labeled);
  auto input = labeled;
  if (use_unlabeled) input = torch::cat({labeled, images_to_tensor(batch.unlabeled)}, 0);

  auto gen = nn::make_generator(derive_seed(cfg.seed, {stream::kPerturb, static_cast<std::uint64_t>(state.step)}));
  state.optimizer.zero_grad();
  auto out = state.net->forward(input, nn::ForwardMode::kTrain, &gen);

  auto sup = objective::supervised_loss(out, targets, cfg.network.num_aux);
  const objective::WarmupSchedule warmup{cfg.w_max, state.total_steps};
  torch::Tensor unsup;
  if (use_unlabeled) unsup = objective::consistency_loss(out, labeled.size(0));

  const double sup_v = sup.loss.item<double>();
  const double unsup_v = unsup.defined() ? unsup.item<double>() : 0.0;
  auto report = objective::total_loss(sup_v, unsup_v, state.step, warmup);
  report.per_decoder_supervised = sup.per_decoder;

  auto total = unsup.defined() ? sup.loss + report.lambda * unsup : sup.loss;
  total.backward();
  state.optimizer.step(poly_lr(std::min(state.step, state.total_steps), state.total_steps, cfg.optim));
  ++state.step;
  return report;
}

namespace {

std::vector<torch::Tensor> predict_probabilities(nn::MGCCNetImpl& net, const std::vector<data::Sample>& samples) {
  constexpr std::size_t kChunk = 16;
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i < samples.size(); i += kChunk) {
    std::vector<data::Sample> chunk(samples.begin() + i, samples.begin() + std::min(samples.size(), i + kChunk));
    auto probs = torch::sigmoid(net.forward(images_to_tensor(chunk), nn::ForwardMode::kEval).main_logits);
    for (std::int64_t r = 0; r < probs.size(0); ++r) out.push_back(probs[r][0].contiguous());
  }
  return out;
}

data::Mask binarize(const torch::Tensor& prob, double threshold) {
  data::Mask m(prob.size(0), prob.size(1));
  auto acc = prob.accessor<float, 2>();
  for (std::int64_t r = 0; r < m.height; ++r) {
    for (std::int64_t c = 0; c < m.width; ++c) m.at(r, c) = acc[r][c] >= threshold ? 1 : 0;
  }
  return m;
}

}  // namespace

std::vector<data::Mask> predict(nn::MGCCNetImpl& net, const std::vector<data::Sample>& samples, double threshold) {
  std::vector<data::Mask> out;
  for (const auto& p : predict_probabilities(net, samples)) out.push_back(binarize(p, threshold));
  return out;
}

metrics::Scores evaluate(nn::MGCCNetImpl& net, const std::vector<data::Sample>& samples, double threshold,
                         metrics::Averaging averaging) {
  if (samples.empty()) throw DataError("evaluate: validation set is empty");
  for (const auto& s : samples) {
    if (!s.mask) throw DataError("evaluate: sample " + s.id + " has no mask");
  }
  const auto preds = predict(net, samples, threshold);
  std::vector<metrics::Confusion> per_image;
  per_image.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) per_image.push_back(metrics::confusion(preds[i], *samples[i].mask));
  return metrics::average(per_image, averaging);
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointKind = "segmentation";

json scores_json(const metrics::Scores& s) {
  return {{"iou", s.iou}, {"recall", s.recall}, {"precision", s.precision}, {"f1", s.f1}};
}

metrics::Scores scores_from(const json& j) {
  return {j.at("iou").get<double>(), j.at("recall").get<double>(), j.at("precision").get<double>(),
          j.at("f1").get<double>()};
}

json record_json(const MetricRecord& r) {
  return {{"epoch", r.epoch},
          {"split", r.split},
          {"scores", scores_json(r.scores)},
          {"loss",
           {{"supervised", r.loss.supervised},
            {"unsupervised", r.loss.unsupervised},
            {"lambda", r.loss.lambda},
            {"total", r.loss.total}}}};
}

MetricRecord record_from(const json& j) {
  MetricRecord r;
  r.epoch = j.at("epoch").get<std::int64_t>();
  r.split = j.at("split").get<std::string>();
  r.scores = scores_from(j.at("scores"));
  const auto& l = j.at("loss");
  r.loss.supervised = l.at("supervised").get<double>();
  r.loss.unsupervised = l.at("unsupervised").get<double>();
  r.loss.lambda = l.at("lambda").get<double>();
  r.loss.total = l.at("total").get<double>();
  return r;
}

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& path) {
  ckpt::CheckpointFile file;
  file.kind = kCheckpointKind;
  file.config = config::trainer_to_json(state.config);
  json history = json::array();
  for (const auto& r : state.history) history.push_back(record_json(r));
  file.meta = {{"step", state.step},
               {"epoch", state.epoch},
               {"total_steps", state.total_steps},
               {"best_val_iou", state.best_val_iou},
               {"history", history}};
  file.tensors = ckpt::module_state(*state.net, "net/");
  const auto& v = state.optimizer.buffers();
  for (std::size_t i = 0; i < v.size(); ++i) file.tensors.push_back({"optim/" + std::to_string(i), v[i]});
  ckpt::write_checkpoint(file, path);
}

namespace {

TrainState restore(const ckpt::CheckpointFile& file, const fs::path& path) {
  if (file.kind != kCheckpointKind) {
    throw DataError("checkpoint " + path.string() + " holds a '" + file.kind + "' model, expected segmentation");
  }
  const auto cfg = config::trainer_from_json(file.config);
  TrainState s;
  try {
    s = make_state(cfg, file.meta.at("total_steps").get<std::int64_t>());
    s.step = file.meta.at("step").get<std::int64_t>();
    s.epoch = file.meta.at("epoch").get<std::int64_t>();
    s.best_val_iou = file.meta.at("best_val_iou").get<double>();
    for (const auto& r : file.meta.at("history")) s.history.push_back(record_from(r));
  } catch (const json::exception& e) {
    throw DataError("checkpoint metadata is incomplete in " + path.string() + ": " + e.what());
  }
  ckpt::load_module_state(*s.net, file, "net/");
  torch::NoGradGuard guard;
  auto& v = s.optimizer.buffers();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& src = file.tensor("optim/" + std::to_string(i));
    if (src.sizes() != v[i].sizes()) throw DataError("optimizer buffer " + std::to_string(i) + " has the wrong shape");
    v[i].copy_(src);
  }
  return s;
}

}  // namespace

TrainState load_checkpoint(const fs::path& path) { return restore(ckpt::read_checkpoint(path), path); }

TrainState load_checkpoint(const fs::path& path, const nn::NetworkConfig& expected) {
  auto file = ckpt::read_checkpoint(path);
  if (file.kind == kCheckpointKind && file.config.contains("network")) {
    const auto diff = ckpt::json_diff(config::network_to_json(expected), file.config.at("network"), "network");
    if (!diff.empty()) {
      std::string msg = "checkpoint " + path.string() + " was built for a different network:";
      for (const auto& d : diff) msg += "\n  " + d;
      throw ConfigError(msg);
    }
  }
  return restore(file, path);
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

FitResult fit(const TrainerConfig& config, const data::BatchComposer& composer,
              const std::vector<data::Sample>& validation, const fs::path& run_dir, const json& run_manifest_extra) {
  const std::int64_t per_epoch = composer.batches_per_epoch();
  if (per_epoch < 1) throw DataError("fit: labeled pool is empty");
  const std::int64_t total = per_epoch * config.optim.epochs;

  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw DataError("cannot create run directory " + run_dir.string() + ": " + ec.message());

  json manifest = {{"trainer", config::trainer_to_json(config)},
                   {"seed", config.seed},
                   {"total_steps", total},
                   {"steps_per_epoch", per_epoch},
                   {"labeled_per_batch", composer.plan().labeled_per_batch},
                   {"unlabeled_per_batch", composer.plan().unlabeled_per_batch},
                   {"augmentation", composer.plan().augmentation.has_value()},
                   {"datasets",
                    {{"labeled", {{"count", composer.labeled_pool().size()},
                                  {"hash", ckpt::hex(data::dataset_hash(composer.labeled_pool()))}}},
                     {"unlabeled", {{"count", composer.unlabeled_pool().size()},
                                    {"hash", ckpt::hex(data::dataset_hash(composer.unlabeled_pool()))}}},
                     {"validation", {{"count", validation.size()},
                                     {"hash", ckpt::hex(data::dataset_hash(validation))}}}}}};
  for (auto it = run_manifest_extra.begin(); it != run_manifest_extra.end(); ++it) manifest[it.key()] = it.value();
  write_json(manifest, run_dir / "manifest.json");

  FitResult result;
  result.best_checkpoint = run_dir / "ckpt_best";
  result.last_checkpoint = run_dir / "ckpt_last";
  result.log = run_dir / "log.csv";

  std::ofstream log(result.log);
  if (!log) throw DataError("cannot write " + result.log.string());
  log << kCsvHeader << '\n';

  TrainState state = make_state(config, total);
  for (std::int64_t epoch = 1; epoch <= config.optim.epochs; ++epoch) {
    objective::LossReport mean;
    double lr = 0.0;
    for (std::int64_t b = 0; b < per_epoch; ++b) {
      lr = poly_lr(state.step, total, config.optim);
      objective::LossReport r;
      try {
        r = train_step(state, composer.batch_at(state.step));
      } catch (const NumericalError& e) {
        const auto dump = run_dir / "ckpt_abort";
        save_checkpoint(state, dump);
        throw NumericalError(std::string(e.what()) + "; state dumped to " + dump.string());
      }
      mean.supervised += r.supervised;
      mean.unsupervised += r.unsupervised;
      mean.total += r.total;
      mean.lambda = r.lambda;
    }
    mean.supervised /= static_cast<double>(per_epoch);
    mean.unsupervised /= static_cast<double>(per_epoch);
    mean.total /= static_cast<double>(per_epoch);
    state.epoch = epoch;

    log << epoch << ',' << state.step << ',' << fmt(lr) << ',' << fmt(mean.lambda) << ',' << fmt(mean.total) << ','
        << fmt(mean.supervised) << ',' << fmt(mean.unsupervised);
    const bool eval_now = !validation.empty() && (epoch % config.optim.eval_every == 0 || epoch == config.optim.epochs);
    if (eval_now) {
      MetricRecord rec{epoch, "val", evaluate(*state.net, validation, config.threshold, config.averaging), mean};
      state.history.push_back(rec);
      log << ',' << fmt(rec.scores.iou) << ',' << fmt(rec.scores.recall) << ',' << fmt(rec.scores.precision) << ','
          << fmt(rec.scores.f1) << '\n';
      if (rec.scores.iou > state.best_val_iou) {
        state.best_val_iou = rec.scores.iou;
        save_checkpoint(state, result.best_checkpoint);
      }
    } else {
      log << ",,,,\n";
    }
    log.flush();
  }
  save_checkpoint(state, result.last_checkpoint);
  if (!fs::exists(result.best_checkpoint)) fs::copy_file(result.last_checkpoint, result.best_checkpoint);

  json final_metrics = {{"steps", state.step}, {"epochs", state.epoch}, {"best_val_iou", state.best_val_iou}};
  if (!state.history.empty()) final_metrics["final"] = scores_json(state.history.back().scores);
  json history = json::array();
  for (const auto& r : state.history) history.push_back(record_json(r));
  final_metrics["history"] = history;
  final_metrics["convention"] = metrics::kConventionNote;
  write_json(final_metrics, run_dir / "final_metrics.json");

  result.state = std::move(state);
  return result;
}

}  // namespace mgcc::train

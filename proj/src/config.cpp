#include "mgcc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mgcc/error.hpp"

using nlohmann::json;

namespace mgcc::config {

namespace {

// Walks one JSON object, records type errors and unknown keys under a dotted
// path, and never throws on its own.
class ObjectReader {
 public:
  ObjectReader(const json& doc, std::string path, std::vector<std::string>& errors)
      : doc_(doc), path_(std::move(path)), errors_(errors) {
    if (!doc_.is_object()) {
      errors_.push_back(where() + "must be an object");
      valid_ = false;
    }
  }

  ~ObjectReader() {
    if (!valid_) return;
    for (auto it = doc_.begin(); it != doc_.end(); ++it) {
      if (!seen_.contains(it.key())) errors_.push_back("unknown key '" + prefix() + it.key() + "'");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!valid_ || !doc_.contains(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back("'" + prefix() + key + "' has the wrong type: " + doc_.at(key).dump());
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!valid_ || !doc_.contains(key)) return;
    if (doc_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  // Enum stored as a string; `parse` throws ConfigError for unknown names.
  template <class E, class Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    std::string s;
    bool present = valid_ && doc_.contains(key);
    get(key, s);
    if (!present || s.empty()) return;
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      errors_.push_back("'" + prefix() + key + "': " + e.what());
    }
  }

  template <class Fn>
  void object(const char* key, Fn fn) {
    seen_.insert(key);
    if (!valid_ || !doc_.contains(key)) return;
    ObjectReader sub(doc_.at(key), prefix() + key, errors_);
    fn(sub);
  }

  bool has(const char* key) const { return valid_ && doc_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return doc_.at(key);
  }
  std::string prefix() const { return path_.empty() ? "" : path_ + "."; }
  std::vector<std::string>& errors() { return errors_; }

 private:
  std::string where() const { return path_.empty() ? "config " : "'" + path_ + "' "; }

  const json& doc_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  bool valid_ = true;
};

[[noreturn]] void throw_all(const std::vector<std::string>& errors, const std::string& what) {
  std::ostringstream os;
  os << what << " (" << errors.size() << " problem" << (errors.size() == 1 ? "" : "s") << "):";
  for (const auto& e : errors) os << "\n  - " << e;
  throw ConfigError(os.str());
}

data::Rotation rotation_from_string(const std::string& s) {
  if (s == "none") return data::Rotation::kNone;
  if (s == "right-angles") return data::Rotation::kRightAngles;
  throw ConfigError("unknown rotation '" + s + "'");
}

std::string to_string(data::Rotation r) { return r == data::Rotation::kNone ? "none" : "right-angles"; }

metrics::Averaging averaging_from_string(const std::string& s) {
  if (s == "macro") return metrics::Averaging::kMacro;
  if (s == "micro") return metrics::Averaging::kMicro;
  throw ConfigError("unknown averaging '" + s + "'");
}

std::string to_string(metrics::Averaging a) { return a == metrics::Averaging::kMacro ? "macro" : "micro"; }

// ---- per-section writers / readers ----------------------------------------

json perturbation_to_json(const nn::PerturbationSpec& p) {
  return {{"kind", nn::to_string(p.kind)},
          {"noise_bound", p.noise_bound},
          {"drop_threshold_range", p.drop_threshold_range},
          {"dropout_rate", p.dropout_rate}};
}

void read_perturbation(ObjectReader& r, nn::PerturbationSpec& p) {
  r.get_enum("kind", p.kind, nn::perturbation_from_string);
  r.get("noise_bound", p.noise_bound);
  r.get("drop_threshold_range", p.drop_threshold_range);
  r.get("dropout_rate", p.dropout_rate);
}

void read_network(ObjectReader& r, nn::NetworkConfig& n) {
  r.get("input_channels", n.input_channels);
  r.get("encoder_channels", n.encoder_channels);
  r.get("bottleneck_channels", n.bottleneck_channels);
  r.get("convmixer_length", n.convmixer_length);
  r.get("convmixer_kernel", n.convmixer_kernel);
  r.get("taps", n.taps);
  r.get("num_aux", n.num_aux);
  r.get("msag_enabled", n.msag_enabled);
  if (r.has("perturbations")) {
    const json& list = r.raw("perturbations");
    if (!list.is_array()) {
      r.errors().push_back("'" + r.prefix() + "perturbations' must be an array");
    } else {
      n.perturbations.clear();
      for (std::size_t i = 0; i < list.size(); ++i) {
        nn::PerturbationSpec p;
        ObjectReader sub(list[i], r.prefix() + "perturbations[" + std::to_string(i) + "]", r.errors());
        read_perturbation(sub, p);
        n.perturbations.push_back(p);
      }
    }
  }
}

json optim_to_json(const train::OptimConfig& o) {
  return {{"lr0", o.lr0},           {"momentum", o.momentum},     {"weight_decay", o.weight_decay},
          {"epochs", o.epochs},     {"poly_power", o.poly_power}, {"eval_every", o.eval_every},
          {"mode", train::to_string(o.mode)}};
}

void read_optim(ObjectReader& r, train::OptimConfig& o) {
  r.get("lr0", o.lr0);
  r.get("momentum", o.momentum);
  r.get("weight_decay", o.weight_decay);
  r.get("epochs", o.epochs);
  r.get("poly_power", o.poly_power);
  r.get("eval_every", o.eval_every);
  r.get_enum("mode", o.mode, train::mode_from_string);
}

void read_vae(ObjectReader& r, ldm::VAEConfig& v) {
  r.get("image_size", v.image_size);
  r.get("downsample_factor", v.downsample_factor);
  r.get("latent_channels", v.latent_channels);
  r.get("base_channels", v.base_channels);
  r.get("kl_weight", v.kl_weight);
  r.get("lr", v.lr);
  r.get("epochs", v.epochs);
  r.get("batch", v.batch);
}

void read_diffusion(ObjectReader& r, ldm::DiffusionConfig& d) {
  r.get("steps", d.steps);
  r.get("beta_start", d.beta_start);
  r.get("beta_end", d.beta_end);
}

void read_denoiser(ObjectReader& r, ldm::DenoiserConfig& d) {
  r.get("channels", d.channels);
  r.get("time_embedding", d.time_embedding);
  r.get("lr", d.lr);
  r.get("weight_decay", d.weight_decay);
  r.get("epochs", d.epochs);
  r.get("batch", d.batch);
}

}  // namespace

// ---------------------------------------------------------------------------

json network_to_json(const nn::NetworkConfig& n) {
  json perts = json::array();
  for (const auto& p : n.perturbations) perts.push_back(perturbation_to_json(p));
  return {{"input_channels", n.input_channels},
          {"encoder_channels", n.encoder_channels},
          {"bottleneck_channels", n.bottleneck_channels},
          {"convmixer_length", n.convmixer_length},
          {"convmixer_kernel", n.convmixer_kernel},
          {"taps", n.taps},
          {"num_aux", n.num_aux},
          {"msag_enabled", n.msag_enabled},
          {"perturbations", perts}};
}

nn::NetworkConfig network_from_json(const json& doc) {
  std::vector<std::string> errors;
  nn::NetworkConfig n;
  {
    ObjectReader r(doc, "network", errors);
    read_network(r, n);
  }
  if (errors.empty()) errors = n.problems();
  if (!errors.empty()) throw_all(errors, "invalid network config");
  return n;
}

json trainer_to_json(const train::TrainerConfig& c) {
  return {{"network", network_to_json(c.network)},
          {"optim", optim_to_json(c.optim)},
          {"w_max", c.w_max},
          {"seed", c.seed},
          {"threshold", c.threshold},
          {"averaging", to_string(c.averaging)}};
}

train::TrainerConfig trainer_from_json(const json& doc) {
  std::vector<std::string> errors;
  train::TrainerConfig c;
  {
    ObjectReader r(doc, "", errors);
    r.object("network", [&](ObjectReader& s) { read_network(s, c.network); });
    r.object("optim", [&](ObjectReader& s) { read_optim(s, c.optim); });
    r.get("w_max", c.w_max);
    r.get("seed", c.seed);
    r.get("threshold", c.threshold);
    r.get_enum("averaging", c.averaging, averaging_from_string);
  }
  if (errors.empty()) {
    errors = c.network.problems();
    for (auto& e : c.optim.problems()) errors.push_back(e);
  }
  if (!errors.empty()) throw_all(errors, "invalid trainer config");
  return c;
}

json vae_to_json(const ldm::VAEConfig& v) {
  return {{"image_size", v.image_size}, {"downsample_factor", v.downsample_factor},
          {"latent_channels", v.latent_channels}, {"base_channels", v.base_channels},
          {"kl_weight", v.kl_weight}, {"lr", v.lr}, {"epochs", v.epochs}, {"batch", v.batch}};
}

ldm::VAEConfig vae_from_json(const json& doc) {
  std::vector<std::string> errors;
  ldm::VAEConfig v;
  {
    ObjectReader r(doc, "vae", errors);
    read_vae(r, v);
  }
  if (errors.empty()) errors = v.problems();
  if (!errors.empty()) throw_all(errors, "invalid vae config");
  return v;
}

json diffusion_to_json(const ldm::DiffusionConfig& d) {
  return {{"steps", d.steps}, {"beta_start", d.beta_start}, {"beta_end", d.beta_end}};
}

ldm::DiffusionConfig diffusion_from_json(const json& doc) {
  std::vector<std::string> errors;
  ldm::DiffusionConfig d;
  {
    ObjectReader r(doc, "diffusion", errors);
    read_diffusion(r, d);
  }
  if (errors.empty()) errors = d.problems();
  if (!errors.empty()) throw_all(errors, "invalid diffusion config");
  return d;
}

json denoiser_to_json(const ldm::DenoiserConfig& d) {
  return {{"channels", d.channels}, {"time_embedding", d.time_embedding}, {"lr", d.lr},
          {"weight_decay", d.weight_decay}, {"epochs", d.epochs}, {"batch", d.batch}};
}

ldm::DenoiserConfig denoiser_from_json(const json& doc) {
  std::vector<std::string> errors;
  ldm::DenoiserConfig d;
  {
    ObjectReader r(doc, "denoiser", errors);
    read_denoiser(r, d);
  }
  if (errors.empty()) errors = d.problems();
  if (!errors.empty()) throw_all(errors, "invalid denoiser config");
  return d;
}

// ---------------------------------------------------------------------------

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  auto add = [&out](const std::string& section, std::vector<std::string> errs) {
    for (auto& e : errs) out.push_back(section + ": " + e);
  };
  std::vector<std::string> d;
  if (data.image_size < 1) d.push_back("image_size must be >= 1");
  if (data.image_size % network.spatial_divisor() != 0) {
    d.push_back("image_size must be divisible by " + std::to_string(network.spatial_divisor()));
  }
  if (!(data.train_ratio > 0.0 && data.train_ratio < 1.0)) d.push_back("train_ratio must lie in (0, 1)");
  if (data.train_count && *data.train_count < 1) d.push_back("train_count must be >= 1");
  if (data.repeats < 1) d.push_back("repeats must be >= 1");
  if (data.split_index < 0 || data.split_index >= data.repeats) d.push_back("split_index must lie in [0, repeats)");
  if (!(data.labeled_fraction > 0.0 && data.labeled_fraction <= 1.0)) {
    d.push_back("labeled_fraction must lie in (0, 1]");
  }
  if (data.labeled_per_batch < 1) d.push_back("labeled_per_batch must be >= 1");
  if (data.unlabeled_per_batch < 0) d.push_back("unlabeled_per_batch must be >= 0");
  try {
    data.augmentation.validate();
  } catch (const ConfigError& e) {
    d.push_back(e.what());
  }
  try {
    data.toy.validate();
  } catch (const ConfigError& e) {
    d.push_back(std::string("toy: ") + e.what());
  }
  add("data", d);
  add("network", network.problems());
  if (!(objective.w_max > 0.0)) out.push_back("objective: w_max must be > 0");
  add("optim", optim.problems());
  if (!(eval.threshold >= 0.0 && eval.threshold <= 1.0)) out.push_back("eval: threshold must lie in [0, 1]");
  add("ldm.vae", ldm.vae.problems());
  add("ldm.diffusion", ldm.diffusion.problems());
  add("ldm.denoiser", ldm.denoiser.problems());
  if (ldm.ddim.steps < 1 || ldm.ddim.steps > ldm.diffusion.steps) out.push_back("ldm.ddim: steps must lie in [1, T]");
  if (ldm.ddim.eta < 0.0) out.push_back("ldm.ddim: eta must be >= 0");
  if (run.threads < 0) out.push_back("run: threads must be >= 0");
  return out;
}

train::TrainerConfig RunConfig::trainer_config() const {
  train::TrainerConfig t;
  t.network = network;
  t.optim = optim;
  t.w_max = objective.w_max;
  t.seed = run.seed;
  t.threshold = eval.threshold;
  t.averaging = eval.averaging;
  return t;
}

json to_json(const RunConfig& c) {
  const auto& d = c.data;
  json data = {
      {"image_size", d.image_size},
      {"mask_suffix", d.mask_suffix},
      {"train_ratio", d.train_ratio},
      {"train_count", d.train_count ? json(*d.train_count) : json(nullptr)},
      {"repeats", d.repeats},
      {"split_index", d.split_index},
      {"labeled_fraction", d.labeled_fraction},
      {"labeled_per_batch", d.labeled_per_batch},
      {"unlabeled_per_batch", d.unlabeled_per_batch},
      {"augment", d.augment},
      {"augmentation",
       {{"flip_horizontal_prob", d.augmentation.flip_horizontal_prob},
        {"flip_vertical_prob", d.augmentation.flip_vertical_prob},
        {"rotation", to_string(d.augmentation.rotation)}}},
      {"toy",
       {{"image_size", d.toy.image_size},
        {"lesion_count_range", d.toy.lesion_count_range},
        {"lesion_axis_range", d.toy.lesion_axis_range},
        {"speckle_strength", d.toy.speckle_strength},
        {"blur_sigma", d.toy.blur_sigma},
        {"background_level", d.toy.background_level}}},
  };
  json ldm = {{"vae", vae_to_json(c.ldm.vae)},
              {"diffusion", diffusion_to_json(c.ldm.diffusion)},
              {"denoiser", denoiser_to_json(c.ldm.denoiser)},
              {"ddim", {{"steps", c.ldm.ddim.steps}, {"eta", c.ldm.ddim.eta}}},
              {"band_filter", c.ldm.band_filter}};
  return {{"data", data},
          {"network", network_to_json(c.network)},
          {"objective", {{"w_max", c.objective.w_max}}},
          {"optim", optim_to_json(c.optim)},
          {"eval", {{"threshold", c.eval.threshold}, {"averaging", to_string(c.eval.averaging)}}},
          {"ldm", ldm},
          {"run", {{"seed", c.run.seed}, {"output_dir", c.run.output_dir}, {"threads", c.run.threads}}}};
}

RunConfig from_json(const json& doc) {
  std::vector<std::string> errors;
  RunConfig c;
  {
    ObjectReader root(doc, "", errors);
    root.object("data", [&](ObjectReader& r) {
      auto& d = c.data;
      r.get("image_size", d.image_size);
      r.get("mask_suffix", d.mask_suffix);
      r.get("train_ratio", d.train_ratio);
      r.get_optional("train_count", d.train_count);
      r.get("repeats", d.repeats);
      r.get("split_index", d.split_index);
      r.get("labeled_fraction", d.labeled_fraction);
      r.get("labeled_per_batch", d.labeled_per_batch);
      r.get("unlabeled_per_batch", d.unlabeled_per_batch);
      r.get("augment", d.augment);
      r.object("augmentation", [&](ObjectReader& a) {
        a.get("flip_horizontal_prob", d.augmentation.flip_horizontal_prob);
        a.get("flip_vertical_prob", d.augmentation.flip_vertical_prob);
        a.get_enum("rotation", d.augmentation.rotation, rotation_from_string);
      });
      r.object("toy", [&](ObjectReader& t) {
        t.get("image_size", d.toy.image_size);
        t.get("lesion_count_range", d.toy.lesion_count_range);
        t.get("lesion_axis_range", d.toy.lesion_axis_range);
        t.get("speckle_strength", d.toy.speckle_strength);
        t.get("blur_sigma", d.toy.blur_sigma);
        t.get("background_level", d.toy.background_level);
      });
    });
    root.object("network", [&](ObjectReader& r) { read_network(r, c.network); });
    root.object("objective", [&](ObjectReader& r) { r.get("w_max", c.objective.w_max); });
    root.object("optim", [&](ObjectReader& r) { read_optim(r, c.optim); });
    root.object("eval", [&](ObjectReader& r) {
      r.get("threshold", c.eval.threshold);
      r.get_enum("averaging", c.eval.averaging, averaging_from_string);
    });
    root.object("ldm", [&](ObjectReader& r) {
      r.object("vae", [&](ObjectReader& s) { read_vae(s, c.ldm.vae); });
      r.object("diffusion", [&](ObjectReader& s) { read_diffusion(s, c.ldm.diffusion); });
      r.object("denoiser", [&](ObjectReader& s) { read_denoiser(s, c.ldm.denoiser); });
      r.object("ddim", [&](ObjectReader& s) {
        s.get("steps", c.ldm.ddim.steps);
        s.get("eta", c.ldm.ddim.eta);
      });
      r.get("band_filter", c.ldm.band_filter);
    });
    root.object("run", [&](ObjectReader& r) {
      r.get("seed", c.run.seed);
      r.get("output_dir", c.run.output_dir);
      r.get("threads", c.run.threads);
    });
  }
  for (auto& e : c.problems()) errors.push_back(e);
  if (!errors.empty()) throw_all(errors, "invalid run config");
  c.data.augmentation.seed = c.run.seed;
  c.data.toy.seed = c.run.seed;
  c.ldm.ddim.seed = c.run.seed;
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void save(const RunConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace mgcc::config

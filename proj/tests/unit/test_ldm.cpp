#include "../doctest_torch.hpp"

#include <cmath>

#include "../support.hpp"
#include "mgcc/error.hpp"
#include "mgcc/ldm.hpp"
#include "mgcc/toy.hpp"

using namespace mgcc;
using namespace mgcc::ldm;

namespace {

// ε recovered from z_t for a known z0; exact for every t ≥ 1.
EpsPredictor exact_oracle(const torch::Tensor& z0, const DiffusionSchedule& s) {
  return [z0, &s](const torch::Tensor& zt, const torch::Tensor& t) {
    const double ab = s.alpha_bar(static_cast<int>(t[0].item<std::int64_t>()));
    return (zt - std::sqrt(ab) * z0) / std::sqrt(1.0 - ab);
  };
}

double rel_err(const torch::Tensor& a, const torch::Tensor& b) {
  return ((a - b).abs().max() / b.abs().max()).item<double>();
}

VAEConfig desk_vae() {
  VAEConfig c;
  c.image_size = 64;
  c.base_channels = 16;
  c.lr = 1e-3;
  c.batch = 8;
  return c;
}

DenoiserConfig small_denoiser() {
  DenoiserConfig c;
  c.channels = {16, 32};
  c.time_embedding = 32;
  return c;
}

}  // namespace

TEST_SUITE("ldm") {
  TEST_CASE("schedule invariants") {
    DiffusionSchedule s;
    CHECK(s.steps() == 1000);
    CHECK(s.alpha_bar(0) == 1.0);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
      prod *= 1.0 - s.beta(t);
      CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
      if (t > 1) CHECK(s.beta(t) > s.beta(t - 1));
    }
    CHECK(s.beta(1) == doctest::Approx(1e-4));
    CHECK(s.beta(1000) == doctest::Approx(2e-2));
    CHECK(s.alpha_bar(1000) <= 1e-4);
    CHECK_THROWS_AS(s.alpha_bar(1001), ConfigError);
    CHECK_THROWS_AS(s.beta(0), ConfigError);
    CHECK_THROWS_AS(DiffusionSchedule(DiffusionConfig{10, 0.2, 0.1}), ConfigError);
  }

  TEST_CASE("forward diffusion boundaries and linearity") {
    DiffusionSchedule s;
    auto z0 = torch::randn({2, 4, 8, 8}, torch::kDouble);
    auto n = torch::randn({2, 4, 8, 8}, torch::kDouble);
    CHECK(testing::bitwise_equal(forward_diffuse(z0, 0, n, s), z0));
    CHECK(torch::allclose(forward_diffuse(z0, 500, torch::zeros_like(z0), s), std::sqrt(s.alpha_bar(500)) * z0));
    auto lhs = forward_diffuse(2.0 * z0 + n, 300, n - z0, s);
    auto rhs = 2.0 * forward_diffuse(z0, 300, torch::zeros_like(z0), s) +
               forward_diffuse(n, 300, torch::zeros_like(z0), s) + forward_diffuse(torch::zeros_like(z0), 300, n - z0, s);
    CHECK(torch::allclose(lhs, rhs, 1e-12, 1e-12));
    CHECK_THROWS_AS(forward_diffuse(z0, 1001, n, s), ConfigError);
    CHECK_THROWS_AS(forward_diffuse(z0, -1, n, s), ConfigError);
    CHECK_THROWS_AS(forward_diffuse(z0, 3, n.narrow(0, 0, 1), s), DataError);

    auto t = torch::tensor({0, 1000}, torch::kLong);
    auto rows = forward_diffuse(z0, t, n, s);
    CHECK(testing::bitwise_equal(rows[0], z0[0]));
    CHECK(torch::allclose(rows[1], forward_diffuse(z0[1], 1000, n[1], s)));
  }

  TEST_CASE("terminal latent is close to unit variance") {
    DiffusionSchedule s;
    auto gen = nn::make_generator(4);
    auto z0 = torch::randn({1'000'000}, gen, torch::kDouble);
    auto n = torch::randn({1'000'000}, gen, torch::kDouble);
    const double var = forward_diffuse(z0, 1000, n, s).var().item<double>();
    CHECK(var >= 0.97);
    CHECK(var <= 1.03);
  }

  TEST_CASE("denoiser loss with oracle and zero predictors") {
    DiffusionSchedule s;
    auto z0 = torch::randn({64, 4, 8, 8}, torch::kDouble);
    auto t = torch::full({64}, 250, torch::kLong);
    auto gen = nn::make_generator(1);
    auto loss = denoiser_loss(exact_oracle(z0, s), s, z0, t, gen).item<double>();
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-20);

    EpsPredictor zero = [](const torch::Tensor& zt, const torch::Tensor&) { return torch::zeros_like(zt); };
    auto l0 = denoiser_loss(zero, s, z0, gen).item<double>();
    CHECK(l0 == doctest::Approx(1.0).epsilon(0.05));
  }

  TEST_CASE("ddim timesteps are evenly strided and end at T") {
    auto ts = ddim_timesteps(1000, 100);
    REQUIRE(ts.size() == 100);
    CHECK(ts.front() == 10);
    CHECK(ts.back() == 1000);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] - ts[i - 1] == 10);
    auto odd = ddim_timesteps(1000, 7);
    CHECK(odd.back() == 1000);
    for (std::size_t i = 1; i < odd.size(); ++i) CHECK(odd[i] > odd[i - 1]);
    CHECK(ddim_timesteps(1000, 1000).front() == 1);
    CHECK_THROWS_AS(ddim_timesteps(1000, 0), ConfigError);
    CHECK_THROWS_AS(ddim_timesteps(1000, 1001), ConfigError);
  }

  TEST_CASE("a single ddim jump with the exact oracle recovers z0") {
    DiffusionSchedule s;
    auto z0 = torch::randn({2, 4, 8, 8}, torch::kDouble);
    auto eps = torch::randn({2, 4, 8, 8}, torch::kDouble);
    for (int t : {1, 10, 100, 500, 999, 1000}) {
      auto zt = forward_diffuse(z0, t, eps, s);
      auto out = ddim_step(zt, eps, t, 0, s);
      CHECK(rel_err(out, z0) <= 1e-10);
    }
    // Intermediate jumps land on the forward-diffused point with the same ε.
    auto z700 = forward_diffuse(z0, 700, eps, s);
    CHECK(rel_err(ddim_step(z700, eps, 700, 300, s), forward_diffuse(z0, 300, eps, s)) <= 1e-10);
    CHECK_THROWS_AS(ddim_step(z700, eps, 300, 300, s), ConfigError);
  }

  TEST_CASE("full-length ddim with the oracle matches the single jump") {
    DiffusionSchedule s;
    auto z0 = torch::randn({1, 4, 8, 8}, torch::kDouble);
    auto eps = torch::randn({1, 4, 8, 8}, torch::kDouble);
    auto zT = forward_diffuse(z0, 1000, eps, s);
    auto jump = ddim_sample_from(exact_oracle(z0, s), s, zT, 1);
    auto full = ddim_sample_from(exact_oracle(z0, s), s, zT, 1000);
    CHECK(rel_err(jump, z0) <= 1e-10);
    CHECK(rel_err(full, jump) <= 1e-10);
  }

  TEST_CASE("eta > 0 needs a generator") {
    DiffusionSchedule s;
    auto z = torch::randn({1, 4, 2, 2});
    CHECK_THROWS_AS(ddim_step(z, z, 500, 400, s, 1.0, nullptr), ConfigError);
    auto gen = nn::make_generator(1);
    CHECK(torch::isfinite(ddim_step(z, z, 500, 400, s, 1.0, &gen)).all().item<bool>());
  }

  TEST_CASE("ddim sampling with a denoiser is bit-deterministic") {
    DiffusionSchedule s;
    Denoiser den(4, small_denoiser(), 7);
    den->eval();
    EpsPredictor pred = [&](const torch::Tensor& z, const torch::Tensor& t) { return den->forward(z, t); };
    DDIMConfig cfg{10, 0.0, 3};
    auto a = ddim_sample(pred, s, cfg, {3, 4, 8, 8});
    auto b = ddim_sample(pred, s, cfg, {3, 4, 8, 8});
    CHECK(testing::bitwise_equal(a, b));
    // Row i does not depend on the batch it is drawn in.
    auto tail = ddim_sample(pred, s, cfg, {2, 4, 8, 8}, 1);
    CHECK(torch::allclose(tail, a.narrow(0, 1, 2), 1e-5, 1e-6));
    cfg.seed = 4;
    CHECK_FALSE(torch::equal(ddim_sample(pred, s, cfg, {3, 4, 8, 8}), a));
  }

  TEST_CASE("vae shapes and range") {
    VAE vae(desk_vae(), 1);
    torch::NoGradGuard ng;
    auto z = vae->encode(torch::rand({2, 1, 64, 64}));
    CHECK(z.sizes() == torch::IntArrayRef({2, 4, 8, 8}));
    auto x = vae->decode(z);
    CHECK(x.sizes() == torch::IntArrayRef({2, 1, 64, 64}));
    CHECK((x >= 0).all().item<bool>());
    CHECK((x <= 1).all().item<bool>());
    CHECK_THROWS_AS(vae->encode(torch::rand({1, 1, 32, 32})), DataError);

    auto big = desk_vae();
    big.image_size = 512;
    CHECK(big.latent_size() == 64);
    big.image_size = 60;
    CHECK_FALSE(big.problems().empty());
  }

  TEST_CASE("vae construction is reproducible from its seed") {
    VAE a(desk_vae(), 5), b(desk_vae(), 5), c(desk_vae(), 6);
    CHECK(testing::same_parameters(*a, *b));
    CHECK_FALSE(testing::same_parameters(*a, *c));
  }

  TEST_CASE("vae training reduces reconstruction error") {
    data::ToyGenConfig toy;
    toy.seed = 2;
    auto samples = data::generate_toy(toy, 48);
    auto cfg = desk_vae();
    cfg.epochs = 40;
    VAE vae(cfg, 3);
    const double before = reconstruction_mse(*vae, samples);
    auto log = train_vae(*vae, samples, cfg, 3);
    const double after = reconstruction_mse(*vae, samples);
    CHECK(log.epoch_loss.size() == 40);
    CHECK(after <= 0.2 * before);

    // Same seed, same curve.
    cfg.epochs = 3;
    VAE a(cfg, 3), b(cfg, 3);
    CHECK(train_vae(*a, samples, cfg, 9).epoch_loss == train_vae(*b, samples, cfg, 9).epoch_loss);
  }

  TEST_CASE("constant images are reconstructed almost exactly") {
    std::vector<data::Sample> flat;
    for (int i = 0; i < 8; ++i) {
      data::Sample s;
      s.id = "c" + std::to_string(i);
      s.image = data::Image(64, 64, 0.4f);
      flat.push_back(s);
    }
    auto cfg = desk_vae();
    cfg.epochs = 60;
    cfg.kl_weight = 0.0;
    VAE vae(cfg, 1);
    train_vae(*vae, flat, cfg, 1);
    CHECK(reconstruction_mse(*vae, flat) < 1e-3);
  }

  TEST_CASE("synthesized samples load back as synthetic") {
    testing::TempDir dir("synth");
    VAE vae(desk_vae(), 1);
    Denoiser den(4, small_denoiser(), 2);
    DiffusionSchedule s;
    SynthesisOptions opts;
    opts.count = 10;
    opts.ddim = {5, 0.0, 8};
    auto synth = synthesize(*vae, *den, s, 1.0, opts);
    REQUIRE(synth.size() == 10);
    CHECK(synth[3].id == "synth_8_3");
    data::write_directory(synth, dir.path(), "pool");
    auto back = data::load_directory(dir / "pool", {.size = 0});
    REQUIRE(back.size() == 10);
    for (const auto& b : back) {
      CHECK(b.source == data::Source::kSynthetic);
      CHECK_FALSE(b.mask);
      CHECK(b.image.same_shape(64, 64));
    }
    auto again = synthesize(*vae, *den, s, 1.0, opts);
    for (std::size_t i = 0; i < 10; ++i) CHECK(again[i].image == synth[i].image);
  }

  TEST_CASE("band filter accepts reference-like images only") {
    data::ToyGenConfig toy;
    auto ref = data::generate_toy(toy, 50);
    auto f = BandFilter::from_reference(ref);
    std::size_t accepted = 0;
    for (const auto& r : ref) accepted += f.accepts(r.image);
    CHECK(accepted >= 45);
    CHECK_FALSE(f.accepts(data::Image(64, 64, 1.0f)));
    CHECK_FALSE(f.accepts(data::Image(64, 64, 0.0f)));
  }

  TEST_CASE("vae and denoiser checkpoints round-trip") {
    testing::TempDir dir("ldmckpt");
    VAE vae(desk_vae(), 4);
    save_vae(*vae, dir / "vae", {0.5, 0.25});
    auto back = load_vae(dir / "vae");
    CHECK(testing::same_parameters(*vae, *back));
    CHECK(back->init_seed() == 4);

    Denoiser den(4, small_denoiser(), 5);
    DiffusionSchedule s;
    save_denoiser(*den, s, 1.7, 4, 0xabcdef, dir / "den");
    auto ld = load_denoiser(dir / "den");
    CHECK(testing::same_parameters(*den, *ld.denoiser));
    CHECK(ld.scale == 1.7);
    CHECK(ld.vae_hash == 0xabcdef);
    CHECK(ld.schedule.steps() == 1000);
    CHECK_THROWS_AS(load_vae(dir / "den"), DataError);
  }
}

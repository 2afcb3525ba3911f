#include "../doctest_torch.hpp"

#include <cmath>

#include "../support.hpp"
#include "mgcc/backbone.hpp"
#include "mgcc/error.hpp"

using namespace mgcc;
using namespace mgcc::nn;

namespace {

std::int64_t numel_of(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

NetworkConfig no_perturbation(NetworkConfig c) {
  for (auto& p : c.perturbations) p.kind = PerturbationKind::kNone;
  return c;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("default encoder shapes at 256 px") {
    torch::NoGradGuard ng;
    MGCCNet net(NetworkConfig{});
    net->eval();
    auto enc = net->encode(torch::zeros({1, 1, 256, 256}));
    REQUIRE(enc.skips.size() == 4);
    const std::int64_t channels[] = {64, 128, 256, 512};
    const std::int64_t side[] = {256, 128, 64, 32};
    for (int i = 0; i < 4; ++i) {
      CHECK(enc.skips[i].sizes() == torch::IntArrayRef({1, channels[i], side[i], side[i]}));
    }
    CHECK(enc.bottleneck.sizes() == torch::IntArrayRef({1, 1024, 16, 16}));

    auto taps = net->convmixer_forward(enc.bottleneck, 9, {0, 4, 9});
    for (const auto& [t, f] : taps) CHECK(f.sizes() == enc.bottleneck.sizes());
    auto logits = net->decode(3, taps.at(9), enc.skips);
    CHECK(logits.sizes() == torch::IntArrayRef({1, 1, 256, 256}));
  }

  TEST_CASE("batch dimension passes through and bad sizes are rejected") {
    torch::NoGradGuard ng;
    MGCCNet net(testing::tiny_network());
    auto enc = net->encode(torch::rand({2, 1, 8, 8}));
    CHECK(enc.bottleneck.size(0) == 2);
    for (auto& s : enc.skips) CHECK(s.size(0) == 2);
    CHECK_THROWS_AS(net->encode(torch::rand({1, 1, 6, 8})), DataError);
  }

  TEST_CASE("zero input gives a zero bottleneck with default batch-norm affine") {
    torch::NoGradGuard ng;
    MGCCNet net(testing::tiny_network());
    initialize(*net, 3);
    net->train();
    auto enc = net->encode(torch::zeros({2, 1, 8, 8}));
    CHECK(enc.bottleneck.abs().max().item<float>() == 0.0f);
  }

  TEST_CASE("tap 0 is the input and taps are prefixes of one computation") {
    torch::NoGradGuard ng;
    MGCCNet net(testing::tiny_network());
    initialize(*net, 1);
    net->eval();
    auto f = torch::randn({2, 8, 2, 2});
    auto all = net->convmixer_forward(f, 3, {0, 1, 2, 3});
    CHECK(testing::bitwise_equal(all.at(0), f));
    for (int t = 1; t <= 3; ++t) {
      auto prefix = net->convmixer_forward(f, t, {t});
      CHECK(testing::bitwise_equal(prefix.at(t), all.at(t)));
    }
    CHECK_THROWS_AS(net->convmixer_forward(f, 4, {4}), ConfigError);
    CHECK_THROWS_AS(net->convmixer_forward(f, 2, {3}), ConfigError);
  }

  TEST_CASE("convmixer layers and gates preserve shape") {
    torch::NoGradGuard ng;
    for (std::int64_t c : {3, 8}) {
      ConvMixerLayer layer(c, 5);
      AttentionGate gate(c);
      auto x = torch::randn({2, c, 7, 5});
      CHECK(layer->forward(x).sizes() == x.sizes());
      CHECK(gate->forward(x).sizes() == x.sizes());
    }
  }

  TEST_CASE("zero fuse weights give a 0.5 gate") {
    torch::NoGradGuard ng;
    AttentionGate gate(4);
    gate->fuse()->weight.zero_();
    gate->fuse()->bias.zero_();
    gate->eval();
    auto f = torch::randn({1, 4, 6, 6});
    CHECK(torch::allclose(gate->forward(f), 1.5 * f, 0.0, 1e-6));
  }

  TEST_CASE("parameter closed forms match brute enumeration at C = 4") {
    // depthwise 7×7 (+bias), pointwise (+bias), two batch-norms
    ConvMixerLayer layer(4, 7);
    const std::int64_t mixer = (4 * 49 + 4) + (4 * 4 + 4) + 2 * (4 + 4);
    CHECK(numel_of(*layer) == mixer);
    CHECK(mixer == 4 * 4 + 55 * 4);
    CHECK(convmixer_layer_parameter_count(4, 7) == mixer);

    AttentionGate gate(4);
    const std::int64_t gate_count = (16 + 4) + (144 + 4) + (144 + 4) + 3 * 8 + (48 + 4);
    CHECK(numel_of(*gate) == gate_count);
    CHECK(gate_count == 22 * 16 + 10 * 4);
    CHECK(attention_gate_parameter_count(4) == gate_count);
  }

  TEST_CASE("default parameter counts") {
    MGCCNet net(NetworkConfig{});
    CHECK(count_parameters(*net, ParameterScope::kConvMixer) == 9'944'064);
    CHECK(count_parameters(*net, ParameterScope::kMsag) == 7'669'120);
    CHECK(convmixer_layer_parameter_count(1024, 7) == 1'104'896);

    auto cfg = NetworkConfig{};
    cfg.msag_enabled = {false, false, false, false};
    MGCCNet plain(cfg);
    const double ratio = static_cast<double>(count_parameters(*plain, ParameterScope::kInference)) /
                         static_cast<double>(count_parameters(*plain, ParameterScope::kBaseline));
    CHECK(ratio >= 1.25);
    CHECK(ratio <= 1.32);
    CHECK(count_parameters(*plain, ParameterScope::kMsag) == 0);
  }

  TEST_CASE("f-noise with bound 0 is the identity and respects its bound") {
    auto gen = make_generator(5);
    auto f = torch::randn({2, 8, 4, 4});
    CHECK(testing::bitwise_equal(perturb(f, PerturbationSpec::feature_noise(0.0), gen), f));
    for (int draw = 0; draw < 20; ++draw) {
      auto g = perturb(f, PerturbationSpec::feature_noise(0.3), gen);
      CHECK(((g - f).abs() <= 0.3 * f.abs() + 1e-7).all().item<bool>());
    }
  }

  TEST_CASE("f-drop zeroes whole positions including the most salient one") {
    auto gen = make_generator(6);
    auto f = torch::randn({3, 8, 6, 6});
    auto sal = f.abs().sum(1);
    for (int draw = 0; draw < 20; ++draw) {
      auto g = perturb(f, PerturbationSpec::feature_drop(), gen);
      auto zero_pos = (g == 0).all(1);
      auto same_pos = (g == f).all(1);
      CHECK((zero_pos | same_pos).all().item<bool>());
      for (int b = 0; b < 3; ++b) {
        auto flat = sal[b].flatten();
        CHECK(zero_pos[b].flatten()[flat.argmax()].item<bool>());
        // Anything below 0.6 of the peak always survives.
        auto low = flat < 0.6 * flat.max();
        CHECK((same_pos[b].flatten().masked_select(low)).all().item<bool>());
      }
    }
  }

  TEST_CASE("dropout survivor fraction and mean") {
    auto gen = make_generator(7);
    const std::int64_t n = 200'000;
    auto f = torch::ones({n});
    auto g = perturb(f, PerturbationSpec::dropout(0.5), gen);
    const double survivors = (g != 0).to(torch::kDouble).mean().item<double>();
    const double sigma = std::sqrt(0.25 / static_cast<double>(n));
    CHECK(std::abs(survivors - 0.5) <= 3 * sigma);
    CHECK(g.mean().item<double>() == doctest::Approx(1.0).epsilon(6 * sigma));
    CHECK(testing::bitwise_equal(perturb(f, PerturbationSpec::dropout(0.5), gen, ForwardMode::kEval), f));
  }

  TEST_CASE("train mode emits K + 1 maps, eval mode runs one decoder") {
    auto cfg = testing::small_network();
    MGCCNet net(cfg);
    initialize(*net, 2);
    auto gen = make_generator(1);
    auto x = torch::rand({2, 1, 256, 256});
    {
      torch::NoGradGuard ng;
      net->reset_counters();
      auto out = net->forward(x, ForwardMode::kTrain, &gen);
      CHECK(out.aux_logits.size() == 3);
      CHECK(out.main_logits.sizes() == torch::IntArrayRef({2, 1, 256, 256}));
      for (auto& a : out.aux_logits) CHECK(a.sizes() == out.main_logits.sizes());
      CHECK(net->decoder_calls() == 4);

      net->reset_counters();
      auto ev = net->forward(x, ForwardMode::kEval);
      CHECK(ev.aux_logits.empty());
      CHECK(net->decoder_calls() == 1);
      CHECK_FALSE(net->is_training());
    }
  }

  TEST_CASE("eval forward is deterministic") {
    torch::NoGradGuard ng;
    MGCCNet net(testing::tiny_network());
    initialize(*net, 4);
    auto x = torch::rand({2, 1, 8, 8});
    auto a = net->forward(x, ForwardMode::kEval).main_logits;
    auto b = net->forward(x, ForwardMode::kEval).main_logits;
    CHECK(testing::bitwise_equal(a, b));
  }

  TEST_CASE("disabling MSAG bypasses the gates") {
    torch::NoGradGuard ng;
    auto cfg = testing::tiny_network();
    cfg.msag_enabled = {true, false, true, false};
    MGCCNet net(cfg);
    initialize(*net, 4);
    auto out = net->forward(torch::rand({1, 1, 8, 8}), ForwardMode::kEval);
    CHECK(torch::isfinite(out.main_logits).all().item<bool>());

    cfg.msag_enabled = {false, false, false, false};
    MGCCNet bare(cfg);
    CHECK(count_parameters(*bare, ParameterScope::kMsag) == 0);
    CHECK(torch::isfinite(bare->forward(torch::rand({1, 1, 8, 8}), ForwardMode::kTrain).main_logits).all().item<bool>());
  }

  TEST_CASE("aux equals main with equal taps, no perturbation and shared weights") {
    torch::NoGradGuard ng;
    auto cfg = no_perturbation(testing::tiny_network());
    cfg.taps = {3, 3, 3, 3};
    MGCCNet net(cfg);
    initialize(*net, 9);
    auto main_params = net->main_decoder()->named_parameters();
    for (int k = 0; k < 3; ++k) {
      for (auto& p : net->aux_decoder(k)->named_parameters()) p.value().copy_(main_params[p.key()]);
    }
    auto out = net->forward(torch::rand({2, 1, 8, 8}), ForwardMode::kTrain);
    for (auto& a : out.aux_logits) CHECK(testing::bitwise_equal(a, out.main_logits));
  }

  TEST_CASE("auxiliary decoders are initialized independently and reproducibly") {
    MGCCNet a(testing::tiny_network()), b(testing::tiny_network());
    initialize(*a, 11);
    initialize(*b, 11);
    CHECK(testing::same_parameters(*a, *b));
    auto w0 = a->aux_decoder(0)->parameters().front();
    auto w1 = a->aux_decoder(1)->parameters().front();
    CHECK_FALSE(torch::equal(w0, w1));
  }

  TEST_CASE("network config invariants") {
    auto c = testing::tiny_network();
    c.taps = {0, 2, 1, 3};
    CHECK_FALSE(c.problems().empty());
    c = testing::tiny_network();
    c.taps = {0, 1, 2, 2};
    CHECK_FALSE(c.problems().empty());
    c = testing::tiny_network();
    c.convmixer_kernel = 4;
    CHECK_FALSE(c.problems().empty());
    c = testing::tiny_network();
    c.perturbations.pop_back();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = testing::tiny_network();
    c.perturbations[2] = PerturbationSpec::dropout(1.0);
    CHECK_FALSE(c.problems().empty());
    CHECK(testing::tiny_network().problems().empty());
  }
}

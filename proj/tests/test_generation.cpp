#include <cmath>
#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "levo/generation.hpp"

using namespace levo;
using namespace levo::gen;

namespace {

lelm::LeLMConfig small_config() {
  lelm::LeLMConfig c;
  c.lm_layers = 2;
  c.lm_dim = 16;
  c.lm_heads = 2;
  c.lm_ffn = 32;
  c.dec_layers = 1;
  c.dec_dim = 16;
  c.dec_heads = 2;
  c.dec_ffn = 32;
  c.mixed_codes = 12;
  c.vocal_vocab = 10;
  c.accomp_vocab = 9;
  c.delay = 3;
  c.max_context = 128;
  c.init_std = 0.3;
  return c;
}

corpus::Conditions conditions() {
  corpus::Conditions cond;
  cond.lyrics.symbols = {40, 3, 7, 12, 41, 0, 5};
  cond.text_style = corpus::StyleTag{2};
  return cond;
}

// Upper chi-square quantile via the Wilson-Hilferty cube approximation.
double chi2_quantile(double df, double z) {
  const double a = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

std::vector<float> random_logits(Rng& rng, int n) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(3.0 * rng.normal());
  return v;
}

}  // namespace

TEST_CASE("k=1 is argmax regardless of temperature") {
  Rng rng(1), srng(2);
  for (int i = 0; i < 1000; ++i) {
    auto l = random_logits(rng, 37);
    const int arg = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
    SamplerConfig cfg{1, 0.1 + 3.0 * rng.uniform()};
    CHECK(top_k_sample(l, cfg, srng) == arg);
  }
  std::vector<float> tie{1.0f, 3.0f, 3.0f, 0.0f};
  CHECK(top_k_sample(tie, SamplerConfig{1, 1.0}, srng) == 1);
}

TEST_CASE("uniform logits sample uniformly") {
  const int vocab = 64, draws = 100000;
  std::vector<float> l(vocab, 0.25f);
  std::vector<int> counts(vocab, 0);
  Rng rng(77);
  SamplerConfig cfg{vocab, 0.9};
  for (int i = 0; i < draws; ++i) ++counts[top_k_sample(l, cfg, rng)];
  const double expect = static_cast<double>(draws) / vocab;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < chi2_quantile(vocab - 1, 2.326348));
}

TEST_CASE("samples stay inside the top-k set") {
  Rng rng(3), srng(4);
  for (int i = 0; i < 500; ++i) {
    auto l = random_logits(rng, 20);
    const int k = 1 + static_cast<int>(rng.below(20));
    std::vector<int> idx(20);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return l[a] > l[b]; });
    std::set<int> top(idx.begin(), idx.begin() + k);
    CHECK(top.count(top_k_sample(l, SamplerConfig{k, 1.3}, srng)) == 1);
  }
}

TEST_CASE("low temperature converges to argmax") {
  Rng rng(5), srng(6);
  for (int i = 0; i < 200; ++i) {
    auto l = random_logits(rng, 64);
    const int arg = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
    CHECK(top_k_sample(l, SamplerConfig{50, 1e-4}, srng) == arg);
  }
}

TEST_CASE("sampler errors") {
  Rng rng(1);
  std::vector<float> l{0.0f, 1.0f};
  CHECK_THROWS_AS(top_k_sample(l, SamplerConfig{0, 1.0}, rng), Error);
  CHECK_THROWS_AS(top_k_sample(l, SamplerConfig{3, 1.0}, rng), Error);
  CHECK_THROWS_AS(top_k_sample(l, SamplerConfig{1, 0.0}, rng), Error);
  std::vector<float> nan{0.0f, std::nanf("")};
  CHECK_THROWS_AS(top_k_sample(nan, SamplerConfig{1, 1.0}, rng), Error);
  CHECK(default_top_k(65) == 8);
  CHECK(default_top_k(1024) == 50);
}

TEST_CASE("generation lengths, determinism and cache agreement") {
  auto m = lelm::LeLM::init(small_config(), 3);
  GenerateConfig cfg;
  cfg.frames = 64;
  cfg.seed = 99;
  cfg.sampler = {8, 0.9};
  auto a = generate(m, conditions(), cfg);
  auto b = generate(m, conditions(), cfg);
  cfg.use_cache = false;
  auto u = generate(m, conditions(), cfg);
  CHECK(a.streams.mixed.size() == 64);
  CHECK(a.streams.vocal.size() == 64);
  CHECK(a.streams.accompaniment.size() == 64);
  CHECK_NOTHROW(a.streams.validate(true));
  CHECK(a.streams.mixed == b.streams.mixed);
  CHECK(a.streams.vocal == b.streams.vocal);
  CHECK(a.streams.mixed == u.streams.mixed);
  CHECK(a.streams.vocal == u.streams.vocal);
  CHECK(a.streams.accompaniment == u.streams.accompaniment);

  REQUIRE(a.access_log.size() == 64);
  for (const auto& acc : a.access_log) {
    CHECK(acc.hidden_index < acc.decoded_mixed);
    CHECK(acc.hidden_index == std::min(acc.step + m.config.delay, 63));
  }
  // Mixed decoding runs ahead of the decoder by k steps until the end.
  CHECK(a.access_log[0].decoded_mixed == m.config.delay + 1);

  cfg.use_cache = true;
  cfg.seed = 100;
  auto c = generate(m, conditions(), cfg);
  CHECK(c.streams.mixed != a.streams.mixed);

  cfg.mixed_only = true;
  auto mo = generate(m, conditions(), cfg);
  CHECK(mo.streams.mixed.size() == 64);
  CHECK(mo.streams.vocal.empty());
  CHECK(mo.access_log.empty());

  cfg.mixed_only = false;
  cfg.frames = 120;
  CHECK_THROWS_AS(generate(m, conditions(), cfg), Error);
}

TEST_CASE("EOS truncates every stream") {
  auto m = lelm::LeLM::init(small_config(), 4);
  auto& bias = m.params.at("lm.head_m.b").data;
  bias[static_cast<std::size_t>(m.config.eos())] = 60.0f;
  GenerateConfig cfg;
  cfg.frames = 40;
  cfg.sampler = {13, 1.0};
  CHECK_THROWS_AS(generate(m, conditions(), cfg), Error);

  bias[static_cast<std::size_t>(m.config.eos())] = 1.0f;
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 200 && !seen; ++seed) {
    cfg.seed = seed;
    try {
      auto r = generate(m, conditions(), cfg);
      if (!r.hit_eos) continue;
      seen = true;
      CHECK(r.streams.mixed.size() < 40);
      CHECK(r.streams.vocal.size() == r.streams.mixed.size());
      CHECK(r.streams.accompaniment.size() == r.streams.mixed.size());
      for (const auto& acc : r.access_log) CHECK(acc.hidden_index < acc.decoded_mixed);
    } catch (const Error&) {
    }
  }
  CHECK(seen);
}

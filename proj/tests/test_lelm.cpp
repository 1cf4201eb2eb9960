#include <cmath>

#include "doctest.h"
#include "levo/lelm.hpp"
#include "levo/rng.hpp"

using namespace levo;
using namespace levo::lelm;

namespace {

LeLMConfig small_config() {
  LeLMConfig c;
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
  c.max_context = 96;
  c.init_std = 0.3;
  return c;
}

corpus::Conditions conditions(bool style, bool audio) {
  corpus::Conditions cond;
  cond.lyrics.symbols = {40, 3, 7, 7, 12, 41, 0, 5};
  if (style) cond.text_style = corpus::StyleTag{3};
  if (audio) cond.audio_prompt = std::vector<int>(16, 2);
  return cond;
}

std::vector<int> random_tokens(Rng& rng, int n, int vocab) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto& x : t) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return t;
}

struct DualLogits {
  Tensor v, a;
};

DualLogits dual_logits(const LeLM& m, const PrefixSequence& p, const std::vector<int>& mixed,
                       const std::vector<int>& prev_v, const std::vector<int>& prev_a, int k) {
  ad::Graph<float> g(false);
  auto lm = lm_forward(g, m, p, mixed);
  auto hm = ad::slice_rows(g, lm.hidden, lm.prefix_len, lm.prefix_len + static_cast<std::int64_t>(mixed.size()));
  auto d = dec_forward(g, m, hm, prev_v, prev_a, k);
  return {g.tensor(d.logits_v), g.tensor(d.logits_a)};
}

bool rows_equal(const Tensor& a, const Tensor& b, std::int64_t r) {
  return std::equal(a.row(r), a.row(r) + a.cols(), b.row(r));
}

}  // namespace

TEST_CASE("prefix layout") {
  auto c = small_config();
  auto p = build_prefix(c, conditions(true, true), true, true);
  REQUIRE(p.size() == 3 + 8 + 1);
  CHECK(p.tokens[0] == kBos);
  CHECK(p.tokens[1] == kSep);
  CHECK(p.tokens[2] == kSep);
  CHECK(p.tokens[3] == lyric_token(c, 40));
  CHECK(p.tokens.back() == kSep);
  CHECK(p.style_dropped);
  CHECK(p.audio_dropped);

  auto full = build_prefix(c, conditions(true, true), false, false);
  auto no_audio = build_prefix(c, conditions(true, false), false, false);
  CHECK(full.size() == no_audio.size() + 16);
  CHECK(full.tokens[1] == style_token(c, 3));
  CHECK(full.segments[1] == kSegStyle);
  CHECK(full.segments[3] == kSegAudio);
  CHECK(!no_audio.audio_dropped);
  auto again = build_prefix(c, conditions(true, true), false, false);
  CHECK(again.tokens == full.tokens);
  CHECK(again.segments == full.segments);

  c.max_context = 20;
  CHECK_THROWS_AS(build_prefix(c, conditions(true, true), false, false), Error);
}

TEST_CASE("config validation and parameter partition") {
  auto c = small_config();
  c.dec_layers = 2;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.vocal_vocab = 1;
  CHECK_THROWS_AS(c.validate(), Error);

  auto m = LeLM::init(small_config(), 1);
  int lm = 0, dec = 0, heads = 0;
  for (const auto& [name, t] : m.params.tensors()) {
    const std::string grp = LeLM::group_of(name);
    CHECK(grp != "other");
    lm += grp == "lm";
    dec += grp == "dec";
    heads += grp == "heads";
  }
  CHECK(lm > 0);
  CHECK(dec > 0);
  CHECK(heads == 4);
  CHECK(m.params.at("lm.head_m.w").shape[1] == m.config.mixed_vocab());
  CHECK(m.params.at("heads.v.w").shape[1] == 10);
  CHECK(m.params.at("heads.a.w").shape[1] == 9);
}

TEST_CASE("lm is causal and handles T=0") {
  auto m = LeLM::init(small_config(), 2);
  auto p = build_prefix(m.config, conditions(true, false), false, false);
  Rng rng(3);
  auto mixed = random_tokens(rng, 20, m.config.mixed_codes);
  ad::Graph<float> g0(false);
  auto base = g0.tensor(lm_forward(g0, m, p, mixed).logits_m);
  REQUIRE(base.shape == Shape{20, m.config.mixed_vocab()});
  for (int tp = 0; tp < 20; ++tp) {
    auto pert = mixed;
    pert[tp] = (pert[tp] + 1) % m.config.mixed_codes;
    ad::Graph<float> g(false);
    auto out = g.tensor(lm_forward(g, m, p, pert).logits_m);
    for (int t = 0; t <= tp; ++t) CHECK(rows_equal(base, out, t));
    if (tp + 1 < 20) CHECK_FALSE(rows_equal(base, out, tp + 1));
  }

  ad::Graph<float> g(false);
  auto out = lm_forward(g, m, p, std::vector<int>{});
  CHECK(g.shape(out.logits_m) == Shape{0, m.config.mixed_vocab()});
  CHECK(g.shape(out.hidden) == Shape{p.size(), m.config.lm_dim});

  std::vector<int> bad{m.config.mixed_vocab()};
  ad::Graph<float> g2(false);
  CHECK_THROWS_AS(lm_forward(g2, m, p, bad), Error);
  std::vector<int> longseq(static_cast<std::size_t>(m.config.max_context), 0);
  ad::Graph<float> g3(false);
  CHECK_THROWS_AS(lm_forward(g3, m, p, longseq), Error);
}

TEST_CASE("decoder delay window is exact") {
  auto m = LeLM::init(small_config(), 4);
  auto p = build_prefix(m.config, conditions(false, false), false, false);
  Rng rng(9);
  const int T = 24;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = static_cast<int>(rng.below(8));
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(T - k - 2)));
    auto mixed = random_tokens(rng, T, m.config.mixed_codes);
    auto pv = shift_right(random_tokens(rng, T, 10), 10);
    auto pa = shift_right(random_tokens(rng, T, 9), 9);
    auto base = dual_logits(m, p, mixed, pv, pa, k);
    auto far = mixed;
    far[t + k + 1] = (far[t + k + 1] + 5) % m.config.mixed_codes;
    auto out = dual_logits(m, p, far, pv, pa, k);
    CHECK(rows_equal(base.v, out.v, t));
    CHECK(rows_equal(base.a, out.a, t));
    auto near = mixed;
    near[t + k] = (near[t + k] + 5) % m.config.mixed_codes;
    auto out2 = dual_logits(m, p, near, pv, pa, k);
    CHECK_FALSE(rows_equal(base.v, out2.v, t));
  }
}

TEST_CASE("decoder with k=0 reads h[t]") {
  auto m = LeLM::init(small_config(), 5);
  auto p = build_prefix(m.config, conditions(true, false), false, false);
  Rng rng(1);
  const int T = 10;
  auto mixed = random_tokens(rng, T, m.config.mixed_codes);
  auto pv = shift_right(random_tokens(rng, T, 10), 10);
  auto pa = shift_right(random_tokens(rng, T, 9), 9);
  auto base = dual_logits(m, p, mixed, pv, pa, 0);
  // No-lookahead baseline: the LM over a prefix of the stream only ever sees positions <= t.
  for (int t = 0; t < T; ++t) {
    std::vector<int> head(mixed.begin(), mixed.begin() + t + 1);
    std::vector<int> hv(pv.begin(), pv.begin() + t + 1), ha(pa.begin(), pa.begin() + t + 1);
    if (t == 0) continue;  // k must be < T
    auto part = dual_logits(m, p, head, hv, ha, 0);
    CHECK(std::equal(part.v.row(t), part.v.row(t) + part.v.cols(), base.v.row(t)));
  }
  ad::Graph<float> g(false);
  auto lm = lm_forward(g, m, p, mixed);
  auto hm = ad::slice_rows(g, lm.hidden, lm.prefix_len, lm.prefix_len + T);
  CHECK_THROWS_AS(dec_forward(g, m, hm, pv, pa, T), Error);
  std::vector<int> shortv(pv.begin(), pv.end() - 1);
  CHECK_THROWS_AS(dec_forward(g, m, hm, shortv, pa, 1), Error);
}

TEST_CASE("random init cross entropy is near ln K") {
  LeLMConfig c;  // default dims
  auto m = LeLM::init(c, 6);
  Rng rng(11);
  double total = 0;
  int frames = 0;
  for (int s = 0; s < 8; ++s) {
    auto p = build_prefix(c, conditions(true, true), false, false);
    auto mixed = random_tokens(rng, 125, c.mixed_codes);
    ad::Graph<float> g(false);
    auto logits = g.tensor(lm_forward(g, m, p, mixed).logits_m);
    total += ce_loss(logits, mixed) * 125;
    frames += 125;
  }
  CHECK(frames >= 1000);
  CHECK(std::abs(total / frames - std::log(static_cast<double>(c.mixed_vocab()))) < 0.2);
}

TEST_CASE("ce_loss edge cases") {
  Tensor uniform({3, 7}, 0.5f);
  std::vector<int> tg{1, 6, 0};
  CHECK(ce_loss(uniform, tg) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  Tensor sharp({2, 4}, 0.0f);
  sharp.row(0)[2] = 60.0f;
  sharp.row(1)[0] = 60.0f;
  std::vector<int> tg2{2, 0};
  CHECK(ce_loss(sharp, tg2) < 1e-12);
  std::vector<int> pad{-1, -1};
  CHECK_THROWS_AS(ce_loss(sharp, pad), Error);
  std::vector<int> mixed_pad{2, -1};
  Tensor half({2, 4}, 0.0f);
  CHECK(ce_loss(half, mixed_pad) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("incremental sessions match the tape bit for bit") {
  auto m = LeLM::init(small_config(), 8);
  auto p = build_prefix(m.config, conditions(true, true), false, false);
  Rng rng(4);
  const int T = 14;
  auto mixed = random_tokens(rng, T, m.config.mixed_codes);
  auto sv = random_tokens(rng, T, 10), sa = random_tokens(rng, T, 9);
  ad::Graph<float> g(false);
  auto lm = lm_forward(g, m, p, mixed);
  auto hidden = g.tensor(lm.hidden);
  auto logits = g.tensor(lm.logits_m);

  LmSession cached(m, true), plain(m, false);
  std::vector<int> toks = p.tokens, segs = p.segments;
  for (int t : mixed) {
    toks.push_back(mixed_token(m.config, t));
    segs.push_back(kSegMixed);
  }
  std::vector<std::vector<float>> hrows;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    cached.feed(toks[i], segs[i]);
    plain.feed(toks[i], segs[i]);
    CHECK(cached.hidden() == plain.hidden());
    CHECK(cached.logits() == plain.logits());
    CHECK(std::equal(cached.hidden().begin(), cached.hidden().end(), hidden.row(static_cast<std::int64_t>(i))));
    const auto j = static_cast<std::int64_t>(i) - p.size() + 1;
    if (j >= 0 && j < T) CHECK(std::equal(cached.logits().begin(), cached.logits().end(), logits.row(j)));
    if (static_cast<std::int64_t>(i) >= p.size()) hrows.push_back(cached.hidden());
  }

  auto pv = shift_right(sv, 10), pa = shift_right(sa, 9);
  auto ref = dual_logits(m, p, mixed, pv, pa, m.config.delay);
  DecSession dc(m, true), du(m, false);
  for (int t = 0; t < T; ++t) {
    const auto& h = hrows[static_cast<std::size_t>(std::min(t + m.config.delay, T - 1))];
    dc.feed(pv[t], pa[t], h);
    du.feed(pv[t], pa[t], h);
    CHECK(dc.logits_v() == du.logits_v());
    CHECK(dc.logits_a() == du.logits_a());
    CHECK(std::equal(dc.logits_v().begin(), dc.logits_v().end(), ref.v.row(t)));
    CHECK(std::equal(dc.logits_a().begin(), dc.logits_a().end(), ref.a.row(t)));
  }
}

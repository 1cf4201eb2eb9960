#include <cmath>

#include "doctest.h"
#include "levo/rng.hpp"
#include "levo/rvq.hpp"

using namespace levo;
using namespace levo::rvq;

namespace {

Tensor random_frames(std::uint64_t seed, std::int64_t n, int d) {
  Rng rng(seed);
  Tensor t({n, d});
  for (auto& x : t.data) x = static_cast<float>(rng.normal());
  return t;
}

double mse(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

}  // namespace

TEST_CASE("fit recovers K-1 separated clusters") {
  const int k = 8, d = 4;
  Rng rng(5);
  std::vector<std::vector<float>> centers(k - 1, std::vector<float>(d));
  for (auto& c : centers)
    for (auto& x : c) x = static_cast<float>(10.0 * rng.normal());
  Tensor data({(k - 1) * 50, d});
  for (int i = 0; i < (k - 1) * 50; ++i) std::copy(centers[i % (k - 1)].begin(), centers[i % (k - 1)].end(), data.row(i));
  FitConfig cfg;
  cfg.codebook_size = k;
  cfg.iters = 20;
  cfg.batch = 64;
  auto cbs = fit_codebooks(data, cfg);
  for (const auto& c : centers) {
    const float* e = cbs[0].entries.row(nearest(cbs[0], c.data()));
    double dist = 0;
    for (int j = 0; j < d; ++j) dist += (e[j] - c[j]) * (e[j] - c[j]);
    CHECK(dist < 1e-6);
  }
}

TEST_CASE("fit: more stages never increase error, same seed is deterministic, N < K rejected") {
  auto data = random_frames(1, 2000, 8);
  FitConfig one;
  one.codebook_size = 16;
  one.seed = 3;
  FitConfig two = one;
  two.stages = 2;
  auto c1 = fit_codebooks(data, one);
  auto c2 = fit_codebooks(data, two);
  CHECK(mse(data, decode(encode(data, c2).indices, c2)) <= mse(data, decode(encode(data, c1).indices, c1)));
  auto again = fit_codebooks(data, two);
  for (int s = 0; s < 2; ++s) CHECK(again[s].entries.data == c2[s].entries.data);
  for (const auto& cb : c2) {
    for (int c = 0; c < cb.dim(); ++c) CHECK(cb.entries.row(0)[c] == 0.f);
    for (float x : cb.entries.data) CHECK(std::isfinite(x));
  }
  CHECK_THROWS_AS(fit_codebooks(random_frames(2, 10, 8), one), Error);
}

TEST_CASE("encode: codeword frames, zero frames, monotone residuals") {
  auto data = random_frames(7, 3000, 8);
  FitConfig cfg;
  cfg.codebook_size = 32;
  cfg.stages = 3;
  auto cbs = fit_codebooks(data, cfg);

  Tensor exact({1, 8});
  std::copy_n(cbs[0].entries.row(5), 8, exact.row(0));
  auto e = encode(exact, std::span(cbs).first(1));
  CHECK(e.indices[0][0] == 5);
  for (float x : e.residual.data) CHECK(x == 0.f);

  auto z = encode(Tensor({3, 8}), cbs);
  for (const auto& st : z.indices)
    for (int i : st) CHECK(i == 0);

  auto frames = random_frames(8, 500, 8);
  for (std::int64_t t = 0; t < frames.rows(); ++t) {
    Tensor r({1, 8});
    std::copy_n(frames.row(t), 8, r.row(0));
    float prev = squared_norm(r.row(0), 8);
    for (const auto& cb : cbs) {
      const float* cw = cb.entries.row(nearest(cb, r.row(0)));
      for (int c = 0; c < 8; ++c) r.row(0)[c] = r.row(0)[c] - cw[c];
      const float now = squared_norm(r.row(0), 8);
      CHECK(now <= prev);
      prev = now;
    }
  }
  CHECK_THROWS_AS(encode(Tensor({2, 5}), cbs), Error);
}

TEST_CASE("decode: identity with residual, zeros, range check, beats global centroid") {
  auto train = random_frames(9, 4000, 8);
  auto held = random_frames(10, 1000, 8);
  FitConfig cfg;
  cfg.codebook_size = 64;
  cfg.stages = 2;
  auto cbs = fit_codebooks(train, cfg);
  auto enc = encode(held, cbs);
  auto rec = decode(enc.indices, cbs);
  for (std::size_t i = 0; i < rec.data.size(); ++i) CHECK(rec.data[i] + enc.residual.data[i] == doctest::Approx(held.data[i]).epsilon(1e-5));

  std::vector<std::vector<int>> zeros(2, std::vector<int>(4, 0));
  for (float x : decode(zeros, cbs).data) CHECK(x == 0.f);
  zeros[1][2] = 64;
  CHECK_THROWS_AS(decode(zeros, cbs), Error);

  // Baseline: best single global centroid is the training mean.
  std::vector<double> mean(8, 0.0);
  for (std::int64_t t = 0; t < train.rows(); ++t)
    for (int c = 0; c < 8; ++c) mean[c] += train.row(t)[c] / static_cast<double>(train.rows());
  double base = 0;
  for (std::int64_t t = 0; t < held.rows(); ++t)
    for (int c = 0; c < 8; ++c) base += (held.row(t)[c] - mean[c]) * (held.row(t)[c] - mean[c]);
  base /= static_cast<double>(held.data.size());
  CHECK(mse(held, rec) <= base);
}

TEST_CASE("music codec round-trips clean vocals through the transcription oracle") {
  corpus::CorpusConfig cc;
  cc.count = 300;
  corpus::Synth synth(cc);
  auto songs = synth.gen_dataset(21);
  FitConfig mc, tc;
  mc.stages = 2;
  tc.stages = 2;
  mc.seed = 1;
  tc.seed = 2;
  auto codec = MusicCodec::fit(songs, mc, tc);
  int bad = 0;
  for (const auto& s : songs) {
    auto streams = codec.tokenize(s.tracks);
    streams.validate();
    auto dec = codec.decode_dual(streams);
    bad += synth.transcribe(dec.vocal) == s.cond.lyrics.symbols ? 0 : 1;
  }
  CHECK(bad == 0);

  auto restored = MusicCodec::from_params(codec.to_params());
  CHECK(restored.dual.vocal.size() == 2);
  CHECK(restored.tokenize(songs[0].tracks).vocal == codec.tokenize(songs[0].tracks).vocal);
}

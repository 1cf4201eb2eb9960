#include "levo/rvq.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "levo/rng.hpp"

namespace levo::rvq {

namespace {

float sq_dist(const float* a, const float* b, int d) {
  float s = 0.f;
  for (int c = 0; c < d; ++c) {
    const float diff = a[c] - b[c];
    s += diff * diff;
  }
  return s;
}

Codebook seed_codebook(const std::vector<float>& data, std::int64_t n, int d, int k, Rng& rng) {
  Codebook cb;
  cb.entries = Tensor({k, d});
  // D^2 sampling where the pinned zero entry counts as the first center.
  std::vector<double> best(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) best[i] = squared_norm(&data[i * d], d);
  for (int j = 1; j < k; ++j) {
    double total = std::accumulate(best.begin(), best.end(), 0.0);
    std::int64_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= best[pick];
        if (u < 0) break;
      }
    }
    std::copy_n(&data[pick * d], d, cb.entries.row(j));
    for (std::int64_t i = 0; i < n; ++i)
      best[i] = std::min(best[i], static_cast<double>(sq_dist(&data[i * d], cb.entries.row(j), d)));
  }
  cb.ema_count.assign(static_cast<std::size_t>(k), 1.0);
  cb.ema_sum.assign(cb.entries.data.begin(), cb.entries.data.end());
  return cb;
}

void run_ema(Codebook& cb, const std::vector<float>& data, std::int64_t n, const FitConfig& cfg, Rng& rng) {
  const int k = cb.size(), d = cb.dim();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::vector<double> counts(static_cast<std::size_t>(k)), sums(static_cast<std::size_t>(k * d));
  std::vector<std::int64_t> usage(static_cast<std::size_t>(k));
  const double g = cfg.ema_decay;
  for (int epoch = 0; epoch < cfg.iters; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
    std::fill(usage.begin(), usage.end(), 0);
    for (std::int64_t start = 0; start < n; start += cfg.batch) {
      const std::int64_t end = std::min<std::int64_t>(n, start + cfg.batch);
      std::fill(counts.begin(), counts.end(), 0.0);
      std::fill(sums.begin(), sums.end(), 0.0);
      for (std::int64_t b = start; b < end; ++b) {
        const float* x = &data[order[b] * d];
        const int j = nearest(cb, x);
        counts[j] += 1.0;
        ++usage[j];
        for (int c = 0; c < d; ++c) sums[j * d + c] += x[c];
      }
      for (int j = 1; j < k; ++j) {
        cb.ema_count[j] = g * cb.ema_count[j] + (1.0 - g) * counts[j];
        for (int c = 0; c < d; ++c) {
          cb.ema_sum[j * d + c] = g * cb.ema_sum[j * d + c] + (1.0 - g) * sums[j * d + c];
          cb.entries.row(j)[c] = static_cast<float>(cb.ema_sum[j * d + c] / std::max(cb.ema_count[j], 1e-12));
        }
      }
    }
    if (epoch + 1 == cfg.iters) break;
    for (int j = 1; j < k; ++j) {
      if (usage[j] >= 1) continue;
      const auto pick = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
      std::copy_n(&data[pick * d], d, cb.entries.row(j));
      cb.ema_count[j] = 1.0;
      for (int c = 0; c < d; ++c) cb.ema_sum[j * d + c] = cb.entries.row(j)[c];
    }
  }
  std::fill_n(cb.entries.row(0), d, 0.f);
}

}  // namespace

float squared_norm(const float* x, int dim) {
  float s = 0.f;
  for (int c = 0; c < dim; ++c) {
    const float v = x[c] - 0.f;
    s += v * v;
  }
  return s;
}

int nearest(const Codebook& cb, const float* x) {
  const int d = cb.dim();
  int best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (int j = 0; j < cb.size(); ++j) {
    const float dj = sq_dist(x, cb.entries.row(j), d);
    if (dj < best_d) {
      best_d = dj;
      best = j;
    }
  }
  return best;
}

std::vector<Codebook> fit_codebooks(const Tensor& features, const FitConfig& cfg) {
  check(features.rank() == 2, ErrorCode::kShapeMismatch, "fit_codebooks: features must be [N, D]");
  check(cfg.stages >= 1, ErrorCode::kInvalidArgument, "fit_codebooks: stages must be >= 1");
  check(cfg.codebook_size >= 2, ErrorCode::kInvalidArgument, "fit_codebooks: codebook size must be >= 2");
  check(features.rows() >= cfg.codebook_size, ErrorCode::kInvalidArgument,
        "fit_codebooks: need N >= K (N=" + std::to_string(features.rows()) + ", K=" +
            std::to_string(cfg.codebook_size) + ")");
  const int d = static_cast<int>(features.cols());
  Rng rng(cfg.seed);

  std::vector<float> data;
  std::int64_t n = features.rows();
  if (cfg.max_samples > 0 && n > cfg.max_samples) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < cfg.max_samples; ++i)
      std::swap(idx[i], idx[i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)))]);
    idx.resize(static_cast<std::size_t>(cfg.max_samples));
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) data.insert(data.end(), features.row(i), features.row(i) + d);
    n = cfg.max_samples;
  } else {
    data = features.data;
  }

  std::vector<Codebook> out;
  for (int s = 0; s < cfg.stages; ++s) {
    Codebook cb = seed_codebook(data, n, d, cfg.codebook_size, rng);
    cb.stage = s;
    run_ema(cb, data, n, cfg, rng);
    for (std::int64_t i = 0; i < n; ++i) {
      float* x = &data[i * d];
      const float* e = cb.entries.row(nearest(cb, x));
      for (int c = 0; c < d; ++c) x[c] = x[c] - e[c];
    }
    out.push_back(std::move(cb));
  }
  return out;
}

Encoding encode(const Tensor& features, std::span<const Codebook> codebooks) {
  check(!codebooks.empty(), ErrorCode::kInvalidArgument, "encode: no codebooks");
  const int d = codebooks[0].dim();
  check(features.rank() == 2 && features.cols() == d, ErrorCode::kShapeMismatch,
        "encode: feature width " + std::to_string(features.cols()) + " does not match codebook width " +
            std::to_string(d));
  Encoding enc;
  enc.residual = features;
  enc.indices.assign(codebooks.size(), std::vector<int>(static_cast<std::size_t>(features.rows())));
  for (std::int64_t t = 0; t < features.rows(); ++t) {
    float* r = enc.residual.row(t);
    for (std::size_t s = 0; s < codebooks.size(); ++s) {
      const int j = nearest(codebooks[s], r);
      enc.indices[s][t] = j;
      const float* e = codebooks[s].entries.row(j);
      for (int c = 0; c < d; ++c) r[c] = r[c] - e[c];
    }
  }
  return enc;
}

Tensor decode(const std::vector<std::vector<int>>& indices, std::span<const Codebook> codebooks) {
  check(!indices.empty() && indices.size() <= codebooks.size(), ErrorCode::kInvalidArgument,
        "decode: stage count mismatch");
  const int d = codebooks[0].dim();
  const auto T = static_cast<std::int64_t>(indices[0].size());
  Tensor out({T, d});
  for (std::size_t s = 0; s < indices.size(); ++s) {
    check(static_cast<std::int64_t>(indices[s].size()) == T, ErrorCode::kShapeMismatch, "decode: ragged indices");
    for (std::int64_t t = 0; t < T; ++t) {
      const int j = indices[s][t];
      check(j >= 0 && j < codebooks[s].size(), ErrorCode::kInvalidArgument,
            "decode: index " + std::to_string(j) + " out of range at stage " + std::to_string(s));
      const float* e = codebooks[s].entries.row(j);
      float* o = out.row(t);
      for (int c = 0; c < d; ++c) o[c] += e[c];
    }
  }
  return out;
}

void TokenStreams::validate(bool require_dual) const {
  const auto T = mixed.size();
  if (require_dual || !vocal.empty() || !accompaniment.empty())
    check(vocal.size() == T && accompaniment.size() == T, ErrorCode::kShapeMismatch,
          "token streams have different lengths");
  auto in_range = [](const std::vector<int>& s, int v, const char* what) {
    for (int x : s)
      check(x >= 0 && x < v, ErrorCode::kInvalidArgument, std::string(what) + " token out of vocabulary");
  };
  in_range(mixed, mixed_vocab, "mixed");
  in_range(vocal, vocal_vocab, "vocal");
  in_range(accompaniment, accomp_vocab, "accompaniment");
}

namespace {
Tensor stack_frames(const std::vector<corpus::SongRecord>& songs, const Tensor corpus::SongTracks::*track) {
  check(!songs.empty(), ErrorCode::kInvalidArgument, "codec fit: no songs");
  const auto d = (songs[0].tracks.*track).cols();
  std::int64_t rows = 0;
  for (const auto& s : songs) rows += (s.tracks.*track).rows();
  Tensor out({rows, d});
  std::int64_t r = 0;
  for (const auto& s : songs) {
    const auto& t = s.tracks.*track;
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + r * d);
    r += t.rows();
  }
  return out;
}
}  // namespace

MusicCodec MusicCodec::fit(const std::vector<corpus::SongRecord>& songs, const FitConfig& mixed_cfg,
                           const FitConfig& track_cfg) {
  MusicCodec c;
  c.mixed.mode = Mode::kMixed;
  c.dual.mode = Mode::kDualTrack;
  c.mixed.mixed = fit_codebooks(stack_frames(songs, &corpus::SongTracks::mixed), mixed_cfg);
  FitConfig vc = track_cfg, ac = track_cfg;
  vc.seed = derive_seed(track_cfg.seed, {1});
  ac.seed = derive_seed(track_cfg.seed, {2});
  c.dual.vocal = fit_codebooks(stack_frames(songs, &corpus::SongTracks::vocal), vc);
  c.dual.accompaniment = fit_codebooks(stack_frames(songs, &corpus::SongTracks::accompaniment), ac);
  return c;
}

std::vector<int> MusicCodec::mixed_tokens(const Tensor& mixed_features) const {
  return encode(mixed_features, std::span(mixed.mixed).first(1)).indices[0];
}

TokenStreams MusicCodec::tokenize(const corpus::SongTracks& tracks) const {
  TokenStreams s;
  s.mixed = mixed_tokens(tracks.mixed);
  s.vocal = encode(tracks.vocal, std::span(dual.vocal).first(1)).indices[0];
  s.accompaniment = encode(tracks.accompaniment, std::span(dual.accompaniment).first(1)).indices[0];
  s.mixed_vocab = mixed.mixed[0].size();
  s.vocal_vocab = dual.vocal[0].size();
  s.accomp_vocab = dual.accompaniment[0].size();
  return s;
}

corpus::SongTracks MusicCodec::decode_dual(const TokenStreams& s) const {
  corpus::SongTracks t;
  t.vocal = decode({s.vocal}, dual.vocal);
  t.accompaniment = decode({s.accompaniment}, dual.accompaniment);
  t.mixed = Tensor(t.vocal.shape);
  for (std::size_t i = 0; i < t.mixed.data.size(); ++i)
    t.mixed.data[i] = corpus::kVocalGain * t.vocal.data[i] + corpus::kAccompGain * t.accompaniment.data[i];
  t.frame_rate = dual.frame_rate;
  return t;
}

Tensor MusicCodec::decode_mixed(const std::vector<int>& m) const { return decode({m}, mixed.mixed); }

ParamStore MusicCodec::to_params() const {
  ParamStore p;
  auto put = [&p](const std::string& track, const std::vector<Codebook>& cbs) {
    for (const auto& cb : cbs) p.add("rvq." + track + "." + std::to_string(cb.stage), cb.entries);
  };
  put("mixed", mixed.mixed);
  put("vocal", dual.vocal);
  put("accompaniment", dual.accompaniment);
  return p;
}

MusicCodec MusicCodec::from_params(const ParamStore& p) {
  MusicCodec c;
  c.mixed.mode = Mode::kMixed;
  c.dual.mode = Mode::kDualTrack;
  auto get = [&p](const std::string& track) {
    std::vector<Codebook> out;
    for (int s = 0;; ++s) {
      const auto name = "rvq." + track + "." + std::to_string(s);
      if (!p.contains(name)) break;
      Codebook cb;
      cb.stage = s;
      cb.entries = p.at(name);
      out.push_back(std::move(cb));
    }
    check(!out.empty(), ErrorCode::kInvalidArgument, "codec checkpoint lacks rvq." + track + ".0");
    return out;
  };
  c.mixed.mixed = get("mixed");
  c.dual.vocal = get("vocal");
  c.dual.accompaniment = get("accompaniment");
  return c;
}

}  // namespace levo::rvq

#include "levo/corpus.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "levo/rng.hpp"

namespace levo::corpus {

namespace {

constexpr std::uint64_t kSymbolTableSeed = 0x5EED'0001;
constexpr int kChordsPerStyle = 4;

Tensor make_symbol_table(int count, int band) {
  Rng rng(kSymbolTableSeed);
  std::vector<std::vector<double>> pts(static_cast<std::size_t>(count), std::vector<double>(band));
  auto normalize = [](std::vector<double>& v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
  };
  for (auto& p : pts) {
    for (double& x : p) x = rng.normal();
    normalize(p);
  }
  // Coulomb repulsion on the sphere spreads the directions apart.
  for (int it = 0; it < 400; ++it) {
    std::vector<std::vector<double>> force(pts.size(), std::vector<double>(band, 0.0));
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = 0; j < pts.size(); ++j) {
        if (i == j) continue;
        double d2 = 0;
        for (int c = 0; c < band; ++c) d2 += (pts[i][c] - pts[j][c]) * (pts[i][c] - pts[j][c]);
        const double inv = 1.0 / (d2 * std::sqrt(d2) + 1e-12);
        for (int c = 0; c < band; ++c) force[i][c] += (pts[i][c] - pts[j][c]) * inv;
      }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (int c = 0; c < band; ++c) pts[i][c] += 0.01 * force[i][c] / static_cast<double>(count);
      normalize(pts[i]);
    }
  }
  Tensor t({count, band});
  for (int i = 0; i < count; ++i)
    for (int c = 0; c < band; ++c) t.data[i * band + c] = static_cast<float>(pts[i][c]);
  return t;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double band_norm(const float* row, int band) {
  double n = 0;
  for (int c = 0; c < band; ++c) n += static_cast<double>(row[c]) * row[c];
  return std::sqrt(n);
}

}  // namespace

Synth::Synth(CorpusConfig cfg) : cfg_(cfg) {
  check(cfg_.dim >= kAccompBand + 2, ErrorCode::kConfig, "corpus.dim must be at least 5");
  check(cfg_.lyric_vocab >= 2 && cfg_.style_count >= 2, ErrorCode::kConfig, "corpus vocabularies must be >= 2");
  symbols_ = make_symbol_table(symbol_count(), vocal_band());
}

Synth::StyleDescriptor Synth::descriptor(StyleTag style) const {
  check(style.id >= 0 && style.id < cfg_.style_count, ErrorCode::kInvalidArgument,
        "style id out of range: " + std::to_string(style.id));
  StyleDescriptor d;
  std::vector<float> dir(kAccompBand);
  if (style.id < 8) {
    for (int c = 0; c < kAccompBand; ++c) dir[c] = ((style.id >> c) & 1) ? 1.f : -1.f;
  } else {
    Rng r(derive_seed(kSymbolTableSeed, {7, static_cast<std::uint64_t>(style.id)}));
    for (auto& x : dir) x = static_cast<float>(r.normal());
  }
  double n = 0;
  for (float x : dir) n += x * x;
  for (auto& x : dir) x = static_cast<float>(x / std::sqrt(n));

  Rng r(derive_seed(kSymbolTableSeed, {11, static_cast<std::uint64_t>(style.id)}));
  std::vector<std::vector<float>> dev(kChordsPerStyle, std::vector<float>(kAccompBand));
  std::vector<double> mean(kAccompBand, 0.0);
  for (auto& v : dev)
    for (int c = 0; c < kAccompBand; ++c) {
      v[c] = static_cast<float>(0.4 * r.normal());
      mean[c] += v[c] / kChordsPerStyle;
    }
  for (auto& v : dev) {
    std::vector<float> chord(kAccompBand);
    for (int c = 0; c < kAccompBand; ++c) chord[c] = dir[c] + static_cast<float>(v[c] - mean[c]);
    d.chords.push_back(chord);
  }
  d.timbre.resize(kAccompBand);
  for (auto& x : d.timbre) x = static_cast<float>(0.1 * r.normal());
  return d;
}

std::vector<float> Synth::style_target(StyleTag style) const {
  const auto d = descriptor(style);
  std::vector<float> t(kAccompBand, 0.f);
  for (int c = 0; c < kAccompBand; ++c) {
    double m = 0;
    for (const auto& ch : d.chords) m += ch[c];
    t[c] = static_cast<float>(m / kChordsPerStyle) + d.timbre[c];
  }
  return t;
}

Lyrics Synth::random_lyrics(std::uint64_t seed) const {
  Rng rng(seed);
  Lyrics l;
  const int sections = cfg_.min_sections + static_cast<int>(rng.below(cfg_.max_sections - cfg_.min_sections + 1));
  for (int s = 0; s < sections; ++s) {
    l.symbols.push_back(s % 2 == 0 ? verse_marker() : chorus_marker());
    const int len = cfg_.min_section_len + static_cast<int>(rng.below(cfg_.max_section_len - cfg_.min_section_len + 1));
    for (int i = 0; i < len; ++i) l.symbols.push_back(static_cast<int>(rng.below(cfg_.lyric_vocab)));
  }
  return l;
}

SongTracks Synth::gen_song(std::uint64_t seed, StyleTag style, const Lyrics& lyrics) const {
  check(!lyrics.symbols.empty(), ErrorCode::kInvalidArgument, "gen_song: empty lyrics");
  const int T = cfg_.frames, D = cfg_.dim, band = vocal_band();
  const int L = static_cast<int>(lyrics.symbols.size());
  const int span = cfg_.symbol_frames;
  check(span == 0 || span >= 2, ErrorCode::kConfig, "corpus.symbol_frames must be 0 or at least 2");
  check(span > 0 ? L * span <= T : T >= 2 * L, ErrorCode::kInvalidArgument,
        "gen_song: " + std::to_string(L) + " symbols do not fit in " + std::to_string(T) + " frames");
  for (int s : lyrics.symbols)
    check(s >= 0 && s < symbol_count(), ErrorCode::kInvalidArgument, "gen_song: lyric symbol out of range");

  Rng rng(seed);
  SongTracks tr;
  tr.frame_rate = cfg_.frame_rate;
  tr.vocal = Tensor({T, D});
  tr.accompaniment = Tensor({T, D});
  tr.mixed = Tensor({T, D});

  const double f1 = 1.0 + 2.0 * rng.uniform(), f2 = 3.0 + 3.0 * rng.uniform();
  const double p1 = 6.283185307179586 * rng.uniform(), p2 = 6.283185307179586 * rng.uniform();
  for (int i = 0; i < L; ++i) {
    const int begin = span > 0 ? i * span : i * T / L;
    const int end = span > 0 ? begin + span : (i + 1) * T / L;
    const float* e = symbols_.row(lyrics.symbols[i]);
    // The last frame of every syllable is silent so repeated symbols stay separable.
    for (int t = begin; t < end - 1; ++t) {
      const double x = static_cast<double>(t) / T;
      const double c = 0.6 * std::sin(6.283185307179586 * f1 * x + p1) + 0.4 * std::sin(6.283185307179586 * f2 * x + p2);
      const auto gain = static_cast<float>(1.0 + cfg_.melody_depth * c);
      for (int k = 0; k < band; ++k) tr.vocal.row(t)[k] = gain * e[k];
    }
  }

  const auto desc = descriptor(style);
  const int chord_len = std::max(1, T / 8);
  for (int t = 0; t < T; ++t) {
    const auto& chord = desc.chords[static_cast<std::size_t>((t / chord_len) % kChordsPerStyle)];
    for (int c = 0; c < kAccompBand; ++c)
      tr.accompaniment.row(t)[band + c] =
          chord[c] + desc.timbre[c] + static_cast<float>(cfg_.accomp_noise * rng.normal());
  }
  for (std::size_t i = 0; i < tr.mixed.data.size(); ++i)
    tr.mixed.data[i] = kVocalGain * tr.vocal.data[i] + kAccompGain * tr.accompaniment.data[i];
  return tr;
}

std::vector<SongRecord> Synth::gen_dataset(std::uint64_t seed) const {
  check(cfg_.count > 0, ErrorCode::kInvalidArgument, "gen_dataset: count must be positive");
  check(cfg_.prompt_frames >= 1 && cfg_.prompt_frames <= cfg_.frames, ErrorCode::kConfig,
        "corpus.prompt_frames must lie in [1, frames]");
  std::vector<SongRecord> out;
  out.reserve(static_cast<std::size_t>(cfg_.count));
  for (int i = 0; i < cfg_.count; ++i) {
    const std::uint64_t song_seed = derive_seed(seed, {0x50, static_cast<std::uint64_t>(i)});
    Rng rng(song_seed);
    SongRecord rec;
    rec.index = i;
    rec.seed = song_seed;
    rec.style = StyleTag{static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.style_count)))};
    rec.cond.lyrics = random_lyrics(rng.next_u64());
    if (rng.bernoulli(cfg_.style_prob)) rec.cond.text_style = rec.style;
    const bool prompt = rng.bernoulli(cfg_.prompt_prob);
    const int offset = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.frames - cfg_.prompt_frames + 1)));
    if (prompt) rec.cond.prompt_ref = PromptRef{i, offset};
    rec.tracks = gen_song(rng.next_u64(), rec.style, rec.cond.lyrics);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<int> Synth::transcribe(const Tensor& vocal) const {
  check(vocal.rank() == 2 && vocal.cols() == cfg_.dim, ErrorCode::kShapeMismatch,
        "transcribe: expected [T, " + std::to_string(cfg_.dim) + "] features, got " + shape_str(vocal.shape));
  const int band = vocal_band(), n = symbol_count();
  std::vector<int> out;
  int prev = -1;
  for (std::int64_t t = 0; t < vocal.rows(); ++t) {
    const float* row = vocal.row(t);
    if (band_norm(row, band) <= kVoicedThreshold) {
      prev = -1;
      continue;
    }
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < n; ++s) {
      double dot = 0;
      for (int c = 0; c < band; ++c) dot += static_cast<double>(row[c]) * symbols_.row(s)[c];
      if (dot > best_score) {
        best_score = dot;
        best = s;
      }
    }
    if (best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<float> Synth::pooled_accomp(const Tensor& features) const {
  check(features.rank() == 2 && features.rows() > 0, ErrorCode::kInvalidArgument, "style_similarity: empty input");
  check(features.cols() == cfg_.dim, ErrorCode::kShapeMismatch, "style_similarity: feature width mismatch");
  const int band = vocal_band();
  std::vector<double> acc(kAccompBand, 0.0);
  for (std::int64_t t = 0; t < features.rows(); ++t)
    for (int c = 0; c < kAccompBand; ++c) acc[c] += features.row(t)[band + c];
  std::vector<float> out(kAccompBand);
  for (int c = 0; c < kAccompBand; ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(features.rows()));
  return out;
}

double Synth::style_similarity(const Tensor& features, StyleTag target) const {
  return 0.5 * (1.0 + cosine(pooled_accomp(features), style_target(target)));
}

double Synth::style_similarity(const Tensor& features, const Tensor& reference) const {
  return 0.5 * (1.0 + cosine(pooled_accomp(features), pooled_accomp(reference)));
}

std::vector<double> Synth::contour(const Tensor& vocal) const {
  check(vocal.rank() == 2 && vocal.cols() == cfg_.dim, ErrorCode::kShapeMismatch, "contour: feature width mismatch");
  std::vector<double> c(static_cast<std::size_t>(vocal.rows()), std::nan(""));
  for (std::int64_t t = 0; t < vocal.rows(); ++t) {
    const double n = band_norm(vocal.row(t), vocal_band());
    if (n > kVoicedThreshold) c[t] = (n - 1.0) / cfg_.melody_depth;
  }
  return c;
}

double Synth::musicality(const SongTracks& tracks, std::uint64_t seed, double noise_std) const {
  const auto c = contour(tracks.vocal);
  double acc = 0;
  int pairs = 0;
  for (std::size_t t = 1; t < c.size(); ++t) {
    if (std::isnan(c[t]) || std::isnan(c[t - 1])) continue;
    acc += (c[t] - c[t - 1]) * (c[t] - c[t - 1]);
    ++pairs;
  }
  const double smooth = pairs > 0 ? -acc / pairs : 0.0;
  if (noise_std == 0.0) return smooth;
  Rng rng(seed);
  return smooth + noise_std * rng.normal();
}

std::string manifest_line(const SongRecord& rec) {
  nlohmann::json j;
  j["index"] = rec.index;
  j["seed"] = rec.seed;
  j["style"] = rec.style.id;
  j["lyrics"] = rec.cond.lyrics.symbols;
  j["has_style"] = rec.cond.text_style.has_value();
  j["has_audio_prompt"] = rec.cond.prompt_ref.has_value();
  if (rec.cond.prompt_ref) j["prompt_offset"] = rec.cond.prompt_ref->offset;
  return j.dump();
}

void write_manifest(const std::vector<SongRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  check(f.good(), ErrorCode::kIo, "cannot write manifest: " + path);
  for (const auto& r : records) f << manifest_line(r) << '\n';
}

}  // namespace levo::corpus

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "levo/corpus.hpp"
#include "levo/tensor.hpp"

namespace levo::rvq {

// One residual stage. Entry 0 is pinned to the zero vector, which makes the
// per-stage residual norm provably non-increasing.
struct Codebook {
  int stage = 0;
  Tensor entries;  // [K, D]
  std::vector<double> ema_count;
  std::vector<double> ema_sum;  // K * D

  int size() const { return static_cast<int>(entries.rows()); }
  int dim() const { return static_cast<int>(entries.cols()); }
};

struct FitConfig {
  int stages = 1;
  int codebook_size = 64;
  int iters = 8;
  std::uint64_t seed = 0;
  double ema_decay = 0.99;
  int batch = 1024;
  // Upper bound on frames used for fitting; a seeded subset is taken above it.
  int max_samples = 65536;
};

std::vector<Codebook> fit_codebooks(const Tensor& features, const FitConfig& cfg);

// Index of the nearest codeword; ties go to the lowest index.
int nearest(const Codebook& cb, const float* x);
// Squared Euclidean norm in the same summation order the encoder uses.
float squared_norm(const float* x, int dim);

struct Encoding {
  std::vector<std::vector<int>> indices;  // [stage][T]
  Tensor residual;                        // [T, D] left after the last stage
};

Encoding encode(const Tensor& features, std::span<const Codebook> codebooks);
// Sum over the stages present in `indices` of the selected codewords.
Tensor decode(const std::vector<std::vector<int>>& indices, std::span<const Codebook> codebooks);

enum class Mode { kMixed, kDualTrack };

struct RvqCodec {
  Mode mode = Mode::kMixed;
  std::vector<Codebook> mixed;          // kMixed
  std::vector<Codebook> vocal;          // kDualTrack
  std::vector<Codebook> accompaniment;  // kDualTrack
  double frame_rate = 25.0;
};

// LeLM targets: one stage-0 index per frame for each stream.
struct TokenStreams {
  std::vector<int> mixed;
  std::vector<int> vocal;
  std::vector<int> accompaniment;
  int mixed_vocab = 0;
  int vocal_vocab = 0;
  int accomp_vocab = 0;

  std::int64_t frames() const { return static_cast<std::int64_t>(mixed.size()); }
  // Throws unless lengths agree and every index is inside its vocabulary.
  void validate(bool require_dual = true) const;
};

struct MusicCodec {
  RvqCodec mixed;
  RvqCodec dual;

  static MusicCodec fit(const std::vector<corpus::SongRecord>& songs, const FitConfig& mixed_cfg,
                        const FitConfig& track_cfg);

  TokenStreams tokenize(const corpus::SongTracks& tracks) const;
  std::vector<int> mixed_tokens(const Tensor& mixed) const;
  // Decoded dual-track songs; mixed = 0.5 * vocal + 0.5 * accompaniment.
  corpus::SongTracks decode_dual(const TokenStreams& s) const;
  // Stage-0 decode of the mixed stream (for mixed-only models).
  Tensor decode_mixed(const std::vector<int>& mixed) const;

  // Names "rvq.<track>.<stage>".
  ParamStore to_params() const;
  static MusicCodec from_params(const ParamStore& p);
};

}  // namespace levo::rvq

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "levo/autodiff.hpp"
#include "levo/corpus.hpp"
#include "levo/rvq.hpp"
#include "levo/tensor.hpp"

namespace levo::lelm {

struct LeLMConfig {
  int lm_layers = 4;
  int lm_dim = 64;
  int lm_heads = 4;
  int lm_ffn = 256;
  int dec_layers = 2;
  int dec_dim = 64;
  int dec_heads = 4;
  int dec_ffn = 256;
  int delay = 5;
  int lyric_vocab = 42;  // lyric symbols including section markers
  int style_vocab = 8;
  int mixed_codes = 64;  // codebook size; the mixed head adds one EOS class
  int vocal_vocab = 64;
  int accomp_vocab = 64;
  int max_context = 256;
  double init_std = 0.02;

  int mixed_vocab() const { return mixed_codes + 1; }
  int eos() const { return mixed_codes; }
  void validate() const;
};

// Special ids of the LM input vocabulary.
enum SpecialToken : int { kBos = 0, kSep = 1, kEos = 2, kPad = 3, kSpecialCount = 4 };
// Segment labels: which condition field (or the mixed stream) a position is.
enum Segment : int { kSegSpecial = 0, kSegStyle, kSegAudio, kSegLyric, kSegMixed, kSegmentCount };

int lyric_token(const LeLMConfig& c, int symbol);
int style_token(const LeLMConfig& c, int style);
int mixed_token(const LeLMConfig& c, int code);
int lm_vocab(const LeLMConfig& c);

// [BOS][style][SEP][audio prompt][SEP][lyrics][SEP]; dropped or absent
// optional fields contribute no tokens but keep their separator.
struct PrefixSequence {
  std::vector<int> tokens;
  std::vector<int> segments;
  bool style_dropped = false;
  bool audio_dropped = false;
  std::int64_t size() const { return static_cast<std::int64_t>(tokens.size()); }
};

PrefixSequence build_prefix(const LeLMConfig& cfg, const corpus::Conditions& cond, bool drop_style, bool drop_audio);

struct LeLM {
  LeLMConfig config;
  ParamStore params;

  static LeLM init(const LeLMConfig& cfg, std::uint64_t seed);
  // Names are partitioned into lm.*, dec.* and heads.*.
  static const char* group_of(const std::string& name);
};

struct LmOutput {
  ad::Var hidden;    // [L_p + T, lm_dim], final-layer (post-norm) states
  ad::Var logits_m;  // [T, mixed_vocab]; row t predicts S_m[t]
  std::int64_t prefix_len = 0;
};

LmOutput lm_forward(ad::Graph<float>& g, const LeLM& model, const PrefixSequence& prefix,
                    std::span<const int> mixed);

struct DecOutput {
  ad::Var logits_v;  // [T, vocal_vocab]
  ad::Var logits_a;  // [T, accomp_vocab]
};

// `mixed_hidden` holds the LM states of mixed positions 0..T-1. Step t reads
// mixed_hidden[min(t + k, T - 1)].
DecOutput dec_forward(ad::Graph<float>& g, const LeLM& model, ad::Var mixed_hidden, std::span<const int> prev_v,
                      std::span<const int> prev_a, int k);

// [BOS, s[0], ..., s[T-2]] with BOS = vocab size.
std::vector<int> shift_right(std::span<const int> s, int bos);

struct TeacherForced {
  LmOutput lm;
  DecOutput dec;
  bool has_dec = false;
};

// Full teacher-forced pass over one song.
TeacherForced forward_song(ad::Graph<float>& g, const LeLM& model, const PrefixSequence& prefix,
                           const rvq::TokenStreams& streams, bool with_decoder);

// Mean NLL over non-PAD (< 0) targets; throws when every target is PAD.
double ce_loss(const Tensor& logits, std::span<const int> targets);

// Incremental LM evaluation. With `use_cache` each fed token is pushed
// through the stack once against cached keys/values; without it every call
// re-runs the full sequence through the tape. Both produce identical bits.
class LmSession {
 public:
  LmSession(const LeLM& model, bool use_cache);
  void feed(int token, int segment);
  std::int64_t length() const { return static_cast<std::int64_t>(tokens_.size()); }
  const std::vector<float>& hidden() const { return hidden_; }
  const std::vector<float>& logits() const { return logits_; }

 private:
  const LeLM& model_;
  bool use_cache_;
  std::vector<int> tokens_, segments_;
  std::vector<std::vector<float>> qkv_cache_;  // per layer, [n, 3d]
  std::vector<float> hidden_, logits_;
  std::vector<int> seg_count_ = std::vector<int>(kSegmentCount, 0);
};

class DecSession {
 public:
  DecSession(const LeLM& model, bool use_cache);
  // One decoder step with its three inputs; fills logits_v() / logits_a().
  void feed(int prev_v, int prev_a, std::span<const float> hidden_row);
  const std::vector<float>& logits_v() const { return logits_v_; }
  const std::vector<float>& logits_a() const { return logits_a_; }

 private:
  const LeLM& model_;
  bool use_cache_;
  std::vector<int> prev_v_, prev_a_;
  std::vector<float> hidden_rows_;
  std::vector<std::vector<float>> qkv_cache_;
  std::vector<float> logits_v_, logits_a_;
};

}  // namespace levo::lelm

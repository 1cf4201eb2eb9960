#include "levo/lelm.hpp"

#include <algorithm>
#include <cmath>

#include "levo/kernels.hpp"
#include "levo/rng.hpp"

namespace levo::lelm {

void LeLMConfig::validate() const {
  auto need = [](bool ok, const char* what) { check(ok, ErrorCode::kConfig, std::string("lelm: ") + what); };
  need(lm_layers >= 1 && dec_layers >= 0, "layer counts out of range");
  need(dec_layers < lm_layers, "dec_layers must be below lm_layers");
  need(lm_dim > 0 && dec_dim > 0 && lm_ffn > 0 && dec_ffn > 0, "widths must be positive");
  need(lm_heads > 0 && lm_dim % lm_heads == 0, "lm_heads must divide lm_dim");
  need(dec_heads > 0 && dec_dim % dec_heads == 0, "dec_heads must divide dec_dim");
  need(delay >= 0, "delay must be non-negative");
  need(lyric_vocab >= 2 && style_vocab >= 2, "condition vocabularies need at least 2 entries");
  need(mixed_codes >= 2 && vocal_vocab >= 2 && accomp_vocab >= 2, "token vocabularies need at least 2 entries");
  need(max_context > 0, "max_context must be positive");
  need(init_std > 0.0, "init_std must be positive");
}

int lyric_token(const LeLMConfig& c, int symbol) {
  check(symbol >= 0 && symbol < c.lyric_vocab, ErrorCode::kInvalidArgument,
        "lyric symbol " + std::to_string(symbol) + " outside vocabulary");
  return kSpecialCount + symbol;
}
int style_token(const LeLMConfig& c, int style) {
  check(style >= 0 && style < c.style_vocab, ErrorCode::kInvalidArgument,
        "style " + std::to_string(style) + " outside vocabulary");
  return kSpecialCount + c.lyric_vocab + style;
}
int mixed_token(const LeLMConfig& c, int code) {
  check(code >= 0 && code < c.mixed_vocab(), ErrorCode::kInvalidArgument,
        "mixed token " + std::to_string(code) + " outside vocabulary");
  return kSpecialCount + c.lyric_vocab + c.style_vocab + code;
}
int lm_vocab(const LeLMConfig& c) { return kSpecialCount + c.lyric_vocab + c.style_vocab + c.mixed_vocab(); }

PrefixSequence build_prefix(const LeLMConfig& cfg, const corpus::Conditions& cond, bool drop_style,
                            bool drop_audio) {
  PrefixSequence p;
  auto push = [&](int tok, int seg) {
    p.tokens.push_back(tok);
    p.segments.push_back(seg);
  };
  push(kBos, kSegSpecial);
  p.style_dropped = drop_style && cond.text_style.has_value();
  if (cond.text_style && !drop_style) push(style_token(cfg, cond.text_style->id), kSegStyle);
  push(kSep, kSegSpecial);
  p.audio_dropped = drop_audio && cond.audio_prompt.has_value();
  if (cond.audio_prompt && !drop_audio)
    for (int t : *cond.audio_prompt) {
      check(t >= 0 && t < cfg.mixed_codes, ErrorCode::kInvalidArgument, "audio prompt token outside codebook");
      push(mixed_token(cfg, t), kSegAudio);
    }
  push(kSep, kSegSpecial);
  for (int s : cond.lyrics.symbols) push(lyric_token(cfg, s), kSegLyric);
  push(kSep, kSegSpecial);
  check(p.size() <= cfg.max_context, ErrorCode::kContextOverflow,
        "prefix of " + std::to_string(p.size()) + " tokens exceeds max context " + std::to_string(cfg.max_context));
  return p;
}

namespace {

void add_normal(ParamStore& ps, Rng& rng, const std::string& name, Shape shape, double std) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.normal() * std);
  ps.add(name, std::move(t));
}

void add_layer_norm(ParamStore& ps, const std::string& name, std::int64_t d) {
  ps.add(name + ".g", Tensor(Shape{d}, 1.0f));
  ps.add(name + ".b", Tensor(Shape{d}, 0.0f));
}

void add_linear(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t in, std::int64_t out, double std) {
  add_normal(ps, rng, name + ".w", Shape{in, out}, std);
  ps.add(name + ".b", Tensor(Shape{out}, 0.0f));
}

void add_block(ParamStore& ps, Rng& rng, const std::string& name, std::int64_t d, std::int64_t ffn, double std) {
  add_layer_norm(ps, name + ".ln1", d);
  add_linear(ps, rng, name + ".attn.qkv", d, 3 * d, std);
  add_linear(ps, rng, name + ".attn.out", d, d, std);
  add_layer_norm(ps, name + ".ln2", d);
  add_linear(ps, rng, name + ".ffn.fc1", d, ffn, std);
  add_linear(ps, rng, name + ".ffn.fc2", ffn, d, std);
}

std::string block_name(const char* stack, int i) { return std::string(stack) + ".block" + std::to_string(i); }

using G = ad::Graph<float>;

ad::Var P(G& g, const LeLM& m, const std::string& name) { return g.parameter(m.params, name); }

ad::Var ln(G& g, const LeLM& m, ad::Var x, const std::string& name) {
  return ad::layer_norm(g, x, P(g, m, name + ".g"), P(g, m, name + ".b"));
}

ad::Var lin(G& g, const LeLM& m, ad::Var x, const std::string& name) {
  return ad::linear(g, x, P(g, m, name + ".w"), P(g, m, name + ".b"));
}

ad::Var block(G& g, const LeLM& m, ad::Var x, const std::string& name, int heads) {
  ad::Var h = ln(g, m, x, name + ".ln1");
  ad::Var a = ad::causal_attention(g, lin(g, m, h, name + ".attn.qkv"), heads);
  x = ad::add(g, x, lin(g, m, a, name + ".attn.out"));
  h = ln(g, m, x, name + ".ln2");
  h = lin(g, m, ad::gelu(g, lin(g, m, h, name + ".ffn.fc1")), name + ".ffn.fc2");
  return ad::add(g, x, h);
}

std::vector<int> iota_ids(std::int64_t n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

// Position ids restart inside every segment, so lyric i and mixed frame t
// keep the same ids whatever conditions precede them.
std::vector<int> segment_positions(std::span<const int> segments) {
  std::vector<int> pos(segments.size());
  int seen[kSegmentCount] = {};
  for (std::size_t i = 0; i < segments.size(); ++i) pos[i] = seen[segments[i]]++;
  return pos;
}

// Final-norm states of the LM over an already-tokenized input.
ad::Var lm_stack(G& g, const LeLM& m, std::span<const int> tokens, std::span<const int> segments) {
  const auto& c = m.config;
  const auto n = static_cast<std::int64_t>(tokens.size());
  check(n <= c.max_context, ErrorCode::kContextOverflow,
        "sequence of " + std::to_string(n) + " tokens exceeds max context " + std::to_string(c.max_context));
  ad::Var x = ad::embedding(g, P(g, m, "lm.tok_emb"), tokens);
  x = ad::add(g, x, ad::embedding(g, P(g, m, "lm.seg_emb"), segments));
  const auto pos = segment_positions(segments);
  x = ad::add(g, x, ad::embedding(g, P(g, m, "lm.pos_emb"), std::span<const int>(pos)));
  for (int i = 0; i < c.lm_layers; ++i) x = block(g, m, x, block_name("lm", i), c.lm_heads);
  return ln(g, m, x, "lm.ln_f");
}

// Decoder over rows that are already aligned with their LM state.
DecOutput dec_stack(G& g, const LeLM& m, ad::Var h_rows, std::span<const int> prev_v, std::span<const int> prev_a) {
  const auto& c = m.config;
  const auto n = static_cast<std::int64_t>(prev_v.size());
  check(n <= c.max_context, ErrorCode::kContextOverflow, "decoder sequence exceeds max context");
  const ad::Var parts[3] = {ad::embedding(g, P(g, m, "dec.emb_v"), prev_v),
                            ad::embedding(g, P(g, m, "dec.emb_a"), prev_a), h_rows};
  ad::Var x = lin(g, m, ad::concat_cols(g, std::span<const ad::Var>(parts)), "dec.fuse");
  const auto pos = iota_ids(n);
  x = ad::add(g, x, ad::embedding(g, P(g, m, "dec.pos_emb"), std::span<const int>(pos)));
  for (int i = 0; i < c.dec_layers; ++i) x = block(g, m, x, block_name("dec", i), c.dec_heads);
  x = ln(g, m, x, "dec.ln_f");
  return {lin(g, m, x, "heads.v"), lin(g, m, x, "heads.a")};
}

// Single-row evaluation of a transformer block against a growing qkv cache.
void block_row(const LeLM& m, const std::string& name, int heads, std::int64_t d, std::int64_t ffn,
               std::vector<float>& cache, std::vector<float>& x) {
  const auto& ps = m.params;
  auto W = [&](const std::string& s) { return ps.at(name + s).data.data(); };
  std::vector<float> h(d), a(d), o(d), f1(ffn), f2(d);
  kernels::layer_norm_row(x.data(), d, W(".ln1.g"), W(".ln1.b"), h.data(), static_cast<float*>(nullptr));
  const std::int64_t stride = 3 * d;
  const std::size_t at = cache.size();
  cache.resize(at + static_cast<std::size_t>(stride));
  kernels::linear_rows(h.data(), 1, d, W(".attn.qkv.w"), W(".attn.qkv.b"), stride, cache.data() + at);
  const std::int64_t n = static_cast<std::int64_t>(cache.size()) / stride;
  const std::int64_t hd = d / heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<float> probs(static_cast<std::size_t>(n));
  const float* base = cache.data();
  for (int hh = 0; hh < heads; ++hh)
    kernels::attend_row(base + (n - 1) * stride + hh * hd, base + d + hh * hd, base + 2 * d + hh * hd, n, hd, stride,
                        sc, probs.data(), a.data() + hh * hd);
  kernels::linear_rows(a.data(), 1, d, W(".attn.out.w"), W(".attn.out.b"), d, o.data());
  for (std::int64_t j = 0; j < d; ++j) x[j] = x[j] + o[j];
  kernels::layer_norm_row(x.data(), d, W(".ln2.g"), W(".ln2.b"), h.data(), static_cast<float*>(nullptr));
  kernels::linear_rows(h.data(), 1, d, W(".ffn.fc1.w"), W(".ffn.fc1.b"), ffn, f1.data());
  for (auto& v : f1) v = kernels::gelu(v);
  kernels::linear_rows(f1.data(), 1, ffn, W(".ffn.fc2.w"), W(".ffn.fc2.b"), d, f2.data());
  for (std::int64_t j = 0; j < d; ++j) x[j] = x[j] + f2[j];
}

std::vector<float> last_row(const G& g, ad::Var v) {
  const auto& s = g.shape(v);
  const auto& data = g.value(v);
  return std::vector<float>(data.end() - s[1], data.end());
}

}  // namespace

LeLM LeLM::init(const LeLMConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LeLM m;
  m.config = cfg;
  Rng rng(derive_seed(seed, {0x4c454c4du}));
  const double s = cfg.init_std;
  const std::int64_t d = cfg.lm_dim, e = cfg.dec_dim;
  add_normal(m.params, rng, "lm.tok_emb", Shape{lm_vocab(cfg), d}, s);
  add_normal(m.params, rng, "lm.seg_emb", Shape{kSegmentCount, d}, s);
  add_normal(m.params, rng, "lm.pos_emb", Shape{cfg.max_context, d}, s);
  for (int i = 0; i < cfg.lm_layers; ++i) add_block(m.params, rng, block_name("lm", i), d, cfg.lm_ffn, s);
  add_layer_norm(m.params, "lm.ln_f", d);
  add_linear(m.params, rng, "lm.head_m", d, cfg.mixed_vocab(), s);

  add_normal(m.params, rng, "dec.emb_v", Shape{cfg.vocal_vocab + 1, e}, s);
  add_normal(m.params, rng, "dec.emb_a", Shape{cfg.accomp_vocab + 1, e}, s);
  add_linear(m.params, rng, "dec.fuse", 2 * e + d, e, s);
  add_normal(m.params, rng, "dec.pos_emb", Shape{cfg.max_context, e}, s);
  for (int i = 0; i < cfg.dec_layers; ++i) add_block(m.params, rng, block_name("dec", i), e, cfg.dec_ffn, s);
  add_layer_norm(m.params, "dec.ln_f", e);
  add_linear(m.params, rng, "heads.v", e, cfg.vocal_vocab, s);
  add_linear(m.params, rng, "heads.a", e, cfg.accomp_vocab, s);
  return m;
}

const char* LeLM::group_of(const std::string& name) {
  if (name.rfind("lm.", 0) == 0) return "lm";
  if (name.rfind("dec.", 0) == 0) return "dec";
  if (name.rfind("heads.", 0) == 0) return "heads";
  return "other";
}

LmOutput lm_forward(G& g, const LeLM& model, const PrefixSequence& prefix, std::span<const int> mixed) {
  const auto& c = model.config;
  check(prefix.size() > 0 && prefix.tokens.size() == prefix.segments.size(), ErrorCode::kInvalidArgument,
        "lm_forward: malformed prefix");
  std::vector<int> tokens = prefix.tokens, segs = prefix.segments;
  for (int t : mixed) {
    check(t >= 0 && t < c.mixed_vocab(), ErrorCode::kInvalidArgument, "lm_forward: mixed token outside vocabulary");
    tokens.push_back(mixed_token(c, t));
    segs.push_back(kSegMixed);
  }
  LmOutput out;
  out.prefix_len = prefix.size();
  out.hidden = lm_stack(g, model, tokens, segs);
  const auto T = static_cast<std::int64_t>(mixed.size());
  ad::Var src = ad::slice_rows(g, out.hidden, out.prefix_len - 1, out.prefix_len - 1 + T);
  out.logits_m = lin(g, model, src, "lm.head_m");
  return out;
}

DecOutput dec_forward(G& g, const LeLM& model, ad::Var mixed_hidden, std::span<const int> prev_v,
                      std::span<const int> prev_a, int k) {
  const auto& c = model.config;
  const auto T = static_cast<std::int64_t>(prev_v.size());
  check(prev_a.size() == prev_v.size(), ErrorCode::kShapeMismatch, "dec_forward: prev stream lengths differ");
  check(g.shape(mixed_hidden).size() == 2 && g.shape(mixed_hidden)[0] == T &&
            g.shape(mixed_hidden)[1] == c.lm_dim,
        ErrorCode::kShapeMismatch, "dec_forward: hidden rows must match stream length");
  check(k >= 0 && k < T, ErrorCode::kInvalidArgument,
        "dec_forward: delay " + std::to_string(k) + " must be below length " + std::to_string(T));
  for (int v : prev_v)
    check(v >= 0 && v <= c.vocal_vocab, ErrorCode::kInvalidArgument, "dec_forward: vocal token outside vocabulary");
  for (int v : prev_a)
    check(v >= 0 && v <= c.accomp_vocab, ErrorCode::kInvalidArgument,
          "dec_forward: accompaniment token outside vocabulary");
  std::vector<int> rows(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) rows[t] = static_cast<int>(std::min(t + k, T - 1));
  return dec_stack(g, model, ad::gather_rows(g, mixed_hidden, std::span<const int>(rows)), prev_v, prev_a);
}

std::vector<int> shift_right(std::span<const int> s, int bos) {
  std::vector<int> out;
  if (s.empty()) return out;
  out.reserve(s.size());
  out.push_back(bos);
  out.insert(out.end(), s.begin(), s.end() - 1);
  return out;
}

TeacherForced forward_song(G& g, const LeLM& model, const PrefixSequence& prefix, const rvq::TokenStreams& streams,
                           bool with_decoder) {
  TeacherForced tf;
  tf.lm = lm_forward(g, model, prefix, streams.mixed);
  if (with_decoder) {
    const auto& c = model.config;
    check(streams.vocal.size() == streams.mixed.size() && streams.accompaniment.size() == streams.mixed.size(),
          ErrorCode::kShapeMismatch, "forward_song: stream lengths differ");
    ad::Var hm = ad::slice_rows(g, tf.lm.hidden, tf.lm.prefix_len, tf.lm.prefix_len + streams.frames());
    const auto pv = shift_right(streams.vocal, c.vocal_vocab);
    const auto pa = shift_right(streams.accompaniment, c.accomp_vocab);
    tf.dec = dec_forward(g, model, hm, pv, pa, c.delay);
    tf.has_dec = true;
  }
  return tf;
}

double ce_loss(const Tensor& logits, std::span<const int> targets) {
  check(logits.rank() == 2 && logits.rows() == static_cast<std::int64_t>(targets.size()), ErrorCode::kShapeMismatch,
        "ce_loss: logits rows must match targets");
  const std::int64_t v = logits.cols();
  std::vector<double> row(static_cast<std::size_t>(v));
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < logits.rows(); ++i) {
    if (targets[i] < 0) continue;
    check(targets[i] < v, ErrorCode::kInvalidArgument, "ce_loss: target outside vocabulary");
    for (std::int64_t j = 0; j < v; ++j) row[j] = logits.row(i)[j];
    total -= row[targets[i]] - kernels::log_softmax_row(row.data(), v, static_cast<double*>(nullptr));
    ++count;
  }
  check(count > 0, ErrorCode::kInvalidArgument, "ce_loss: every target is PAD");
  return total / static_cast<double>(count);
}

LmSession::LmSession(const LeLM& model, bool use_cache)
    : model_(model), use_cache_(use_cache), qkv_cache_(static_cast<std::size_t>(model.config.lm_layers)) {}

void LmSession::feed(int token, int segment) {
  const auto& c = model_.config;
  check(token >= 0 && token < lm_vocab(c) && segment >= 0 && segment < kSegmentCount, ErrorCode::kInvalidArgument,
        "LmSession: token or segment out of range");
  check(length() < c.max_context, ErrorCode::kContextOverflow, "LmSession: max context reached");
  tokens_.push_back(token);
  segments_.push_back(segment);
  const std::int64_t d = c.lm_dim;
  if (use_cache_) {
    const auto& ps = model_.params;
    const std::int64_t pos = seg_count_[static_cast<std::size_t>(segment)]++;
    std::vector<float> x(static_cast<std::size_t>(d));
    const float* te = ps.at("lm.tok_emb").row(token);
    const float* se = ps.at("lm.seg_emb").row(segment);
    const float* pe = ps.at("lm.pos_emb").row(pos);
    for (std::int64_t j = 0; j < d; ++j) x[j] = te[j] + se[j];
    for (std::int64_t j = 0; j < d; ++j) x[j] = x[j] + pe[j];
    for (int i = 0; i < c.lm_layers; ++i) block_row(model_, block_name("lm", i), c.lm_heads, d, c.lm_ffn, qkv_cache_[i], x);
    hidden_.resize(static_cast<std::size_t>(d));
    kernels::layer_norm_row(x.data(), d, ps.at("lm.ln_f.g").data.data(), ps.at("lm.ln_f.b").data.data(),
                            hidden_.data(), static_cast<float*>(nullptr));
  } else {
    G g(false);
    hidden_ = last_row(g, lm_stack(g, model_, tokens_, segments_));
  }
  logits_.resize(static_cast<std::size_t>(c.mixed_vocab()));
  kernels::linear_rows(hidden_.data(), 1, d, model_.params.at("lm.head_m.w").data.data(),
                       model_.params.at("lm.head_m.b").data.data(), c.mixed_vocab(), logits_.data());
}

DecSession::DecSession(const LeLM& model, bool use_cache)
    : model_(model), use_cache_(use_cache), qkv_cache_(static_cast<std::size_t>(model.config.dec_layers)) {}

void DecSession::feed(int prev_v, int prev_a, std::span<const float> hidden_row) {
  const auto& c = model_.config;
  check(prev_v >= 0 && prev_v <= c.vocal_vocab && prev_a >= 0 && prev_a <= c.accomp_vocab,
        ErrorCode::kInvalidArgument, "DecSession: previous token out of range");
  check(static_cast<std::int64_t>(hidden_row.size()) == c.lm_dim, ErrorCode::kShapeMismatch,
        "DecSession: hidden row width");
  check(static_cast<std::int64_t>(prev_v_.size()) < c.max_context, ErrorCode::kContextOverflow,
        "DecSession: max context reached");
  prev_v_.push_back(prev_v);
  prev_a_.push_back(prev_a);
  hidden_rows_.insert(hidden_rows_.end(), hidden_row.begin(), hidden_row.end());
  const auto& ps = model_.params;
  const std::int64_t e = c.dec_dim;
  std::vector<float> x(static_cast<std::size_t>(e));
  if (use_cache_) {
    const std::int64_t width = 2 * e + c.lm_dim;
    std::vector<float> in(static_cast<std::size_t>(width));
    std::copy_n(ps.at("dec.emb_v").row(prev_v), e, in.begin());
    std::copy_n(ps.at("dec.emb_a").row(prev_a), e, in.begin() + e);
    std::copy(hidden_row.begin(), hidden_row.end(), in.begin() + 2 * e);
    kernels::linear_rows(in.data(), 1, width, ps.at("dec.fuse.w").data.data(), ps.at("dec.fuse.b").data.data(), e,
                         x.data());
    const float* pe = ps.at("dec.pos_emb").row(static_cast<std::int64_t>(prev_v_.size()) - 1);
    for (std::int64_t j = 0; j < e; ++j) x[j] = x[j] + pe[j];
    for (int i = 0; i < c.dec_layers; ++i)
      block_row(model_, block_name("dec", i), c.dec_heads, e, c.dec_ffn, qkv_cache_[i], x);
    std::vector<float> h(static_cast<std::size_t>(e));
    kernels::layer_norm_row(x.data(), e, ps.at("dec.ln_f.g").data.data(), ps.at("dec.ln_f.b").data.data(), h.data(),
                            static_cast<float*>(nullptr));
    x = std::move(h);
  } else {
    G g(false);
    const auto n = static_cast<std::int64_t>(prev_v_.size());
    ad::Var rows = g.constant(Shape{n, c.lm_dim}, hidden_rows_);
    // Recompute the normalized decoder state of the last row through the tape.
    const ad::Var parts[3] = {ad::embedding(g, P(g, model_, "dec.emb_v"), std::span<const int>(prev_v_)),
                              ad::embedding(g, P(g, model_, "dec.emb_a"), std::span<const int>(prev_a_)), rows};
    ad::Var y = lin(g, model_, ad::concat_cols(g, std::span<const ad::Var>(parts)), "dec.fuse");
    const auto pos = iota_ids(n);
    y = ad::add(g, y, ad::embedding(g, P(g, model_, "dec.pos_emb"), std::span<const int>(pos)));
    for (int i = 0; i < c.dec_layers; ++i) y = block(g, model_, y, block_name("dec", i), c.dec_heads);
    x = last_row(g, ln(g, model_, y, "dec.ln_f"));
  }
  logits_v_.resize(static_cast<std::size_t>(c.vocal_vocab));
  logits_a_.resize(static_cast<std::size_t>(c.accomp_vocab));
  kernels::linear_rows(x.data(), 1, e, ps.at("heads.v.w").data.data(), ps.at("heads.v.b").data.data(), c.vocal_vocab,
                       logits_v_.data());
  kernels::linear_rows(x.data(), 1, e, ps.at("heads.a.w").data.data(), ps.at("heads.a.b").data.data(),
                       c.accomp_vocab, logits_a_.data());
}

}  // namespace levo::lelm

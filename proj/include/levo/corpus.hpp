#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "levo/tensor.hpp"

namespace levo::corpus {

struct CorpusConfig {
  int count = 2000;
  int frames = 128;
  int dim = 8;
  int lyric_vocab = 40;
  int style_count = 8;
  int prompt_frames = 16;
  int min_sections = 2;
  int max_sections = 3;
  int min_section_len = 4;
  int max_section_len = 7;
  // Frames per lyric symbol; the rest of the song is instrumental. 0 spreads
  // the lyrics evenly over the whole song instead.
  int symbol_frames = 5;
  double accomp_noise = 0.05;
  double melody_depth = 0.15;
  double style_prob = 0.5;
  double prompt_prob = 0.5;
  double frame_rate = 25.0;  // label only
};

// Features split into a vocal band [0, dim - 3) and an accompaniment band
// [dim - 3, dim). Vocal energy never leaks into the accompaniment band and
// vice versa, so both oracles also work on the mixed track.
inline constexpr int kAccompBand = 3;

struct StyleTag {
  int id = 0;
  bool operator==(const StyleTag&) const = default;
};

struct Lyrics {
  std::vector<int> symbols;
};

struct SongTracks {
  Tensor vocal;          // [T, D]
  Tensor accompaniment;  // [T, D]
  Tensor mixed;          // [T, D] = 0.5 * vocal + 0.5 * accompaniment
  double frame_rate = 25.0;
  std::int64_t frames() const { return vocal.rows(); }
};

inline constexpr float kVocalGain = 0.5f;
inline constexpr float kAccompGain = 0.5f;

// Where an audio prompt is cut from: `frames` mixed frames of song `song`
// starting at `offset`. Tokens are attached once a codec exists.
struct PromptRef {
  int song = 0;
  int offset = 0;
};

struct Conditions {
  Lyrics lyrics;
  std::optional<StyleTag> text_style;
  std::optional<PromptRef> prompt_ref;
  std::optional<std::vector<int>> audio_prompt;  // mixed tokens
};

struct SongRecord {
  int index = 0;
  std::uint64_t seed = 0;
  StyleTag style;
  Conditions cond;
  SongTracks tracks;
};

// Deterministic song synthesizer plus the oracles standing in for ASR,
// style similarity and listener judgment.
class Synth {
 public:
  explicit Synth(CorpusConfig cfg);

  const CorpusConfig& config() const { return cfg_; }
  int symbol_count() const { return cfg_.lyric_vocab + 2; }
  int verse_marker() const { return cfg_.lyric_vocab; }
  int chorus_marker() const { return cfg_.lyric_vocab + 1; }
  int vocal_band() const { return cfg_.dim - kAccompBand; }

  // Unit-norm embedding of every lyric symbol (section markers included).
  const Tensor& symbol_table() const { return symbols_; }
  // Pooled accompaniment-band mean a song of this style converges to.
  std::vector<float> style_target(StyleTag style) const;

  Lyrics random_lyrics(std::uint64_t seed) const;
  SongTracks gen_song(std::uint64_t seed, StyleTag style, const Lyrics& lyrics) const;
  std::vector<SongRecord> gen_dataset(std::uint64_t seed) const;

  std::vector<int> transcribe(const Tensor& vocal) const;
  double style_similarity(const Tensor& features, StyleTag target) const;
  double style_similarity(const Tensor& features, const Tensor& reference) const;
  // Melody smoothness (<= 0) plus N(0, noise_std^2) observer noise.
  double musicality(const SongTracks& tracks, std::uint64_t seed, double noise_std) const;
  // Per-frame melody contour of a vocal track; NaN for silent frames.
  std::vector<double> contour(const Tensor& vocal) const;

 private:
  struct StyleDescriptor {
    std::vector<std::vector<float>> chords;
    std::vector<float> timbre;
  };
  StyleDescriptor descriptor(StyleTag style) const;
  std::vector<float> pooled_accomp(const Tensor& features) const;

  CorpusConfig cfg_;
  Tensor symbols_;
};

// Frames counted as voiced have vocal-band norm above this.
inline constexpr double kVoicedThreshold = 0.4;

// JSON-lines manifest: one record per song.
std::string manifest_line(const SongRecord& rec);
void write_manifest(const std::vector<SongRecord>& records, const std::string& path);

}  // namespace levo::corpus

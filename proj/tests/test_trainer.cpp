#include "doctest.h"
#include "levo/trainer.hpp"

using namespace levo;
using namespace levo::train;

namespace {

struct Fixture {
  corpus::Synth synth{[] {
    corpus::CorpusConfig c;
    c.count = 60;
    return c;
  }()};
  std::vector<corpus::SongRecord> songs = synth.gen_dataset(3);
  rvq::MusicCodec codec = [this] {
    rvq::FitConfig f;
    f.codebook_size = 16;
    f.seed = 4;
    return rvq::MusicCodec::fit(songs, f, f);
  }();
  std::vector<Example> data = make_examples(songs, codec, synth.config().prompt_frames);

  lelm::LeLM model(std::uint64_t seed = 1) const {
    lelm::LeLMConfig c;
    c.lm_layers = 2;
    c.lm_dim = 32;
    c.lm_heads = 2;
    c.lm_ffn = 64;
    c.dec_layers = 1;
    c.dec_dim = 32;
    c.dec_heads = 2;
    c.dec_ffn = 64;
    c.mixed_codes = c.vocal_vocab = c.accomp_vocab = 16;
    c.lyric_vocab = synth.symbol_count();
    return lelm::LeLM::init(c, seed);
  }
};

const Fixture& fx() {
  static Fixture f;
  return f;
}

StageConfig cfg(Stage s, int steps) {
  StageConfig c;
  c.stage = s;
  c.steps = steps;
  c.batch = 2;
  c.warmup = 20;
  c.seed = 9;
  return c;
}

double window_mean(const TrainResult& r, bool tail) {
  double s = 0;
  for (int i = 0; i < 10; ++i) s += r.curve[tail ? r.curve.size() - 1 - i : i].loss;
  return s / 10;
}

}  // namespace

TEST_CASE("examples carry prompt tokens from the referenced song") {
  const auto& f = fx();
  int with_prompt = 0;
  for (std::size_t i = 0; i < f.songs.size(); ++i) {
    const auto& ex = f.data[i];
    CHECK(ex.streams.frames() == 128);
    if (!f.songs[i].cond.prompt_ref) continue;
    ++with_prompt;
    const auto& ref = *f.songs[i].cond.prompt_ref;
    const auto& src = f.data[ref.song].streams.mixed;
    REQUIRE(ex.cond.audio_prompt.has_value());
    CHECK(*ex.cond.audio_prompt == std::vector<int>(src.begin() + ref.offset, src.begin() + ref.offset + 16));
  }
  CHECK(with_prompt > 0);
}

TEST_CASE("stage 1 trains the LM and leaves the decoder alone") {
  const auto& f = fx();
  auto m = f.model();
  const auto dec0 = checksum(m.params, "dec."), heads0 = checksum(m.params, "heads."), lm0 = checksum(m.params, "lm.");
  auto r = train_stage1(m, f.data, cfg(Stage::kPretrain, 80));
  CHECK(checksum(m.params, "dec.") == dec0);
  CHECK(checksum(m.params, "heads.") == heads0);
  CHECK(checksum(m.params, "lm.") != lm0);
  CHECK(window_mean(r, true) < window_mean(r, false));
  CHECK(r.curve.size() == 80);
  CHECK(r.curve[0].stage == "1");
  CHECK_FALSE(m.params.is_frozen("dec.fuse.w"));

  SUBCASE("stage 2 trains the decoder and leaves the LM alone") {
    const auto lm1 = checksum(m.params, "lm.");
    const double before = dual_accuracy(m, std::span(f.data).last(10)).vocal;
    auto r2 = train_stage2(m, std::span(f.data).first(50), cfg(Stage::kExtension, 80));
    CHECK(checksum(m.params, "lm.") == lm1);
    CHECK(checksum(m.params, "dec.") != dec0);
    CHECK(checksum(m.params, "heads.") != heads0);
    CHECK(window_mean(r2, true) < window_mean(r2, false));
    auto acc = dual_accuracy(m, std::span(f.data).last(10));
    CHECK(acc.vocal > before);
    CHECK(acc.vocal + acc.accompaniment > 2.0 / 16.0);
  }
}

TEST_CASE("full dropout leaves lyrics only") {
  const auto& f = fx();
  auto m = f.model();
  auto c = cfg(Stage::kPretrain, 1);
  c.dropout = 1.0;
  for (int i = 0; i < 60; ++i) {
    auto p = training_prefix(m.config, f.data[i], c, 0, i);
    CHECK(p.size() == 4 + static_cast<std::int64_t>(f.data[i].cond.lyrics.symbols.size()));
  }
  c.dropout = 0.0;
  for (int i = 0; i < 60; ++i) CHECK_FALSE(training_prefix(m.config, f.data[i], c, 0, i).style_dropped);
}

TEST_CASE("joint training touches every group and is reproducible") {
  const auto& f = fx();
  auto a = f.model(), b = f.model(), t = f.model();
  const auto init = f.model();
  auto ra = train_joint(a, f.data, cfg(Stage::kJoint, 1));
  for (const char* g : {"lm.", "dec.", "heads."}) CHECK(checksum(a.params, g) != checksum(init.params, g));
  auto c5 = cfg(Stage::kJoint, 5);
  auto r1 = train_joint(b, f.data, c5);
  auto b2 = f.model();
  auto r2 = train_joint(b2, f.data, c5);
  CHECK(checksum(b.params) == checksum(b2.params));
  for (int i = 0; i < 5; ++i) CHECK(r1.curve[i].loss == r2.curve[i].loss);
  c5.threads = 2;
  auto r3 = train_joint(t, f.data, c5);
  CHECK(checksum(t.params) == checksum(b.params));
}

TEST_CASE("trainer errors and metrics lines") {
  const auto& f = fx();
  auto m = f.model();
  std::vector<Example> none;
  CHECK_THROWS_AS(train_stage1(m, none, cfg(Stage::kPretrain, 1)), Error);
  CHECK_THROWS_AS(train_stage1(m, f.data, cfg(Stage::kExtension, 1)), Error);
  auto mixed_only = std::vector<Example>(f.data.begin(), f.data.begin() + 3);
  for (auto& ex : mixed_only) ex.streams.vocal.clear();
  CHECK_THROWS_AS(train_stage2(m, mixed_only, cfg(Stage::kExtension, 1)), Error);
  auto bad = cfg(Stage::kPretrain, 0);
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg(Stage::kPretrain, 1);
  bad.dropout = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  LossPoint p{3, "2", 1.5, 0.25, 7};
  CHECK(metrics_line(p) == R"({"step":3,"stage":"2","loss":1.5,"lr":0.25,"seed":7})");
}

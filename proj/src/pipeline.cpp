#include "levo/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "levo/checkpoint.hpp"
#include "levo/rng.hpp"

namespace levo::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"gen-corpus", "fit-codec", "train",    "mine",  "build-pairs",
                                              "train-dpo",  "merge",     "generate", "eval",  "ablate",
                                              "sweep",      "all"};
  return names;
}

bool is_subcommand(const std::string& name) {
  const auto& s = subcommands();
  return std::find(s.begin(), s.end(), name) != s.end();
}

std::map<std::string, std::uint64_t> planned_seeds(std::uint64_t master) {
  static const char* names[] = {"corpus", "codec_mixed", "codec_tracks", "init",     "stage1",       "stage2",
                                "joint",  "mining",      "mining_prompts", "labeling", "reward",     "dpo_s1",
                                "dpo_s2", "dpo_s3",      "pair_subset",  "eval",     "generate",     "ablation"};
  std::map<std::string, std::uint64_t> out;
  std::uint64_t tag = 1;
  for (const char* n : names) out[n] = derive_seed(master, {0x5eed, tag++});
  return out;
}

std::string resolve_run_dir(const std::string& out) {
  if (!out.empty()) return out;
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return std::string("runs/") + buf;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), ErrorCode::kIo, "cannot write " + path);
  f << text;
  check(f.good(), ErrorCode::kIo, "write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), ErrorCode::kIo, "cannot read " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), ErrorCode::kIo, "cannot read " + path);
  std::vector<json> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

json streams_json(const rvq::TokenStreams& s) {
  return {{"mixed", s.mixed}, {"vocal", s.vocal}, {"accompaniment", s.accompaniment}};
}

json stat_json(const evalx::Stat& s) { return {{"mean", s.mean}, {"ci95", s.ci95}, {"n", s.n}}; }

// Stacks per-song [T, D] tensors into one [N * T, D] tensor.
Tensor stack(const std::vector<const Tensor*>& parts) {
  check(!parts.empty(), ErrorCode::kInvalidArgument, "stack: nothing to stack");
  std::int64_t rows = 0;
  for (const auto* p : parts) rows += p->rows();
  Tensor out(Shape{rows, parts.front()->cols()});
  std::size_t at = 0;
  for (const auto* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at));
    at += p->data.size();
  }
  return out;
}

}  // namespace

struct Pipeline::Data {
  corpus::Synth synth;
  std::vector<corpus::SongRecord> songs;
  explicit Data(const corpus::CorpusConfig& c) : synth(c) {}
  std::vector<train::Example> examples;  // filled once the codec exists
  std::size_t train_count = 0;
  std::span<const train::Example> train() const { return std::span(examples).first(train_count); }
  std::span<const train::Example> heldout() const { return std::span(examples).subspan(train_count); }
};

Pipeline::Pipeline(config::RunConfig cfg, std::string run_dir, std::ostream* log)
    : cfg_(std::move(cfg)), dir_(std::move(run_dir)), log_(log), seeds_(planned_seeds(cfg_.seed)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  check(!ec && fs::is_directory(dir_), ErrorCode::kIo, "cannot create run directory " + dir_);
  if (fs::exists(path("config.hash"))) {
    const std::string old = read_text(path("config.hash"));
    check(old == cfg_.hash + "\n", ErrorCode::kConfig,
          "run directory " + dir_ + " holds config " + old.substr(0, 16) + ", this run is " + cfg_.hash);
  }
  write_text(path("config.json"), cfg_.canonical.dump(2) + "\n");
  write_text(path("config.hash"), cfg_.hash + "\n");
  json s(seeds_);
  s["master"] = cfg_.seed;
  write_text(path("seeds.json"), s.dump(2) + "\n");
}

std::string Pipeline::path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

void Pipeline::note(const std::string& line) {
  if (log_) *log_ << line << std::endl;
}

Pipeline::Data& Pipeline::data() {
  if (!data_) {
    data_ = std::make_shared<Data>(cfg_.corpus);
    data_->songs = data_->synth.gen_dataset(seeds_.at("corpus"));
    data_->train_count = data_->songs.size() - static_cast<std::size_t>(cfg_.trainer.heldout);
  }
  if (data_->examples.empty() && codec_) {
    data_->examples = train::make_examples(data_->songs, *codec_, cfg_.corpus.prompt_frames);
  }
  return *data_;
}

const rvq::MusicCodec& Pipeline::codec() {
  if (!codec_) {
    check(fs::exists(path("codec.ckpt")), ErrorCode::kRuntime, "no codec in " + dir_ + "; run fit-codec first");
    codec_ = rvq::MusicCodec::from_params(load_checkpoint(path("codec.ckpt")));
  }
  return *codec_;
}

lelm::LeLMConfig Pipeline::model_config() const { return cfg_.lelm; }

lelm::LeLM Pipeline::load_model(const std::string& file) {
  check(fs::exists(path(file)), ErrorCode::kRuntime, "missing " + file + " in " + dir_ + "; run the earlier steps");
  lelm::LeLM m = lelm::LeLM::init(model_config(), 0);
  ParamStore p = load_checkpoint(path(file));
  for (const auto& [name, t] : m.params.tensors()) {
    check(p.contains(name) && p.at(name).shape == t.shape, ErrorCode::kConfig,
          file + ": parameter " + name + " missing or shaped differently from the configured model");
  }
  check(p.size() == m.params.size(), ErrorCode::kConfig, file + ": parameter set differs from the configured model");
  for (auto& [name, t] : m.params.tensors()) t.data = p.at(name).data;
  return m;
}

void Pipeline::save_model(const lelm::LeLM& m, const std::string& file) { save_checkpoint(m.params, path(file)); }

void Pipeline::gen_corpus() {
  auto& d = data();
  write_manifest(d.songs, path("manifest.jsonl"));
  std::vector<const Tensor*> v, a, mx;
  for (const auto& s : d.songs) {
    v.push_back(&s.tracks.vocal);
    a.push_back(&s.tracks.accompaniment);
    mx.push_back(&s.tracks.mixed);
  }
  ParamStore f;
  f.add("features.vocal", stack(v));
  f.add("features.accompaniment", stack(a));
  f.add("features.mixed", stack(mx));
  save_checkpoint(f, path("features.ckpt"));
  note("gen-corpus: " + std::to_string(d.songs.size()) + " songs, " + std::to_string(cfg_.trainer.heldout) +
       " held out");
}

void Pipeline::fit_codec() {
  auto& d = data();
  const std::vector<corpus::SongRecord> fit_songs(d.songs.begin(),
                                                  d.songs.begin() + static_cast<std::ptrdiff_t>(d.train_count));
  rvq::FitConfig mixed = cfg_.rvq, tracks = cfg_.rvq;
  mixed.seed = seeds_.at("codec_mixed");
  tracks.seed = seeds_.at("codec_tracks");
  codec_ = rvq::MusicCodec::fit(fit_songs, mixed, tracks);
  save_checkpoint(codec_->to_params(), path("codec.ckpt"));
  d.examples.clear();
  auto& dd = data();
  std::ofstream f(path("tokens.jsonl"), std::ios::trunc);
  check(f.good(), ErrorCode::kIo, "cannot write tokens.jsonl");
  for (std::size_t i = 0; i < dd.examples.size(); ++i) {
    json j = streams_json(dd.examples[i].streams);
    j["index"] = i;
    f << j.dump() << '\n';
  }
  note("fit-codec: codebook " + std::to_string(cfg_.rvq.codebook_size) + " x " + std::to_string(cfg_.rvq.stages) +
       " stages");
}

void Pipeline::train() {
  codec();
  auto& d = data();
  const auto& t = cfg_.trainer;
  auto model = lelm::LeLM::init(model_config(), seeds_.at("init"));
  const auto heldout = d.heldout();
  const double ce_init = train::mixed_cross_entropy(model, heldout);

  std::ofstream metrics(path("metrics.jsonl"), std::ios::trunc);
  check(metrics.good(), ErrorCode::kIo, "cannot write metrics.jsonl");
  auto log_point = [&](const train::LossPoint& p) {
    metrics << train::metrics_line(p) << '\n';
    if (p.step % 200 == 0) note("train: stage " + p.stage + " step " + std::to_string(p.step) +
                                " loss " + std::to_string(p.loss));
  };
  train::StageConfig sc;
  sc.stage = train::Stage::kPretrain;
  sc.steps = t.stage1_steps;
  sc.batch = t.batch;
  sc.warmup = t.warmup;
  sc.lr_scale = t.lr_scale;
  sc.dropout = t.dropout;
  sc.threads = cfg_.threads;
  sc.seed = seeds_.at("stage1");
  const auto r1 = train::train_stage1(model, d.train(), sc, log_point);
  save_model(model, "lelm_stage1.ckpt");
  const double ce_stage1 = train::mixed_cross_entropy(model, heldout);

  sc.stage = train::Stage::kExtension;
  sc.steps = t.stage2_steps;
  sc.seed = seeds_.at("stage2");
  const auto r2 = train::train_stage2(model, d.train(), sc, log_point);
  save_model(model, "lelm_stage2.ckpt");
  const auto acc = train::dual_accuracy(model, heldout);

  ordered_json s;
  s["stage1"] = {{"steps", t.stage1_steps},
                 {"first_loss", r1.curve.front().loss},
                 {"last_loss", r1.curve.back().loss},
                 {"heldout_ce_initial", ce_init},
                 {"heldout_ce_final", ce_stage1},
                 {"heldout_ce_drop", 1.0 - ce_stage1 / ce_init}};
  s["stage2"] = {{"steps", t.stage2_steps},
                 {"first_loss", r2.curve.front().loss},
                 {"last_loss", r2.curve.back().loss},
                 {"heldout_vocal_accuracy", acc.vocal},
                 {"heldout_accomp_accuracy", acc.accompaniment},
                 {"vocal_chance", 1.0 / cfg_.lelm.vocal_vocab},
                 {"accomp_chance", 1.0 / cfg_.lelm.accomp_vocab}};
  s["heldout_songs"] = heldout.size();
  write_text(path("train_summary.json"), s.dump(2) + "\n");
  note("train: held-out mixed CE " + std::to_string(ce_init) + " -> " + std::to_string(ce_stage1) +
       ", dual accuracy " + std::to_string(acc.vocal) + " / " + std::to_string(acc.accompaniment));
}

std::vector<align::MiningPrompt> Pipeline::mining_prompts() {
  codec();
  auto& d = data();
  const auto heldout = d.heldout();
  const std::size_t bank = heldout.size() / 2;
  std::vector<align::MiningPrompt> out;
  for (int i = 0; i < cfg_.alignment.mining_lyrics; ++i) {
    const std::size_t b = static_cast<std::size_t>(i) % bank;
    const auto& rec = d.songs[d.train_count + b];
    align::MiningPrompt p;
    p.lyrics = d.synth.random_lyrics(derive_seed(seeds_.at("mining_prompts"), {static_cast<std::uint64_t>(i)}));
    p.style = rec.style;
    const auto& mixed = heldout[b].streams.mixed;
    p.audio_prompt.assign(mixed.begin(), mixed.begin() + cfg_.corpus.prompt_frames);
    p.prompt_features = rec.tracks.mixed;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<evalx::EvalItem> Pipeline::eval_items() {
  codec();
  auto& d = data();
  const auto heldout = d.heldout();
  const std::size_t first = heldout.size() / 2;
  std::vector<evalx::EvalItem> out;
  for (int i = 0; i < cfg_.evalx.prompts; ++i) {
    const std::size_t h = first + static_cast<std::size_t>(i);
    const auto& rec = d.songs[d.train_count + h];
    evalx::EvalItem it;
    it.cond.lyrics = rec.cond.lyrics;
    it.cond.text_style = rec.style;
    const auto& mixed = heldout[h].streams.mixed;
    it.cond.audio_prompt = std::vector<int>(mixed.begin(), mixed.begin() + cfg_.corpus.prompt_frames);
    it.style = rec.style;
    it.prompt_features = rec.tracks.mixed;
    it.reference = rec.tracks;
    out.push_back(std::move(it));
  }
  return out;
}

void Pipeline::mine() {
  const auto model = load_model("lelm_stage2.ckpt");
  const auto prompts = mining_prompts();
  align::MiningConfig mc;
  mc.n_per_condition = cfg_.alignment.n_per_condition;
  mc.seed = seeds_.at("mining");
  mc.sampler = {cfg_.top_k(), cfg_.generation.temperature};
  mc.frames = cfg_.generation.frames;
  mc.musicality_noise = cfg_.alignment.musicality_noise;
  const auto samples = align::mine_samples(model, prompts, data().synth, codec(), mc);
  std::ofstream f(path("samples.jsonl"), std::ios::trunc);
  check(f.good(), ErrorCode::kIo, "cannot write samples.jsonl");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    ordered_json j;
    j["index"] = i;
    j["group"] = s.group;
    j["lyric"] = s.lyric_index;
    j["regime"] = align::regime_name(s.regime);
    j["scores"] = s.scores;
    j["streams"] = streams_json(s.streams);
    f << j.dump() << '\n';
  }
  note("mine: " + std::to_string(samples.size()) + " samples over " + std::to_string(prompts.size()) + " lyrics");
}

std::vector<align::GeneratedSample> Pipeline::load_samples() {
  check(fs::exists(path("samples.jsonl")), ErrorCode::kRuntime, "no samples in " + dir_ + "; run mine first");
  const auto prompts = mining_prompts();
  const auto& c = codec();
  const auto& L = cfg_.lelm;
  std::vector<align::GeneratedSample> out;
  for (const auto& j : read_jsonl(path("samples.jsonl"))) {
    align::GeneratedSample s;
    s.group = j.at("group").get<int>();
    s.lyric_index = j.at("lyric").get<int>();
    s.regime = static_cast<align::Regime>(s.group % 3);
    check(s.lyric_index >= 0 && s.lyric_index < static_cast<int>(prompts.size()), ErrorCode::kRuntime,
          "samples.jsonl does not match the mining prompts of this config");
    const auto& p = prompts[static_cast<std::size_t>(s.lyric_index)];
    s.cond.lyrics = p.lyrics;
    if (s.regime != align::Regime::kAudio) s.cond.text_style = p.style;
    if (s.regime != align::Regime::kText) s.cond.audio_prompt = p.audio_prompt;
    s.scores = j.at("scores").get<std::map<std::string, double>>();
    const auto& st = j.at("streams");
    s.streams.mixed = st.at("mixed").get<std::vector<int>>();
    s.streams.vocal = st.at("vocal").get<std::vector<int>>();
    s.streams.accompaniment = st.at("accompaniment").get<std::vector<int>>();
    s.streams.mixed_vocab = L.mixed_codes;
    s.streams.vocal_vocab = L.vocal_vocab;
    s.streams.accomp_vocab = L.accomp_vocab;
    s.tracks = c.decode_dual(s.streams);
    out.push_back(std::move(s));
  }
  return out;
}

void Pipeline::build_pairs() {
  const auto samples = load_samples();
  const auto& a = cfg_.alignment;
  const auto& synth = data().synth;

  auto s1 = align::build_pairs_strategy1(samples, a.strategy1_gap);
  std::vector<align::GeneratedSample> text, audio;
  std::vector<int> text_idx, audio_idx;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].regime == align::Regime::kText) {
      text.push_back(samples[i]);
      text_idx.push_back(static_cast<int>(i));
    } else if (samples[i].regime == align::Regime::kAudio) {
      audio.push_back(samples[i]);
      audio_idx.push_back(static_cast<int>(i));
    }
  }
  std::vector<align::PreferencePair> s2;
  for (auto p : align::build_pairs_strategy2(text, align::StyleMode::kText)) {
    p.winner = text_idx[static_cast<std::size_t>(p.winner)];
    p.loser = text_idx[static_cast<std::size_t>(p.loser)];
    s2.push_back(p);
  }
  for (auto p : align::build_pairs_strategy2(audio, align::StyleMode::kAudio)) {
    p.winner = audio_idx[static_cast<std::size_t>(p.winner)];
    p.loser = audio_idx[static_cast<std::size_t>(p.loser)];
    s2.push_back(p);
  }

  // Strategy 3: agreement-labeled musicality pairs train a reward model,
  // whose confident judgements over all groups become pairs.
  std::vector<int> groups;
  for (const auto& s : samples)
    if (groups.empty() || groups.back() != s.group) groups.push_back(s.group);
  if (static_cast<int>(groups.size()) > a.labeled_groups) groups.resize(static_cast<std::size_t>(a.labeled_groups));
  const auto labeled =
      align::label_by_agreement(samples, groups, synth, a.musicality_noise, seeds_.at("labeling"), a.votes, a.agree);
  std::vector<std::vector<float>> feats;
  for (const auto& s : samples) feats.push_back(align::reward_features(synth, s.tracks));
  std::vector<align::LabeledPair> lp;
  for (auto [w, l] : labeled) lp.push_back({feats[static_cast<std::size_t>(w)], feats[static_cast<std::size_t>(l)]});
  ordered_json info;
  info["labeled_pairs"] = lp.size();
  std::vector<align::PreferencePair> s3;
  const std::size_t n_held = static_cast<std::size_t>(std::floor(static_cast<double>(lp.size()) * a.heldout_fraction));
  if (lp.size() >= 2 && n_held >= 1 && n_held < lp.size()) {
    const std::span<const align::LabeledPair> all(lp);
    align::RewardConfig rc;
    rc.hidden = a.reward_hidden;
    rc.steps = a.reward_steps;
    rc.seed = seeds_.at("reward");
    const auto rm = align::train_reward_model(all.first(lp.size() - n_held), rc);
    save_checkpoint(rm.params, path("reward.ckpt"));
    info["reward_train_accuracy"] = rm.train_accuracy;
    align::Threshold th;
    bool reached = true;
    try {
      th = align::tune_threshold(rm, all.last(n_held), a.threshold_target);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnreachableTarget) throw;
      reached = false;
    }
    info["threshold"] = {{"target", a.threshold_target},
                         {"reached", reached},
                         {"delta", th.delta},
                         {"heldout_accuracy", th.accuracy},
                         {"coverage", th.coverage}};
    if (reached) {
      std::vector<double> rewards;
      for (const auto& f : feats) rewards.push_back(rm.reward(f));
      s3 = align::build_pairs_strategy3(rewards, samples, th.delta);
    }
  } else {
    info["threshold"] = {{"target", a.threshold_target}, {"reached", false}};
  }

  std::ofstream f(path("pairs.jsonl"), std::ios::trunc);
  check(f.good(), ErrorCode::kIo, "cannot write pairs.jsonl");
  for (const auto* set : {&s1, &s2, &s3})
    for (const auto& p : *set) f << align::pair_line(p, samples) << '\n';
  info["pairs"] = {{"strategy1", s1.size()}, {"strategy2", s2.size()}, {"strategy3", s3.size()}};
  write_text(path("alignment.json"), info.dump(2) + "\n");
  note("build-pairs: " + std::to_string(s1.size()) + " / " + std::to_string(s2.size()) + " / " +
       std::to_string(s3.size()) + " pairs for strategies 1 / 2 / 3");
}

void Pipeline::train_dpo() {
  const auto samples = load_samples();
  check(fs::exists(path("pairs.jsonl")), ErrorCode::kRuntime, "no pairs in " + dir_ + "; run build-pairs first");
  std::map<int, std::vector<align::DpoPair>> by_strategy;
  for (const auto& j : read_jsonl(path("pairs.jsonl"))) {
    const int w = j.at("winner").get<int>(), l = j.at("loser").get<int>();
    check(w >= 0 && l >= 0 && w < static_cast<int>(samples.size()) && l < static_cast<int>(samples.size()),
          ErrorCode::kRuntime, "pairs.jsonl refers to a missing sample");
    const auto& sw = samples[static_cast<std::size_t>(w)];
    by_strategy[j.at("strategy").get<int>()].push_back({sw.cond, sw.streams, samples[static_cast<std::size_t>(l)].streams});
  }
  const auto reference = load_model("lelm_stage2.ckpt");
  const auto& a = cfg_.alignment;
  std::ofstream metrics(path("dpo_metrics.jsonl"), std::ios::trunc);
  check(metrics.good(), ErrorCode::kIo, "cannot write dpo_metrics.jsonl");
  ordered_json summary;
  for (int s = 1; s <= 3; ++s) {
    const std::string name = "dpo_s" + std::to_string(s);
    auto pairs = by_strategy[s];
    if (static_cast<int>(pairs.size()) > a.max_pairs) {
      Rng rng(derive_seed(seeds_.at("pair_subset"), {static_cast<std::uint64_t>(s)}));
      for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.below(i)]);
      pairs.resize(static_cast<std::size_t>(a.max_pairs));
    }
    lelm::LeLM policy = reference;
    ordered_json js;
    js["pairs"] = pairs.size();
    if (pairs.empty()) {
      note("train-dpo: strategy " + std::to_string(s) + " has no pairs; keeping the reference model");
    } else {
      align::DpoConfig dc;
      dc.beta = a.beta;
      dc.steps = a.dpo_steps;
      dc.batch = a.dpo_batch;
      dc.lr = a.dpo_lr;
      dc.seed = seeds_.at(name);
      dc.length_normalize = a.length_normalize;
      dc.threads = cfg_.threads;
      const auto res = align::train_stage3_dpo(policy, reference, pairs, dc);
      for (const auto& p : res.curve) {
        ordered_json j;
        j["step"] = p.step;
        j["stage"] = "3";
        j["model"] = name;
        j["loss"] = p.loss;
        j["margin"] = p.margin;
        j["accuracy"] = p.accuracy;
        j["lr"] = a.dpo_lr;
        j["seed"] = dc.seed;
        metrics << j.dump() << '\n';
      }
      const auto ev = align::evaluate_dpo(policy, reference, pairs, a.beta, a.length_normalize);
      js["initial_loss"] = res.curve.front().loss;
      js["final_loss"] = ev.mean_loss;
      js["pair_accuracy"] = ev.accuracy;
      note("train-dpo: " + name + " on " + std::to_string(pairs.size()) + " pairs, loss " +
           std::to_string(res.curve.front().loss) + " -> " + std::to_string(ev.mean_loss));
    }
    summary[name] = js;
    save_model(policy, name + ".ckpt");
  }
  write_text(path("dpo_summary.json"), summary.dump(2) + "\n");
}

void Pipeline::merge() {
  std::vector<ParamStore> stores;
  for (int s = 1; s <= 3; ++s) stores.push_back(load_model("dpo_s" + std::to_string(s) + ".ckpt").params);
  std::vector<const ParamStore*> ptrs;
  for (const auto& p : stores) ptrs.push_back(&p);
  save_checkpoint(align::interpolate(ptrs, cfg_.merge_alpha), path("merged.ckpt"));
  note("merge: wrote merged.ckpt");
}

void Pipeline::generate() {
  const std::string& which = cfg_.generation.model;
  const std::string file = which == "stage1"   ? "lelm_stage1.ckpt"
                           : which == "stage2" ? "lelm_stage2.ckpt"
                                               : which + ".ckpt";
  const auto model = load_model(file);
  const auto items = eval_items();
  const auto& c = codec();
  std::ofstream f(path("generated.jsonl"), std::ios::trunc);
  check(f.good(), ErrorCode::kIo, "cannot write generated.jsonl");
  ParamStore features;
  for (int i = 0; i < cfg_.generation.count; ++i) {
    const auto& it = items[static_cast<std::size_t>(i) % items.size()];
    gen::GenerateConfig gc;
    gc.frames = cfg_.generation.frames;
    gc.sampler = {cfg_.top_k(), cfg_.generation.temperature};
    gc.seed = derive_seed(seeds_.at("generate"), {static_cast<std::uint64_t>(i)});
    const auto out = gen::generate(model, it.cond, gc);
    ordered_json j;
    j["index"] = i;
    j["model"] = which;
    j["lyrics"] = it.cond.lyrics.symbols;
    j["style"] = it.style.id;
    j["hit_eos"] = out.hit_eos;
    j["streams"] = streams_json(out.streams);
    f << j.dump() << '\n';
    const auto tracks = c.decode_dual(out.streams);
    const std::string base = "song." + std::to_string(i);
    features.add(base + ".vocal", tracks.vocal);
    features.add(base + ".accompaniment", tracks.accompaniment);
    features.add(base + ".mixed", tracks.mixed);
  }
  save_checkpoint(features, path("generated_features.ckpt"));
  note("generate: " + std::to_string(cfg_.generation.count) + " songs from " + file);
}

evalx::ModelMetrics Pipeline::evaluate(const lelm::LeLM& m, bool mixed_only, const std::string& seed_name) {
  const auto items = eval_items();
  auto& d = data();
  std::vector<std::vector<int>> training_mixed;
  const auto tr = d.train();
  const std::size_t n = std::min<std::size_t>(tr.size(), static_cast<std::size_t>(cfg_.evalx.memorization_songs));
  for (std::size_t i = 0; i < n; ++i) training_mixed.push_back(tr[i].streams.mixed);
  evalx::EvalConfig ec;
  ec.sampler = {cfg_.top_k(), cfg_.generation.temperature};
  ec.frames = cfg_.generation.frames;
  ec.seed = seeds_.at(seed_name);
  ec.mixed_only = mixed_only;
  ec.memorization_songs = cfg_.evalx.memorization_songs;
  return evalx::evaluate_model(m, d.synth, codec(), items, training_mixed, ec);
}

namespace {

std::map<std::string, int> pair_counts(const std::string& dir) {
  std::map<std::string, int> n;
  const auto p = (fs::path(dir) / "alignment.json").string();
  if (!fs::exists(p)) return n;
  const auto j = json::parse(read_text(p));
  for (const auto& [k, v] : j.at("pairs").items()) n[k] = v.get<int>();
  return n;
}

}  // namespace

void Pipeline::eval() {
  evalx::MetricsReport report;
  report.config_hash = cfg_.hash;
  report.seeds = seeds_;
  const auto counts = pair_counts(dir_);
  const std::vector<std::pair<std::string, std::string>> models{{"pre_dpo", "lelm_stage2.ckpt"},
                                                                {"dpo_s1", "dpo_s1.ckpt"},
                                                                {"dpo_s2", "dpo_s2.ckpt"},
                                                                {"dpo_s3", "dpo_s3.ckpt"},
                                                                {"merged", "merged.ckpt"}};
  for (const auto& [name, file] : models) {
    auto m = evaluate(load_model(file), false, "eval");
    if (name.rfind("dpo_s", 0) == 0) {
      const std::string key = "strategy" + name.substr(5);
      if (counts.contains(key)) m.pair_counts[key] = counts.at(key);
    } else if (name == "merged") {
      m.pair_counts = counts;
    }
    note("eval: " + name + " per_analog " + std::to_string(m.per_analog.mean));
    report.add(name, m);
  }
  write_text(path("report.json"), report.to_json() + "\n");
  write_text(path("report.csv"), report.to_csv());
}

void Pipeline::ablate() {
  fs::create_directories(path("ablation"));
  auto& d = data();
  const auto& t = cfg_.trainer;
  train::StageConfig sc;
  sc.batch = t.batch;
  sc.warmup = t.warmup;
  sc.lr_scale = t.lr_scale;
  sc.dropout = t.dropout;
  sc.threads = cfg_.threads;

  struct Variant {
    std::string name;
    std::function<std::pair<lelm::LeLM, bool>()> build;  // model, mixed_only
  };
  const std::vector<Variant> variants{
      {"full", [&] { return std::pair{load_model("merged.ckpt"), false}; }},
      {"no_stage2",
       [&] {
         auto m = lelm::LeLM::init(model_config(), seeds_.at("init"));
         sc.stage = train::Stage::kJoint;
         sc.steps = t.joint_steps;
         sc.seed = seeds_.at("joint");
         train::train_joint(m, d.train(), sc);
         save_checkpoint(m.params, path("ablation/no_stage2.ckpt"));
         return std::pair{std::move(m), false};
       }},
      {"no_ar_decoder",
       [&] {
         auto c = model_config();
         c.dec_layers = 0;
         auto m = lelm::LeLM::init(c, seeds_.at("init"));
         const auto s1 = load_model("lelm_stage1.ckpt");
         for (auto& [name, tensor] : m.params.tensors())
           if (name.rfind("lm.", 0) == 0) tensor.data = s1.params.at(name).data;
         sc.stage = train::Stage::kExtension;
         sc.steps = t.stage2_steps;
         sc.seed = seeds_.at("stage2");
         train::train_stage2(m, d.train(), sc);
         save_checkpoint(m.params, path("ablation/no_ar_decoder.ckpt"));
         return std::pair{std::move(m), false};
       }},
      {"no_dual_track", [&] { return std::pair{load_model("lelm_stage1.ckpt"), true}; }},
      {"no_dpo", [&] { return std::pair{load_model("lelm_stage2.ckpt"), false}; }},
  };
  ordered_json index;
  std::string csv;
  int failures = 0;
  for (const auto& v : variants) {
    try {
      note("ablate: " + v.name);
      auto [m, mixed_only] = v.build();
      evalx::MetricsReport r;
      r.config_hash = cfg_.hash;
      r.seeds = seeds_;
      r.add(v.name, evaluate(m, mixed_only, "eval"));
      write_text(path("ablation/" + v.name + ".json"), r.to_json() + "\n");
      const std::string rows = r.to_csv();
      if (csv.empty()) csv = rows;
      else csv += rows.substr(rows.find('\n') + 1);
      index[v.name] = {{"status", "ok"}, {"per_analog", r.models.at(v.name).per_analog.mean}};
    } catch (const std::exception& e) {
      ++failures;
      index[v.name] = {{"status", "failed"}, {"error", e.what()}};
      note("ablate: " + v.name + " failed: " + e.what());
    }
  }
  write_text(path("ablation.json"), index.dump(2) + "\n");
  write_text(path("ablation.csv"), csv);
  check(failures == 0, ErrorCode::kRuntime, std::to_string(failures) + " ablation variant(s) failed");
}

void Pipeline::sweep() {
  std::vector<ParamStore> stores;
  for (int s = 1; s <= 3; ++s) stores.push_back(load_model("dpo_s" + std::to_string(s) + ".ckpt").params);
  std::vector<const ParamStore*> ptrs;
  for (const auto& p : stores) ptrs.push_back(&p);
  ordered_json rows = ordered_json::array();
  std::ostringstream csv;
  csv.precision(6);
  csv << "alpha1,alpha2,alpha3,per_analog,style_sim_text,style_sim_audio,musicality\n";
  for (const auto& alpha : cfg_.sweep_points) {
    lelm::LeLM m = lelm::LeLM::init(model_config(), 0);
    m.params = align::interpolate(ptrs, alpha);
    const auto r = evaluate(m, false, "eval");
    ordered_json row;
    row["alpha"] = alpha;
    row["per_analog"] = stat_json(r.per_analog);
    row["style_sim_text"] = stat_json(r.style_sim_text);
    row["style_sim_audio"] = stat_json(r.style_sim_audio);
    row["musicality"] = stat_json(r.musicality);
    rows.push_back(row);
    csv << alpha[0] << ',' << alpha[1] << ',' << alpha[2] << ',' << r.per_analog.mean << ',' << r.style_sim_text.mean
        << ',' << r.style_sim_audio.mean << ',' << r.musicality.mean << '\n';
    note("sweep: alpha (" + std::to_string(alpha[0]) + ", " + std::to_string(alpha[1]) + ", " +
         std::to_string(alpha[2]) + ") per_analog " + std::to_string(r.per_analog.mean));
  }
  ordered_json out;
  out["config_hash"] = cfg_.hash;
  out["points"] = rows;
  write_text(path("sweep.json"), out.dump(2) + "\n");
  write_text(path("sweep.csv"), csv.str());
}

void Pipeline::all() {
  gen_corpus();
  fit_codec();
  train();
  mine();
  build_pairs();
  train_dpo();
  merge();
  eval();
}

void Pipeline::run(const std::string& sub) {
  using Step = void (Pipeline::*)();
  static const std::map<std::string, Step> table{
      {"gen-corpus", &Pipeline::gen_corpus}, {"fit-codec", &Pipeline::fit_codec}, {"train", &Pipeline::train},
      {"mine", &Pipeline::mine},             {"build-pairs", &Pipeline::build_pairs},
      {"train-dpo", &Pipeline::train_dpo},   {"merge", &Pipeline::merge},         {"generate", &Pipeline::generate},
      {"eval", &Pipeline::eval},             {"ablate", &Pipeline::ablate},       {"sweep", &Pipeline::sweep},
      {"all", &Pipeline::all}};
  auto it = table.find(sub);
  check(it != table.end(), ErrorCode::kInvalidArgument, "unknown subcommand '" + sub + "'");
  const auto t0 = std::chrono::steady_clock::now();
  (this->*(it->second))();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  note(sub + ": done in " + std::to_string(static_cast<int>(secs)) + " s");
}

}  // namespace levo::pipeline

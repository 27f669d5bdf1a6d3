// mskseq/pipeline.hpp
//
// End-to-end harness pieces: a seeded synthetic language (Markov bigram
// sentences over a small vocabulary rendered to features by synthvoice),
// the staged pre-training pipeline, and the paired scratch-vs-pretrained
// ablation used to check that staged pre-training actually helps.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mskseq/decode.hpp"
#include "mskseq/errors.hpp"
#include "mskseq/nnet.hpp"
#include "mskseq/rng.hpp"
#include "mskseq/score.hpp"
#include "mskseq/synthvoice.hpp"
#include "mskseq/train.hpp"
#include "mskseq/vocab.hpp"

namespace mskseq {

// ------------------------------------------------------------ toy language

struct ToyLanguageConfig {
  int num_tokens = 20;
  int min_sentence_len = 3;
  int max_sentence_len = 8;
  std::uint64_t seed = 7;
};

// Sentences are Markov bigram chains with skewed transition weights, so
// there is real sequence structure for the decoder to pick up.
class ToyLanguage {
 public:
  explicit ToyLanguage(const ToyLanguageConfig& cfg) : cfg_(cfg) {
    if (cfg.num_tokens < 2) throw DataError("toy language: need >= 2 tokens");
    if (cfg.min_sentence_len < 1 || cfg.max_sentence_len < cfg.min_sentence_len)
      throw DataError("toy language: bad sentence length range");
    std::vector<std::string> tokens;
    for (int i = 0; i < cfg.num_tokens; ++i) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "w%02d", i);
      tokens.emplace_back(buf);
    }
    vocab_ = Vocab::with_specials(tokens);
    Rng rng(split_seed(cfg.seed, "toy_language"));
    initial_cdf_ = make_cdf(rng, cfg.num_tokens);
    next_cdf_.reserve(static_cast<std::size_t>(cfg.num_tokens));
    for (int i = 0; i < cfg.num_tokens; ++i)
      next_cdf_.push_back(make_cdf(rng, cfg.num_tokens));
  }

  const Vocab& vocab() const { return vocab_; }

  // Content-token ids (specials excluded), deterministic in the seed.
  std::vector<TokenId> sample_sentence(std::uint64_t seed) const {
    Rng rng(seed);
    const int len = cfg_.min_sentence_len +
                    static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
                        cfg_.max_sentence_len - cfg_.min_sentence_len + 1)));
    std::vector<TokenId> out;
    out.reserve(static_cast<std::size_t>(len));
    int state = pick(initial_cdf_, rng.next_unit());
    out.push_back(static_cast<TokenId>(kNumSpecialTokens + state));
    for (int i = 1; i < len; ++i) {
      state = pick(next_cdf_[static_cast<std::size_t>(state)], rng.next_unit());
      out.push_back(static_cast<TokenId>(kNumSpecialTokens + state));
    }
    return out;
  }

  std::string to_text(const std::vector<TokenId>& tokens) const {
    return vocab_.decode(tokens);
  }

 private:
  // Skewed categorical distribution: cubed uniforms concentrate mass on a
  // few successors per state.
  static std::vector<double> make_cdf(Rng& rng, int n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    double total = 0;
    for (auto& x : w) {
      const double u = rng.next_unit();
      x = u * u * u + 1e-4;
      total += x;
    }
    double acc = 0;
    for (auto& x : w) {
      acc += x / total;
      x = acc;
    }
    w.back() = 1.0;
    return w;
  }

  static int pick(const std::vector<double>& cdf, double u) {
    for (std::size_t i = 0; i < cdf.size(); ++i)
      if (u < cdf[i]) return static_cast<int>(i);
    return static_cast<int>(cdf.size()) - 1;
  }

  ToyLanguageConfig cfg_;
  Vocab vocab_;
  std::vector<double> initial_cdf_;
  std::vector<std::vector<double>> next_cdf_;
};

// -------------------------------------------------------------- toy corpora

struct ToyCorpusConfig {
  ToyLanguageConfig language;
  SynthConfig synth{4, 8, 0.02, 0};  // m=4 frames/token, d=8, jitter 0.02
  int acoustic_utterances = 2000;
  int linguistic_utterances = 2000;
  int indomain_train = 100;
  int indomain_val = 50;
  int indomain_test = 50;
  std::uint64_t corpus_seed = 11;
};

struct ToyCorpora {
  Vocab vocab;
  std::vector<TrainUtterance> acoustic;    // transcripts stripped (unpaired speech)
  std::vector<TrainUtterance> linguistic;  // synthesized pairs
  std::vector<TrainUtterance> indomain_train;
  std::vector<TrainUtterance> indomain_val;
  std::vector<TrainUtterance> indomain_test;
};

namespace detail {

inline std::vector<TrainUtterance> make_toy_subset(
    const ToyLanguage& lang, const std::vector<TokenTemplate>& templates,
    const SynthConfig& synth, const std::string& prefix, int count,
    std::uint64_t corpus_seed, bool keep_transcripts) {
  std::vector<TrainUtterance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%05d", prefix.c_str(), i);
    TrainUtterance utt;
    utt.id = idbuf;
    const std::vector<TokenId> sentence =
        lang.sample_sentence(split_seed(corpus_seed, std::string(idbuf) + ":text"));
    utt.features =
        synthesize(sentence, templates, synth, split_seed(corpus_seed, std::string(idbuf) + ":jitter"))
            .frames;
    if (keep_transcripts) utt.tokens = sentence;
    out.push_back(std::move(utt));
  }
  return out;
}

}  // namespace detail

inline ToyCorpora build_toy_corpora(const ToyCorpusConfig& cfg) {
  const ToyLanguage lang(cfg.language);
  SynthConfig synth = cfg.synth;
  const auto templates = build_templates(lang.vocab(), synth);
  ToyCorpora corpora;
  corpora.vocab = lang.vocab();
  corpora.acoustic = detail::make_toy_subset(lang, templates, synth, "aco", cfg.acoustic_utterances,
                                             cfg.corpus_seed, /*keep_transcripts=*/false);
  corpora.linguistic = detail::make_toy_subset(lang, templates, synth, "lin",
                                               cfg.linguistic_utterances, cfg.corpus_seed, true);
  corpora.indomain_train = detail::make_toy_subset(lang, templates, synth, "ind_train",
                                                   cfg.indomain_train, cfg.corpus_seed, true);
  corpora.indomain_val = detail::make_toy_subset(lang, templates, synth, "ind_val",
                                                 cfg.indomain_val, cfg.corpus_seed, true);
  corpora.indomain_test = detail::make_toy_subset(lang, templates, synth, "ind_test",
                                                  cfg.indomain_test, cfg.corpus_seed, true);
  return corpora;
}

// --------------------------------------------------------- pipeline presets

// Post-training initializations, Table-1 style:
//   A0: from scratch
//   A1: full model from M1 (acoustic + linguistic pre-training)
//   A2: encoder from M0, rest fresh
//   A3: full model from M2 (linguistic-only pre-training)
// Full-model inits get a freshly drawn softmax layer sized to the
// post-training vocabulary.
template <typename Real>
NamedTensors<Real> build_posttrain_init(const std::string& preset,
                                        const ModelConfig& mcfg, std::uint64_t seed,
                                        const NamedTensors<Real>* m0,
                                        const NamedTensors<Real>* m1,
                                        const NamedTensors<Real>* m2) {
  if (preset == "A0") return init_params<Real>(mcfg, seed, false, true);
  if (preset == "A1" || preset == "A3") {
    const NamedTensors<Real>* src = preset == "A1" ? m1 : m2;
    const char* artifact = preset == "A1" ? "M1" : "M2";
    if (!src)
      throw DataError("preset " + preset + " requires an " + std::string(artifact) +
                      " artifact");
    return reinit_softmax(*src, mcfg.vocab_size, mcfg.d_model, seed);
  }
  if (preset == "A2") {
    if (!m0) throw DataError("preset A2 requires an M0 artifact");
    return merge_params(init_params<Real>(mcfg, seed, false, true), *m0);
  }
  throw DataError("unknown preset '" + preset + "' (expected A0|A1|A2|A3)");
}

// Corpus-level token error rate of beam-search output against references.
template <typename Real>
double corpus_token_error_rate(const Transformer<Real>& model,
                               const std::vector<TrainUtterance>& test_set,
                               const Vocab& vocab, const DecodeConfig& dcfg) {
  ErrorCounts total;
  for (const auto& utt : test_set) {
    const Matrix<Real> x = utt.features.template cast<Real>();
    const Matrix<Real> h = model.encode(x, nullptr, utt.id);
    const auto hyps = beam_search(model_scorer(model, h),
                                  model.config().vocab_size, dcfg);
    std::vector<std::string> hyp_syms, ref_syms;
    for (TokenId id : hyps.front().content()) hyp_syms.push_back(vocab.token(id));
    for (TokenId id : utt.tokens) ref_syms.push_back(vocab.token(id));
    total += edit_distance(ref_syms, hyp_syms);
  }
  return error_rate(total);
}

// ------------------------------------------------------------ ablation run

struct AblationConfig {
  ToyCorpusConfig corpus;
  ModelConfig model;           // vocab_size filled from the toy vocab
  TrainConfig acoustic;
  TrainConfig linguistic;
  TrainConfig posttrain;
  DecodeConfig decode;
  std::vector<std::uint64_t> posttrain_seeds{101, 102, 103, 104, 105};
  std::vector<std::string> presets{"A0", "A1"};
};

// Small but real defaults: the whole run finishes in minutes on a CPU.
inline AblationConfig default_ablation_config() {
  AblationConfig cfg;
  cfg.model.enc_layers = 2;
  cfg.model.dec_layers = 2;
  cfg.model.d_model = 32;
  cfg.model.heads = 4;
  cfg.model.d_ff = 64;
  cfg.model.input_dim = cfg.corpus.synth.feature_dim;
  cfg.model.dropout = 0.0;

  cfg.acoustic.stage = TrainStage::kAcoustic;
  cfg.acoustic.max_steps = 300;
  cfg.acoustic.batch_size = 16;
  cfg.acoustic.warmup_steps = 100;
  cfg.acoustic.lr_scale = 1.0;
  cfg.acoustic.log_every = 20;
  cfg.acoustic.ckpt_every = 50;
  cfg.acoustic.avg_last_n = 5;
  cfg.acoustic.seed = 42;

  cfg.linguistic.stage = TrainStage::kLinguistic;
  cfg.linguistic.max_steps = 900;
  cfg.linguistic.batch_size = 16;
  cfg.linguistic.warmup_steps = 200;
  cfg.linguistic.lr_scale = 1.0;
  cfg.linguistic.log_every = 50;
  cfg.linguistic.ckpt_every = 100;
  cfg.linguistic.avg_last_n = 5;
  cfg.linguistic.seed = 42;

  cfg.posttrain.stage = TrainStage::kPosttrain;
  cfg.posttrain.max_steps = 200;
  cfg.posttrain.batch_size = 16;
  cfg.posttrain.warmup_steps = 80;
  cfg.posttrain.lr_scale = 1.0;
  cfg.posttrain.log_every = 20;
  cfg.posttrain.ckpt_every = 50;
  cfg.posttrain.avg_last_n = 3;

  cfg.decode.beam_size = 4;
  cfg.decode.alpha = 0.6;
  cfg.decode.max_len = 16;
  return cfg;
}

struct PresetOutcome {
  std::string preset;
  double val_loss = 0.0;
  double cer = 0.0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::vector<PresetOutcome> presets;
};

struct AblationResult {
  std::vector<SeedOutcome> seeds;

  // Seeds where `preset` is at least as good as the scratch baseline.
  int wins(const std::string& preset, bool by_cer) const {
    int count = 0;
    for (const auto& s : seeds) {
      const PresetOutcome* base = nullptr;
      const PresetOutcome* cand = nullptr;
      for (const auto& p : s.presets) {
        if (p.preset == "A0") base = &p;
        if (p.preset == preset) cand = &p;
      }
      if (!base || !cand) continue;
      const double b = by_cer ? base->cer : base->val_loss;
      const double c = by_cer ? cand->cer : cand->val_loss;
      if (c <= b) ++count;
    }
    return count;
  }
};

// Pre-trained artifacts shared by every post-training run.
template <typename Real>
struct PretrainArtifacts {
  NamedTensors<Real> m0;  // encoder-only, acoustic stage
  NamedTensors<Real> m1;  // averaged acoustic+linguistic model
  NamedTensors<Real> m2;  // averaged linguistic-only model (optional)
  bool has_m2 = false;
};

template <typename Real>
PretrainArtifacts<Real> run_pretraining(const AblationConfig& cfg,
                                        const ToyCorpora& corpora, bool need_m2,
                                        std::ostream* progress = nullptr) {
  PretrainArtifacts<Real> artifacts;
  ModelConfig mcfg = cfg.model;
  mcfg.vocab_size = static_cast<int>(corpora.vocab.size());

  if (progress) (*progress) << "[pretrain] acoustic stage (" << cfg.acoustic.max_steps
                            << " steps on " << corpora.acoustic.size() << " utterances)\n";
  StageRunner<Real> acoustic(cfg.acoustic, mcfg);
  acoustic.set_data(corpora.acoustic);
  auto aco = acoustic.run();
  artifacts.m0 = encoder_subset(aco.final_params);

  if (progress) (*progress) << "[pretrain] linguistic stage (" << cfg.linguistic.max_steps
                            << " steps on " << corpora.linguistic.size() << " pairs)\n";
  StageRunner<Real> linguistic(cfg.linguistic, mcfg);
  linguistic.set_data(corpora.linguistic);
  linguistic.set_init_params(artifacts.m0);
  auto lin = linguistic.run();
  artifacts.m1 = lin.averaged_params;

  if (need_m2) {
    if (progress) (*progress) << "[pretrain] linguistic-only stage (M2)\n";
    TrainConfig m2cfg = cfg.linguistic;
    m2cfg.seed = cfg.linguistic.seed + 1;
    StageRunner<Real> linguistic_only(m2cfg, mcfg);
    linguistic_only.set_data(corpora.linguistic);
    auto m2 = linguistic_only.run();
    artifacts.m2 = m2.averaged_params;
    artifacts.has_m2 = true;
  }
  return artifacts;
}

template <typename Real>
AblationResult run_ablation(const AblationConfig& cfg, std::ostream* progress = nullptr) {
  const ToyCorpora corpora = build_toy_corpora(cfg.corpus);
  const bool need_m2 =
      std::find(cfg.presets.begin(), cfg.presets.end(), "A3") != cfg.presets.end();
  const auto artifacts = run_pretraining<Real>(cfg, corpora, need_m2, progress);

  ModelConfig mcfg = cfg.model;
  mcfg.vocab_size = static_cast<int>(corpora.vocab.size());

  AblationResult result;
  for (std::uint64_t seed : cfg.posttrain_seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    for (const auto& preset : cfg.presets) {
      TrainConfig pcfg = cfg.posttrain;
      pcfg.seed = seed;
      StageRunner<Real> runner(pcfg, mcfg);
      runner.set_params(build_posttrain_init<Real>(
          preset, mcfg, seed, &artifacts.m0, &artifacts.m1,
          artifacts.has_m2 ? &artifacts.m2 : nullptr));
      runner.set_data(corpora.indomain_train);
      runner.set_validation_data(corpora.indomain_val);
      auto res = runner.run();
      Transformer<Real> model(mcfg, res.averaged_params);
      PresetOutcome p;
      p.preset = preset;
      p.val_loss = res.final_val_loss;
      p.cer = corpus_token_error_rate(model, corpora.indomain_test, corpora.vocab,
                                      cfg.decode);
      outcome.presets.push_back(p);
      if (progress)
        (*progress) << "[posttrain] seed " << seed << " preset " << preset
                    << ": val_loss " << p.val_loss << ", token error rate " << p.cer
                    << "%\n";
    }
    result.seeds.push_back(std::move(outcome));
  }
  return result;
}

inline std::string format_ablation_table(const AblationResult& result,
                                         const std::vector<std::string>& presets) {
  std::string out = "seed";
  for (const auto& p : presets) out += "\tval(" + p + ")\tcer(" + p + ")";
  out += "\n";
  for (const auto& s : result.seeds) {
    out += std::to_string(s.seed);
    for (const auto& p : presets) {
      const PresetOutcome* found = nullptr;
      for (const auto& q : s.presets)
        if (q.preset == p) found = &q;
      char buf[64];
      if (found) {
        std::snprintf(buf, sizeof(buf), "\t%.4f\t%.2f", found->val_loss, found->cer);
        out += buf;
      } else {
        out += "\t-\t-";
      }
    }
    out += "\n";
  }
  for (const auto& p : presets) {
    if (p == "A0") continue;
    out += p + " vs A0: val wins " + std::to_string(result.wins(p, false)) + "/" +
           std::to_string(result.seeds.size()) + ", cer wins " +
           std::to_string(result.wins(p, true)) + "/" +
           std::to_string(result.seeds.size()) + "\n";
  }
  return out;
}

}  // namespace mskseq

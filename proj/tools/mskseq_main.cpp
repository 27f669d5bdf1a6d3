// tools/mskseq_main.cpp
//
// Command-line driver for the staged pre-training pipeline:
//   featurize  waveforms/features -> normalized stacked feature files
//   synth      transcript manifest -> synthesized feature files + pairs
//   train      one stage (acoustic | linguistic | posttrain)
//   average    checkpoint averaging
//   decode     beam-search decoding of a manifest
//   score      CER/WER against reference transcripts
//   ablate     paired scratch-vs-pretrained experiment on the toy corpus
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//
// Licensed under the Apache License, Version 2.0

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mskseq/config.hpp"
#include "mskseq/decode.hpp"
#include "mskseq/errors.hpp"
#include "mskseq/frontend.hpp"
#include "mskseq/io.hpp"
#include "mskseq/manifest.hpp"
#include "mskseq/mask.hpp"
#include "mskseq/nnet.hpp"
#include "mskseq/parallel.hpp"
#include "mskseq/pipeline.hpp"
#include "mskseq/score.hpp"
#include "mskseq/synthvoice.hpp"
#include "mskseq/train.hpp"
#include "mskseq/vocab.hpp"

namespace fs = std::filesystem;
using namespace mskseq;

namespace {

// Missing/contradictory flags, distinct from bad data in files.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

struct GlobalOptions {
  std::uint64_t seed = 1;
  int workers = 1;
  std::string dtype = "float";
};

std::uint32_t checkpoint_dtype_bytes(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  ByteReader r(bytes, path);
  if (r.str(4) != "MSKC") throw DataError(path + ": not a checkpoint file");
  r.u32();  // version
  r.u64();  // fingerprint
  return r.u32();
}

std::string format_score(double score) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", score);
  return buf;
}

// ------------------------------------------------------------- featurize

struct FeaturizeOptions {
  std::string manifest_path;
  std::string out_dir;
  int n_mels = 80;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  int stack_left = 3;
  int downsample = 3;
  bool no_normalize = false;
};

int cmd_featurize(const FeaturizeOptions& opt, const GlobalOptions& global) {
  const Manifest manifest = read_manifest(opt.manifest_path);
  if (manifest.empty()) throw DataError("featurize: empty manifest");
  fs::create_directories(fs::path(opt.out_dir) / "feats");

  std::vector<FeatureMatrix> raw(manifest.size());
  std::vector<std::string> errors(manifest.size());
  parallel_for(manifest.size(), global.workers, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    try {
      if (rec.source_kind == SourceKind::kAudio) {
        raw[i] = extract_logmel(read_wav_file(rec.source_path), opt.n_mels,
                                opt.win_ms, opt.hop_ms);
      } else {
        raw[i] = read_feature_file(rec.source_path);
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::size_t failed = 0;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (!errors[i].empty()) {
      ++failed;
      std::cerr << "featurize: utterance '" << manifest.records[i].id
                << "' failed: " << errors[i] << "\n";
    }

  std::vector<SpeakerStats> stats;
  std::map<std::string, std::size_t> stats_by_speaker;
  if (!opt.no_normalize) {
    std::vector<std::pair<std::string, const FeatureMatrix*>> feats;
    for (std::size_t i = 0; i < manifest.size(); ++i)
      if (errors[i].empty())
        feats.emplace_back(manifest.records[i].speaker_id, &raw[i]);
    std::vector<std::string> warnings;
    stats = accumulate_speaker_stats(feats, &warnings);
    for (const auto& w : warnings) std::cerr << "featurize: " << w << "\n";
    for (std::size_t s = 0; s < stats.size(); ++s)
      stats_by_speaker[stats[s].speaker_id] = s;
  }

  Manifest out_manifest;
  std::vector<UtteranceRecord> out_records(manifest.size());
  parallel_for(manifest.size(), global.workers, [&](std::size_t i) {
    if (!errors[i].empty()) return;
    const auto& rec = manifest.records[i];
    FeatureMatrix f = raw[i];
    if (!opt.no_normalize) {
      auto it = stats_by_speaker.find(rec.speaker_id);
      if (it == stats_by_speaker.end())
        throw DataError("featurize: no stats for speaker '" + rec.speaker_id + "'");
      f = normalize(f, stats[it->second]);
    }
    if (opt.stack_left != 0 || opt.downsample != 1)
      f = stack_and_downsample(f, opt.stack_left, opt.downsample);
    const std::string path =
        (fs::path(opt.out_dir) / "feats" / (rec.id + ".mskf")).string();
    write_feature_file(path, f);
    UtteranceRecord out = rec;
    out.source_path = path;
    out.source_kind = SourceKind::kFeat;
    out_records[i] = out;
  });
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (errors[i].empty()) out_manifest.records.push_back(out_records[i]);
  write_manifest((fs::path(opt.out_dir) / "feats.tsv").string(), out_manifest);

  std::cout << "featurize: wrote " << out_manifest.size() << " feature files to "
            << opt.out_dir << (failed ? " (" + std::to_string(failed) + " failed)" : "")
            << "\n";
  if (failed) throw DataError("featurize: " + std::to_string(failed) + " utterances failed");
  return 0;
}

// ----------------------------------------------------------------- synth

struct SynthOptions {
  std::string manifest_path;
  std::string vocab_path;
  std::string out_dir;
  int frames_per_token = 4;
  int feature_dim = 8;
  double noise_std = 0.0;
};

int cmd_synth(const SynthOptions& opt, const GlobalOptions& global) {
  const Manifest manifest = read_manifest(opt.manifest_path);
  if (manifest.empty()) throw DataError("synth: empty manifest");
  const Vocab vocab = read_vocab(opt.vocab_path);
  SynthConfig cfg;
  cfg.frames_per_token = opt.frames_per_token;
  cfg.feature_dim = opt.feature_dim;
  cfg.noise_std = opt.noise_std;
  cfg.seed = global.seed;
  const auto templates = build_templates(vocab, cfg);
  fs::create_directories(fs::path(opt.out_dir) / "feats");

  std::vector<UtteranceRecord> out_records(manifest.size());
  parallel_for(manifest.size(), global.workers, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    if (rec.transcript.empty())
      throw DataError("synth: utterance '" + rec.id + "' has no transcript");
    const std::vector<TokenId> tokens = vocab.encode(rec.transcript);
    const FeatureMatrix f =
        synthesize(tokens, templates, cfg, split_seed(global.seed, rec.id));
    const std::string path =
        (fs::path(opt.out_dir) / "feats" / (rec.id + ".mskf")).string();
    write_feature_file(path, f);
    UtteranceRecord out = rec;
    out.source_path = path;
    out.source_kind = SourceKind::kFeat;
    out_records[i] = out;
  });
  Manifest out_manifest;
  out_manifest.records = std::move(out_records);
  write_manifest((fs::path(opt.out_dir) / "pairs.tsv").string(), out_manifest);
  std::cout << "synth: wrote " << manifest.size() << " feature files to " << opt.out_dir
            << "\n";
  return 0;
}

// ----------------------------------------------------------------- train

struct TrainOptions {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir;
  std::string vocab_path;
  std::string preset;  // posttrain presets A0..A3
  std::string m0_path, m1_path, m2_path;
  std::string init_path;  // raw checkpoint init (linguistic encoder etc.)
  std::string dump_masks;
  std::vector<std::string> overrides;  // key=value
  bool seed_overridden = false;
};

KeyValueConfig load_kv_with_overrides(const std::string& path,
                                      const std::vector<std::string>& overrides) {
  KeyValueConfig kv = path.empty() ? KeyValueConfig() : KeyValueConfig::from_file(path);
  for (const auto& kvp : overrides) {
    const auto eq = kvp.find('=');
    if (eq == std::string::npos)
      throw UsageError("--set expects key=value, got '" + kvp + "'");
    kv.set(kvp.substr(0, eq), kvp.substr(eq + 1));
  }
  return kv;
}

template <typename Real>
int cmd_train_typed(const TrainOptions& opt, const GlobalOptions& global) {
  KeyValueConfig kv = load_kv_with_overrides(opt.config_path, opt.overrides);
  TrainConfig tcfg = train_config_from_kv(kv);
  if (opt.seed_overridden) tcfg.seed = global.seed;

  std::optional<Vocab> vocab;
  if (!opt.vocab_path.empty()) vocab = read_vocab(opt.vocab_path);

  ModelConfig base;
  base.vocab_size = vocab ? static_cast<int>(vocab->size()) : kNumSpecialTokens;
  ModelConfig mcfg = model_config_from_kv(kv, base);

  const Manifest manifest = read_manifest(opt.manifest_path);
  auto data = load_train_data(manifest, vocab ? &*vocab : nullptr,
                              /*keep_transcripts=*/tcfg.stage != TrainStage::kAcoustic);
  if (!data.empty()) {
    const int dim = static_cast<int>(data.front().features.cols());
    if (!kv.has("input_dim")) mcfg.input_dim = dim;
  }

  if (tcfg.stage != TrainStage::kAcoustic && !vocab)
    throw UsageError("train: supervised stages need --vocab");

  StageRunner<Real> runner(tcfg, mcfg);

  auto load_artifact = [&](const std::string& path) {
    return read_checkpoint<Real>(path).params;
  };

  if (tcfg.stage == TrainStage::kPosttrain && !opt.preset.empty()) {
    NamedTensors<Real> m0, m1, m2;
    bool has_m0 = false, has_m1 = false, has_m2 = false;
    if (opt.preset == "A1" && opt.m1_path.empty())
      throw UsageError("preset A1 requires --m1 <artifact>");
    if (opt.preset == "A2" && opt.m0_path.empty())
      throw UsageError("preset A2 requires --m0 <artifact>");
    if (opt.preset == "A3" && opt.m2_path.empty())
      throw UsageError("preset A3 requires --m2 <artifact>");
    if (!opt.m0_path.empty()) { m0 = load_artifact(opt.m0_path); has_m0 = true; }
    if (!opt.m1_path.empty()) { m1 = load_artifact(opt.m1_path); has_m1 = true; }
    if (!opt.m2_path.empty()) { m2 = load_artifact(opt.m2_path); has_m2 = true; }
    runner.set_params(build_posttrain_init<Real>(opt.preset, mcfg, tcfg.seed,
                                                 has_m0 ? &m0 : nullptr,
                                                 has_m1 ? &m1 : nullptr,
                                                 has_m2 ? &m2 : nullptr));
  } else if (!opt.init_path.empty()) {
    runner.set_init_params(load_artifact(opt.init_path));
  } else if (tcfg.stage == TrainStage::kLinguistic && !opt.m0_path.empty()) {
    runner.set_init_params(load_artifact(opt.m0_path));
  }

  runner.set_data(std::move(data));
  if (!tcfg.val_manifest.empty()) {
    const Manifest val = read_manifest(tcfg.val_manifest);
    runner.set_validation_data(load_train_data(val, vocab ? &*vocab : nullptr));
  }
  if (!opt.out_dir.empty()) runner.set_output_dir(opt.out_dir);
  if (!opt.dump_masks.empty()) runner.set_mask_dump_path(opt.dump_masks);

  auto result = runner.run();

  if (!opt.out_dir.empty()) {
    fs::create_directories(fs::path(opt.out_dir) / "artifacts");
    auto write_artifact = [&](const std::string& name, NamedTensors<Real> params) {
      Checkpoint<Real> ckpt;
      ckpt.fingerprint = params_fingerprint(params);
      ckpt.params = std::move(params);
      ckpt.step = static_cast<std::uint64_t>(tcfg.max_steps);
      ckpt.stage = to_string(tcfg.stage);
      write_checkpoint((fs::path(opt.out_dir) / "artifacts" / name).string(), ckpt);
    };
    switch (tcfg.stage) {
      case TrainStage::kAcoustic:
        write_artifact("M0.mskc", encoder_subset(result.final_params));
        break;
      case TrainStage::kLinguistic:
        // Averaged full model; M1 when the encoder started from M0,
        // M2 when it started from scratch.
        write_artifact((opt.m0_path.empty() && opt.init_path.empty()) ? "M2.mskc"
                                                                      : "M1.mskc",
                       result.averaged_params);
        break;
      case TrainStage::kPosttrain:
        write_artifact("posttrain_final.mskc", result.final_params);
        write_artifact("posttrain_averaged.mskc", result.averaged_params);
        break;
    }
  }

  std::cout << "train: stage " << to_string(tcfg.stage) << " finished at step "
            << tcfg.max_steps << ", final loss "
            << (result.loss_log.empty() ? 0.0 : result.loss_log.back().loss);
  if (!std::isnan(result.final_val_loss))
    std::cout << ", validation loss " << result.final_val_loss;
  std::cout << "\n";
  return 0;
}

// --------------------------------------------------------------- average

struct AverageOptions {
  std::string ckpt_dir;
  int last_n = 20;
  std::string out_path;
};

template <typename Real>
int cmd_average_typed(const AverageOptions& opt) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(opt.ckpt_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("checkpoint_", 0) == 0 && name.size() > 5 &&
        name.substr(name.size() - 5) == ".mskc")
      files.push_back(entry.path().string());
  }
  if (files.empty()) throw DataError("average: no checkpoints in " + opt.ckpt_dir);
  std::sort(files.begin(), files.end());
  if (files.size() > static_cast<std::size_t>(opt.last_n))
    files.erase(files.begin(), files.end() - opt.last_n);
  std::vector<Checkpoint<Real>> ckpts;
  ckpts.reserve(files.size());
  for (const auto& f : files) ckpts.push_back(read_checkpoint<Real>(f));
  Checkpoint<Real> out;
  out.params = average_checkpoints(ckpts);
  out.fingerprint = ckpts.back().fingerprint;
  out.step = ckpts.back().step;
  out.stage = ckpts.back().stage;
  write_checkpoint(opt.out_path, out);
  std::cout << "average: " << files.size() << " checkpoints -> " << opt.out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------- decode

struct DecodeOptions {
  std::string manifest_path;
  std::string ckpt_path;
  std::string vocab_path;
  std::string config_path;
  std::string out_path;
  int beam = 13;
  double alpha = 0.6;
  int max_len = 200;
  bool greedy = false;
  std::string separator = " ";
  std::vector<std::string> overrides;
};

template <typename Real>
int cmd_decode_typed(const DecodeOptions& opt, const GlobalOptions& global) {
  const Manifest manifest = read_manifest(opt.manifest_path);
  const Vocab vocab = read_vocab(opt.vocab_path);
  KeyValueConfig kv = load_kv_with_overrides(opt.config_path, opt.overrides);
  ModelConfig base;
  base.vocab_size = static_cast<int>(vocab.size());
  ModelConfig mcfg = model_config_from_kv(kv, base);

  const auto ckpt = read_checkpoint<Real>(opt.ckpt_path);
  if (!kv.has("input_dim")) {
    auto it = ckpt.params.find("enc.input_proj.W");
    if (it != ckpt.params.end()) mcfg.input_dim = static_cast<int>(it->second.rows());
  }
  Transformer<Real> model(mcfg, ckpt.params);

  DecodeConfig dcfg{opt.beam, opt.alpha, opt.max_len};
  struct Line { std::string id, text; double score; bool forced; };
  std::vector<Line> lines(manifest.size());
  parallel_for(manifest.size(), global.workers, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    if (rec.source_kind != SourceKind::kFeat)
      throw DataError("decode: utterance '" + rec.id + "' is not a feature source");
    const Matrix<Real> x = read_feature_file(rec.source_path).frames.template cast<Real>();
    const Matrix<Real> h = model.encode(x, nullptr, rec.id);
    const auto scorer = model_scorer(model, h);
    BeamHypothesis best;
    if (opt.greedy) {
      best = greedy_decode_scored(scorer, mcfg.vocab_size, dcfg.max_len, dcfg.alpha);
    } else {
      best = beam_search(scorer, mcfg.vocab_size, dcfg).front();
    }
    lines[i] = {rec.id, vocab.decode(best.content(), opt.separator), best.score,
                best.forced};
  });
  std::sort(lines.begin(), lines.end(),
            [](const Line& a, const Line& b) { return a.id < b.id; });
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!opt.out_path.empty()) {
    file.open(opt.out_path, std::ios::trunc);
    if (!file) throw DataError("decode: cannot open " + opt.out_path);
    out = &file;
  }
  for (const auto& line : lines) {
    (*out) << line.id << '\t' << line.text << '\t' << format_score(line.score);
    if (line.forced) (*out) << "\t[forced]";
    (*out) << '\n';
  }
  return 0;
}

// ----------------------------------------------------------------- score

struct ScoreOptions {
  std::string ref_path;
  std::string hyp_path;
  std::string mode = "word";
  std::string vocab_path;
};

std::map<std::string, std::string> read_keyed_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transcript file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected id<TAB>text");
    const std::string id = line.substr(0, tab);
    std::string text = line.substr(tab + 1);
    const auto tab2 = text.find('\t');  // drop trailing columns (decode scores)
    if (tab2 != std::string::npos) text.erase(tab2);
    if (!out.emplace(id, text).second)
      throw DataError(path + ": duplicate utterance id '" + id + "'");
  }
  return out;
}

int cmd_score(const ScoreOptions& opt, const GlobalOptions& global) {
  const MetricMode mode = parse_metric_mode(opt.mode);
  std::optional<Vocab> vocab;
  if (mode == MetricMode::kPiece) {
    if (opt.vocab_path.empty()) throw UsageError("score: piece mode needs --vocab");
    vocab = read_vocab(opt.vocab_path);
  }
  const auto refs = read_keyed_text(opt.ref_path);
  const auto hyps = read_keyed_text(opt.hyp_path);
  for (const auto& [id, text] : refs)
    if (!hyps.count(id)) throw DataError("score: missing hypothesis for '" + id + "'");

  std::vector<std::pair<std::string, std::string>> ref_list(refs.begin(), refs.end());
  std::vector<ErrorCounts> counts(ref_list.size());
  parallel_for(ref_list.size(), global.workers, [&](std::size_t i) {
    const auto& [id, ref_text] = ref_list[i];
    const auto ref_syms = tokenize_for_metric(ref_text, mode, vocab ? &*vocab : nullptr);
    const auto hyp_syms =
        tokenize_for_metric(hyps.at(id), mode, vocab ? &*vocab : nullptr);
    counts[i] = edit_distance(ref_syms, hyp_syms);
  });

  ErrorCounts total;
  char buf[160];
  for (std::size_t i = 0; i < ref_list.size(); ++i) {
    total += counts[i];
    const double rate = counts[i].reference_length == 0
                            ? 0.0
                            : error_rate(counts[i]);
    std::snprintf(buf, sizeof(buf), "%s\tS=%zu\tI=%zu\tD=%zu\trate=%.2f%%",
                  ref_list[i].first.c_str(), counts[i].substitutions,
                  counts[i].insertions, counts[i].deletions, rate);
    std::cout << buf << "\n";
  }
  std::snprintf(buf, sizeof(buf), "TOTAL\tS=%zu\tI=%zu\tD=%zu\trate=%.2f%%",
                total.substitutions, total.insertions, total.deletions,
                error_rate(total));
  std::cout << buf << "\n";
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateOptions {
  std::string out_dir;
  std::string presets = "A0,A1";
  std::string seeds = "101,102,103,104,105";
  std::int64_t acoustic_steps = 0;
  std::int64_t linguistic_steps = 0;
  std::int64_t posttrain_steps = 0;
  bool quiet = false;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

template <typename Real>
int cmd_ablate_typed(const AblateOptions& opt, const GlobalOptions& global) {
  AblationConfig cfg = default_ablation_config();
  cfg.presets = split_csv(opt.presets);
  cfg.posttrain_seeds.clear();
  for (const auto& s : split_csv(opt.seeds))
    cfg.posttrain_seeds.push_back(std::stoull(s));
  if (cfg.presets.empty() || cfg.posttrain_seeds.empty())
    throw UsageError("ablate: need at least one preset and one seed");
  if (opt.acoustic_steps > 0) cfg.acoustic.max_steps = opt.acoustic_steps;
  if (opt.linguistic_steps > 0) cfg.linguistic.max_steps = opt.linguistic_steps;
  if (opt.posttrain_steps > 0) cfg.posttrain.max_steps = opt.posttrain_steps;
  cfg.acoustic.seed = global.seed + 41;
  cfg.linguistic.seed = global.seed + 41;
  cfg.corpus.language.seed = global.seed + 6;
  cfg.corpus.corpus_seed = global.seed + 10;
  cfg.corpus.synth.seed = global.seed + 10;

  const AblationResult result =
      run_ablation<Real>(cfg, opt.quiet ? nullptr : &std::cerr);
  const std::string table = format_ablation_table(result, cfg.presets);
  std::cout << table;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    std::ofstream out((fs::path(opt.out_dir) / "summary.tsv").string(), std::ios::trunc);
    out << table;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Staged pre-training pipeline for encoder-decoder speech models"};
  app.require_subcommand(1);

  GlobalOptions global;
  app.add_option("--seed", global.seed, "Global seed; all randomness derives from it");
  app.add_option("--workers", global.workers, "Parallel workers for per-utterance work");
  app.add_option("--dtype", global.dtype, "float or double")
      ->check(CLI::IsMember({"float", "double"}));

  FeaturizeOptions feat;
  auto* featurize = app.add_subcommand("featurize", "Extract normalized stacked features");
  featurize->add_option("--manifest", feat.manifest_path)->required();
  featurize->add_option("--out-dir", feat.out_dir)->required();
  featurize->add_option("--n-mels", feat.n_mels);
  featurize->add_option("--win-ms", feat.win_ms);
  featurize->add_option("--hop-ms", feat.hop_ms);
  featurize->add_option("--left", feat.stack_left, "Left context frames to stack");
  featurize->add_option("--factor", feat.downsample, "Downsampling factor");
  featurize->add_flag("--no-normalize", feat.no_normalize);

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Synthesize features for transcripts");
  synth_cmd->add_option("--manifest", synth.manifest_path)->required();
  synth_cmd->add_option("--vocab", synth.vocab_path)->required();
  synth_cmd->add_option("--out-dir", synth.out_dir)->required();
  synth_cmd->add_option("--frames-per-token", synth.frames_per_token);
  synth_cmd->add_option("--feature-dim", synth.feature_dim);
  synth_cmd->add_option("--noise-std", synth.noise_std);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("--config", train.config_path, "key=value stage config");
  train_cmd->add_option("--manifest", train.manifest_path)->required();
  train_cmd->add_option("--out", train.out_dir, "Run directory for checkpoints/logs");
  train_cmd->add_option("--vocab", train.vocab_path);
  train_cmd->add_option("--preset", train.preset, "Posttrain init preset A0|A1|A2|A3")
      ->check(CLI::IsMember({"A0", "A1", "A2", "A3"}));
  train_cmd->add_option("--m0", train.m0_path, "M0 artifact (encoder-only checkpoint)");
  train_cmd->add_option("--m1", train.m1_path, "M1 artifact");
  train_cmd->add_option("--m2", train.m2_path, "M2 artifact");
  train_cmd->add_option("--init", train.init_path, "Raw checkpoint init");
  train_cmd->add_option("--dump-masks", train.dump_masks,
                        "Debug: write sampled mask plans to this path");
  train_cmd->add_option("--set", train.overrides, "Override config keys (key=value)")
      ->take_all();

  AverageOptions avg;
  auto* avg_cmd = app.add_subcommand("average", "Average the last N checkpoints");
  avg_cmd->add_option("--ckpt-dir", avg.ckpt_dir)->required();
  avg_cmd->add_option("--n", avg.last_n);
  avg_cmd->add_option("--out", avg.out_path)->required();

  DecodeOptions dec;
  auto* dec_cmd = app.add_subcommand("decode", "Beam-search decode a manifest");
  dec_cmd->add_option("--manifest", dec.manifest_path)->required();
  dec_cmd->add_option("--ckpt", dec.ckpt_path)->required();
  dec_cmd->add_option("--vocab", dec.vocab_path)->required();
  dec_cmd->add_option("--config", dec.config_path, "Model config (key=value)");
  dec_cmd->add_option("--out", dec.out_path, "Output file (default stdout)");
  dec_cmd->add_option("--beam", dec.beam);
  dec_cmd->add_option("--alpha", dec.alpha, "Length penalty exponent");
  dec_cmd->add_option("--max-len", dec.max_len);
  dec_cmd->add_flag("--greedy", dec.greedy, "Greedy decoding (equals --beam 1)");
  dec_cmd->add_option("--separator", dec.separator, "Token join separator");
  dec_cmd->add_option("--set", dec.overrides)->take_all();

  ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "Compute CER/WER");
  score_cmd->add_option("--ref", score.ref_path)->required();
  score_cmd->add_option("--hyp", score.hyp_path)->required();
  score_cmd->add_option("--mode", score.mode)->check(CLI::IsMember({"char", "word", "piece"}));
  score_cmd->add_option("--vocab", score.vocab_path, "Vocab for piece mode");

  AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Scratch-vs-pretrained paired experiment");
  ablate_cmd->add_option("--out", ablate.out_dir, "Directory for summary.tsv");
  ablate_cmd->add_option("--presets", ablate.presets, "Comma list from A0,A1,A2,A3");
  ablate_cmd->add_option("--seeds", ablate.seeds, "Comma list of posttrain seeds");
  ablate_cmd->add_option("--acoustic-steps", ablate.acoustic_steps);
  ablate_cmd->add_option("--linguistic-steps", ablate.linguistic_steps);
  ablate_cmd->add_option("--posttrain-steps", ablate.posttrain_steps);
  ablate_cmd->add_flag("--quiet", ablate.quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  train.seed_overridden = app.count("--seed") > 0;
  const bool use_double = global.dtype == "double";

  try {
    if (featurize->parsed()) return cmd_featurize(feat, global);
    if (synth_cmd->parsed()) return cmd_synth(synth, global);
    if (train_cmd->parsed())
      return use_double ? cmd_train_typed<double>(train, global)
                        : cmd_train_typed<float>(train, global);
    if (avg_cmd->parsed()) {
      const auto dtype = checkpoint_dtype_bytes(
          [&] {
            for (const auto& entry : fs::directory_iterator(avg.ckpt_dir))
              if (entry.path().extension() == ".mskc") return entry.path().string();
            throw DataError("average: no checkpoints in " + avg.ckpt_dir);
          }());
      return dtype == 8 ? cmd_average_typed<double>(avg) : cmd_average_typed<float>(avg);
    }
    if (dec_cmd->parsed()) {
      const auto dtype = checkpoint_dtype_bytes(dec.ckpt_path);
      return dtype == 8 ? cmd_decode_typed<double>(dec, global)
                        : cmd_decode_typed<float>(dec, global);
    }
    if (score_cmd->parsed()) return cmd_score(score, global);
    if (ablate_cmd->parsed())
      return use_double ? cmd_ablate_typed<double>(ablate, global)
                        : cmd_ablate_typed<float>(ablate, global);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

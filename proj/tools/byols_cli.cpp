// byols: command line front end. Every failure prints one JSON object on stderr,
// {"error": <name>, "code": <exit code>, "message": ...}, and exits with that code.
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "byols/binary_io.hpp"
#include "byols/checkpoint.hpp"
#include "byols/cka.hpp"
#include "byols/error.hpp"
#include "byols/experiment.hpp"
#include "byols/features.hpp"
#include "heatmap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace byols;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  io::write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

int report_error(ErrorCode code, const std::string& message) {
  const json j = {{"error", error_code_name(code)}, {"code", static_cast<int>(code)}, {"message", message}};
  std::cerr << j.dump() << std::endl;
  return static_cast<int>(code);
}

struct SynthArgs {
  data::SyntheticTaskSpec spec;
  std::string task = "tone_pitch_class";
  std::string out;
};

void cmd_synth(SynthArgs& a) {
  a.spec.task = data::parse_task(a.task);
  const auto m = data::generate_synthetic_corpus(a.spec, a.out);
  std::cout << (fs::path(a.out) / "manifest.csv").string() << " (" << m.records.size() << " clips)\n";
}

struct TrainArgs {
  std::string config, corpus, out, resume, log;
};

void cmd_train(const TrainArgs& a) {
  exp::ExperimentConfig cfg = exp::load_config(a.config);
  data::CorpusManifest m;
  if (!a.corpus.empty()) {
    m = data::load_manifest(a.corpus);
  } else if (cfg.pretrain_manifest) {
    m = data::load_manifest(*cfg.pretrain_manifest);
  } else {
    m = data::generate_synthetic_corpus(*cfg.synthetic, exp::synthetic_corpus_dir(cfg));
  }
  const auto clips = exp::load_clips(m);
  std::vector<audio::LogMelSpectrogram> lms;
  for (const auto& c : clips) lms.push_back(audio::log_mel(c));

  std::unique_ptr<train::TrainerState> state;
  audio::NormalizationStats stats;
  if (!a.resume.empty()) {
    const auto c = ckpt::load(a.resume);
    state = ckpt::to_trainer(c);
    stats = ckpt::to_encoder(c).stats;
  } else {
    stats = audio::compute_stats(lms);
  }
  Eigen::MatrixXd feats;
  if (cfg.trainer.hybrid) feats = exp::standardized_features(clips);
  if (!state) {
    const auto heads = train::HeadConfig::for_width(
        cfg.encoder.width_multiplier,
        cfg.trainer.hybrid ? std::optional<nn::Index>(feats.cols()) : std::nullopt);
    state = std::make_unique<train::TrainerState>(cfg.encoder, heads, cfg.trainer);
  }
  const int remaining = std::max(0, cfg.trainer.epochs - state->epoch);
  const fs::path log = a.log.empty() ? fs::path(a.out).replace_extension(".log.jsonl") : fs::path(a.log);
  const json summary = exp::train_with_log(*state, lms, cfg.trainer.hybrid ? &feats : nullptr, stats,
                                           cfg.augmentation, remaining, log);
  const json meta = {{"config_hash", exp::config_hash(cfg)}, {"seed", cfg.seed}, {"name", cfg.name}};
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  ckpt::save(ckpt::from_trainer(*state, stats, meta), a.out);
  std::cout << summary.dump() << "\n";
}

struct ExtractArgs {
  std::string ckpt, manifest, mode = "scene", out;
  double window_s = 1.0, hop_s = 0.05;
  bool jsonl = false;
};

void cmd_extract(const ExtractArgs& a) {
  const auto loaded = ckpt::load_encoder(a.ckpt);
  const auto m = data::load_manifest(a.manifest);
  embed::EmbeddingFile f;
  f.mode = embed::parse_mode(a.mode);
  f.dim = static_cast<std::uint32_t>(loaded.encoder->embedding_dim());
  for (const auto& r : m.records) {
    const auto clip = data::load_clip(r);
    if (f.mode == embed::Mode::kScene) {
      f.records.push_back(embed::scene_embedding(*loaded.encoder, clip, loaded.stats));
    } else {
      auto set = embed::timestamp_embeddings(*loaded.encoder, clip, loaded.stats, a.window_s, a.hop_s);
      for (auto& e : set.embeddings) f.records.push_back(std::move(e));
    }
  }
  if (a.jsonl) {
    write_text(a.out, embed::to_jsonl(f));
  } else {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    io::write_file_atomic(a.out, embed::encode_emb(f));
  }
  std::cout << f.records.size() << " embeddings of dim " << f.dim << "\n";
}

struct FeaturesArgs {
  std::string manifest, out, hcf_dir;
};

void cmd_features(const FeaturesArgs& a) {
  const auto m = data::load_manifest(a.manifest);
  std::vector<features::HandcraftedFeatureVector> rows;
  std::vector<std::string> ids;
  for (const auto& r : m.records) {
    rows.push_back(features::extract(data::load_clip(r)));
    ids.push_back(r.id);
    if (!a.hcf_dir.empty()) {
      fs::create_directories(a.hcf_dir);
      io::write_file_atomic(fs::path(a.hcf_dir) / (r.id + ".hcf"), features::encode_hcf(rows.back()));
    }
  }
  write_text(a.out, features::to_csv(rows, ids));
}

struct ProbeArgs {
  std::string embeddings, manifest, config, report;
  std::uint64_t seed = 0;
};

void cmd_probe(const ProbeArgs& a) {
  const auto emb = embed::decode_emb(io::read_file(a.embeddings));
  const auto m = data::load_manifest(a.manifest);
  exp::EvaluationConfig e;
  std::uint64_t seed = a.seed;
  if (!a.config.empty()) {
    const auto cfg = exp::load_config(a.config);
    e = cfg.evaluation;
    seed = cfg.seed;
  }
  e.task = emb.mode;
  e.probe.seed = seed;
  json report = exp::evaluate_embeddings(emb, m, e, seed);
  report["task"] = embed::mode_name(emb.mode);
  report["seed"] = seed;
  report["embedding_dim"] = emb.dim;
  const std::string text = report.dump(2) + "\n";
  if (a.report.empty()) {
    std::cout << text;
  } else {
    write_text(a.report, text);
  }
}

struct CkaArgs {
  std::string ckpt_a, ckpt_b, manifest, out, png;
};

void cmd_cka(const CkaArgs& a) {
  const auto ea = ckpt::load_encoder(a.ckpt_a);
  const auto eb = ckpt::load_encoder(a.ckpt_b);
  const auto m = data::load_manifest(a.manifest);
  // Both models see the same input: spectrograms standardized with model A's statistics.
  std::vector<audio::LogMelSpectrogram> probe;
  for (const auto& r : m.records) probe.push_back(audio::standardize(audio::log_mel(data::load_clip(r)), ea.stats));
  const auto sim = cka::model_similarity(*ea.encoder, *eb.encoder, probe);
  std::ostringstream csv;
  csv << "layer";
  for (const auto& l : sim.layers_b) csv << "," << l;
  csv << "\n";
  csv.precision(17);
  for (Eigen::Index i = 0; i < sim.values.rows(); ++i) {
    csv << sim.layers_a[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < sim.values.cols(); ++j) csv << "," << sim.values(i, j);
    csv << "\n";
  }
  write_text(a.out, csv.str());
  if (!a.png.empty()) tools::write_heatmap_png(sim.values, a.png);
}

struct RunArgs {
  std::string config, output_dir;
};

void cmd_run(const RunArgs& a) {
  auto cfg = exp::load_config(a.config);
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  for (const auto& art : exp::run_experiment(cfg)) {
    std::cout << art.report.string() << " " << art.report_json["metrics"].dump() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"byols: self-supervised audio representations with handcrafted-feature regression"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic labelled corpus");
  s->add_option("--task", synth.task, "tone_pitch_class | chord_chroma | noise_vs_tone | event_onsets");
  s->add_option("--n-clips", synth.spec.n_clips);
  s->add_option("--clip-s", synth.spec.clip_s);
  s->add_option("--n-classes", synth.spec.n_classes);
  s->add_option("--snr-db", synth.spec.snr_db);
  s->add_option("--seed", synth.spec.seed);
  s->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Pre-train an encoder and write a checkpoint");
  t->add_option("--config", tr.config)->required()->check(CLI::ExistingFile);
  t->add_option("--corpus", tr.corpus, "Manifest overriding the config's pre-training corpus");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--resume", tr.resume, "Continue from a trainer checkpoint");
  t->add_option("--log", tr.log, "Per-step JSONL log (default: <out>.log.jsonl)");

  ExtractArgs ex;
  auto* e = app.add_subcommand("extract", "Embed every clip of a manifest");
  e->add_option("--ckpt", ex.ckpt)->required()->check(CLI::ExistingFile);
  e->add_option("--manifest", ex.manifest)->required()->check(CLI::ExistingFile);
  e->add_option("--mode", ex.mode, "scene | timestamp");
  e->add_option("--window-s", ex.window_s);
  e->add_option("--hop-s", ex.hop_s);
  e->add_flag("--jsonl", ex.jsonl, "Write JSON lines instead of EMB1");
  e->add_option("--out", ex.out)->required();

  FeaturesArgs fe;
  auto* f = app.add_subcommand("features", "Handcrafted features for every clip of a manifest");
  f->add_option("--manifest", fe.manifest)->required()->check(CLI::ExistingFile);
  f->add_option("--out", fe.out, "CSV path")->required();
  f->add_option("--hcf-dir", fe.hcf_dir, "Also write one HCF1 blob per clip");

  ProbeArgs pr;
  auto* p = app.add_subcommand("probe", "Train a probe on stored embeddings and report metrics");
  p->add_option("--embeddings", pr.embeddings)->required()->check(CLI::ExistingFile);
  p->add_option("--manifest", pr.manifest, "Labels and events")->required()->check(CLI::ExistingFile);
  p->add_option("--config", pr.config, "Experiment config providing evaluation settings");
  p->add_option("--seed", pr.seed);
  p->add_option("--report", pr.report, "Report JSON path (default: stdout)");

  CkaArgs ck;
  auto* c = app.add_subcommand("cka", "Layer-by-layer linear CKA between two checkpoints");
  c->add_option("--ckpt-a", ck.ckpt_a)->required()->check(CLI::ExistingFile);
  c->add_option("--ckpt-b", ck.ckpt_b)->required()->check(CLI::ExistingFile);
  c->add_option("--manifest", ck.manifest, "Probe clips")->required()->check(CLI::ExistingFile);
  c->add_option("--out", ck.out, "CSV path")->required();
  c->add_option("--png", ck.png, "Heatmap path");

  RunArgs ru;
  auto* r = app.add_subcommand("run", "Full experiment: train, extract, probe, report");
  r->add_option("--config", ru.config)->required()->check(CLI::ExistingFile);
  r->add_option("--output-dir", ru.output_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    return report_error(ErrorCode::kInvalidArgument, err.what());
  }

  try {
    if (*s) cmd_synth(synth);
    if (*t) cmd_train(tr);
    if (*e) cmd_extract(ex);
    if (*f) cmd_features(fe);
    if (*p) cmd_probe(pr);
    if (*c) cmd_cka(ck);
    if (*r) cmd_run(ru);
  } catch (const Error& err) {
    return report_error(err.code(), err.what());
  } catch (const std::exception& err) {
    return report_error(ErrorCode::kIo, err.what());
  }
  return 0;
}

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "byols/augment.hpp"
#include "byols/embedding.hpp"
#include "byols/encoders.hpp"
#include "byols/evaluation.hpp"
#include "byols/manifest.hpp"
#include "byols/synth.hpp"
#include "byols/trainer.hpp"

namespace byols::exp {

namespace fs = std::filesystem;
using nn::Index;

struct EvaluationConfig {
  embed::Mode task = embed::Mode::kScene;
  double window_s = 1.0;  // timestamp windows
  double hop_s = 0.05;
  eval::ProbeConfig probe;
  double threshold = 0.5;
  double min_duration_hops = 2.0;
  double tolerance_s = 0.05;
  double segment_s = 1.0;
  double train_fraction = 0.6;
  double val_fraction = 0.2;  // the rest is test
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  fs::path output_dir = "runs";
  std::optional<fs::path> pretrain_manifest;
  std::optional<fs::path> eval_manifest;
  std::optional<data::SyntheticTaskSpec> synthetic;
  double pretrain_window_s = 0.95;
  augment::AugmentationConfig augmentation;
  encoders::EncoderConfig encoder;
  train::TrainConfig trainer;
  EvaluationConfig evaluation;
  // Sweeps: each entry becomes its own run.
  std::vector<std::pair<double, double>> ratio_sweep;  // alpha:beta
  std::vector<double> window_sweep;                    // pre-training windows in seconds

  void validate() const;
};

/// Strict parse: unknown keys, wrong types and invalid values are kConfig errors.
/// Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const fs::path& base_dir = {});
ExperimentConfig load_config(const fs::path& path);
/// Canonical JSON of a config (every field explicit); parse_config(to_json(c)) == c.
nlohmann::json to_json(const ExperimentConfig& c);
/// FNV-1a over the canonical JSON dump, 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

/// Expands sweeps into concrete single-run configs, named after the swept value.
std::vector<ExperimentConfig> expand_sweeps(const ExperimentConfig& c);

nlohmann::json synthetic_to_json(const data::SyntheticTaskSpec& s);

struct RunArtifacts {
  fs::path run_dir;
  fs::path checkpoint;
  fs::path embeddings;
  fs::path report;
  fs::path train_log;
  nlohmann::json report_json;
};

/// train -> extract -> probe -> report for each expanded run. Every artifact lands in
/// <output_dir>/<name>-<hash prefix>/. Stage failures raise kStage errors naming the stage.
std::vector<RunArtifacts> run_experiment(const ExperimentConfig& cfg);

// Pieces shared with the CLI.

/// Clips of a manifest at 16 kHz, in manifest order.
std::vector<audio::AudioClip> load_clips(const data::CorpusManifest& m);

/// Deterministic split of record indices; scene splits are stratified by label.
struct Split {
  std::vector<std::size_t> train, val, test;
};
Split split_records(const data::CorpusManifest& m, double train_fraction, double val_fraction, std::uint64_t seed);

/// Hybrid regression targets: handcrafted features standardized over the corpus, one row per clip.
Eigen::MatrixXd standardized_features(std::span<const audio::AudioClip> clips);

/// fit() with one JSON line per step in `log_path`; returns {steps, epochs, initial_l_hybrid,
/// final_epoch_l_hybrid, min_projection_variance}.
nlohmann::json train_with_log(train::TrainerState& state, std::span<const audio::LogMelSpectrogram> lms,
                              const Eigen::MatrixXd* features, const audio::NormalizationStats& stats,
                              const augment::AugmentationConfig& aug, int epochs, const fs::path& log_path);

/// Trains a probe on the train/val split of `m` and scores the test split:
/// {"metrics", "probe", "splits"}. Embeddings are matched to records by clip id.
nlohmann::json evaluate_embeddings(const embed::EmbeddingFile& emb, const data::CorpusManifest& m,
                                   const EvaluationConfig& e, std::uint64_t seed);

/// Where synthetic corpora are generated: $BYOLS_CACHE_DIR when set, else `output_dir`.
fs::path synthetic_corpus_dir(const ExperimentConfig& c);

/// Per-window 0/1 activity targets: window t is active for class c when an event of c covers t.
Eigen::MatrixXd frame_targets(const std::vector<double>& timestamps, const eval::EventList& events, Index n_classes);

}  // namespace byols::exp

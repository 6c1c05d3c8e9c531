#include "byols/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "byols/binary_io.hpp"
#include "byols/checkpoint.hpp"
#include "byols/error.hpp"
#include "byols/features.hpp"

namespace byols::exp {

using nlohmann::json;

namespace {

/// Strict reader over one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, "config: " + where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    used_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::kConfig, "config: " + where(key) + " has the wrong type");
    }
  }

  Section sub(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), where(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) fail(ErrorCode::kConfig, "config: unknown key '" + where(k) + "'");
    }
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::pair<double, double> get_range(Section& s, const std::string& key, std::pair<double, double> fallback) {
  if (!s.has(key)) return fallback;
  const json& v = s.raw(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    fail(ErrorCode::kConfig, "config: " + s.where(key) + " must be a [lo, hi] pair");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string hex_prefix(const std::string& s, std::size_t n) { return s.substr(0, n); }

std::string format_number(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!name.empty(), "config: name must not be empty", ErrorCode::kConfig);
  require(pretrain_manifest.has_value() || synthetic.has_value(),
          "config: a pre-training corpus (corpus.pretrain or synthetic) is required", ErrorCode::kConfig);
  require(pretrain_window_s > 0, "config: frontend.pretrain_window_s must be positive", ErrorCode::kConfig);
  if (synthetic) synthetic->validate();
  augmentation.validate();
  encoder.validate();
  trainer.validate();
  evaluation.probe.validate();
  const auto& e = evaluation;
  require(e.window_s > 0 && e.hop_s > 0, "config: evaluation window and hop must be positive", ErrorCode::kConfig);
  require(e.threshold > 0 && e.threshold < 1, "config: evaluation.threshold must lie in (0, 1)", ErrorCode::kConfig);
  require(e.min_duration_hops >= 0 && e.tolerance_s >= 0 && e.segment_s > 0,
          "config: evaluation durations must be non-negative", ErrorCode::kConfig);
  require(e.train_fraction > 0 && e.val_fraction > 0 && e.train_fraction + e.val_fraction < 1,
          "config: split fractions must be positive and leave a test share", ErrorCode::kConfig);
  for (const auto& [a, b] : ratio_sweep) train::HybridLossWeights{a, b}.validate();
  for (double w : window_sweep) require(w > 0, "config: sweep windows must be positive", ErrorCode::kConfig);
}

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  Section root(j, "");
  c.name = root.get<std::string>("name", c.name);
  c.seed = root.get<std::uint64_t>("seed", c.seed);
  c.output_dir = resolve(base_dir, root.get<std::string>("output_dir", c.output_dir.string()));

  if (root.has("corpus")) {
    Section s = root.sub("corpus");
    if (s.has("pretrain")) c.pretrain_manifest = resolve(base_dir, s.get<std::string>("pretrain", ""));
    if (s.has("eval")) c.eval_manifest = resolve(base_dir, s.get<std::string>("eval", ""));
    s.finish();
  }
  if (root.has("synthetic")) {
    Section s = root.sub("synthetic");
    data::SyntheticTaskSpec t;
    t.task = data::parse_task(s.get<std::string>("task", data::task_name(t.task)));
    t.n_clips = s.get<std::size_t>("n_clips", t.n_clips);
    t.clip_s = s.get<double>("clip_s", t.clip_s);
    t.n_classes = s.get<int>("n_classes", t.n_classes);
    t.snr_db = s.get<double>("snr_db", t.snr_db);
    t.seed = s.get<std::uint64_t>("seed", c.seed);
    s.finish();
    c.synthetic = t;
  }
  if (root.has("frontend")) {
    Section s = root.sub("frontend");
    c.pretrain_window_s = s.get<double>("pretrain_window_s", c.pretrain_window_s);
    s.finish();
  }
  if (root.has("augmentation")) {
    Section s = root.sub("augmentation");
    auto& a = c.augmentation;
    a.mixup_alpha = s.get<double>("mixup_alpha", a.mixup_alpha);
    a.memory_capacity = s.get<std::size_t>("memory_capacity", a.memory_capacity);
    a.freq_scale_range = get_range(s, "freq_scale_range", a.freq_scale_range);
    a.time_scale_range = get_range(s, "time_scale_range", a.time_scale_range);
    a.canvas_scale = s.get<double>("canvas_scale", a.canvas_scale);
    s.finish();
  }
  if (root.has("encoder")) {
    Section s = root.sub("encoder");
    c.encoder.arch = encoders::parse_arch(s.get<std::string>("arch", encoders::arch_name(c.encoder.arch)));
    c.encoder.width_multiplier = s.get<double>("width_multiplier", c.encoder.width_multiplier);
    c.encoder.dropout = s.get<double>("dropout", c.encoder.dropout);
    s.finish();
  }
  if (root.has("trainer")) {
    Section s = root.sub("trainer");
    auto& t = c.trainer;
    t.batch_size = s.get<Index>("batch_size", t.batch_size);
    t.learning_rate = s.get<double>("learning_rate", t.learning_rate);
    t.epochs = s.get<int>("epochs", t.epochs);
    t.symmetrize = s.get<bool>("symmetrize", t.symmetrize);
    t.normalized_mse = s.get<bool>("normalized_mse", t.normalized_mse);
    t.sup_on_projector = s.get<bool>("sup_on_projector", t.sup_on_projector);
    t.ema_decay = s.get<double>("ema_decay", t.ema_decay);
    s.finish();
  }
  if (root.has("hybrid")) {
    Section s = root.sub("hybrid");
    c.trainer.hybrid = s.get<bool>("enabled", c.trainer.hybrid);
    c.trainer.weights.alpha = s.get<double>("alpha", c.trainer.weights.alpha);
    c.trainer.weights.beta = s.get<double>("beta", c.trainer.weights.beta);
    s.finish();
  }
  if (root.has("evaluation")) {
    Section s = root.sub("evaluation");
    auto& e = c.evaluation;
    e.task = embed::parse_mode(s.get<std::string>("task", embed::mode_name(e.task)));
    e.window_s = s.get<double>("window_s", e.window_s);
    e.hop_s = s.get<double>("hop_s", e.hop_s);
    e.threshold = s.get<double>("threshold", e.threshold);
    e.min_duration_hops = s.get<double>("min_duration_hops", e.min_duration_hops);
    e.tolerance_s = s.get<double>("tolerance_s", e.tolerance_s);
    e.segment_s = s.get<double>("segment_s", e.segment_s);
    e.train_fraction = s.get<double>("train_fraction", e.train_fraction);
    e.val_fraction = s.get<double>("val_fraction", e.val_fraction);
    if (s.has("probe")) {
      Section p = s.sub("probe");
      e.probe.hidden = p.get<std::vector<Index>>("hidden", e.probe.hidden);
      e.probe.learning_rate = p.get<double>("learning_rate", e.probe.learning_rate);
      e.probe.epochs = p.get<int>("epochs", e.probe.epochs);
      e.probe.batch_size = p.get<Index>("batch_size", e.probe.batch_size);
      e.probe.patience = p.get<int>("patience", e.probe.patience);
      p.finish();
    }
    s.finish();
  }
  if (root.has("sweep")) {
    Section s = root.sub("sweep");
    if (s.has("ratios")) {
      const json& r = s.raw("ratios");
      if (!r.is_array()) fail(ErrorCode::kConfig, "config: sweep.ratios must be a list of [alpha, beta] pairs");
      for (const auto& pair : r) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
          fail(ErrorCode::kConfig, "config: sweep.ratios must be a list of [alpha, beta] pairs");
        }
        c.ratio_sweep.emplace_back(pair[0].get<double>(), pair[1].get<double>());
      }
    }
    c.window_sweep = s.get<std::vector<double>>("windows_s", {});
    s.finish();
  }
  root.finish();

  c.encoder.seed = c.seed;
  c.trainer.seed = c.seed;
  c.augmentation.seed = c.seed;
  c.evaluation.probe.seed = c.seed;
  c.augmentation.segment_frames = augment::segment_frames_for_window(c.pretrain_window_s);
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  const auto bytes = io::read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "config: " + path.string() + ": " + e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

json synthetic_to_json(const data::SyntheticTaskSpec& s) {
  return {{"task", data::task_name(s.task)}, {"n_clips", s.n_clips}, {"clip_s", s.clip_s},
          {"n_classes", s.n_classes},        {"snr_db", s.snr_db},   {"seed", s.seed}};
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.generic_string();
  json corpus = json::object();
  if (c.pretrain_manifest) corpus["pretrain"] = c.pretrain_manifest->generic_string();
  if (c.eval_manifest) corpus["eval"] = c.eval_manifest->generic_string();
  j["corpus"] = corpus;
  if (c.synthetic) j["synthetic"] = synthetic_to_json(*c.synthetic);
  j["frontend"] = {{"pretrain_window_s", c.pretrain_window_s}};
  const auto& a = c.augmentation;
  j["augmentation"] = {{"mixup_alpha", a.mixup_alpha},
                       {"memory_capacity", a.memory_capacity},
                       {"freq_scale_range", {a.freq_scale_range.first, a.freq_scale_range.second}},
                       {"time_scale_range", {a.time_scale_range.first, a.time_scale_range.second}},
                       {"canvas_scale", a.canvas_scale}};
  j["encoder"] = {{"arch", encoders::arch_name(c.encoder.arch)},
                  {"width_multiplier", c.encoder.width_multiplier},
                  {"dropout", c.encoder.dropout}};
  const auto& t = c.trainer;
  j["trainer"] = {{"batch_size", t.batch_size},         {"learning_rate", t.learning_rate},
                  {"epochs", t.epochs},                 {"symmetrize", t.symmetrize},
                  {"normalized_mse", t.normalized_mse}, {"sup_on_projector", t.sup_on_projector},
                  {"ema_decay", t.ema_decay}};
  j["hybrid"] = {{"enabled", t.hybrid}, {"alpha", t.weights.alpha}, {"beta", t.weights.beta}};
  const auto& e = c.evaluation;
  j["evaluation"] = {{"task", embed::mode_name(e.task)},
                     {"window_s", e.window_s},
                     {"hop_s", e.hop_s},
                     {"threshold", e.threshold},
                     {"min_duration_hops", e.min_duration_hops},
                     {"tolerance_s", e.tolerance_s},
                     {"segment_s", e.segment_s},
                     {"train_fraction", e.train_fraction},
                     {"val_fraction", e.val_fraction},
                     {"probe",
                      {{"hidden", e.probe.hidden},
                       {"learning_rate", e.probe.learning_rate},
                       {"epochs", e.probe.epochs},
                       {"batch_size", e.probe.batch_size},
                       {"patience", e.probe.patience}}}};
  json sweep = json::object();
  if (!c.ratio_sweep.empty()) {
    json r = json::array();
    for (const auto& [al, be] : c.ratio_sweep) r.push_back({al, be});
    sweep["ratios"] = r;
  }
  if (!c.window_sweep.empty()) sweep["windows_s"] = c.window_sweep;
  j["sweep"] = sweep;
  return j;
}

std::string config_hash(const ExperimentConfig& c) {
  const std::string s = to_json(c).dump();
  return io::hex64(io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
}

std::vector<ExperimentConfig> expand_sweeps(const ExperimentConfig& c) {
  std::vector<std::pair<double, double>> ratios = c.ratio_sweep;
  std::vector<double> windows = c.window_sweep;
  std::vector<ExperimentConfig> out;
  const bool sweep_ratio = !ratios.empty(), sweep_window = !windows.empty();
  if (!sweep_ratio) ratios.emplace_back(c.trainer.weights.alpha, c.trainer.weights.beta);
  if (!sweep_window) windows.push_back(c.pretrain_window_s);
  for (double w : windows) {
    for (const auto& [al, be] : ratios) {
      ExperimentConfig r = c;
      r.ratio_sweep.clear();
      r.window_sweep.clear();
      if (sweep_window) {
        r.pretrain_window_s = w;
        r.augmentation.segment_frames = augment::segment_frames_for_window(w);
        r.name += "-win" + format_number(w);
      }
      if (sweep_ratio) {
        r.trainer.hybrid = true;
        r.trainer.weights = {al, be};
        r.name += "-ratio" + format_number(al) + "_" + format_number(be);
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

fs::path synthetic_corpus_dir(const ExperimentConfig& c) {
  require(c.synthetic.has_value(), "config has no synthetic corpus");
  const std::string key = synthetic_to_json(*c.synthetic).dump();
  const std::string h =
      io::hex64(io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(key.data()), key.size())));
  const char* cache = std::getenv("BYOLS_CACHE_DIR");
  const fs::path root = cache && *cache ? fs::path(cache) : c.output_dir;
  return root / ("corpus-" + data::task_name(c.synthetic->task) + "-" + hex_prefix(h, 8));
}

Eigen::MatrixXd standardized_features(std::span<const audio::AudioClip> clips) {
  std::vector<features::HandcraftedFeatureVector> raw;
  raw.reserve(clips.size());
  for (const auto& clip : clips) raw.push_back(features::extract(clip));
  const auto st = features::FeatureStandardizer::fit(raw);
  Eigen::MatrixXd f(static_cast<Index>(raw.size()), st.dim());
  for (std::size_t i = 0; i < raw.size(); ++i) f.row(static_cast<Index>(i)) = st.apply(raw[i].values).transpose();
  return f;
}

json train_with_log(train::TrainerState& state, std::span<const audio::LogMelSpectrogram> lms,
                    const Eigen::MatrixXd* features, const audio::NormalizationStats& stats,
                    const augment::AugmentationConfig& aug, int epochs, const fs::path& log_path) {
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) fail(ErrorCode::kIo, "cannot write " + log_path.string());
  const auto t0 = std::chrono::steady_clock::now();
  double first = std::nan(""), epoch_sum = 0, min_var = std::numeric_limits<double>::infinity();
  int epoch_n = 0, current = -1;
  train::fit(state, lms, features, stats, aug, epochs, [&](const train::EpochLog& l) {
    if (std::isnan(first)) first = l.loss.l_hybrid;
    if (l.epoch != current) {
      current = l.epoch;
      epoch_sum = 0;
      epoch_n = 0;
    }
    epoch_sum += l.loss.l_hybrid;
    ++epoch_n;
    min_var = std::min(min_var, l.projection_variance);
    json line = {{"step", l.step},           {"epoch", l.epoch},
                 {"l_ss", l.loss.l_ss},      {"l_sup", l.loss.l_sup},
                 {"l_hybrid", l.loss.l_hybrid}, {"projection_variance", l.projection_variance}};
    line["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << line.dump() << "\n";
  });
  if (!log) fail(ErrorCode::kIo, "write failed: " + log_path.string());
  json out = {{"steps", state.step}, {"epochs", state.epoch}};
  if (epoch_n > 0) {
    out["initial_l_hybrid"] = first;
    out["final_epoch_l_hybrid"] = epoch_sum / epoch_n;
    out["min_projection_variance"] = min_var;
  }
  return out;
}

std::vector<audio::AudioClip> load_clips(const data::CorpusManifest& m) {
  std::vector<audio::AudioClip> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) out.push_back(data::load_clip(r));
  return out;
}

Split split_records(const data::CorpusManifest& m, double train_fraction, double val_fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m.records.size(); ++i) groups[m.records[i].label.value_or("")].push_back(i);
  std::mt19937_64 rng(seed ^ 0x51a7ULL);
  Split s;
  for (auto& [label, idx] : groups) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    auto n_train = static_cast<std::size_t>(std::llround(n * train_fraction));
    auto n_val = static_cast<std::size_t>(std::llround(n * val_fraction));
    n_train = std::min(n_train, idx.size());
    n_val = std::min(n_val, idx.size() - n_train);
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    s.val.insert(s.val.end(), idx.begin() + static_cast<long>(n_train), idx.begin() + static_cast<long>(n_train + n_val));
    s.test.insert(s.test.end(), idx.begin() + static_cast<long>(n_train + n_val), idx.end());
  }
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

Eigen::MatrixXd frame_targets(const std::vector<double>& timestamps, const eval::EventList& events, Index n_classes) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Index>(timestamps.size()), n_classes);
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    for (const auto& e : events) {
      if (timestamps[i] >= e.onset_s && timestamps[i] < e.offset_s) t(static_cast<Index>(i), e.label) = 1.0;
    }
  }
  return t;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail(ErrorCode::kStage, std::string("stage ") + name + ": " + e.what());
  } catch (const std::exception& e) {
    fail(ErrorCode::kStage, std::string("stage ") + name + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& s) {
  io::write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

struct Corpus {
  data::CorpusManifest manifest;
  std::vector<audio::AudioClip> clips;
  std::vector<audio::LogMelSpectrogram> lms;
  std::optional<Eigen::MatrixXd> features;  // standardized, computed on first hybrid run
};

data::CorpusManifest resolve_synthetic(const ExperimentConfig& c) {
  return data::generate_synthetic_corpus(*c.synthetic, synthetic_corpus_dir(c));
}

Corpus load_corpus(data::CorpusManifest m) {
  Corpus c;
  c.manifest = std::move(m);
  c.clips = load_clips(c.manifest);
  for (const auto& clip : c.clips) c.lms.push_back(audio::log_mel(clip));
  return c;
}

const Eigen::MatrixXd& hybrid_features(Corpus& c) {
  if (!c.features) c.features = standardized_features(c.clips);
  return *c.features;
}

}  // namespace

json evaluate_embeddings(const embed::EmbeddingFile& emb, const data::CorpusManifest& m, const EvaluationConfig& e,
                         std::uint64_t seed) {
  require(emb.mode == e.task, "embedding mode " + embed::mode_name(emb.mode) + " does not match evaluation task " +
                                  embed::mode_name(e.task));
  std::map<std::string, std::size_t> record_of;
  for (std::size_t i = 0; i < m.records.size(); ++i) record_of[m.records[i].id] = i;
  // Embedding rows of each manifest record, in file order.
  std::vector<std::vector<std::size_t>> rows_of(m.records.size());
  for (std::size_t r = 0; r < emb.records.size(); ++r) {
    const auto it = record_of.find(emb.records[r].clip_id);
    if (it == record_of.end()) fail(ErrorCode::kInvalidArgument, "embedding id '" + emb.records[r].clip_id + "' is not in the manifest");
    rows_of[it->second].push_back(r);
  }
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    require(!rows_of[i].empty(), "manifest id '" + m.records[i].id + "' has no embedding");
    require(e.task == embed::Mode::kTimestamp || rows_of[i].size() == 1,
            "manifest id '" + m.records[i].id + "' has several scene embeddings");
  }
  const Split split = split_records(m, e.train_fraction, e.val_fraction, seed);
  require(!split.train.empty() && !split.val.empty() && !split.test.empty(), "evaluation split has an empty part");
  json out;
  out["splits"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  const Index dim = emb.dim;

  if (e.task == embed::Mode::kScene) {
    const auto classes = m.scene_classes();
    require(classes.size() >= 2, "scene evaluation needs at least 2 labels");
    auto build = [&](const std::vector<std::size_t>& ids) {
      eval::LabeledEmbeddingSet s;
      s.class_names = classes;
      s.x.resize(static_cast<Index>(ids.size()), dim);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        s.x.row(static_cast<Index>(i)) = emb.records[rows_of[ids[i]][0]].vector.transpose();
        const auto& label = m.records[ids[i]].label;
        if (!label) fail(ErrorCode::kInvalidArgument, "record " + m.records[ids[i]].id + " has no scene label");
        s.labels.push_back(static_cast<int>(std::find(classes.begin(), classes.end(), *label) - classes.begin()));
      }
      return s;
    };
    const auto te = build(split.test);
    const auto probe = eval::train_probe(build(split.train), build(split.val), e.probe);
    const Eigen::MatrixXd scores = probe.predict(te.x);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < te.labels.size(); ++i) onehot(static_cast<Index>(i), te.labels[i]) = 1.0;
    out["metrics"] = {{"top1_accuracy", eval::top1_accuracy(scores, te.labels)},
                      {"mAP", eval::mean_average_precision(scores, onehot)}};
    out["probe"] = {{"best_epoch", probe.best_epoch}, {"best_val_loss", probe.best_val_loss}};
    return out;
  }

  const auto classes = m.event_classes();
  require(!classes.empty(), "timestamp evaluation needs event annotations");
  const auto n_classes = static_cast<Index>(classes.size());
  auto windows = [&](std::size_t c, Eigen::MatrixXd& x) {
    std::vector<double> ts;
    x.resize(static_cast<Index>(rows_of[c].size()), dim);
    for (std::size_t k = 0; k < rows_of[c].size(); ++k) {
      const auto& rec = emb.records[rows_of[c][k]];
      require(rec.timestamp_s.has_value(), "timestamp embedding without a timestamp");
      ts.push_back(*rec.timestamp_s);
      x.row(static_cast<Index>(k)) = rec.vector.transpose();
    }
    return ts;
  };
  auto build = [&](const std::vector<std::size_t>& ids) {
    eval::LabeledEmbeddingSet s;
    s.class_names = classes;
    std::size_t n = 0;
    for (auto c : ids) n += rows_of[c].size();
    s.x.resize(static_cast<Index>(n), dim);
    s.targets.resize(static_cast<Index>(n), n_classes);
    Index at = 0;
    for (auto c : ids) {
      Eigen::MatrixXd x;
      const auto ts = windows(c, x);
      const auto t = frame_targets(ts, data::to_event_list(m.records[c].events, classes), n_classes);
      s.x.middleRows(at, x.rows()) = x;
      s.targets.middleRows(at, x.rows()) = t;
      at += x.rows();
    }
    return s;
  };
  const auto probe = eval::train_probe(build(split.train), build(split.val), e.probe);
  std::size_t matches = 0, matches_off = 0, n_pred = 0, n_ref = 0;
  eval::SegmentCounts seg;
  for (auto c : split.test) {
    Eigen::MatrixXd x;
    const auto ts = windows(c, x);
    const auto pred = eval::events_from_frames(probe.predict(x), ts, e.threshold, e.min_duration_hops * e.hop_s);
    const auto ref = data::to_event_list(m.records[c].events, classes);
    matches += eval::count_matches(pred, ref, e.tolerance_s);
    matches_off += eval::count_matches(pred, ref, e.tolerance_s, true);
    n_pred += pred.size();
    n_ref += ref.size();
    seg += eval::segment_counts(pred, ref, e.segment_s);
  }
  // Matches are pooled over test clips before the F-measure.
  out["metrics"] = {{"onset_fms", eval::f_measure(matches, n_pred, n_ref)},
                    {"onset_offset_fms", eval::f_measure(matches_off, n_pred, n_ref)},
                    {"segment_error_rate", seg.error_rate()},
                    {"predicted_events", n_pred},
                    {"reference_events", n_ref}};
  out["probe"] = {{"best_epoch", probe.best_epoch}, {"best_val_loss", probe.best_val_loss}};
  return out;
}

namespace {

RunArtifacts run_single(const ExperimentConfig& cfg, Corpus& pre, Corpus& ev) {
  RunArtifacts art;
  const std::string hash = config_hash(cfg);
  art.run_dir = cfg.output_dir / (cfg.name + "-" + hex_prefix(hash, 12));
  fs::create_directories(art.run_dir);
  art.checkpoint = art.run_dir / "checkpoint.byck";
  art.embeddings = art.run_dir / "embeddings.emb1";
  art.report = art.run_dir / "report.json";
  art.train_log = art.run_dir / "train_log.jsonl";

  // Train.
  json training;
  stage("train", [&] {
    const auto stats = audio::compute_stats(pre.lms);
    const Eigen::MatrixXd* feats = cfg.trainer.hybrid ? &hybrid_features(pre) : nullptr;
    const auto heads = train::HeadConfig::for_width(
        cfg.encoder.width_multiplier, feats ? std::optional<Index>(feats->cols()) : std::nullopt);
    train::TrainerState state(cfg.encoder, heads, cfg.trainer);
    training = train_with_log(state, pre.lms, feats, stats, cfg.augmentation, cfg.trainer.epochs, art.train_log);
    json meta = {{"config_hash", hash}, {"seed", cfg.seed}, {"name", cfg.name}};
    ckpt::save(ckpt::from_trainer(state, stats, meta), art.checkpoint);
    return 0;
  });

  // Extract.
  const auto mode = cfg.evaluation.task;
  embed::EmbeddingFile emb;
  stage("extract", [&] {
    const auto loaded = ckpt::load_encoder(art.checkpoint);
    emb.mode = mode;
    emb.dim = static_cast<std::uint32_t>(loaded.encoder->embedding_dim());
    for (std::size_t i = 0; i < ev.clips.size(); ++i) {
      if (mode == embed::Mode::kScene) {
        emb.records.push_back(embed::scene_embedding(*loaded.encoder, ev.clips[i], loaded.stats));
      } else {
        auto set = embed::timestamp_embeddings(*loaded.encoder, ev.clips[i], loaded.stats, cfg.evaluation.window_s,
                                               cfg.evaluation.hop_s);
        for (auto& e : set.embeddings) emb.records.push_back(std::move(e));
      }
    }
    io::write_file_atomic(art.embeddings, embed::encode_emb(emb));
    write_text(art.run_dir / "embeddings.jsonl", embed::to_jsonl(emb));
    return 0;
  });

  // Probe.
  json evaluation;
  stage("probe", [&] {
    evaluation = evaluate_embeddings(emb, ev.manifest, cfg.evaluation, cfg.seed);
    return 0;
  });

  // Report.
  stage("report", [&] {
    art.report_json = {{"name", cfg.name},
                       {"task", embed::mode_name(mode)},
                       {"metrics", evaluation["metrics"]},
                       {"config", to_json(cfg)},
                       {"config_hash", hash},
                       {"seed", cfg.seed},
                       {"embedding_dim", emb.dim},
                       {"splits", evaluation["splits"]},
                       {"training", training},
                       {"probe", evaluation["probe"]},
                       {"artifacts",
                        {{"checkpoint", art.checkpoint.filename().string()},
                         {"embeddings", art.embeddings.filename().string()},
                         {"train_log", art.train_log.filename().string()}}}};
    write_text(art.report, art.report_json.dump(2) + "\n");
    return 0;
  });
  return art;
}

}  // namespace

std::vector<RunArtifacts> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  auto [pre, ev] = stage("corpus", [&] {
    const data::CorpusManifest pre_m =
        cfg.pretrain_manifest ? data::load_manifest(*cfg.pretrain_manifest) : resolve_synthetic(cfg);
    Corpus p = load_corpus(pre_m);
    std::optional<Corpus> e;
    if (cfg.eval_manifest) e = load_corpus(data::load_manifest(*cfg.eval_manifest));
    return std::pair<Corpus, std::optional<Corpus>>(std::move(p), std::move(e));
  });
  Corpus& eval_corpus = ev ? *ev : pre;
  std::vector<RunArtifacts> out;
  for (const auto& run : expand_sweeps(cfg)) out.push_back(run_single(run, pre, eval_corpus));
  return out;
}

}  // namespace byols::exp

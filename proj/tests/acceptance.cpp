// Acceptance run: one PASS/FAIL line per criterion, measured values alongside.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "byols/audio.hpp"
#include "byols/checkpoint.hpp"
#include "byols/cka.hpp"
#include "byols/embedding.hpp"
#include "byols/encoders.hpp"
#include "byols/error.hpp"
#include "byols/evaluation.hpp"
#include "byols/experiment.hpp"
#include "byols/trainer.hpp"
#include "gradcheck.hpp"
#include "metric_oracles.hpp"

using namespace byols;
using nlohmann::json;
using Eigen::Index;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a named check; the criterion passes only if every check does.
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

fs::path g_work;

fs::path work_dir(const std::string& name) {
  const fs::path p = g_work / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Eigen::MatrixXd gaussian(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

audio::LogMelSpectrogram random_lms(Index frames, std::uint64_t seed) {
  audio::LogMelSpectrogram l;
  l.values = gaussian(64, frames, seed);
  return l;
}

audio::AudioClip tone(double hz, double seconds, double amp = 0.5) {
  audio::AudioClip c;
  c.samples.resize(static_cast<std::size_t>(std::llround(seconds * audio::kModelRate)));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / audio::kModelRate);
  }
  return c;
}

encoders::EncoderConfig encoder_config(encoders::Arch a, double width, std::uint64_t seed) {
  encoders::EncoderConfig c;
  c.arch = a;
  c.width_multiplier = width;
  c.seed = seed;
  return c;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Eigen::VectorXd> snapshot(const std::vector<nn::ParameterStore*>& stores) {
  std::vector<Eigen::VectorXd> out;
  for (auto* s : stores) {
    for (auto* p : s->all()) out.push_back(p->value.data);
  }
  return out;
}

// 1. Parameter count, embedding sizes and CvT stage widths.
void structural(Outcome& o) {
  using encoders::Arch;
  const Index n = encoders::count_parameters(encoder_config(Arch::kDefaultCnn, 1.0, 0));
  const double rel = std::abs(static_cast<double>(n) - 5.3e6) / 5.3e6;
  o.detail << "default_cnn params " << n << " (" << rel * 100 << "% off 5.3M); ";
  o.check(rel <= 0.05, "default_cnn parameter count");
  const auto cnn = encoders::make_encoder(encoder_config(Arch::kDefaultCnn, 1.0, 0));
  const auto clstm = encoders::make_encoder(encoder_config(Arch::kClstm, 1.0, 0));
  const auto cvt = encoders::make_encoder(encoder_config(Arch::kCvtLite, 1.0, 0));
  const auto lms = random_lms(40, 1);
  const Index d_cnn = encoders::encode(*cnn, lms).size(), d_clstm = encoders::encode(*clstm, lms).size();
  o.detail << "dims " << d_cnn << "/" << d_clstm << "; ";
  o.check(d_cnn == 2048 && cnn->embedding_dim() == 2048, "default_cnn dim 2048");
  o.check(d_clstm == 1024 && clstm->embedding_dim() == 1024, "clstm dim 1024");
  // Stage maps are recorded as channels x remaining mel bins (64 / 4, / 8, / 16).
  nn::ActivationRecorder rec;
  encoders::encode(*cvt, lms, &rec);
  o.detail << "cvt stages";
  const Index expect[3] = {64, 256, 512}, freq[3] = {16, 8, 4};
  o.check(rec.layers.size() >= 3, "cvt records three stages");
  for (std::size_t s = 0; s < 3 && s < rec.layers.size(); ++s) {
    const Index ch = rec.layers[s].second.cols() / freq[s];
    o.detail << " " << ch;
    o.check(ch == expect[s] && rec.layers[s].second.cols() % freq[s] == 0, "cvt stage width");
  }
}

// 2. Frame count, tone placement against an independent mel computation, silence floor.
void frontend(Outcome& o) {
  audio::AudioClip c;
  c.samples.assign(15200, 0.0);
  const auto silence = audio::log_mel(c);
  o.detail << "0.95 s -> " << silence.frames() << " frames; ";
  o.check(silence.frames() == 96, "96 frames");
  o.check(silence.values.maxCoeff() == std::log(1e-10) && silence.values.minCoeff() == std::log(1e-10),
          "silence floor");

  const auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  const double lo = mel(60.0), hi = mel(7800.0), target = mel(1000.0);
  int expected = 0;
  double best = 1e300;
  for (int m = 0; m < 64; ++m) {
    const double centre = lo + (hi - lo) * (m + 1) / 65.0;
    if (std::abs(centre - target) < best) {
      best = std::abs(centre - target);
      expected = m;
    }
  }
  // Only frames whose 400-sample window lies inside the clip; the edges see reflected audio.
  const auto clip = tone(1000.0, 0.5);
  const auto lms = audio::log_mel(clip);
  int hits = 0, interior = 0;
  for (Index t = 0; t < lms.frames(); ++t) {
    if (t * 160 < 200 || t * 160 + 200 > static_cast<Index>(clip.samples.size())) continue;
    Index band;
    lms.values.col(t).maxCoeff(&band);
    hits += band == expected;
    ++interior;
  }
  o.detail << "1 kHz peak in band " << expected << " for " << hits << "/" << interior << " interior frames";
  o.check(interior > 0 && hits == interior, "1 kHz band");
}

// 3. Hybrid-loss gradients through each encoder and both heads.
void gradients(Outcome& o) {
  using encoders::Arch;
  for (Arch a : {Arch::kDefaultCnn, Arch::kResnetish34, Arch::kClstm, Arch::kCvtLite}) {
    train::TrainConfig tc;
    tc.hybrid = true;
    tc.weights = {0.5, 1.0};
    tc.seed = 21;
    const Index d_sup = 12;
    train::TrainerState state(encoder_config(a, 0.125, 21), train::HeadConfig::for_width(0.125, d_sup), tc);
    std::vector<augment::ViewPair> pairs;
    for (std::uint64_t i = 0; i < 4; ++i) pairs.push_back({random_lms(32, 2 * i + 1), random_lms(32, 2 * i + 2)});
    const Eigen::MatrixXd feats = gaussian(4, d_sup, 9);
    std::vector<nn::Parameter*> params;
    for (auto* s : state.online_stores()) {
      for (auto* p : s->trainable()) params.push_back(p);
    }
    const auto r = byols::testing::check_gradients(
        params, [&](nn::Graph& g) { return train::build_loss(g, state, pairs, &feats, 77).loss; }, 200, 31, 1e-5,
        4000, 1e-6);
    o.detail << encoders::arch_name(a) << " " << r.checked << " params max rel " << r.max_rel_error << "; ";
    o.check(r.checked >= 200 && r.max_rel_error <= 1e-4, encoders::arch_name(a));
  }
}

// 4. Weighted sum for the seven ratios; alpha = 0 steps exactly like the plain objective.
void loss_algebra(Outcome& o) {
  const std::pair<double, double> ratios[] = {{1, 4}, {1, 2}, {2, 3}, {1, 1}, {3, 2}, {2, 1}, {4, 1}};
  const Index d_sup = 16;
  std::vector<augment::ViewPair> pairs;
  for (std::uint64_t i = 0; i < 3; ++i) pairs.push_back({random_lms(24, 40 + i), random_lms(24, 50 + i)});
  const Eigen::MatrixXd feats = gaussian(3, d_sup, 5);
  int exact = 0;
  for (const auto& [a, b] : ratios) {
    train::TrainConfig tc;
    tc.hybrid = true;
    tc.weights = {a, b};
    train::TrainerState state(encoder_config(encoders::Arch::kCvtLite, 0.125, 4),
                              train::HeadConfig::for_width(0.125, d_sup), tc);
    nn::Graph g;
    const auto lg = train::build_loss(g, state, pairs, &feats, 3);
    const auto& l = lg.breakdown;
    exact += l.l_hybrid == a * l.l_sup + b * l.l_ss && lg.loss.value().data(0) == l.l_hybrid &&
             train::hybrid_loss(l.l_sup, l.l_ss, {a, b}) == a * l.l_sup + b * l.l_ss;
  }
  o.detail << exact << "/7 ratios exact; ";
  o.check(exact == 7, "seven ratios");

  const auto heads = train::HeadConfig::for_width(0.125, d_sup);
  train::TrainConfig plain;
  plain.seed = 11;
  train::TrainConfig zero = plain;
  zero.hybrid = true;
  zero.weights = {0.0, 1.0};
  train::TrainerState sa(encoder_config(encoders::Arch::kDefaultCnn, 0.125, 4), heads, plain);
  train::TrainerState sb(encoder_config(encoders::Arch::kDefaultCnn, 0.125, 4), heads, zero);
  augment::AugmentationConfig aug;
  aug.segment_frames = 24;
  augment::MixupMemoryBank bank_a(8), bank_b(8);
  augment::Rng rng_a(2), rng_b(2);
  const std::vector<audio::LogMelSpectrogram> batch{random_lms(40, 1), random_lms(40, 2), random_lms(40, 3)};
  bool same_loss = true;
  for (int step = 0; step < 5; ++step) {
    const auto ra = train::train_step(sa, batch, nullptr, {0.0, 1.0}, aug, bank_a, rng_a);
    const auto rb = train::train_step(sb, batch, &feats, {0.0, 1.0}, aug, bank_b, rng_b);
    same_loss = same_loss && ra.loss.l_hybrid == rb.loss.l_hybrid;
  }
  const bool same_params = snapshot(sa.online_stores()) == snapshot(sb.online_stores()) &&
                           snapshot(sa.target_stores()) == snapshot(sb.target_stores());
  o.detail << "alpha=0 vs plain over 5 steps: losses " << (same_loss ? "identical" : "differ") << ", parameters "
           << (same_params ? "identical" : "differ");
  o.check(same_loss && same_params, "alpha = 0 bit-identical");
}

// 5. Copy, geometric blend and freeze, on a scalar and on tensors.
void ema(Outcome& o) {
  nn::ParameterStore t1, o1;
  t1.create("w", {1}, 0.0);
  o1.create("w", {1}, 1.0);
  double worst = 0;
  for (int k = 1; k <= 500; ++k) {
    train::ema_update(t1, o1, 0.99);
    worst = std::max(worst, std::abs(t1.find("w")->value.data(0) - (1.0 - std::pow(0.99, k))));
  }
  o.detail << "scalar max |err| " << worst << " over 500 steps; ";
  o.check(worst <= 1e-12, "scalar convergence");

  nn::ParameterStore target, online;
  nn::Rng rng(5);
  target.create_uniform("a", {3, 4}, 1.0, rng);
  target.create("b", {5}, -2.0, false);
  online.create_uniform("a", {3, 4}, 1.0, rng);
  online.create("b", {5}, 3.0, false);
  const Eigen::VectorXd t0 = target.find("a")->value.data, on = online.find("a")->value.data;
  train::ema_update(target, online, 1.0);
  const bool frozen = target.find("a")->value.data == t0 && (target.find("b")->value.data.array() == -2.0).all();
  double tensor_worst = 0;
  for (int k = 1; k <= 100; ++k) {
    train::ema_update(target, online, 0.99);
    const Eigen::VectorXd expect = on + std::pow(0.99, k) * (t0 - on);
    tensor_worst = std::max(tensor_worst, (target.find("a")->value.data - expect).cwiseAbs().maxCoeff());
  }
  train::ema_update(target, online, 0.0);
  const bool copied = target.find("a")->value.data == on && target.find("b")->value.data == online.find("b")->value.data;
  o.detail << "tensor: tau=1 " << (frozen ? "frozen" : "moved") << ", tau=0.99 max |err| " << tensor_worst
           << ", tau=0 " << (copied ? "copied" : "not copied");
  o.check(frozen, "tau = 1 freezes");
  o.check(tensor_worst <= 1e-12, "tensor convergence");
  o.check(copied, "tau = 0 copies");
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// 6. Loss reduction, projection variance and probe gain over a random encoder, three seeds.
void learning_signal(Outcome& o) {
  std::vector<double> ratio, min_var, gain;
  for (std::uint64_t seed : {0, 1, 2}) {
    const json j = {{"name", "signal"},
                    {"seed", seed},
                    {"output_dir", work_dir("c6_seed" + std::to_string(seed)).string()},
                    {"synthetic", {{"task", "tone_pitch_class"}, {"n_clips", 200}, {"n_classes", 4}}},
                    {"encoder", {{"arch", "default_cnn"}, {"width_multiplier", 0.125}}},
                    {"trainer", {{"batch_size", 16}, {"epochs", 20}}},
                    {"hybrid", {{"enabled", true}, {"alpha", 1.0}, {"beta", 1.0}}},
                    {"evaluation", {{"probe", {{"hidden", json::array()}}}}}};
    const auto cfg = exp::parse_config(j);
    const auto art = exp::run_experiment(cfg).at(0);
    const json& tr = art.report_json["training"];
    const double trained = art.report_json["metrics"]["top1_accuracy"];

    // Same probe on the untrained encoder that training started from.
    const auto m = data::load_manifest(exp::synthetic_corpus_dir(cfg) / "manifest.csv");
    const auto stats = ckpt::load_encoder(art.checkpoint).stats;
    const auto random = encoders::make_encoder(cfg.encoder);
    embed::EmbeddingFile emb;
    emb.dim = static_cast<std::uint32_t>(random->embedding_dim());
    for (const auto& r : m.records) emb.records.push_back(embed::scene_embedding(*random, data::load_clip(r), stats));
    const double baseline = exp::evaluate_embeddings(emb, m, cfg.evaluation, cfg.seed)["metrics"]["top1_accuracy"];

    ratio.push_back(tr["final_epoch_l_hybrid"].get<double>() / tr["initial_l_hybrid"].get<double>());
    min_var.push_back(tr["min_projection_variance"]);
    gain.push_back(trained - baseline);
    o.detail << "seed " << seed << ": l_hybrid x" << ratio.back() << ", min var " << min_var.back() << ", probe "
             << trained << " vs random " << baseline << "; ";
  }
  o.detail << "medians: loss ratio " << median3(ratio) << ", probe gain " << median3(gain) * 100 << " points";
  o.check(median3(ratio) <= 0.5, "l_hybrid reduced by >= 50%");
  o.check(*std::min_element(min_var.begin(), min_var.end()) > 1e-4, "projection variance > 1e-4");
  o.check(median3(gain) >= 0.10, "probe beats random by >= 10 points");
}

// 7. Metrics against brute-force definitions, plus the fixed boundary values.
void metric_oracles(Outcome& o) {
  using namespace byols::testing;
  std::mt19937_64 rng(7);
  double worst = 0;
  int top1_n = 0, ap_n = 0, fms_n = 0, er_n = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + trial % 9, c = 2 + trial % 4;
    Eigen::MatrixXd s(n, c);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Index i = 0; i < s.size(); ++i) s.data()[i] = std::uniform_int_distribution<int>(0, 4)(rng);
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, static_cast<int>(c) - 1)(rng);
    double correct = 0;
    for (Index i = 0; i < n; ++i) {
      Index arg = 0;
      while (s(i, arg) != s.row(i).maxCoeff()) ++arg;
      correct += arg == labels[static_cast<std::size_t>(i)];
    }
    worst = std::max(worst, std::abs(eval::top1_accuracy(s, labels) - correct / static_cast<double>(n)));
    ++top1_n;
  }
  for (int trial = 0; trial < 300 && ap_n < 150; ++trial) {
    const Index n = 2 + trial % 12, c = 1 + trial % 3;
    Eigen::MatrixXd s(n, c), y(n, c);
    for (Index i = 0; i < s.size(); ++i) {
      s.data()[i] = std::uniform_int_distribution<int>(0, 5)(rng) * 0.25;
      y.data()[i] = std::bernoulli_distribution(0.4)(rng);
    }
    double sum = 0;
    int used = 0;
    for (Index k = 0; k < c; ++k) {
      if (y.col(k).sum() == 0) continue;
      const double ap = brute_ap(s.col(k), y.col(k));
      worst = std::max(worst, std::abs(eval::average_precision(s.col(k), y.col(k)) - ap));
      sum += ap;
      ++used;
    }
    if (used == 0) continue;
    worst = std::max(worst, std::abs(eval::mean_average_precision(s, y) - sum / used));
    ++ap_n;
  }
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_grid_events(rng, 5, 2);
    auto r = random_grid_events(rng, 5, 2);
    for (std::size_t i = 0; i < std::min(p.size(), r.size()); i += 2) {
      r[i] = p[i];
      r[i].on = std::max(r[i].on + std::uniform_int_distribution<int>(-7, 7)(rng), 0);
      r[i].off = std::max(r[i].off + std::uniform_int_distribution<int>(-30, 30)(rng), r[i].on + 1);
    }
    worst = std::max(worst, std::abs(eval::onset_fms(to_events(p), to_events(r), 0.05) - brute_fms(p, r, false)));
    ++fms_n;
    if (r.empty()) continue;
    worst = std::max(worst, std::abs(eval::segment_error_rate(to_events(p), to_events(r), 1.0) - brute_er(p, r, 100)));
    ++er_n;
  }
  o.detail << "instances top1 " << top1_n << ", mAP " << ap_n << ", FMS " << fms_n << ", ER " << er_n
           << "; max |diff| " << worst << "; ";
  o.check(std::min({top1_n, ap_n, fms_n, er_n}) >= 100, ">= 100 instances each");
  o.check(worst <= 1e-12, "oracle agreement");

  const eval::EventList ref{{0.5, 1.2, 0}, {2.0, 2.4, 1}, {3.1, 3.9, 0}};
  const double self = eval::onset_fms(ref, ref), empty_fms = eval::onset_fms({}, ref),
               empty_er = eval::segment_error_rate({}, ref);
  o.detail << "FMS(P,P) " << self << ", FMS(empty) " << empty_fms << ", ER(empty) " << empty_er;
  o.check(self == 1.0 && empty_fms == 0.0 && empty_er == 1.0, "boundary values");
}

// 8. Self-similarity, invariances, symmetry and the permutation null.
void cka_properties(Outcome& o) {
  const Eigen::MatrixXd x = gaussian(50, 12, 1), y = gaussian(50, 8, 2) + 0.5 * x.leftCols(8);
  const double self = cka::linear_cka(x, x), base = cka::linear_cka(x, y);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(12, 12, 3));
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(12, 12);
  const double inv = std::max({std::abs(cka::linear_cka(x * q, y) - base), std::abs(cka::linear_cka(3.7 * x, y) - base),
                               std::abs(cka::linear_cka(x, 1e-3 * y) - base)});
  const double sym = std::abs(cka::linear_cka(x, y) - cka::linear_cka(y, x));
  o.detail << "|CKA(X,X)-1| " << std::abs(self - 1) << ", invariance " << inv << ", symmetry " << sym << "; ";
  o.check(std::abs(self - 1.0) <= 1e-9, "self = 1");
  o.check(inv <= 1e-9, "invariance");
  o.check(sym <= 1e-12, "symmetry");

  const Eigen::MatrixXd a = gaussian(100, 50, 31), b = gaussian(100, 50, 32);
  const double observed = cka::linear_cka(a, b);
  std::mt19937_64 rng(33);
  std::vector<Index> perm(100);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<double> null;
  for (int k = 0; k < 1000; ++k) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd bp(100, 50);
    for (Index i = 0; i < 100; ++i) bp.row(i) = b.row(perm[static_cast<std::size_t>(i)]);
    null.push_back(cka::linear_cka(a, bp));
  }
  std::sort(null.begin(), null.end());
  const double q99 = null[static_cast<std::size_t>(0.99 * static_cast<double>(null.size() - 1))];
  o.detail << "independent CKA " << observed << " vs null 99th pct " << q99;
  o.check(observed < q99, "below permutation null");
}

// 9. Window grid, then end-to-end event detection at two window sizes.
void timestamp_grid(Outcome& o) {
  const auto enc = encoders::make_encoder(encoder_config(encoders::Arch::kCvtLite, 0.125, 1));
  const auto set = embed::timestamp_embeddings(*enc, tone(440.0, 4.0), {0.0, 1.0}, 1.0, 0.05);
  bool exact = set.embeddings.size() == 81;
  for (std::size_t i = 0; exact && i < set.embeddings.size(); ++i) {
    const double t = *set.embeddings[i].timestamp_s;
    exact = t == static_cast<double>(i) * 0.05 && std::abs(t - static_cast<double>(i) / 20.0) <= 1e-12;
  }
  o.detail << set.embeddings.size() << " windows" << (exact ? " on the 50 ms grid" : " off grid") << "; ";
  o.check(exact, "81 windows at multiples of 0.05 s");

  for (double window : {1.0, 0.5}) {
    const json j = {{"name", "events"},
                    {"seed", 0},
                    {"output_dir", work_dir("c9_window" + std::to_string(window)).string()},
                    {"synthetic",
                     {{"task", "event_onsets"}, {"n_clips", 200}, {"clip_s", 4.0}, {"n_classes", 3}, {"snr_db", 10.0}}},
                    {"encoder", {{"arch", "cvt_lite"}, {"width_multiplier", 0.125}}},
                    {"trainer", {{"batch_size", 16}, {"epochs", 2}}},
                    {"hybrid", {{"enabled", true}, {"alpha", 1.0}, {"beta", 1.0}}},
                    {"evaluation", {{"task", "timestamp"}, {"window_s", window}, {"hop_s", 0.05}}}};
    const auto art = exp::run_experiment(exp::parse_config(j)).at(0);
    const double fms = art.report_json["metrics"]["onset_fms"];
    o.detail << window << " s / 50 ms: onset FMS " << fms << "; ";
    o.check(fms >= 0.8, "FMS >= 0.8 at " + std::to_string(window) + " s");
  }
}

// 10. Two identical runs give byte-identical reports.
void determinism(Outcome& o) {
  const fs::path dir = work_dir("c10");
  const json j = {{"name", "repeat"},
                  {"seed", 5},
                  {"output_dir", (dir / "runs").string()},
                  {"synthetic", {{"task", "chord_chroma"}, {"n_clips", 48}, {"n_classes", 3}}},
                  {"encoder", {{"arch", "default_cnn"}, {"width_multiplier", 0.125}}},
                  {"trainer", {{"batch_size", 8}, {"epochs", 2}}},
                  {"hybrid", {{"enabled", true}, {"alpha", 1.0}, {"beta", 2.0}}}};
  const auto cfg = exp::parse_config(j);
  std::string reports[2];
  for (auto& r : reports) {
    fs::remove_all(dir / "runs");
    r = read_text(exp::run_experiment(cfg).at(0).report);
  }
  o.detail << "report sizes " << reports[0].size() << "/" << reports[1].size()
           << (reports[0] == reports[1] ? ", identical" : ", differ");
  o.check(!reports[0].empty() && reports[0] == reports[1], "identical reports");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> known_fail, only;
  std::string work = "acceptance_runs";
  app.add_option("--known-fail", known_fail, "Criteria whose failure is documented and does not fail the run");
  app.add_option("--only", only, "Run a subset of criteria");
  app.add_option("--work-dir", work, "Scratch directory for experiment runs");
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {"structural fidelity", structural},
      {"frontend oracle", frontend},
      {"gradient suite", gradients},
      {"loss algebra", loss_algebra},
      {"EMA contract", ema},
      {"anti-collapse and learning signal", learning_signal},
      {"metric oracles", metric_oracles},
      {"CKA properties", cka_properties},
      {"timestamp grid", timestamp_grid},
      {"determinism", determinism}};

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[error: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool known = std::find(known_fail.begin(), known_fail.end(), id) != known_fail.end();
    std::printf("%s criterion %d (%s): %s (%.1f s)%s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.str().c_str(), secs, !o.pass && known ? " [known failure]" : "");
    std::fflush(stdout);
    if (!o.pass && !known) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}

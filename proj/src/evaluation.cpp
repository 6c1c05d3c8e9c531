#include "byols/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "byols/error.hpp"
#include "byols/nn/adam.hpp"

namespace byols::eval {

void validate(const EventList& events) {
  for (const auto& e : events) {
    require(std::isfinite(e.onset_s) && std::isfinite(e.offset_s), "event times must be finite");
    require(e.onset_s <= e.offset_s, "event onset after offset");
    require(e.label >= 0, "negative event label");
  }
}

EventList sorted(EventList events) {
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
    if (a.label != b.label) return a.label < b.label;
    return a.offset_s < b.offset_s;
  });
  return events;
}

Index LabeledEmbeddingSet::n_classes() const {
  if (multilabel()) return targets.cols();
  if (!class_names.empty()) return static_cast<Index>(class_names.size());
  int hi = -1;
  for (int l : labels) hi = std::max(hi, l);
  return hi + 1;
}

void LabeledEmbeddingSet::validate() const {
  require(x.rows() > 0, "empty embedding set");
  require(x.allFinite(), "embeddings must be finite");
  if (multilabel()) {
    require(targets.rows() == x.rows(), "target rows differ from embedding rows");
    require(((targets.array() == 0.0) || (targets.array() == 1.0)).all(), "multi-label targets must be 0 or 1");
  } else {
    require(static_cast<Index>(labels.size()) == x.rows(), "one label per embedding required");
    const Index c = n_classes();
    for (int l : labels) require(l >= 0 && l < c, "label index out of range");
  }
}

void ProbeConfig::validate() const {
  require(hidden.size() <= 2, "probe supports at most 2 hidden layers", ErrorCode::kConfig);
  for (Index h : hidden) require(h > 0, "probe hidden widths must be positive", ErrorCode::kConfig);
  require(learning_rate > 0, "probe learning rate must be positive", ErrorCode::kConfig);
  require(epochs >= 0, "probe epochs must be non-negative", ErrorCode::kConfig);
  require(batch_size > 0, "probe batch size must be positive", ErrorCode::kConfig);
  require(patience > 0, "probe patience must be positive", ErrorCode::kConfig);
}

Probe::Probe(Index input_dim, Index n_classes, bool multilabel, const ProbeConfig& cfg)
    : input_dim_(input_dim), n_classes_(n_classes), multilabel_(multilabel),
      store_(std::make_unique<nn::ParameterStore>()) {
  require(input_dim > 0, "probe input dimension must be positive");
  require(n_classes >= (multilabel ? 1 : 2), "probe needs at least 2 classes");
  nn::Rng rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
  Index in = input_dim;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    layers_.emplace_back(*store_, "hidden" + std::to_string(i + 1), in, cfg.hidden[i], rng);
    in = cfg.hidden[i];
  }
  layers_.emplace_back(*store_, "output", in, n_classes, rng);
  input_mean = Eigen::RowVectorXd::Zero(input_dim);
  input_scale = Eigen::RowVectorXd::Ones(input_dim);
}

nn::Var Probe::logits(nn::ForwardContext& ctx, const Eigen::MatrixXd& x) const {
  require(x.cols() == input_dim_, "embedding dimension " + std::to_string(x.cols()) + " does not match probe input " +
                                      std::to_string(input_dim_));
  const Eigen::MatrixXd z = (x.rowwise() - input_mean).array().rowwise() / input_scale.array();
  nn::Var h = ctx.graph.constant(nn::Tensor::from_matrix(z));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](ctx, h);
    if (i + 1 < layers_.size()) h = nn::relu(h);
  }
  return h;
}

Eigen::MatrixXd Probe::predict(const Eigen::MatrixXd& x) const {
  nn::Graph g;
  nn::ForwardContext ctx{g, false, false};
  const nn::Var z = logits(ctx, x);
  if (!multilabel_) return nn::softmax(z).value().to_matrix();
  return nn::sigmoid(z).value().to_matrix();
}

namespace {

nn::Var probe_loss(const Probe& p, nn::ForwardContext& ctx, const LabeledEmbeddingSet& d, const std::vector<Index>& rows) {
  Eigen::MatrixXd x(static_cast<Index>(rows.size()), d.x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Index>(i)) = d.x.row(rows[i]);
  const nn::Var z = p.logits(ctx, x);
  if (d.multilabel()) {
    Eigen::MatrixXd t(x.rows(), d.targets.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) t.row(static_cast<Index>(i)) = d.targets.row(rows[i]);
    return nn::bce_with_logits(z, nn::Tensor::from_matrix(t));
  }
  std::vector<int> y;
  y.reserve(rows.size());
  for (Index r : rows) y.push_back(d.labels[static_cast<std::size_t>(r)]);
  return nn::cross_entropy(z, y);
}

std::vector<Index> all_rows(Index n) {
  std::vector<Index> r(static_cast<std::size_t>(n));
  std::iota(r.begin(), r.end(), Index{0});
  return r;
}

}  // namespace

double Probe::loss(const LabeledEmbeddingSet& data) const {
  nn::Graph g;
  nn::ForwardContext ctx{g, false, false};
  return probe_loss(*this, ctx, data, all_rows(data.x.rows())).value().data(0);
}

Probe train_probe(const LabeledEmbeddingSet& train, const LabeledEmbeddingSet& val, const ProbeConfig& cfg) {
  cfg.validate();
  train.validate();
  val.validate();
  require(train.multilabel() == val.multilabel(), "train and validation label kinds differ");
  require(train.x.cols() == val.x.cols(), "train and validation embedding dimensions differ");
  const Index classes = train.n_classes();
  require(val.n_classes() <= classes, "validation set has classes unseen in training");

  Probe probe(train.x.cols(), classes, train.multilabel(), cfg);
  probe.input_mean = train.x.colwise().mean();
  const Eigen::RowVectorXd sd =
      ((train.x.rowwise() - probe.input_mean).array().square().colwise().mean()).sqrt().matrix();
  for (Index j = 0; j < sd.size(); ++j) probe.input_scale(j) = sd(j) > 1e-8 ? sd(j) : 1.0;

  nn::Adam adam(probe.store().trainable(), nn::AdamOptions{cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<Eigen::VectorXd> best;
  auto snapshot = [&] {
    best.clear();
    for (auto* p : probe.store().all()) best.push_back(p->value.data);
  };
  probe.best_val_loss = probe.loss(val);
  probe.best_epoch = 0;
  snapshot();

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order = all_rows(train.x.rows());
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.epochs && stale < cfg.patience; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < static_cast<Index>(order.size()); start += cfg.batch_size) {
      const Index len = std::min<Index>(cfg.batch_size, static_cast<Index>(order.size()) - start);
      const std::vector<Index> rows(order.begin() + start, order.begin() + start + len);
      nn::Graph g;
      nn::ForwardContext ctx{g, true, true};
      const nn::Var l = probe_loss(probe, ctx, train, rows);
      adam.zero_grad();
      g.backward(l);
      adam.step();
    }
    const double v = probe.loss(val);
    require(std::isfinite(v), "divergence: probe validation loss is not finite", ErrorCode::kDivergence);
    if (v < probe.best_val_loss) {
      probe.best_val_loss = v;
      probe.best_epoch = epoch;
      snapshot();
      stale = 0;
    } else {
      ++stale;
    }
  }
  auto params = probe.store().all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.data = best[i];
  return probe;
}

double top1_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  require(scores.rows() > 0, "top1_accuracy of an empty set");
  require(static_cast<Index>(labels.size()) == scores.rows(), "top1_accuracy: length mismatch");
  Index correct = 0;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index arg = 0;
    for (Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, arg)) arg = c;
    }
    if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

double average_precision(const Eigen::VectorXd& scores, const Eigen::VectorXd& binary_labels) {
  require(scores.size() == binary_labels.size(), "average_precision: length mismatch");
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) > scores(b); });
  double hits = 0, total = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (binary_labels(order[k]) > 0.5) {
      hits += 1;
      total += hits / static_cast<double>(k + 1);
    }
  }
  require(hits > 0, "average_precision: no positives");
  return total / hits;
}

double mean_average_precision(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& binary_labels) {
  require(scores.rows() == binary_labels.rows() && scores.cols() == binary_labels.cols(),
          "mean_average_precision: shape mismatch");
  double sum = 0;
  int used = 0;
  for (Index c = 0; c < scores.cols(); ++c) {
    if ((binary_labels.col(c).array() > 0.5).any()) {
      sum += average_precision(scores.col(c), binary_labels.col(c));
      ++used;
    }
  }
  require(used > 0, "mean_average_precision: no class has a positive");
  return sum / used;
}

EventList events_from_frames(const Eigen::MatrixXd& frame_probs, const std::vector<double>& timestamps,
                             double threshold, double min_duration_s) {
  require(static_cast<Index>(timestamps.size()) == frame_probs.rows(), "one timestamp per frame required");
  if (timestamps.empty()) return {};
  const double hop = timestamps.size() > 1 ? timestamps[1] - timestamps[0] : 0.0;
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    require(std::abs(timestamps[i] - timestamps[i - 1] - hop) <= 1e-6 && hop > 0, "timestamps must form a uniform grid");
  }
  EventList out;
  const Index n = frame_probs.rows();
  for (Index c = 0; c < frame_probs.cols(); ++c) {
    Index i = 0;
    while (i < n) {
      if (!(frame_probs(i, c) > threshold)) {
        ++i;
        continue;
      }
      Index j = i;
      while (j + 1 < n && frame_probs(j + 1, c) > threshold) ++j;
      const double onset = timestamps[static_cast<std::size_t>(i)] - hop / 2;
      const double offset = timestamps[static_cast<std::size_t>(j)] + hop / 2;
      if (offset - onset + kTimeEps >= min_duration_s) out.push_back(Event{onset, offset, static_cast<int>(c)});
      i = j + 1;
    }
  }
  return sorted(std::move(out));
}

std::size_t count_matches(const EventList& predicted, const EventList& reference, double tolerance_s,
                          bool check_offsets) {
  validate(predicted);
  validate(reference);
  require(tolerance_s >= 0, "tolerance must be non-negative");
  auto ok = [&](const Event& p, const Event& r) {
    if (p.label != r.label || std::abs(p.onset_s - r.onset_s) > tolerance_s + kTimeEps) return false;
    if (!check_offsets) return true;
    const double off_tol = std::max(tolerance_s, 0.2 * (r.offset_s - r.onset_s));
    return std::abs(p.offset_s - r.offset_s) <= off_tol + kTimeEps;
  };
  // Maximum bipartite matching by augmenting paths. With onsets alone this is what
  // greedy matching in onset order reaches; with offsets greedy can fall short.
  std::vector<std::vector<std::size_t>> adj(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (ok(predicted[i], reference[j])) adj[i].push_back(j);
    }
  }
  std::vector<long> owner(reference.size(), -1);
  std::vector<char> seen;
  std::function<bool(std::size_t)> augment = [&](std::size_t i) {
    for (std::size_t j : adj[i]) {
      if (seen[j]) continue;
      seen[j] = 1;
      if (owner[j] < 0 || augment(static_cast<std::size_t>(owner[j]))) {
        owner[j] = static_cast<long>(i);
        return true;
      }
    }
    return false;
  };
  std::size_t matched = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    seen.assign(reference.size(), 0);
    if (augment(i)) ++matched;
  }
  return matched;
}

double f_measure(std::size_t matches, std::size_t n_pred, std::size_t n_ref) {
  if (n_pred == 0 || n_ref == 0) return 0.0;
  const double p = static_cast<double>(matches) / static_cast<double>(n_pred);
  const double r = static_cast<double>(matches) / static_cast<double>(n_ref);
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

double onset_fms(const EventList& predicted, const EventList& reference, double tolerance_s) {
  return f_measure(count_matches(predicted, reference, tolerance_s), predicted.size(), reference.size());
}

double onset_offset_fms(const EventList& predicted, const EventList& reference, double tolerance_s) {
  return f_measure(count_matches(predicted, reference, tolerance_s, true), predicted.size(), reference.size());
}

SegmentCounts& SegmentCounts::operator+=(const SegmentCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  active_reference += o.active_reference;
  return *this;
}

double SegmentCounts::error_rate() const {
  require(active_reference > 0, "segment_error_rate: reference has no active segments");
  return (substitutions + deletions + insertions) / active_reference;
}

SegmentCounts segment_counts(const EventList& predicted, const EventList& reference, double segment_s) {
  validate(predicted);
  validate(reference);
  require(segment_s > 0 && std::isfinite(segment_s), "segment length must be positive");
  double end = 0;
  int classes = 0;
  for (const auto* list : {&predicted, &reference}) {
    for (const auto& e : *list) {
      end = std::max(end, e.offset_s);
      classes = std::max(classes, e.label + 1);
    }
  }
  const auto n_seg = static_cast<Index>(std::ceil(end / segment_s - kTimeEps));
  // active(k, c): some event of class c overlaps [k s, (k+1) s) with positive length.
  auto activity = [&](const EventList& events) {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> a =
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(std::max<Index>(n_seg, 0), classes, false);
    for (const auto& e : events) {
      for (Index k = 0; k < n_seg; ++k) {
        const double lo = static_cast<double>(k) * segment_s, hi = lo + segment_s;
        if (e.onset_s < hi && e.offset_s > lo) a(k, e.label) = true;
      }
    }
    return a;
  };
  const auto ref = activity(reference);
  const auto est = activity(predicted);
  SegmentCounts out;
  for (Index k = 0; k < n_seg; ++k) {
    Index fn = 0, fp = 0, nk = 0;
    for (int c = 0; c < classes; ++c) {
      nk += ref(k, c);
      fn += ref(k, c) && !est(k, c);
      fp += !ref(k, c) && est(k, c);
    }
    out.substitutions += static_cast<double>(std::min(fn, fp));
    out.deletions += static_cast<double>(std::max<Index>(0, fn - fp));
    out.insertions += static_cast<double>(std::max<Index>(0, fp - fn));
    out.active_reference += static_cast<double>(nk);
  }
  return out;
}

double segment_error_rate(const EventList& predicted, const EventList& reference, double segment_s) {
  return segment_counts(predicted, reference, segment_s).error_rate();
}

}  // namespace byols::eval

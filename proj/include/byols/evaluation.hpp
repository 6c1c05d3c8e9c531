#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "byols/nn/layers.hpp"

namespace byols::eval {

using nn::Index;

// Slack used for every time comparison (onset tolerance, run durations).
inline constexpr double kTimeEps = 1e-9;

struct Event {
  double onset_s = 0.0;
  double offset_s = 0.0;
  int label = 0;

  bool operator==(const Event&) const = default;
};
using EventList = std::vector<Event>;

void validate(const EventList& events);
/// Sorted by onset, then label, then offset.
EventList sorted(EventList events);

/// Embedding rows with either one class index per row (multi-class) or a
/// 0/1 target matrix (multi-label, one column per class).
struct LabeledEmbeddingSet {
  Eigen::MatrixXd x;
  std::vector<int> labels;
  Eigen::MatrixXd targets;
  std::vector<std::string> class_names;

  bool multilabel() const { return targets.size() > 0; }
  Index n_classes() const;
  void validate() const;
};

struct ProbeConfig {
  std::vector<Index> hidden{512};  // 0 to 2 hidden layers
  double learning_rate = 1e-3;
  int epochs = 200;
  Index batch_size = 64;
  int patience = 20;  // epochs without validation improvement before stopping
  std::uint64_t seed = 0;

  void validate() const;
};

/// Shallow fully-connected classifier over z-scored embeddings.
class Probe {
 public:
  Probe(Index input_dim, Index n_classes, bool multilabel, const ProbeConfig& cfg);
  Probe(const Probe&) = delete;
  Probe& operator=(const Probe&) = delete;
  Probe(Probe&&) = default;

  /// Class probabilities: softmax rows (multi-class) or independent sigmoids (multi-label).
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;
  double loss(const LabeledEmbeddingSet& data) const;

  nn::ParameterStore& store() { return *store_; }
  Index input_dim() const { return input_dim_; }
  Index n_classes() const { return n_classes_; }
  bool multilabel() const { return multilabel_; }
  int best_epoch = 0;
  double best_val_loss = 0.0;

  Eigen::RowVectorXd input_mean;
  Eigen::RowVectorXd input_scale;

  nn::Var logits(nn::ForwardContext& ctx, const Eigen::MatrixXd& x) const;

 private:
  Index input_dim_;
  Index n_classes_;
  bool multilabel_;
  std::unique_ptr<nn::ParameterStore> store_;
  std::vector<nn::Linear> layers_;
};

/// Adam on cross-entropy or per-class BCE; returns the weights with the lowest validation loss.
Probe train_probe(const LabeledEmbeddingSet& train, const LabeledEmbeddingSet& val, const ProbeConfig& cfg);

// Scene metrics.
/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double top1_accuracy(const Eigen::MatrixXd& scores, const std::vector<int>& labels);
/// Macro average over classes with at least one positive of the mean precision at each positive.
double mean_average_precision(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& binary_labels);
double average_precision(const Eigen::VectorXd& scores, const Eigen::VectorXd& binary_labels);

// Timestamp metrics.
/// Per class, maximal runs of frames with probability > threshold become events spanning
/// [first - hop/2, last + hop/2]; runs shorter than min_duration_s are dropped.
EventList events_from_frames(const Eigen::MatrixXd& frame_probs, const std::vector<double>& timestamps,
                             double threshold = 0.5, double min_duration_s = 0.0);

/// Matched pairs between predicted and reference events of the same label whose onsets
/// differ by at most tolerance_s (and, with check_offsets, whose offsets differ by at most
/// max(tolerance_s, 0.2 * reference duration)).
std::size_t count_matches(const EventList& predicted, const EventList& reference, double tolerance_s,
                          bool check_offsets = false);
double onset_fms(const EventList& predicted, const EventList& reference, double tolerance_s = 0.05);
double onset_offset_fms(const EventList& predicted, const EventList& reference, double tolerance_s = 0.05);

struct SegmentCounts {
  double substitutions = 0, deletions = 0, insertions = 0, active_reference = 0;

  SegmentCounts& operator+=(const SegmentCounts& o);
  /// (S + D + I) / N; throws when N == 0.
  double error_rate() const;
};
SegmentCounts segment_counts(const EventList& predicted, const EventList& reference, double segment_s = 1.0);

/// F-measure from a match count; 0 when either list is empty.
double f_measure(std::size_t matches, std::size_t n_predicted, std::size_t n_reference);

/// (S + D + I) / N accumulated over fixed segments of segment_s seconds.
double segment_error_rate(const EventList& predicted, const EventList& reference, double segment_s = 1.0);

}  // namespace byols::eval

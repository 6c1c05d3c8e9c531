#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "byols/evaluation.hpp"

// Brute-force metric definitions shared by the unit tests and the acceptance run.
namespace byols::testing {

using eval::EventList;
using Eigen::Index;

// Events live on a 10 ms grid so that tolerance checks can be done in integers.
struct GridEvent {
  int on, off, label;
};

inline EventList to_events(const std::vector<GridEvent>& g) {
  EventList out;
  for (const auto& e : g) out.push_back({e.on * 0.01, e.off * 0.01, e.label});
  return out;
}

inline std::vector<GridEvent> random_grid_events(std::mt19937_64& rng, int max_n, int classes) {
  std::uniform_int_distribution<int> count(0, max_n), on(0, 300), len(1, 120), lab(0, classes - 1);
  std::vector<GridEvent> out(static_cast<std::size_t>(count(rng)));
  for (auto& e : out) {
    e.on = on(rng);
    e.off = e.on + len(rng);
    e.label = lab(rng);
  }
  return out;
}

// Largest matching, by trying every assignment of predictions to unused references.
inline std::size_t brute_matches(const std::vector<GridEvent>& p, const std::vector<GridEvent>& r, int tol, bool offsets,
                          std::size_t i, std::vector<bool>& used) {
  if (i == p.size()) return 0;
  std::size_t best = brute_matches(p, r, tol, offsets, i + 1, used);
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (used[j] || p[i].label != r[j].label || std::abs(p[i].on - r[j].on) > tol) continue;
    // Offset tolerance is max(tol, 20% of the reference length), compared in grid units times 5.
    if (offsets && 5 * std::abs(p[i].off - r[j].off) > std::max(5 * tol, r[j].off - r[j].on)) continue;
    used[j] = true;
    best = std::max(best, 1 + brute_matches(p, r, tol, offsets, i + 1, used));
    used[j] = false;
  }
  return best;
}

inline double brute_fms(const std::vector<GridEvent>& p, const std::vector<GridEvent>& r, bool offsets) {
  if (p.empty() || r.empty()) return 0.0;
  std::vector<bool> used(r.size(), false);
  const double m = static_cast<double>(brute_matches(p, r, 5, offsets, 0, used));
  return 2 * m / static_cast<double>(p.size() + r.size());
}

// Segment error rate straight from the definition on the integer grid.
inline double brute_er(const std::vector<GridEvent>& p, const std::vector<GridEvent>& r, int seg) {
  int end = 0, classes = 0;
  for (const auto* l : {&p, &r}) {
    for (const auto& e : *l) {
      end = std::max(end, e.off);
      classes = std::max(classes, e.label + 1);
    }
  }
  const int n_seg = (end + seg - 1) / seg;
  const auto active = [&](const std::vector<GridEvent>& l, int k, int c) {
    for (const auto& e : l) {
      if (e.label == c && std::min(e.off, (k + 1) * seg) - std::max(e.on, k * seg) > 0) return true;
    }
    return false;
  };
  double s = 0, d = 0, ins = 0, n = 0;
  for (int k = 0; k < n_seg; ++k) {
    int fn = 0, fp = 0;
    for (int c = 0; c < classes; ++c) {
      const bool ref = active(r, k, c), est = active(p, k, c);
      n += ref;
      fn += ref && !est;
      fp += !ref && est;
    }
    s += std::min(fn, fp);
    d += std::max(0, fn - fp);
    ins += std::max(0, fp - fn);
  }
  return (s + d + ins) / n;
}

// Precision at each positive under a stable descending sort, counted by ranks.
inline double brute_ap(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
  double total = 0, positives = 0;
  for (Index i = 0; i < s.size(); ++i) {
    if (y(i) < 0.5) continue;
    positives += 1;
    double above = 0, above_pos = 0;
    for (Index j = 0; j < s.size(); ++j) {
      if (s(j) > s(i) || (s(j) == s(i) && j <= i)) {
        above += 1;
        above_pos += y(j) > 0.5;
      }
    }
    total += above_pos / above;
  }
  return total / positives;
}

}  // namespace byols::testing

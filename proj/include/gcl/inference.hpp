#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcl/data.hpp"
#include "gcl/error.hpp"
#include "gcl/network.hpp"

namespace gcl {

// ---------------------------------------------------------------------------
// Sparse encoding of a binary mask / compressed activation
// ---------------------------------------------------------------------------

inline std::size_t ceil_log2(std::size_t m) {
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < m) ++bits;
  return bits;
}

/// Bits needed to list the p·m non-zero positions of an m-wide vector.
inline double sparse_encoded_bits(std::size_t m, double p, std::size_t N = 32) {
  (void)N;
  if (m < 2) throw ConfigError("sparse encoding needs m >= 2");
  if (p < 0.0 || p > 1.0) throw ConfigError("density must lie in [0, 1]");
  return p * static_cast<double>(m) * static_cast<double>(ceil_log2(m));
}

/// N·m dense bits over the sparse size, i.e. N / (p·⌈log2 m⌉). Infinite for p == 0.
inline double compression_rate(std::size_t m, double p, std::size_t N = 32) {
  const double bits = sparse_encoded_bits(m, p, N);
  if (bits == 0.0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(N) * static_cast<double>(m) / bits;
}

// ---------------------------------------------------------------------------
// Gate policies
// ---------------------------------------------------------------------------

enum class GateMode { none, independent, incremental, one_gate_only };

struct GatePolicy {
  GateMode mode = GateMode::incremental;
  std::size_t position = std::numeric_limits<std::size_t>::max();
  double threshold = 0.5;  // P(interesting) needed to pass

  static GatePolicy no_gating() { return {GateMode::none, 0, 0.5}; }
  static GatePolicy all_gates(double threshold = 0.5) {
    return {GateMode::incremental, std::numeric_limits<std::size_t>::max(), threshold};
  }
  static GatePolicy independent(std::size_t pos, double threshold = 0.5) {
    return {GateMode::independent, pos, threshold};
  }
  static GatePolicy incremental(std::size_t pos, double threshold = 0.5) {
    return {GateMode::incremental, pos, threshold};
  }
  static GatePolicy one_gate_only(std::size_t pos = 0, double threshold = 0.5) {
    return {GateMode::one_gate_only, pos, threshold};
  }

  void validate(const Network& net) const {
    if (threshold < 0.0 || threshold > 1.0) throw ConfigError("gate threshold must lie in [0, 1]");
    const std::size_t n = net.gc_layers.size();
    switch (mode) {
      case GateMode::none:
        return;
      case GateMode::incremental:
        if (position != std::numeric_limits<std::size_t>::max() && position >= n) {
          throw ConfigError("incremental gating position " + std::to_string(position) + " has no GC layer");
        }
        return;
      case GateMode::independent:
        if (position >= n) throw ConfigError("gate position " + std::to_string(position) + " has no GC layer");
        return;
      case GateMode::one_gate_only:
        if (n != 1) throw ConfigError("one_gate_only gating needs a network with exactly one GC layer");
        if (position != 0) throw ConfigError("one_gate_only position must be 0");
        return;
    }
  }

  bool active(std::size_t gate) const {
    switch (mode) {
      case GateMode::none: return false;
      case GateMode::incremental: return gate <= position;
      case GateMode::independent:
      case GateMode::one_gate_only: return gate == position;
    }
    return false;
  }
};

/// log P(not background) from gate logits; background is class 0.
inline double log_interest(std::span<const float> logits) {
  double pos_max = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < logits.size(); ++j) pos_max = std::max(pos_max, static_cast<double>(logits[j]));
  double s = 0.0;
  for (std::size_t j = 1; j < logits.size(); ++j) s += std::exp(static_cast<double>(logits[j]) - pos_max);
  const double lse_pos = pos_max + std::log(s);
  // log(1 - P(bg)) = -log(1 + exp(l0 - lse_pos))
  const double d = static_cast<double>(logits[0]) - lse_pos;
  return d > 0.0 ? -(d + std::log1p(std::exp(-d))) : -std::log1p(std::exp(d));
}

/// Stop when P(interesting) < threshold; a tie passes.
inline bool gate_stops(std::span<const float> logits, double threshold) {
  if (threshold <= 0.0) return false;
  return log_interest(logits) < std::log(threshold);
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct BoundaryTraffic {
  std::size_t gc_index = 0;
  std::size_t dense_elements = 0;  // m
  std::size_t elements = 0;        // non-zero mask dimensions actually sent
  double sparse_bits = 0.0;
};

struct InferenceTrace {
  std::optional<std::size_t> exit_gate;
  std::vector<BoundaryTraffic> boundaries;         // crossed boundaries, in order
  std::vector<std::optional<double>> gate_scores;  // P(interesting) at each evaluated gate
  std::optional<int> prediction;                   // head argmax when reached

  /// Prediction with early-stopped samples assigned to background.
  int decision() const { return prediction.value_or(0); }
};

inline int argmax(std::span<const float> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Traffic for one sample crossing the boundary after GC layer i.
inline BoundaryTraffic boundary_traffic(const Network& net, std::size_t i) {
  const auto& l = net.gc_layers.at(i);
  BoundaryTraffic t;
  t.gc_index = i;
  t.dense_elements = l.width();
  t.elements = mask_nonzeros(l.phi);
  t.sparse_bits = sparse_encoded_bits(t.dense_elements,
                                      static_cast<double>(t.elements) / static_cast<double>(t.dense_elements));
  return t;
}

/// Builds traces from a monolithic forward pass. Rows are independent, so a
/// row's values do not depend on which other samples share the batch.
inline std::vector<InferenceTrace> traces_from_forward(const Network& net, const EvalForward& f,
                                                       const GatePolicy& policy) {
  const std::size_t n = f.final_logits.rows();
  const std::size_t gates = net.gc_layers.size();
  std::vector<BoundaryTraffic> traffic;
  for (std::size_t i = 0; i < gates; ++i) traffic.push_back(boundary_traffic(net, i));

  std::vector<InferenceTrace> traces(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto& t = traces[s];
    t.gate_scores.assign(gates, std::nullopt);
    for (std::size_t i = 0; i < gates; ++i) {
      if (policy.active(i)) {
        auto logits = f.gate_logits[i].row(s);
        t.gate_scores[i] = std::exp(log_interest(logits));
        if (gate_stops(logits, policy.threshold)) {
          t.exit_gate = i;
          break;
        }
      }
      t.boundaries.push_back(traffic[i]);
    }
    if (!t.exit_gate) t.prediction = argmax(f.final_logits.row(s));
  }
  return traces;
}

inline std::vector<InferenceTrace> infer_batch(const Network& net, const Tensor& x, const GatePolicy& policy) {
  policy.validate(net);
  return traces_from_forward(net, forward_eval(net, x), policy);
}

inline InferenceTrace infer(const Network& net, std::span<const float> x, const GatePolicy& policy) {
  Tensor row({1, x.size()}, std::vector<float>(x.begin(), x.end()));
  return infer_batch(net, row, policy).front();
}

/// Batched inference over a dataset, chunked to bound memory.
inline std::vector<InferenceTrace> infer_dataset(const Network& net, const Dataset& d, const GatePolicy& policy,
                                                 std::size_t chunk = 1024) {
  policy.validate(net);
  std::vector<InferenceTrace> out;
  out.reserve(d.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + chunk); ++i) idx.push_back(i);
    auto t = traces_from_forward(net, forward_eval(net, d.rows(idx)), policy);
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  return out;
}

/// P(interesting) of gate `gate` for every sample, evaluated independently of
/// other gates.
inline std::vector<double> gate_scores(const Network& net, const Dataset& d, std::size_t gate,
                                       std::size_t chunk = 1024) {
  if (gate >= net.gc_layers.size()) throw ConfigError("gate index " + std::to_string(gate) + " out of range");
  std::vector<double> out;
  out.reserve(d.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + chunk); ++i) idx.push_back(i);
    auto f = forward_eval(net, d.rows(idx));
    for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(std::exp(log_interest(f.gate_logits[gate].row(r))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ROC
// ---------------------------------------------------------------------------

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;  // interesting samples stopped / interesting samples
  double tpr = 0.0;  // background samples stopped / background samples
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Exact area under the stop ROC: background samples are the positives and a
/// lower P(interesting) ranks a sample closer to being stopped. Tied scores
/// contribute half credit (trapezoid over tie groups).
inline double roc_auc(std::span<const double> interest, const std::vector<bool>& background) {
  if (interest.size() != background.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  const auto n_bg = static_cast<std::size_t>(std::count(background.begin(), background.end(), true));
  const std::size_t n_int = background.size() - n_bg;
  if (n_bg == 0 || n_int == 0) throw UndefinedError("AUC undefined for a single-class dataset");
  std::vector<std::size_t> order(interest.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return interest[a] < interest[b]; });
  double auc = 0.0;
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double dtp = 0.0, dfp = 0.0;
    while (j < order.size() && interest[order[j]] == interest[order[i]]) {
      (background[order[j]] ? dtp : dfp) += 1.0;
      ++j;
    }
    auc += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return auc / (static_cast<double>(n_bg) * static_cast<double>(n_int));
}

/// ROC points at the given thresholds, sorted by threshold; stop iff score < threshold.
inline std::vector<RocPoint> roc_points(std::span<const double> interest, const std::vector<bool>& background,
                                        std::vector<double> thresholds) {
  const auto n_bg = static_cast<double>(std::count(background.begin(), background.end(), true));
  const double n_int = static_cast<double>(background.size()) - n_bg;
  if (n_bg == 0 || n_int == 0) throw UndefinedError("ROC undefined for a single-class dataset");
  std::sort(thresholds.begin(), thresholds.end());
  std::vector<RocPoint> pts;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < interest.size(); ++i) {
      if (t > 0.0 && interest[i] < t) (background[i] ? tp : fp) += 1.0;
    }
    pts.push_back({t, fp / n_int, tp / n_bg});
  }
  return pts;
}

inline RocResult roc_sweep(const Network& net, const Dataset& d, std::size_t gate, const std::vector<double>& thresholds,
                           const ClassMapping& omega) {
  if (omega.image_size() != 2) throw ConfigError("ROC sweep needs a binary class mapping at the gate");
  const auto scores = gate_scores(net, d, gate);
  std::vector<bool> bg;
  for (int y : d.labels) bg.push_back(omega(y) == 0);
  RocResult r;
  r.points = roc_points(scores, bg, thresholds);
  r.auc = roc_auc(scores, bg);
  return r;
}

}  // namespace gcl

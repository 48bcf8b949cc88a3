#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcl/data.hpp"
#include "gcl/error.hpp"
#include "gcl/inference.hpp"
#include "gcl/network.hpp"
#include "gcl/objective.hpp"

namespace gcl {

/// Gate confusion counts. The positive event is "the gate stops the sample":
///   TP  background sample stopped
///   FP  interesting sample stopped
///   TN  interesting sample passed
///   FN  background sample passed
struct GateConfusion {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }

  void add(bool background, bool stopped) {
    if (stopped) {
      ++(background ? tp : fp);
    } else {
      ++(background ? fn : tn);
    }
  }

  friend bool operator==(const GateConfusion&, const GateConfusion&) = default;
};

namespace detail {
inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

// Rates return nullopt where the denominator is empty.

/// Fraction of all samples that are stopped.
inline std::optional<double> stop_rate(const GateConfusion& c) { return detail::ratio(c.tp + c.fp, c.total()); }

/// Fraction of background samples the gate lets through.
inline std::optional<double> negative_pass_through_rate(const GateConfusion& c) {
  return detail::ratio(c.fn, c.fn + c.tp);
}

/// Fraction of interesting samples the gate stops.
inline std::optional<double> positive_lost_rate(const GateConfusion& c) { return detail::ratio(c.fp, c.fp + c.tn); }

/// Fraction of background samples stopped ("early stopping").
inline std::optional<double> early_stop_rate(const GateConfusion& c) { return detail::ratio(c.tp, c.tp + c.fn); }

/// Mask sparsity 1 − ‖Γ(σ(φ))‖₀ / m.
inline double dropout_rate(const Tensor& phi) {
  if (phi.size() == 0) throw ConfigError("dropout rate of an empty mask");
  return 1.0 - static_cast<double>(mask_nonzeros(phi)) / static_cast<double>(phi.size());
}

/// Share of the dense activation volume still transmitted: (1 − P_sr)(1 − P_dr).
inline double transmission_ratio(double stop_rate, double dropout_rate) {
  return (1.0 - stop_rate) * (1.0 - dropout_rate);
}

/// Counts stops from traces. With `gate` set only exits at that gate count as
/// stops; otherwise an exit at any gate does.
inline GateConfusion confusion_from_traces(std::span<const InferenceTrace> traces, std::span<const int> labels,
                                           const ClassMapping& omega, std::optional<std::size_t> gate = std::nullopt) {
  if (traces.size() != labels.size()) throw DimensionError("traces and labels differ in length");
  GateConfusion c;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& e = traces[i].exit_gate;
    const bool stopped = e.has_value() && (!gate || *e == *gate);
    c.add(omega(labels[i]) == 0, stopped);
  }
  return c;
}

/// Background samples that were stopped and that the ungated model would have
/// misclassified, over all background samples.
inline std::optional<double> negative_correction_rate(const std::vector<bool>& stopped, std::span<const int> labels,
                                                      std::span<const int> ungated_predictions,
                                                      const ClassMapping& omega) {
  if (stopped.size() != labels.size() || labels.size() != ungated_predictions.size()) {
    throw DimensionError("negative_correction_rate inputs differ in length");
  }
  std::uint64_t corrected = 0, background = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (omega(labels[i]) != 0) continue;
    ++background;
    if (stopped[i] && ungated_predictions[i] != labels[i]) ++corrected;
  }
  return detail::ratio(corrected, background);
}

inline std::optional<double> negative_correction_rate(const Network& net, const Dataset& d, std::size_t gate,
                                                      const ClassMapping& omega, double threshold = 0.5) {
  const auto gated = infer_dataset(net, d, GatePolicy::independent(gate, threshold));
  const auto full = infer_dataset(net, d, GatePolicy::no_gating());
  std::vector<bool> stopped;
  std::vector<int> preds;
  for (const auto& t : gated) stopped.push_back(t.exit_gate.has_value());
  for (const auto& t : full) preds.push_back(t.decision());
  return negative_correction_rate(stopped, d.labels, preds, omega);
}

inline double accuracy(std::span<const InferenceTrace> traces, std::span<const int> labels) {
  if (traces.empty() || traces.size() != labels.size()) throw DimensionError("accuracy needs aligned, non-empty inputs");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) hit += traces[i].decision() == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(traces.size());
}

}  // namespace gcl

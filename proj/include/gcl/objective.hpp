#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gcl/autograd.hpp"
#include "gcl/error.hpp"
#include "gcl/network.hpp"

namespace gcl {

/// Maps an original label to a gate label. Gate label 0 is background.
class ClassMapping {
 public:
  ClassMapping() = default;
  explicit ClassMapping(std::vector<int> table) : table_(std::move(table)) {
    for (int v : table_) {
      if (v < 0) throw ConfigError("class mapping targets must be non-negative");
    }
  }

  /// Label 0 → 0, every other label → 1.
  static ClassMapping background_vs_rest(std::size_t num_classes) {
    std::vector<int> t(num_classes, 1);
    if (num_classes > 0) t[0] = 0;
    return ClassMapping(std::move(t));
  }

  int operator()(int label) const {
    if (label < 0 || static_cast<std::size_t>(label) >= table_.size()) {
      throw ConfigError("label " + std::to_string(label) + " missing from class mapping");
    }
    return table_[static_cast<std::size_t>(label)];
  }

  std::size_t domain_size() const noexcept { return table_.size(); }
  std::size_t image_size() const {
    return table_.empty() ? 0 : static_cast<std::size_t>(*std::max_element(table_.begin(), table_.end())) + 1;
  }
  const std::vector<int>& table() const noexcept { return table_; }

  std::vector<int> apply(std::span<const int> labels) const {
    std::vector<int> out;
    out.reserve(labels.size());
    for (int y : labels) out.push_back((*this)(y));
    return out;
  }

 private:
  std::vector<int> table_;
};

/// Weights of the total objective. eta is derived so that the classification
/// weights sum to one.
struct LossWeights {
  std::vector<double> alphas;
  std::vector<double> betas;
  double xi = 1e-4;

  double alpha_sum() const { return std::accumulate(alphas.begin(), alphas.end(), 0.0); }
  double eta() const { return 1.0 - alpha_sum(); }

  void validate() const {
    if (alphas.size() != betas.size()) throw ConfigError("alphas and betas must have one entry per gate");
    for (double a : alphas) {
      if (a < 0.0 || a >= 1.0) throw ConfigError("alpha must lie in [0, 1)");
    }
    for (double b : betas) {
      if (b < 0.0) throw ConfigError("beta must be non-negative");
    }
    if (xi < 0.0) throw ConfigError("xi must be non-negative");
    if (alpha_sum() >= 1.0) throw ConfigError("sum of alphas must be < 1 so that eta stays positive");
  }

  static LossWeights from_network(const Network& net, double xi) {
    LossWeights w;
    for (const auto& l : net.gc_layers) {
      w.alphas.push_back(l.alpha);
      w.betas.push_back(l.beta);
    }
    w.xi = xi;
    return w;
  }
};

/// Cross-entropy of gate logits against the mapped labels.
inline Var gate_loss(Var gate_logits, std::span<const int> labels, const ClassMapping& omega) {
  if (gate_logits.value().rank() != 2 || gate_logits.value().cols() != omega.image_size()) {
    throw ConfigError("gate produces " + std::to_string(gate_logits.value().cols()) +
                      " logits but the class mapping has " + std::to_string(omega.image_size()) + " targets");
  }
  const auto mapped = omega.apply(labels);
  return softmax_cross_entropy(gate_logits, mapped);
}

/// Transmission cost: mean over dimensions of σ(φ)². The mean keeps beta
/// comparable across layer widths.
inline Var trans_cost(Var phi) { return mean_square(relu1(phi)); }

/// Mean squared value over every element of the given parameters.
inline Var parameter_penalty(std::span<const Var> params) {
  if (params.empty()) throw ConfigError("parameter penalty over an empty parameter list");
  std::size_t count = 0;
  Var sum = l2_norm_sq(params[0]);
  count += params[0].value().size();
  for (std::size_t i = 1; i < params.size(); ++i) {
    sum = add(sum, l2_norm_sq(params[i]));
    count += params[i].value().size();
  }
  return scale(sum, 1.0f / static_cast<float>(count));
}

struct Objective {
  Var total;
  std::vector<float> gate_terms;   // unweighted gate losses
  std::vector<float> trans_terms;  // unweighted transmission costs
  float final_loss = 0.0f;
  float penalty = 0.0f;
};

/// Σ_i (α_i·gate_i + β_i·trans_i) + η·final + ξ·penalty.
inline Objective total_objective(std::span<const Var> gate_losses, std::span<const Var> trans_costs, Var final_loss,
                                 Var penalty, const LossWeights& w) {
  w.validate();
  if (gate_losses.size() != w.alphas.size() || trans_costs.size() != w.betas.size()) {
    throw ConfigError("objective terms are not aligned with the GC layers");
  }
  Objective obj;
  Var total = scale(final_loss, static_cast<float>(w.eta()));
  for (std::size_t i = 0; i < gate_losses.size(); ++i) {
    total = add(total, scale(gate_losses[i], static_cast<float>(w.alphas[i])));
    total = add(total, scale(trans_costs[i], static_cast<float>(w.betas[i])));
    obj.gate_terms.push_back(gate_losses[i].value().item());
    obj.trans_terms.push_back(trans_costs[i].value().item());
  }
  total = add(total, scale(penalty, static_cast<float>(w.xi)));
  obj.total = total;
  obj.final_loss = final_loss.value().item();
  obj.penalty = penalty.value().item();
  return obj;
}

/// Recombines logged components the same way total_objective weights them.
inline double recombine(const LossWeights& w, std::span<const double> gate, std::span<const double> trans,
                        double final_loss, double penalty) {
  double total = w.eta() * final_loss + w.xi * penalty;
  for (std::size_t i = 0; i < gate.size(); ++i) total += w.alphas[i] * gate[i] + w.betas[i] * trans[i];
  return total;
}

}  // namespace gcl

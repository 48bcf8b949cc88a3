#pragma once

// Test helpers: random tensors, a central-difference gradient oracle, and
// small gated networks.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <random>
#include <vector>

#include "gcl/gcl.hpp"

namespace gcl::fixtures {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

/// Moves every entry at least `margin` away from each kink.
inline void avoid_kinks(Tensor& t, std::initializer_list<float> kinks, float margin) {
  for (float& v : t.values()) {
    for (float k : kinks) {
      if (std::fabs(v - k) < margin) v = v < k ? k - margin : k + margin;
    }
  }
}

using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheck {
  double rel_error = 0.0;  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
  double abs_error = 0.0;
};

/// Compares backward() against central differences over every input entry.
inline GradCheck check_gradients(const ScalarFn& f, std::vector<Tensor> inputs, float h = 1e-3f) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    Var out = f(g, leaves);
    g.backward(out);
    for (auto v : leaves) analytic.push_back(v.grad());
  }
  auto eval = [&](const std::vector<Tensor>& in) {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : in) leaves.push_back(g.constant(t));
    return static_cast<double>(f(g, leaves).value().item());
  };
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0, worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const float orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = eval(inputs);
      inputs[k][i] = orig - h;
      const double down = eval(inputs);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * static_cast<double>(h));
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      worst = std::max(worst, std::fabs(a - numeric));
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return {std::sqrt(diff2) / denom, worst};
}

/// A small dense/residual net with gates at the given fractions and weights
/// drawn from the seed.
inline Network toy_network(std::size_t input, std::size_t width, std::size_t trunk_blocks, std::size_t classes,
                           std::vector<double> fractions, std::uint64_t seed, double alpha = 0.2, double beta = 0.3) {
  Network net = make_network(input, classes, dense_stack(trunk_blocks, width, classes), seed);
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    GcConfig c;
    c.alpha = alpha;
    c.beta = beta;
    c.seed = seed * 31 + i;
    c.pool_window = 2;
    net = insert_gc(std::move(net), fractions[i], c);
  }
  return net;
}

/// Random φ mixing values on both sides of the binarization threshold.
inline void randomize_phi(Network& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-0.2f, 1.2f);
  for (auto& l : net.gc_layers) {
    for (float& v : l.phi.values()) v = u(rng);
  }
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  std::vector<int> y(n);
  for (int& v : y) v = u(rng);
  return y;
}


/// The training objective on one batch, optionally with fixed masks in place
/// of Γ(σ(φ)).
inline Objective objective_on(Graph& g, const Network& net, const Tensor& x, std::span<const int> y,
                              const LossWeights& w, const ForwardOptions& opt, TrainForward* out = nullptr) {
  const auto omega = ClassMapping::background_vs_rest(net.num_classes);
  TrainForward f = forward_train(g, net, x, opt);
  std::vector<Var> gates, trans;
  for (std::size_t i = 0; i < net.gc_layers.size(); ++i) {
    gates.push_back(gate_loss(f.gate_logits[i], y, omega));
    trans.push_back(trans_cost(f.params.phi[i]));
  }
  const auto params = detail::flatten_vars(f.params);
  Objective o = total_objective(gates, trans, softmax_cross_entropy(f.final_logits, y), parameter_penalty(params), w);
  if (out) *out = f;
  return o;
}

struct ObjectiveCheck {
  GradCheck grad;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose ±h step crosses a ReLU kink
};

/// Finite-difference check of the whole objective on a gated net. φ is kept
/// clear of the threshold; its straight-through gradient is checked as
/// dL/dmask · 1[0<φ<1] plus the smooth φ terms with the mask held fixed.
/// A coordinate is skipped when the +h and −h evaluations disagree on which
/// graph values are exactly zero, i.e. the step crosses a ReLU kink.
inline ObjectiveCheck check_objective_gradients(Network net, const Tensor& x, const std::vector<int>& y, double xi,
                                                float h = 1e-2f) {
  const LossWeights w = LossWeights::from_network(net, xi);
  std::vector<Tensor> analytic;
  {
    Graph g;
    TrainForward f;
    Objective o = objective_on(g, net, x, y, w, {}, &f);
    g.backward(o.total);
    for (auto v : detail::flatten_vars(f.params)) analytic.push_back(v.grad());
  }
  std::vector<std::optional<Tensor>> masks;
  for (const auto& l : net.gc_layers) masks.push_back(binary_mask(l.phi));
  struct Eval {
    double value;
    std::vector<bool> zeros;
  };
  auto eval = [&]() {
    Graph g;
    ForwardOptions opt;
    opt.requires_grad = false;
    opt.mask_override = masks;
    Eval e{static_cast<double>(objective_on(g, net, x, y, w, opt).total.value().item()), {}};
    for (std::size_t id = 0; id < g.size(); ++id) {
      for (float v : g.value(id).values()) e.zeros.push_back(v == 0.0f);
    }
    return e;
  };
  // nullopt when the step crosses a kink
  auto central = [&](float& slot) -> std::optional<double> {
    const float orig = slot;
    slot = orig + h;
    const Eval up = eval();
    slot = orig - h;
    const Eval down = eval();
    slot = orig;
    if (up.zeros != down.zeros) return std::nullopt;
    return (up.value - down.value) / (2.0 * static_cast<double>(h));
  };

  ObjectiveCheck out;
  auto refs = detail::trainable_refs(net);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0, worst = 0.0;
  std::size_t gc = 0;
  for (const auto& r : refs) {
    const Tensor& an = analytic[r.var_slot];
    for (std::size_t i = 0; i < r.tensor->size(); ++i) {
      auto numeric = central((*r.tensor)[i]);
      if (numeric && r.group == detail::ParamGroup::mask) {
        const float phi = (*r.tensor)[i];
        if (phi > 0.0f && phi < 1.0f) {
          const auto via_mask = central((*masks[gc])[i]);
          numeric = via_mask ? std::optional<double>(*numeric + *via_mask) : std::nullopt;
        }
      }
      if (!numeric) {
        ++out.skipped;
        continue;
      }
      ++out.checked;
      const double a = an[i];
      diff2 += (a - *numeric) * (a - *numeric);
      a2 += a * a;
      n2 += *numeric * *numeric;
      worst = std::max(worst, std::fabs(a - *numeric));
    }
    if (r.group == detail::ParamGroup::mask) ++gc;
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  out.grad = {std::sqrt(diff2) / denom, worst};
  return out;
}

/// Non-zero biases everywhere, so no pre-activation sits exactly on a kink.
inline void randomize_biases(Network& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-0.2f, 0.2f);
  for (auto& b : net.blocks) {
    for (float& v : b.bias.values()) v = u(rng);
  }
  for (auto& l : net.gc_layers) {
    for (float& v : l.gate_bias.values()) v = u(rng);
  }
}

/// φ values on both sides of the threshold but away from 0, 1/2 and 1.
inline void phi_clear_of_kinks(Network& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.1f, 0.4f);
  std::bernoulli_distribution side(0.5);
  for (auto& l : net.gc_layers) {
    for (float& v : l.phi.values()) v = side(rng) ? u(rng) : u(rng) + 0.5f;
  }
}

}  // namespace gcl::fixtures

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "gcl/autograd.hpp"
#include "gcl/data.hpp"
#include "gcl/error.hpp"
#include "gcl/inference.hpp"
#include "gcl/metrics.hpp"
#include "gcl/network.hpp"
#include "gcl/objective.hpp"

namespace gcl {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (!param.same_shape(grad)) throw DimensionError("adam_step: gradient shape does not match parameter");
  if (state.m.empty()) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  if (!state.m.same_shape(param)) throw DimensionError("adam_step: state shape does not match parameter");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    const double step = lr * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
    param[i] = static_cast<float>(param[i] - step);
  }
}

// ---------------------------------------------------------------------------
// Configuration and history
// ---------------------------------------------------------------------------

enum class TrainMode { end_to_end, two_stage, gate_only, compression_only };

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::end_to_end;
  std::size_t stage_epochs = 1;  // N for two_stage
  double xi = 1e-4;
  AdamConfig adam;
  double divergence_limit = 1e4;
  ClassMapping omega;             // gate targets; background_vs_rest when empty
  GatePolicy eval_policy = GatePolicy::all_gates();

  /// Full-scale preset: 200 epochs, batch 512, fixed lr 0.01.
  static TrainConfig full_scale() {
    TrainConfig c;
    c.epochs = 200;
    c.batch_size = 512;
    return c;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0.0;
  std::vector<double> gate_loss;
  std::vector<double> trans_cost;
  double final_loss = 0.0;
  double penalty = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
};

struct TrainResult {
  Network net;
  std::vector<EpochRecord> history;
  LossWeights weights;
};

inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  const std::size_t gates = history.empty() ? 0 : history.front().gate_loss.size();
  os << "epoch,total";
  for (std::size_t i = 0; i < gates; ++i) os << ",gate_loss_" << i;
  for (std::size_t i = 0; i < gates; ++i) os << ",trans_cost_" << i;
  os << ",final_loss,penalty,train_acc,val_acc\n";
  os.precision(9);
  for (const auto& r : history) {
    os << r.epoch << ',' << r.total;
    for (double v : r.gate_loss) os << ',' << v;
    for (double v : r.trans_cost) os << ',' << v;
    os << ',' << r.final_loss << ',' << r.penalty << ',' << r.train_acc << ',';
    if (r.val_acc) os << *r.val_acc;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

enum class ParamGroup { trunk, mask, gate };

struct TrainableRef {
  Tensor* tensor;
  ParamGroup group;
  std::size_t var_slot;  // index into the flattened ParamVars ordering
};

inline std::vector<TrainableRef> trainable_refs(Network& net) {
  std::vector<TrainableRef> refs;
  std::size_t slot = 0;
  for (auto& b : net.blocks) {
    refs.push_back({&b.weight, ParamGroup::trunk, slot++});
    refs.push_back({&b.bias, ParamGroup::trunk, slot++});
  }
  for (auto& l : net.gc_layers) {
    refs.push_back({&l.phi, ParamGroup::mask, slot++});
    refs.push_back({&l.gate_weight, ParamGroup::gate, slot++});
    refs.push_back({&l.gate_bias, ParamGroup::gate, slot++});
  }
  return refs;
}

// Same ordering as trainable_refs.
inline std::vector<Var> flatten_vars(const ParamVars& p) {
  std::vector<Var> v;
  for (std::size_t i = 0; i < p.block_weight.size(); ++i) {
    v.push_back(p.block_weight[i]);
    v.push_back(p.block_bias[i]);
  }
  for (std::size_t i = 0; i < p.phi.size(); ++i) {
    v.push_back(p.phi[i]);
    v.push_back(p.gate_weight[i]);
    v.push_back(p.gate_bias[i]);
  }
  return v;
}

struct GroupMask {
  bool trunk = true, mask = true, gate = true;
  bool allows(ParamGroup g) const {
    return g == ParamGroup::trunk ? trunk : g == ParamGroup::mask ? mask : gate;
  }
};

}  // namespace detail

/// Loss-term values of one batch plus the graph total.
struct BatchObjective {
  Objective objective;
  std::size_t correct = 0;  // final-head argmax hits
};

/// Builds the full objective for one batch on graph g.
inline BatchObjective batch_objective(Graph& g, const Network& net, const Tensor& x, std::span<const int> labels,
                                      const LossWeights& w, const ClassMapping& omega, bool barrier,
                                      TrainForward* forward_out = nullptr) {
  ForwardOptions opt;
  opt.barrier = barrier;
  TrainForward f = forward_train(g, net, x, opt);
  std::vector<Var> gate_terms, trans_terms;
  for (std::size_t i = 0; i < net.gc_layers.size(); ++i) {
    gate_terms.push_back(gate_loss(f.gate_logits[i], labels, omega));
    trans_terms.push_back(trans_cost(f.params.phi[i]));
  }
  Var final_loss = softmax_cross_entropy(f.final_logits, labels);
  const auto all = detail::flatten_vars(f.params);
  Var penalty = parameter_penalty(all);
  BatchObjective out{total_objective(gate_terms, trans_terms, final_loss, penalty, w), 0};
  const Tensor& logits = f.final_logits.value();
  for (std::size_t r = 0; r < labels.size(); ++r) out.correct += argmax(logits.row(r)) == labels[r] ? 1 : 0;
  if (forward_out) *forward_out = f;
  return out;
}

/// Trains `net` on split.train, recording each objective term per epoch.
/// Deterministic for a fixed config, seed and data.
inline TrainResult train(Network net, const DataSplit& split, const TrainConfig& cfg) {
  const Dataset& data = split.train;
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (data.size() == 0) throw DataError("empty training set");
  if (data.width() != net.input_width) throw ConfigError("training data width does not match the network input");
  if (cfg.mode == TrainMode::two_stage) {
    if (cfg.stage_epochs == 0) throw ConfigError("two-stage training needs N >= 1");
    if (cfg.epochs % cfg.stage_epochs != 0) throw ConfigError("two-stage N must divide the epoch count");
    if (net.gc_layers.empty()) throw ConfigError("two-stage training needs a gated network");
  }
  for (int y : data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.num_classes) {
      throw ConfigError("label " + std::to_string(y) + " outside the classifier head");
    }
  }
  const ClassMapping omega =
      cfg.omega.domain_size() == 0 ? ClassMapping::background_vs_rest(net.num_classes) : cfg.omega;
  for (const auto& l : net.gc_layers) {
    if (l.gate_classes() != omega.image_size()) throw ConfigError("gate head size does not match the class mapping");
  }

  if (cfg.mode == TrainMode::gate_only) {
    for (auto& l : net.gc_layers) l.phi.fill(1.0f);
  }
  if (cfg.mode == TrainMode::compression_only) {
    for (auto& l : net.gc_layers) l.alpha = 0.0;
  }
  LossWeights w = LossWeights::from_network(net, cfg.xi);
  w.validate();

  auto refs = detail::trainable_refs(net);
  std::vector<AdamState> adam(refs.size());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  const std::size_t gates = net.gc_layers.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::GroupMask update;
    bool barrier = false;
    switch (cfg.mode) {
      case TrainMode::end_to_end: break;
      case TrainMode::gate_only: update.mask = false; break;
      case TrainMode::compression_only: update.gate = false; break;
      case TrainMode::two_stage: {
        barrier = true;
        const bool gate_phase = (epoch / cfg.stage_epochs) % 2 == 0;
        update.trunk = !gate_phase;
        update.gate = gate_phase;
        update.mask = gate_phase;
        break;
      }
    }

    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.gate_loss.assign(gates, 0.0);
    rec.trans_cost.assign(gates, 0.0);
    std::size_t correct = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor x = data.rows(idx);
      const auto labels = data.labels_at(idx);

      Graph g;
      TrainForward f;
      BatchObjective bo;
      try {
        bo = batch_objective(g, net, x, labels, w, omega, barrier, &f);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const float total = bo.objective.total.value().item();
      if (!std::isfinite(total) || std::fabs(total) > cfg.divergence_limit) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (loss " +
                           std::to_string(total) + ")");
      }
      g.backward(bo.objective.total);
      const auto vars = detail::flatten_vars(f.params);
      for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!update.allows(refs[i].group)) continue;
        adam_step(*refs[i].tensor, vars[refs[i].var_slot].grad(), adam[i], cfg.learning_rate, cfg.adam);
      }

      const double n = static_cast<double>(idx.size());
      rec.total += n * total;
      for (std::size_t i = 0; i < gates; ++i) {
        rec.gate_loss[i] += n * bo.objective.gate_terms[i];
        rec.trans_cost[i] += n * bo.objective.trans_terms[i];
      }
      rec.final_loss += n * bo.objective.final_loss;
      rec.penalty += n * bo.objective.penalty;
      correct += bo.correct;
    }

    const double inv = 1.0 / static_cast<double>(data.size());
    rec.total *= inv;
    for (auto& v : rec.gate_loss) v *= inv;
    for (auto& v : rec.trans_cost) v *= inv;
    rec.final_loss *= inv;
    rec.penalty *= inv;
    rec.train_acc = static_cast<double>(correct) * inv;
    if (split.val.size() > 0) {
      rec.val_acc = accuracy(infer_dataset(net, split.val, cfg.eval_policy), split.val.labels);
    }
    result.history.push_back(std::move(rec));
  }
  result.net = std::move(net);
  result.weights = w;
  return result;
}

/// Alternating schedule: N epochs on the gate (and φ) with a gradient barrier
/// at the GC boundary, then N epochs on the trunk, repeated.
inline TrainResult two_stage_schedule(Network net, const DataSplit& split, TrainConfig cfg) {
  cfg.mode = TrainMode::two_stage;
  return train(std::move(net), split, cfg);
}

}  // namespace gcl

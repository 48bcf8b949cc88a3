#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gcl/autograd.hpp"
#include "gcl/error.hpp"
#include "gcl/tensor.hpp"

namespace gcl {

enum class BlockKind { dense, residual_dense, classifier_head };
enum class Activation { relu, none };

struct BlockSpec {
  BlockKind kind = BlockKind::dense;
  std::size_t width = 0;
  Activation activation = Activation::relu;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct Block {
  BlockSpec spec;
  Tensor weight;  // [in x width]
  Tensor bias;    // [width]
};

enum class GateTap { pre_compression, post_compression };
enum class PhiInit { near_threshold, all_pass };

/// Hyperparameters for a GC layer being inserted.
struct GcConfig {
  double alpha = 0.5;
  double beta = 0.0;
  GateTap tap = GateTap::post_compression;
  std::size_t gate_classes = 2;
  std::size_t pool_window = 2;
  PhiInit phi_init = PhiInit::near_threshold;
  std::uint64_t seed = 0;
};

/// Gate + compression layer attached after a trunk block.
struct GCLayer {
  std::size_t after_block = 0;  // number of trunk blocks feeding this layer
  double position_fraction = 0.0;
  Tensor phi;          // [m], continuous mask weights
  Tensor gate_weight;  // [m / pool_window x gate_classes]
  Tensor gate_bias;    // [gate_classes]
  double alpha = 0.0;
  double beta = 0.0;
  GateTap tap = GateTap::post_compression;
  std::size_t pool_window = 1;

  std::size_t width() const { return phi.size(); }
  std::size_t gate_classes() const { return gate_bias.size(); }
};

struct Network {
  std::size_t input_width = 0;
  std::size_t num_classes = 0;
  std::vector<Block> blocks;       // trunk blocks followed by exactly one classifier head
  std::vector<GCLayer> gc_layers;  // strictly increasing after_block

  std::size_t trunk_blocks() const { return blocks.empty() ? 0 : blocks.size() - 1; }

  /// Feature width entering block i (0-based).
  std::size_t width_into(std::size_t i) const { return i == 0 ? input_width : blocks.at(i - 1).spec.width; }
};

/// Binarized mask Γ(σ(φ)) as plain values.
inline Tensor binary_mask(const Tensor& phi) {
  Tensor m = phi;
  for (auto& v : m.values()) v = std::min(1.0f, std::max(0.0f, v)) > 0.5f ? 1.0f : 0.0f;
  return m;
}

inline std::size_t mask_nonzeros(const Tensor& phi) {
  const Tensor m = binary_mask(phi);
  return static_cast<std::size_t>(std::count(m.values().begin(), m.values().end(), 1.0f));
}

namespace detail {

inline Tensor uniform_tensor(Shape shape, float lo, float hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor fan_in_weights(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const float limit = 1.0f / std::sqrt(static_cast<float>(in));
  return uniform_tensor({in, out}, -limit, limit, rng);
}

}  // namespace detail

inline void validate_blocks(std::size_t input_width, std::size_t num_classes, const std::vector<BlockSpec>& specs) {
  if (input_width == 0 || num_classes == 0) throw ConfigError("input width and class count must be positive");
  if (specs.empty() || specs.back().kind != BlockKind::classifier_head) {
    throw ConfigError("network must end with a classifier_head block");
  }
  std::size_t width = input_width;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.width == 0) throw ConfigError("block " + std::to_string(i) + " has zero width");
    if (s.kind == BlockKind::classifier_head && i + 1 != specs.size()) {
      throw ConfigError("classifier_head must appear exactly once, last");
    }
    if (s.kind == BlockKind::residual_dense && s.width != width) {
      throw ConfigError("residual block " + std::to_string(i) + " needs input width " + std::to_string(width) +
                        " == output width " + std::to_string(s.width));
    }
    width = s.width;
  }
  if (specs.back().width != num_classes) throw ConfigError("classifier_head width must equal num_classes");
}

/// Builds an ungated network with fan-in scaled uniform weights and zero biases.
inline Network make_network(std::size_t input_width, std::size_t num_classes, const std::vector<BlockSpec>& specs,
                            std::uint64_t seed) {
  validate_blocks(input_width, num_classes, specs);
  std::mt19937_64 rng(seed);
  Network net;
  net.input_width = input_width;
  net.num_classes = num_classes;
  std::size_t width = input_width;
  for (const auto& s : specs) {
    BlockSpec spec = s;
    if (spec.kind == BlockKind::classifier_head) spec.activation = Activation::none;
    net.blocks.push_back(Block{spec, detail::fan_in_weights(width, spec.width, rng), Tensor({spec.width})});
    width = spec.width;
  }
  return net;
}

/// The desk-scale trunk: one dense projection, then residual blocks of the
/// same width, then the classifier head.
inline std::vector<BlockSpec> dense_stack(std::size_t trunk_blocks, std::size_t width, std::size_t num_classes) {
  std::vector<BlockSpec> specs;
  for (std::size_t i = 0; i < trunk_blocks; ++i) {
    specs.push_back({i == 0 ? BlockKind::dense : BlockKind::residual_dense, width, Activation::relu});
  }
  specs.push_back({BlockKind::classifier_head, num_classes, Activation::none});
  return specs;
}

/// Block boundary for a fractional depth: round(fraction * B) clamped to [1, B-1].
inline std::size_t gc_position(std::size_t trunk_blocks, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("GC fraction must lie in (0, 1)");
  if (trunk_blocks < 2) throw ConfigError("need at least two trunk blocks to insert a GC layer");
  const auto pos = static_cast<long>(std::lround(fraction * static_cast<double>(trunk_blocks)));
  return static_cast<std::size_t>(std::clamp<long>(pos, 1, static_cast<long>(trunk_blocks) - 1));
}

inline Network insert_gc(Network net, double fraction, const GcConfig& cfg) {
  const std::size_t after = gc_position(net.trunk_blocks(), fraction);
  for (const auto& g : net.gc_layers) {
    if (g.after_block == after) {
      throw ConfigError("a GC layer already sits after block " + std::to_string(after));
    }
  }
  if (cfg.alpha < 0.0 || cfg.alpha >= 1.0) throw ConfigError("alpha must lie in [0, 1)");
  if (cfg.beta < 0.0) throw ConfigError("beta must be non-negative");
  double alpha_sum = cfg.alpha;
  for (const auto& g : net.gc_layers) alpha_sum += g.alpha;
  if (alpha_sum >= 1.0) throw ConfigError("sum of gate alphas must stay below 1");
  if (cfg.gate_classes < 2) throw ConfigError("a gate needs at least two classes");

  const std::size_t m = net.blocks[after - 1].spec.width;
  const std::size_t pool = cfg.pool_window == 0 ? 1 : cfg.pool_window;
  if (pool > m) throw ConfigError("gate pool window larger than feature width");

  std::mt19937_64 rng(cfg.seed);
  GCLayer layer;
  layer.after_block = after;
  layer.position_fraction = fraction;
  layer.phi = cfg.phi_init == PhiInit::all_pass ? Tensor({m}, 1.0f) : detail::uniform_tensor({m}, 0.45f, 0.55f, rng);
  layer.gate_weight = detail::fan_in_weights(m / pool, cfg.gate_classes, rng);
  layer.gate_bias = Tensor({cfg.gate_classes});
  layer.alpha = cfg.alpha;
  layer.beta = cfg.beta;
  layer.tap = cfg.tap;
  layer.pool_window = pool;

  auto it = std::find_if(net.gc_layers.begin(), net.gc_layers.end(),
                         [&](const GCLayer& g) { return g.after_block > after; });
  net.gc_layers.insert(it, std::move(layer));
  return net;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Graph handles for every trainable tensor of a network.
struct ParamVars {
  std::vector<Var> block_weight, block_bias;
  std::vector<Var> phi, gate_weight, gate_bias;
};

inline ParamVars bind_parameters(Graph& g, const Network& net, bool requires_grad) {
  ParamVars p;
  for (const auto& b : net.blocks) {
    p.block_weight.push_back(g.leaf(b.weight, requires_grad));
    p.block_bias.push_back(g.leaf(b.bias, requires_grad));
  }
  for (const auto& l : net.gc_layers) {
    p.phi.push_back(g.leaf(l.phi, requires_grad));
    p.gate_weight.push_back(g.leaf(l.gate_weight, requires_grad));
    p.gate_bias.push_back(g.leaf(l.gate_bias, requires_grad));
  }
  return p;
}

namespace detail {

inline void check_finite(Var v, const std::string& where) {
  if (!v.value().all_finite()) throw NumericError("non-finite activation at " + where);
}

inline Var apply_block(const BlockSpec& spec, Var x, Var w, Var b) {
  Var z = add(matmul(x, w), b);
  if (spec.activation == Activation::relu) z = relu(z);
  if (spec.kind == BlockKind::residual_dense) z = add(z, x);
  return z;
}

struct GcOutput {
  Var mask;
  Var compressed;
  Var gate_logits;
};

// barrier: the gate branch sees a detached trunk activation and the trunk sees
// a detached mask, so gate loss never reaches the trunk and final loss never
// reaches phi.
inline GcOutput apply_gc(const GCLayer& layer, Var h, Var phi, Var gw, Var gb, const Tensor* mask_override,
                         bool barrier) {
  Graph& g = *h.graph;
  Var mask = mask_override ? g.constant(*mask_override) : binarize_ste(relu1(phi));
  if (mask.value().size() != h.value().cols()) throw DimensionError("mask width does not match activation width");
  Var compressed = mul(h, barrier ? stop_gradient(mask) : mask);
  Var gate_src = layer.tap == GateTap::post_compression ? (barrier ? mul(stop_gradient(h), mask) : compressed)
                                                        : (barrier ? stop_gradient(h) : h);
  const std::size_t m = h.value().cols();
  Var pooled = layer.pool_window > 1 ? mean_pool(gate_src, 1, m, 1, layer.pool_window) : gate_src;
  Var logits = add(matmul(pooled, gw), gb);
  return {mask, compressed, logits};
}

}  // namespace detail

struct ForwardOptions {
  bool requires_grad = true;
  bool barrier = false;
  /// Per GC layer, an explicit mask used instead of Γ(σ(φ)).
  std::vector<std::optional<Tensor>> mask_override;
};

struct TrainForward {
  ParamVars params;
  std::vector<Var> hidden;       // trunk activation entering each GC layer
  std::vector<Var> masks;        // applied mask per GC layer
  std::vector<Var> compressed;   // h ∘ mask per GC layer
  std::vector<Var> gate_logits;  // per GC layer
  Var final_logits;
};

/// Full forward pass. Every sample runs end to end; gates only produce logits.
inline TrainForward forward_train(Graph& g, const Network& net, const Tensor& x, const ForwardOptions& opt = {}) {
  if (x.rank() != 2 || x.cols() != net.input_width) {
    throw DimensionError("input " + shape_str(x.shape()) + " does not match network width " +
                         std::to_string(net.input_width));
  }
  TrainForward out;
  out.params = bind_parameters(g, net, opt.requires_grad);
  Var h = g.constant(x);
  std::size_t next_gc = 0;
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    h = detail::apply_block(net.blocks[i].spec, h, out.params.block_weight[i], out.params.block_bias[i]);
    detail::check_finite(h, "block " + std::to_string(i));
    if (next_gc < net.gc_layers.size() && net.gc_layers[next_gc].after_block == i + 1) {
      const auto& layer = net.gc_layers[next_gc];
      const Tensor* ov = next_gc < opt.mask_override.size() && opt.mask_override[next_gc]
                             ? &*opt.mask_override[next_gc]
                             : nullptr;
      auto gc = detail::apply_gc(layer, h, out.params.phi[next_gc], out.params.gate_weight[next_gc],
                                 out.params.gate_bias[next_gc], ov, opt.barrier);
      detail::check_finite(gc.gate_logits, "gate " + std::to_string(next_gc));
      out.hidden.push_back(h);
      out.masks.push_back(gc.mask);
      out.compressed.push_back(gc.compressed);
      out.gate_logits.push_back(gc.gate_logits);
      h = gc.compressed;
      ++next_gc;
    }
  }
  out.final_logits = h;
  return out;
}

/// Plain-value result of a monolithic forward pass.
struct EvalForward {
  std::vector<Tensor> gate_logits;
  std::vector<Tensor> compressed;
  Tensor final_logits;
};

inline EvalForward forward_eval(const Network& net, const Tensor& x) {
  Graph g;
  ForwardOptions opt;
  opt.requires_grad = false;
  auto f = forward_train(g, net, x, opt);
  EvalForward e;
  for (auto v : f.gate_logits) e.gate_logits.push_back(v.value());
  for (auto v : f.compressed) e.compressed.push_back(v.value());
  e.final_logits = f.final_logits.value();
  return e;
}

// ---------------------------------------------------------------------------
// Splitting into sequentially invoked parts
// ---------------------------------------------------------------------------

/// One sub-network: a run of trunk blocks closed either by a GC layer or by the
/// classifier head (the last part).
struct NetworkPart {
  std::size_t input_width = 0;
  std::size_t first_block = 0;  // index of blocks[0] in the monolithic network
  std::vector<Block> blocks;
  std::optional<GCLayer> gc;
};

struct PartOutput {
  Tensor activation;  // compressed activation, or logits for the last part
  std::optional<Tensor> gate_logits;
};

inline std::vector<NetworkPart> split_at_gc(const Network& net) {
  if (net.gc_layers.empty()) throw ConfigError("split_at_gc needs at least one GC layer");
  std::vector<NetworkPart> parts;
  std::size_t start = 0;
  for (const auto& layer : net.gc_layers) {
    NetworkPart p;
    p.input_width = net.width_into(start);
    p.first_block = start;
    p.blocks.assign(net.blocks.begin() + static_cast<long>(start),
                    net.blocks.begin() + static_cast<long>(layer.after_block));
    p.gc = layer;
    parts.push_back(std::move(p));
    start = layer.after_block;
  }
  NetworkPart last;
  last.input_width = net.width_into(start);
  last.first_block = start;
  last.blocks.assign(net.blocks.begin() + static_cast<long>(start), net.blocks.end());
  parts.push_back(std::move(last));
  return parts;
}

inline Network merge_parts(const std::vector<NetworkPart>& parts, std::size_t num_classes) {
  if (parts.empty()) throw ConfigError("no parts to merge");
  Network net;
  net.input_width = parts.front().input_width;
  net.num_classes = num_classes;
  for (const auto& p : parts) {
    net.blocks.insert(net.blocks.end(), p.blocks.begin(), p.blocks.end());
    if (p.gc) net.gc_layers.push_back(*p.gc);
  }
  return net;
}

/// Runs one part with the same op sequence the monolithic forward uses.
inline PartOutput run_part(const NetworkPart& part, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != part.input_width) {
    throw DimensionError("part input " + shape_str(x.shape()) + " expected width " + std::to_string(part.input_width));
  }
  Graph g;
  Var h = g.constant(x);
  for (std::size_t i = 0; i < part.blocks.size(); ++i) {
    const auto& b = part.blocks[i];
    h = detail::apply_block(b.spec, h, g.constant(b.weight), g.constant(b.bias));
    detail::check_finite(h, "block " + std::to_string(part.first_block + i));
  }
  PartOutput out;
  if (part.gc) {
    auto gc = detail::apply_gc(*part.gc, h, g.constant(part.gc->phi), g.constant(part.gc->gate_weight),
                               g.constant(part.gc->gate_bias), nullptr, false);
    out.gate_logits = gc.gate_logits.value();
    h = gc.compressed;
  }
  out.activation = h.value();
  return out;
}

/// Invokes the parts in order and returns the last part's output.
inline Tensor run_parts(const std::vector<NetworkPart>& parts, const Tensor& x) {
  Tensor h = x;
  for (const auto& p : parts) h = run_part(p, h).activation;
  return h;
}

}  // namespace gcl

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcl/error.hpp"
#include "gcl/tensor.hpp"

namespace gcl {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, {}, nullptr);
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var push(Tensor value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(inputs), std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target with respect to node id. A node
  /// that received no gradient reports zeros of its own shape.
  const Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// Adds g into the gradient buffer of node id (shared subexpressions sum).
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor{};
  }

  void backward(Var loss) {
    if (loss.graph != this) throw Error(ErrorKind::config, "backward target belongs to another graph");
    if (value(loss.id).size() != 1) throw DimensionError("backward target must be a scalar");
    accumulate(loss.id, Tensor::scalar(1.0f));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }
inline const Tensor& Var::grad() const { return graph->grad(id); }
inline bool Var::requires_grad() const { return graph->requires_grad(id); }

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw Error(ErrorKind::config, "operands from different graphs");
  return *a.graph;
}

// b broadcasts over a when it is a vector matching a's trailing dimension.
inline bool row_broadcast(const Tensor& a, const Tensor& b) {
  return !a.same_shape(b) && b.rank() == 1 && a.rank() == 2 && a.cols() == b.size();
}

inline void check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b) && !row_broadcast(a, b)) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename F>
Var unary(Var x, Tensor out, F&& backward_elem) {
  Graph& g = *x.graph;
  const bool rg = g.requires_grad(x.id);
  return g.push(std::move(out), rg, {x.id},
                [xid = x.id, f = std::forward<F>(backward_elem)](Graph& gr, std::size_t self) {
                  const Tensor& up = gr.grad(self);
                  const Tensor& xv = gr.value(xid);
                  Tensor gx(xv.shape());
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = f(xv[i], up[i]);
                  gr.accumulate(xid, gx);
                });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  Tensor c = kernels::matmul(a.value(), b.value());
  const bool rg = a.requires_grad() || b.requires_grad();
  return g.push(std::move(c), rg, {a.id, b.id}, [aid = a.id, bid = b.id](Graph& gr, std::size_t self) {
    const Tensor& up = gr.grad(self);
    const Tensor& av = gr.value(aid);
    const Tensor& bv = gr.value(bid);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (gr.requires_grad(aid)) {
      Tensor ga({m, k});
      kernels::gemm_a_bt_acc(up.values(), bv.values(), ga.values(), m, n, k);
      gr.accumulate(aid, ga);
    }
    if (gr.requires_grad(bid)) {
      Tensor gb({k, n});
      kernels::gemm_at_b_acc(av.values(), up.values(), gb.values(), m, k, n);
      gr.accumulate(bid, gb);
    }
  });
}

/// Elementwise sum; b may be a row vector broadcast over the rows of a.
inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::check_binary("add", av, bv);
  const bool bc = detail::row_broadcast(av, bv);
  Tensor c = av;
  if (bc) {
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto row = c.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
    }
  } else {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
  }
  return g.push(std::move(c), a.requires_grad() || b.requires_grad(), {a.id, b.id},
                [aid = a.id, bid = b.id, bc](Graph& gr, std::size_t self) {
                  const Tensor& up = gr.grad(self);
                  gr.accumulate(aid, up);
                  if (!gr.requires_grad(bid)) return;
                  if (!bc) {
                    gr.accumulate(bid, up);
                    return;
                  }
                  Tensor gb(gr.value(bid).shape());
                  for (std::size_t r = 0; r < up.rows(); ++r) {
                    auto row = up.row(r);
                    for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
                  }
                  gr.accumulate(bid, gb);
                });
}

/// Hadamard product; b may be a row vector broadcast over the rows of a
/// (this is how a feature mask is applied to a batch).
inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::check_binary("mul", av, bv);
  const bool bc = detail::row_broadcast(av, bv);
  Tensor c = av;
  if (bc) {
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto row = c.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] *= bv[j];
    }
  } else {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  }
  return g.push(std::move(c), a.requires_grad() || b.requires_grad(), {a.id, b.id},
                [aid = a.id, bid = b.id, bc](Graph& gr, std::size_t self) {
                  const Tensor& up = gr.grad(self);
                  const Tensor& av = gr.value(aid);
                  const Tensor& bv = gr.value(bid);
                  if (gr.requires_grad(aid)) {
                    Tensor ga = up;
                    if (bc) {
                      for (std::size_t r = 0; r < ga.rows(); ++r) {
                        auto row = ga.row(r);
                        for (std::size_t j = 0; j < row.size(); ++j) row[j] *= bv[j];
                      }
                    } else {
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
                    }
                    gr.accumulate(aid, ga);
                  }
                  if (gr.requires_grad(bid)) {
                    Tensor gb(bv.shape());
                    if (bc) {
                      for (std::size_t r = 0; r < up.rows(); ++r) {
                        for (std::size_t j = 0; j < bv.size(); ++j) gb[j] += up.at(r, j) * av.at(r, j);
                      }
                    } else {
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = up[i] * av[i];
                    }
                    gr.accumulate(bid, gb);
                  }
                });
}

inline Var scale(Var x, float s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  return detail::unary(x, std::move(out), [s](float, float up) { return up * s; });
}

inline Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0f ? v : 0.0f;
  return detail::unary(x, std::move(out), [](float xv, float up) { return xv > 0.0f ? up : 0.0f; });
}

/// Clamp to [0, 1] (ReLU-1). Gradient passes only strictly inside the interval.
inline Var relu1(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::min(1.0f, std::max(0.0f, v));
  return detail::unary(x, std::move(out),
                       [](float xv, float up) { return (xv > 0.0f && xv < 1.0f) ? up : 0.0f; });
}

/// Hard threshold 1[x > 1/2] in the forward pass; the backward pass is the
/// identity (straight-through estimator). Compose with relu1 for range gating.
inline Var binarize_ste(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.5f ? 1.0f : 0.0f;
  return detail::unary(x, std::move(out), [](float, float up) { return up; });
}

/// Forward identity, no gradient flows back to x.
inline Var stop_gradient(Var x) { return x.graph->constant(x.value()); }

/// See kernels::mean_pool.
inline Var mean_pool(Var x, std::size_t grid_rows, std::size_t grid_cols, std::size_t pool_rows,
                     std::size_t pool_cols) {
  Graph& g = *x.graph;
  Tensor out = kernels::mean_pool(x.value(), grid_rows, grid_cols, pool_rows, pool_cols);
  return g.push(std::move(out), x.requires_grad(), {x.id},
                [xid = x.id, grid_cols, pool_rows, pool_cols](Graph& gr, std::size_t self) {
                  const Tensor& up = gr.grad(self);
                  const Tensor& xv = gr.value(xid);
                  const std::size_t out_c = grid_cols / pool_cols;
                  const float inv = 1.0f / static_cast<float>(pool_rows * pool_cols);
                  Tensor gx(xv.shape());
                  for (std::size_t b = 0; b < up.rows(); ++b) {
                    auto u = up.row(b);
                    auto dst = gx.row(b);
                    for (std::size_t o = 0; o < u.size(); ++o) {
                      const std::size_t r = o / out_c, c = o % out_c;
                      for (std::size_t i = 0; i < pool_rows; ++i) {
                        for (std::size_t j = 0; j < pool_cols; ++j) {
                          dst[(r * pool_rows + i) * grid_cols + c * pool_cols + j] += u[o] * inv;
                        }
                      }
                    }
                  }
                  gr.accumulate(xid, gx);
                });
}

/// [batch, d1, d2, ...] -> [batch, d1*d2*...]
inline Var flatten(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("flatten needs a batch dimension");
  Tensor out = xv.reshaped({xv.shape()[0], xv.size() / xv.shape()[0]});
  return x.graph->push(std::move(out), x.requires_grad(), {x.id}, [xid = x.id](Graph& gr, std::size_t self) {
    gr.accumulate(xid, gr.grad(self).reshaped(gr.value(xid).shape()));
  });
}

/// Sum of squares, as a scalar.
inline Var l2_norm_sq(Var x) {
  float s = 0.0f;
  for (float v : x.value().values()) s += v * v;
  return x.graph->push(Tensor::scalar(s), x.requires_grad(), {x.id}, [xid = x.id](Graph& gr, std::size_t self) {
    const float up = gr.grad(self)[0];
    Tensor gx = gr.value(xid);
    for (auto& v : gx.values()) v *= 2.0f * up;
    gr.accumulate(xid, gx);
  });
}

inline Var mean_square(Var x) { return scale(l2_norm_sq(x), 1.0f / static_cast<float>(x.value().size())); }

/// Mean negative log-likelihood of integer labels under softmax(logits).
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.rows() != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = z.rows(), k = z.cols();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  Tensor prob(z.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto zr = z.row(r);
    const float mx = *std::max_element(zr.begin(), zr.end());
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(zr[j] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      prob.at(r, j) = static_cast<float>(std::exp(static_cast<double>(zr[j] - mx) - log_denom));
    }
    total += log_denom - static_cast<double>(zr[labels[r]] - mx);
  }
  const float loss = static_cast<float>(total / static_cast<double>(n));
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.graph->push(Tensor::scalar(loss), logits.requires_grad(), {logits.id},
                            [zid = logits.id, prob = std::move(prob), ys = std::move(ys)](Graph& gr, std::size_t self) {
                              const float up = gr.grad(self)[0] / static_cast<float>(ys.size());
                              Tensor gz = prob;
                              for (std::size_t r = 0; r < ys.size(); ++r) gz.at(r, ys[r]) -= 1.0f;
                              for (auto& v : gz.values()) v *= up;
                              gr.accumulate(zid, gz);
                            });
}

}  // namespace gcl

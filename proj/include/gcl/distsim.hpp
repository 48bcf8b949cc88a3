#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gcl/data.hpp"
#include "gcl/error.hpp"
#include "gcl/inference.hpp"
#include "gcl/network.hpp"
#include "gcl/objective.hpp"

namespace gcl {

// Costs are abstract energy units supplied by the user.

struct Island {
  std::string name;
  double per_mac_cost = 1.0;
  double active_power_weight = 1.0;
};

struct Link {
  double per_element_cost = 10.0;
  double per_bit_cost = 0.0;
};

struct IslandTopology {
  std::vector<Island> islands;
  std::vector<Link> links;  // links[i] joins islands[i] and islands[i + 1]

  void validate() const {
    if (islands.empty()) throw ConfigError("topology has no islands");
    if (links.size() + 1 != islands.size()) throw ConfigError("topology needs exactly one link between adjacent islands");
    for (const auto& i : islands) {
      if (i.per_mac_cost < 0 || i.active_power_weight < 0) throw ConfigError("island costs must be non-negative");
    }
    for (const auto& l : links) {
      if (l.per_element_cost < 0 || l.per_bit_cost < 0) throw ConfigError("link costs must be non-negative");
    }
  }

  /// Illustrative defaults: one unit per MAC, ten per transmitted element.
  static IslandTopology chain(std::size_t n) {
    IslandTopology t;
    for (std::size_t i = 0; i < n; ++i) t.islands.push_back({"island" + std::to_string(i), 1.0, 1.0});
    t.links.assign(n > 0 ? n - 1 : 0, Link{});
    return t;
  }
};

inline nlohmann::json topology_to_json(const IslandTopology& t) {
  nlohmann::json j;
  j["islands"] = nlohmann::json::array();
  for (const auto& i : t.islands) {
    j["islands"].push_back({{"name", i.name}, {"per_mac_cost", i.per_mac_cost}, {"active_power_weight", i.active_power_weight}});
  }
  j["links"] = nlohmann::json::array();
  for (const auto& l : t.links) j["links"].push_back({{"per_element_cost", l.per_element_cost}, {"per_bit_cost", l.per_bit_cost}});
  return j;
}

inline IslandTopology topology_from_json(const nlohmann::json& j) {
  try {
    IslandTopology t;
    for (const auto& i : j.at("islands")) {
      t.islands.push_back({i.at("name").get<std::string>(), i.value("per_mac_cost", 1.0), i.value("active_power_weight", 1.0)});
    }
    for (const auto& l : j.at("links")) t.links.push_back({l.value("per_element_cost", 10.0), l.value("per_bit_cost", 0.0)});
    t.validate();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed topology: ") + e.what());
  }
}

struct DeploymentStage {
  std::size_t part = 0;
  std::size_t island = 0;
  std::optional<std::size_t> outgoing_link;
};

struct DeploymentPlan {
  std::vector<NetworkPart> parts;
  IslandTopology topology;
  std::vector<DeploymentStage> stages;
};

/// Part i runs on island i; link i carries its output.
inline DeploymentPlan assign(std::vector<NetworkPart> parts, IslandTopology topology) {
  topology.validate();
  if (parts.size() != topology.islands.size()) {
    throw ConfigError(std::to_string(parts.size()) + " network parts cannot map onto " +
                      std::to_string(topology.islands.size()) + " islands");
  }
  DeploymentPlan plan;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    plan.stages.push_back({i, i, i + 1 < parts.size() ? std::optional<std::size_t>(i) : std::nullopt});
  }
  plan.parts = std::move(parts);
  plan.topology = std::move(topology);
  return plan;
}

/// MACs for one sample through a part: in·out per dense block, m for the mask
/// product and pooled·classes for the gate head.
inline std::uint64_t part_macs(const NetworkPart& part) {
  std::uint64_t macs = 0;
  std::size_t width = part.input_width;
  for (const auto& b : part.blocks) {
    macs += static_cast<std::uint64_t>(width) * b.spec.width;
    width = b.spec.width;
  }
  if (part.gc) {
    macs += part.gc->width();
    macs += static_cast<std::uint64_t>(part.gc->width() / part.gc->pool_window) * part.gc->gate_classes();
  }
  return macs;
}

struct StreamSpec {
  enum class Source { dataset, synthetic };
  std::size_t total = 1000;
  std::size_t positive = 1;
  std::size_t negative = 9;
  Source source = Source::dataset;
  std::uint64_t seed = 0;

  void validate() const {
    if (positive + negative == 0) throw ConfigError("stream ratio must not be 0:0");
    if (total == 0) throw ConfigError("stream needs at least one sample");
  }
};

/// Label-stratified resampling (with replacement) of `pool` to the stream's
/// positive:negative ratio. Background is omega(y) == 0.
inline Dataset synthesize_stream(const Dataset& pool, const StreamSpec& s, const ClassMapping& omega) {
  s.validate();
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < pool.size(); ++i) (omega(pool.labels[i]) == 0 ? neg : pos).push_back(i);
  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(s.total) * static_cast<double>(s.positive) /
                                                           static_cast<double>(s.positive + s.negative)));
  const std::size_t n_neg = s.total - n_pos;
  if ((n_pos > 0 && pos.empty()) || (n_neg > 0 && neg.empty())) throw DataError("stream pool lacks a required class");
  std::mt19937_64 rng(s.seed);
  std::vector<std::size_t> idx;
  idx.reserve(s.total);
  if (n_pos > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, pos.size() - 1);
    for (std::size_t i = 0; i < n_pos; ++i) idx.push_back(pos[pick(rng)]);
  }
  if (n_neg > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, neg.size() - 1);
    for (std::size_t i = 0; i < n_neg; ++i) idx.push_back(neg[pick(rng)]);
  }
  std::shuffle(idx.begin(), idx.end(), rng);
  return pool.subset(idx);
}

struct BoundaryReport {
  std::size_t index = 0;
  std::uint64_t samples_crossing = 0;
  std::uint64_t dense_elements = 0;  // samples_crossing · m
  std::uint64_t elements = 0;        // non-zero mask dims actually sent
  double dense_bits = 0;             // dense_elements · 32
  double sparse_bits = 0;            // Σ sparse-encoded size
  double energy = 0;
};

struct IslandReport {
  std::string name;
  std::uint64_t samples = 0;
  std::uint64_t macs = 0;
  double energy = 0;
};

struct CostReport {
  std::uint64_t samples = 0;
  std::vector<std::uint64_t> stopped_at;  // per gate
  std::vector<BoundaryReport> boundaries;
  std::vector<IslandReport> islands;
  double link_energy = 0;
  double compute_energy = 0;
  double total_energy = 0;
};

inline nlohmann::json cost_report_to_json(const CostReport& r) {
  nlohmann::json j;
  j["samples"] = r.samples;
  j["stopped_at"] = r.stopped_at;
  j["boundaries"] = nlohmann::json::array();
  for (const auto& b : r.boundaries) {
    j["boundaries"].push_back({{"index", b.index},
                               {"samples_crossing", b.samples_crossing},
                               {"dense_elements", b.dense_elements},
                               {"elements", b.elements},
                               {"dense_bits", b.dense_bits},
                               {"sparse_bits", b.sparse_bits},
                               {"energy", b.energy}});
  }
  j["islands"] = nlohmann::json::array();
  for (const auto& i : r.islands) {
    j["islands"].push_back({{"name", i.name}, {"samples", i.samples}, {"macs", i.macs}, {"energy", i.energy}});
  }
  j["link_energy"] = r.link_energy;
  j["compute_energy"] = r.compute_energy;
  j["total_energy"] = r.total_energy;
  return j;
}

/// Runs the given samples through the deployment in order. A sample stopped at
/// gate i costs nothing beyond island i.
inline CostReport simulate(const DeploymentPlan& plan, const Network& net, const Dataset& samples,
                           const GatePolicy& policy) {
  if (plan.parts.size() != net.gc_layers.size() + 1) throw ConfigError("deployment plan does not match the network");
  const auto traces = infer_dataset(net, samples, policy);
  const std::size_t k = plan.parts.size();
  CostReport r;
  r.samples = samples.size();
  r.stopped_at.assign(net.gc_layers.size(), 0);
  r.boundaries.resize(k - 1);
  for (std::size_t i = 0; i + 1 < k; ++i) r.boundaries[i].index = i;
  std::vector<std::uint64_t> executed(k, 0);
  for (const auto& t : traces) {
    executed[0] += 1;
    for (const auto& b : t.boundaries) {
      auto& br = r.boundaries[b.gc_index];
      br.samples_crossing += 1;
      br.dense_elements += b.dense_elements;
      br.elements += b.elements;
      br.sparse_bits += b.sparse_bits;
      executed[b.gc_index + 1] += 1;
    }
    if (t.exit_gate) r.stopped_at[*t.exit_gate] += 1;
  }
  for (std::size_t i = 0; i + 1 < k; ++i) {
    auto& br = r.boundaries[i];
    const auto& link = plan.topology.links[i];
    br.dense_bits = static_cast<double>(br.dense_elements) * 32.0;
    br.energy = static_cast<double>(br.elements) * link.per_element_cost + br.sparse_bits * link.per_bit_cost;
    r.link_energy += br.energy;
  }
  for (std::size_t i = 0; i < k; ++i) {
    const auto& isl = plan.topology.islands[i];
    IslandReport ir;
    ir.name = isl.name;
    ir.samples = executed[i];
    ir.macs = executed[i] * part_macs(plan.parts[i]);
    ir.energy = static_cast<double>(ir.macs) * isl.per_mac_cost * isl.active_power_weight;
    r.compute_energy += ir.energy;
    r.islands.push_back(std::move(ir));
  }
  r.total_energy = r.link_energy + r.compute_energy;
  return r;
}

/// The samples a stream delivers: resampled from `pool`, or two synthetic
/// Gaussian blobs of the given width.
inline Dataset make_stream(const Dataset& pool, const StreamSpec& stream, const ClassMapping& omega, std::size_t width) {
  if (stream.source == StreamSpec::Source::synthetic) {
    stream.validate();
    SyntheticSpec spec;
    spec.samples = stream.total;
    spec.width = width;
    spec.positive = stream.positive;
    spec.negative = stream.negative;
    spec.seed = stream.seed;
    return synthetic_gaussians(spec);
  }
  return synthesize_stream(pool, stream, omega);
}

inline CostReport simulate_stream(const DeploymentPlan& plan, const Network& net, const Dataset& pool,
                                  const StreamSpec& stream, const GatePolicy& policy, const ClassMapping& omega) {
  return simulate(plan, net, make_stream(pool, stream, omega, net.input_width), policy);
}

struct EquivalenceReport {
  std::size_t samples = 0;
  float max_abs_diff = 0.0f;
};

/// Checks that chaining the parts reproduces the monolithic logits bit for bit.
inline EquivalenceReport equivalence_check(const Network& net, const std::vector<NetworkPart>& parts,
                                           const Tensor& samples) {
  const Tensor mono = forward_eval(net, samples).final_logits;
  const Tensor dist = run_parts(parts, samples);
  if (!mono.same_shape(dist)) throw EquivalenceError("monolithic and distributed outputs differ in shape");
  EquivalenceReport rep;
  rep.samples = samples.rows();
  for (std::size_t r = 0; r < mono.rows(); ++r) {
    auto a = mono.row(r);
    auto b = dist.row(r);
    for (std::size_t c = 0; c < a.size(); ++c) {
      // bitwise comparison, so -0.0 vs 0.0 or NaN payloads also count
      if (std::bit_cast<std::uint32_t>(a[c]) != std::bit_cast<std::uint32_t>(b[c])) {
        throw EquivalenceError("sample " + std::to_string(r) + " differs at output " + std::to_string(c) + ": " +
                               std::to_string(a[c]) + " vs " + std::to_string(b[c]));
      }
    }
  }
  rep.max_abs_diff = max_abs_diff(mono, dist);
  return rep;
}

}  // namespace gcl

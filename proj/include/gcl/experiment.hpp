#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// suite: a JSON config, dataset preparation, training, evaluation, sweeps.

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gcl/data.hpp"
#include "gcl/distsim.hpp"
#include "gcl/error.hpp"
#include "gcl/inference.hpp"
#include "gcl/metrics.hpp"
#include "gcl/network.hpp"
#include "gcl/serialize.hpp"
#include "gcl/training.hpp"

namespace gcl {

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetConfig {
  std::string source = "idx";  // idx | csv | synthetic
  std::string images;
  std::string labels;
  std::string csv;
  SyntheticSpec synthetic;
  bool remap_every_other = false;
  std::size_t downsample = 1;
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

struct NetworkConfig {
  std::size_t trunk_blocks = 8;
  std::size_t width = 64;
};

struct GcEntry {
  double fraction = 0.4;
  double alpha = 0.5;
  double beta = 0.0;
  GateTap tap = GateTap::post_compression;
  std::size_t pool_window = 2;
  PhiInit phi_init = PhiInit::near_threshold;
};

struct SweepConfig {
  std::vector<double> alphas{0.2, 0.5, 0.8};
  std::vector<double> betas{0.0, 0.1, 0.4, 0.8};
  std::vector<std::uint64_t> seeds{0};
};

struct RocConfig {
  std::size_t gate = 0;
  std::size_t steps = 100;  // thresholds k/steps for k = 0..steps
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  DatasetConfig dataset;
  NetworkConfig network;
  std::vector<GcEntry> gc{GcEntry{}};
  TrainConfig train;
  GatePolicy policy = GatePolicy::all_gates();
  std::string topology;  // empty: default chain
  StreamSpec stream;
  SweepConfig sweep;
  RocConfig roc;
  std::string output_dir = "out";

  void validate() const {
    if (schema_version != kConfigSchemaVersion) throw ConfigError("unsupported config schema_version");
    double alpha_sum = 0.0;
    for (const auto& g : gc) {
      if (g.alpha < 0.0 || g.beta < 0.0) throw ConfigError("alpha and beta must be non-negative");
      alpha_sum += g.alpha;
    }
    if (alpha_sum >= 1.0) throw ConfigError("sum of GC alphas must stay below 1");
    if (network.trunk_blocks < 1 || network.width < 1) throw ConfigError("network needs trunk blocks and width");
    const auto& d = dataset;
    auto need = [](const std::string& p, const char* what) {
      if (p.empty()) throw ConfigError(std::string("dataset.") + what + " is required");
      if (!std::filesystem::exists(p)) throw ConfigError(std::string("dataset.") + what + " not found: " + p);
    };
    if (d.source == "idx") {
      need(d.images, "images");
      need(d.labels, "labels");
    } else if (d.source == "csv") {
      need(d.csv, "csv");
    } else if (d.source != "synthetic") {
      throw ConfigError("dataset.source must be idx, csv or synthetic");
    }
    if (!topology.empty() && !std::filesystem::exists(topology)) throw ConfigError("topology not found: " + topology);
  }
};

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

namespace detail {

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::end_to_end: return "end_to_end";
    case TrainMode::two_stage: return "two_stage";
    case TrainMode::gate_only: return "gate_only";
    case TrainMode::compression_only: return "compression_only";
  }
  return "?";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "end_to_end") return TrainMode::end_to_end;
  if (s == "two_stage") return TrainMode::two_stage;
  if (s == "gate_only") return TrainMode::gate_only;
  if (s == "compression_only") return TrainMode::compression_only;
  throw ConfigError("unknown train mode '" + s + "'");
}

inline const char* gate_mode_name(GateMode m) {
  switch (m) {
    case GateMode::none: return "none";
    case GateMode::independent: return "independent";
    case GateMode::incremental: return "incremental";
    case GateMode::one_gate_only: return "one_gate_only";
  }
  return "?";
}

inline GateMode parse_gate_mode(const std::string& s) {
  if (s == "none") return GateMode::none;
  if (s == "independent") return GateMode::independent;
  if (s == "incremental") return GateMode::incremental;
  if (s == "one_gate_only") return GateMode::one_gate_only;
  throw ConfigError("unknown gating mode '" + s + "'");
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json policy_to_json(const GatePolicy& p) {
  nlohmann::json j{{"mode", detail::gate_mode_name(p.mode)}, {"threshold", p.threshold}};
  j["position"] = p.position == std::numeric_limits<std::size_t>::max() ? nlohmann::json(nullptr) : nlohmann::json(p.position);
  return j;
}

inline GatePolicy policy_from_json(const nlohmann::json& j) {
  GatePolicy p;
  if (j.contains("mode")) p.mode = detail::parse_gate_mode(j.at("mode").get<std::string>());
  detail::read_opt(j, "position", p.position);
  detail::read_opt(j, "threshold", p.threshold);
  return p;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["schema_version"] = c.schema_version;
  const auto& d = c.dataset;
  j["dataset"] = {{"source", d.source},
                  {"images", d.images},
                  {"labels", d.labels},
                  {"csv", d.csv},
                  {"synthetic",
                   {{"samples", d.synthetic.samples},
                    {"width", d.synthetic.width},
                    {"positive", d.synthetic.positive},
                    {"negative", d.synthetic.negative},
                    {"separation", d.synthetic.separation},
                    {"noise", d.synthetic.noise},
                    {"seed", d.synthetic.seed}}},
                  {"remap_every_other", d.remap_every_other},
                  {"downsample", d.downsample},
                  {"val_fraction", d.val_fraction},
                  {"split_seed", d.split_seed}};
  j["network"] = {{"trunk_blocks", c.network.trunk_blocks}, {"width", c.network.width}};
  j["gc"] = json::array();
  for (const auto& g : c.gc) {
    j["gc"].push_back({{"fraction", g.fraction},
                       {"alpha", g.alpha},
                       {"beta", g.beta},
                       {"tap", g.tap == GateTap::post_compression ? "post_compression" : "pre_compression"},
                       {"pool_window", g.pool_window},
                       {"phi_init", g.phi_init == PhiInit::all_pass ? "all_pass" : "near_threshold"}});
  }
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},     {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
                {"seed", t.seed},         {"mode", detail::mode_name(t.mode)}, {"stage_epochs", t.stage_epochs},
                {"xi", t.xi}};
  j["policy"] = policy_to_json(c.policy);
  j["topology"] = c.topology;
  j["stream"] = {{"total", c.stream.total},
                 {"positive", c.stream.positive},
                 {"negative", c.stream.negative},
                 {"source", c.stream.source == StreamSpec::Source::synthetic ? "synthetic" : "dataset"},
                 {"seed", c.stream.seed}};
  j["sweep"] = {{"alphas", c.sweep.alphas}, {"betas", c.sweep.betas}, {"seeds", c.sweep.seeds}};
  j["roc"] = {{"gate", c.roc.gate}, {"steps", c.roc.steps}};
  j["output_dir"] = c.output_dir;
  return j;
}

/// Relative paths are resolved against `base_dir`. Missing keys keep defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  using detail::read_opt;
  try {
    ExperimentConfig c;
    if (!j.contains("schema_version")) throw ConfigError("config lacks schema_version");
    c.schema_version = j.at("schema_version").get<int>();
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      auto& o = c.dataset;
      read_opt(d, "source", o.source);
      read_opt(d, "images", o.images);
      read_opt(d, "labels", o.labels);
      read_opt(d, "csv", o.csv);
      if (d.contains("synthetic")) {
        const auto& s = d.at("synthetic");
        read_opt(s, "samples", o.synthetic.samples);
        read_opt(s, "width", o.synthetic.width);
        read_opt(s, "positive", o.synthetic.positive);
        read_opt(s, "negative", o.synthetic.negative);
        read_opt(s, "separation", o.synthetic.separation);
        read_opt(s, "noise", o.synthetic.noise);
        read_opt(s, "seed", o.synthetic.seed);
      }
      read_opt(d, "remap_every_other", o.remap_every_other);
      read_opt(d, "downsample", o.downsample);
      read_opt(d, "val_fraction", o.val_fraction);
      read_opt(d, "split_seed", o.split_seed);
      o.images = detail::resolve(base_dir, o.images);
      o.labels = detail::resolve(base_dir, o.labels);
      o.csv = detail::resolve(base_dir, o.csv);
    }
    if (j.contains("network")) {
      read_opt(j.at("network"), "trunk_blocks", c.network.trunk_blocks);
      read_opt(j.at("network"), "width", c.network.width);
    }
    if (j.contains("gc")) {
      c.gc.clear();
      for (const auto& g : j.at("gc")) {
        GcEntry e;
        read_opt(g, "fraction", e.fraction);
        read_opt(g, "alpha", e.alpha);
        read_opt(g, "beta", e.beta);
        read_opt(g, "pool_window", e.pool_window);
        if (g.contains("tap")) {
          const auto tap = g.at("tap").get<std::string>();
          if (tap != "post_compression" && tap != "pre_compression") throw ConfigError("unknown gate tap '" + tap + "'");
          e.tap = tap == "pre_compression" ? GateTap::pre_compression : GateTap::post_compression;
        }
        if (g.contains("phi_init")) {
          const auto init = g.at("phi_init").get<std::string>();
          if (init != "all_pass" && init != "near_threshold") throw ConfigError("unknown phi_init '" + init + "'");
          e.phi_init = init == "all_pass" ? PhiInit::all_pass : PhiInit::near_threshold;
        }
        c.gc.push_back(e);
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_opt(t, "epochs", c.train.epochs);
      read_opt(t, "batch_size", c.train.batch_size);
      read_opt(t, "learning_rate", c.train.learning_rate);
      read_opt(t, "seed", c.train.seed);
      if (t.contains("mode")) c.train.mode = detail::parse_mode(t.at("mode").get<std::string>());
      read_opt(t, "stage_epochs", c.train.stage_epochs);
      read_opt(t, "xi", c.train.xi);
    }
    if (j.contains("policy")) c.policy = policy_from_json(j.at("policy"));
    read_opt(j, "topology", c.topology);
    c.topology = detail::resolve(base_dir, c.topology);
    if (j.contains("stream")) {
      const auto& s = j.at("stream");
      read_opt(s, "total", c.stream.total);
      read_opt(s, "positive", c.stream.positive);
      read_opt(s, "negative", c.stream.negative);
      read_opt(s, "seed", c.stream.seed);
      if (s.contains("source")) {
        const auto src = s.at("source").get<std::string>();
        if (src != "dataset" && src != "synthetic") throw ConfigError("stream.source must be dataset or synthetic");
        c.stream.source = src == "synthetic" ? StreamSpec::Source::synthetic : StreamSpec::Source::dataset;
      }
    }
    if (j.contains("sweep")) {
      read_opt(j.at("sweep"), "alphas", c.sweep.alphas);
      read_opt(j.at("sweep"), "betas", c.sweep.betas);
      read_opt(j.at("sweep"), "seeds", c.sweep.seeds);
    }
    if (j.contains("roc")) {
      read_opt(j.at("roc"), "gate", c.roc.gate);
      read_opt(j.at("roc"), "steps", c.roc.steps);
    }
    read_opt(j, "output_dir", c.output_dir);
    c.output_dir = detail::resolve(base_dir, c.output_dir);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return config_from_json(load_json(path), std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

inline Dataset load_dataset(const DatasetConfig& c) {
  Dataset d;
  if (c.source == "idx") {
    d = load_idx(c.images, c.labels);
  } else if (c.source == "csv") {
    d = load_csv(c.csv);
  } else if (c.source == "synthetic") {
    d = synthetic_gaussians(c.synthetic);
  } else {
    throw ConfigError("dataset.source must be idx, csv or synthetic");
  }
  if (c.remap_every_other) d = remap_every_other(d);
  return downsample(d, c.downsample);
}

inline DataSplit prepare_data(const ExperimentConfig& c) {
  return split_dataset(load_dataset(c.dataset), c.dataset.val_fraction, c.dataset.split_seed);
}

/// Trunk and gate heads are seeded from train.seed, so one seed fixes a run.
inline Network build_network(const ExperimentConfig& c, std::size_t input_width, std::size_t num_classes) {
  Network net = make_network(input_width, num_classes, dense_stack(c.network.trunk_blocks, c.network.width, num_classes),
                             c.train.seed);
  for (std::size_t i = 0; i < c.gc.size(); ++i) {
    const auto& e = c.gc[i];
    GcConfig g;
    g.alpha = e.alpha;
    g.beta = e.beta;
    g.tap = e.tap;
    g.pool_window = e.pool_window;
    g.phi_init = e.phi_init;
    g.seed = c.train.seed * 1000003ULL + i + 1;
    net = insert_gc(std::move(net), e.fraction, g);
  }
  return net;
}

inline TrainResult run_training(const ExperimentConfig& c, const DataSplit& split) {
  TrainConfig t = c.train;
  t.eval_policy = c.policy;
  return train(build_network(c, split.train.width(), split.train.num_classes), split, t);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct GateReport {
  std::size_t index = 0;
  std::size_t after_block = 0;
  double position_fraction = 0.0;
  GateConfusion confusion;  // this gate alone
  std::size_t width = 0;
  std::size_t mask_nonzeros = 0;
  double dropout_rate = 0.0;
  std::optional<double> auc;
  std::optional<double> negative_correction_rate;
  double sparse_bits = 0.0;
  double compression_rate = 0.0;
};

struct EvalReport {
  std::size_t samples = 0;
  GatePolicy policy;
  double accuracy = 0.0;
  double ungated_accuracy = 0.0;
  GateConfusion confusion;  // stops at any active gate
  std::vector<std::uint64_t> stopped_at;
  std::vector<GateReport> gates;
};

inline EvalReport evaluate(const Network& net, const Dataset& d, const GatePolicy& policy) {
  const ClassMapping omega = ClassMapping::background_vs_rest(net.num_classes);
  EvalReport r;
  r.samples = d.size();
  r.policy = policy;
  const auto traces = infer_dataset(net, d, policy);
  const auto ungated = infer_dataset(net, d, GatePolicy::no_gating());
  r.accuracy = accuracy(traces, d.labels);
  r.ungated_accuracy = accuracy(ungated, d.labels);
  r.confusion = confusion_from_traces(traces, d.labels, omega);
  r.stopped_at.assign(net.gc_layers.size(), 0);
  for (const auto& t : traces) {
    if (t.exit_gate) ++r.stopped_at[*t.exit_gate];
  }
  std::vector<int> ungated_preds;
  for (const auto& t : ungated) ungated_preds.push_back(t.decision());
  std::vector<bool> background;
  for (int y : d.labels) background.push_back(omega(y) == 0);

  for (std::size_t i = 0; i < net.gc_layers.size(); ++i) {
    const auto& l = net.gc_layers[i];
    GateReport g;
    g.index = i;
    g.after_block = l.after_block;
    g.position_fraction = l.position_fraction;
    const auto alone = infer_dataset(net, d, GatePolicy::independent(i, policy.threshold));
    g.confusion = confusion_from_traces(alone, d.labels, omega);
    std::vector<bool> stopped;
    for (const auto& t : alone) stopped.push_back(t.exit_gate.has_value());
    g.negative_correction_rate = negative_correction_rate(stopped, d.labels, ungated_preds, omega);
    g.width = l.width();
    g.mask_nonzeros = mask_nonzeros(l.phi);
    g.dropout_rate = dropout_rate(l.phi);
    const double p = static_cast<double>(g.mask_nonzeros) / static_cast<double>(g.width);
    g.sparse_bits = sparse_encoded_bits(g.width, p);
    g.compression_rate = compression_rate(g.width, p);
    const bool both = std::find(background.begin(), background.end(), true) != background.end() &&
                      std::find(background.begin(), background.end(), false) != background.end();
    if (both) g.auc = roc_auc(gate_scores(net, d, i), background);
    r.gates.push_back(std::move(g));
  }
  return r;
}

namespace detail {

inline void put_rate(nlohmann::json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

inline nlohmann::json confusion_json(const GateConfusion& c) {
  nlohmann::json j{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
  put_rate(j, "stop_rate", stop_rate(c));
  put_rate(j, "early_stop_rate", early_stop_rate(c));
  put_rate(j, "negative_pass_through_rate", negative_pass_through_rate(c));
  put_rate(j, "positive_lost_rate", positive_lost_rate(c));
  return j;
}

}  // namespace detail

/// Flat-ish metrics document; undefined rates are left out.
inline nlohmann::json eval_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["samples"] = r.samples;
  j["policy"] = policy_to_json(r.policy);
  j["accuracy"] = r.accuracy;
  j["ungated_accuracy"] = r.ungated_accuracy;
  j["confusion"] = detail::confusion_json(r.confusion);
  j["stopped_at"] = r.stopped_at;
  j["gates"] = nlohmann::json::array();
  for (const auto& g : r.gates) {
    nlohmann::json e{{"index", g.index},
                     {"after_block", g.after_block},
                     {"position_fraction", g.position_fraction},
                     {"confusion", detail::confusion_json(g.confusion)},
                     {"width", g.width},
                     {"mask_nonzeros", g.mask_nonzeros},
                     {"dropout_rate", g.dropout_rate},
                     {"sparse_bits", g.sparse_bits}};
    if (auto sr = stop_rate(g.confusion)) e["transmission_ratio"] = transmission_ratio(*sr, g.dropout_rate);
    if (std::isfinite(g.compression_rate)) e["compression_rate"] = g.compression_rate;
    detail::put_rate(e, "auc", g.auc);
    detail::put_rate(e, "negative_correction_rate", g.negative_correction_rate);
    j["gates"].push_back(std::move(e));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::optional<double> early_stop;
  double sparsity = 0.0;  // mean dropout rate over GC layers
  std::optional<double> stop_rate;
  std::optional<double> positive_lost;
};

inline SweepRow sweep_row(const Network& net, const Dataset& val, const GatePolicy& policy, double alpha, double beta,
                          std::uint64_t seed) {
  const ClassMapping omega = ClassMapping::background_vs_rest(net.num_classes);
  const auto traces = infer_dataset(net, val, policy);
  const auto c = confusion_from_traces(traces, val.labels, omega);
  SweepRow row{alpha, beta, seed, accuracy(traces, val.labels), early_stop_rate(c), 0.0, stop_rate(c),
               positive_lost_rate(c)};
  for (const auto& l : net.gc_layers) row.sparsity += dropout_rate(l.phi);
  if (!net.gc_layers.empty()) row.sparsity /= static_cast<double>(net.gc_layers.size());
  return row;
}

/// Every GC entry gets the cell's α and β. Cells run in grid order.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& c, const DataSplit& split) {
  if (c.gc.empty()) throw ConfigError("sweep needs at least one GC layer");
  std::vector<SweepRow> rows;
  for (double a : c.sweep.alphas) {
    for (double b : c.sweep.betas) {
      for (std::uint64_t s : c.sweep.seeds) {
        ExperimentConfig cell = c;
        for (auto& g : cell.gc) {
          g.alpha = a;
          g.beta = b;
        }
        cell.train.seed = s;
        cell.validate();
        const auto r = run_training(cell, split);
        rows.push_back(sweep_row(r.net, split.val, c.policy, a, b, s));
      }
    }
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "alpha,beta,seed,accuracy,early_stop_pct,sparsity_pct,stop_rate_pct,positive_lost_pct\n";
  os.precision(9);
  auto pct = [&](const std::optional<double>& v) {
    if (v) os << 100.0 * *v;
  };
  for (const auto& r : rows) {
    os << r.alpha << ',' << r.beta << ',' << r.seed << ',' << r.accuracy << ',';
    pct(r.early_stop);
    os << ',' << 100.0 * r.sparsity << ',';
    pct(r.stop_rate);
    os << ',';
    pct(r.positive_lost);
    os << '\n';
  }
}

inline std::vector<double> threshold_grid(std::size_t steps) {
  if (steps == 0) throw ConfigError("ROC needs at least one step");
  std::vector<double> t;
  for (std::size_t k = 0; k <= steps; ++k) t.push_back(static_cast<double>(k) / static_cast<double>(steps));
  return t;
}

inline void write_roc_csv(std::ostream& os, const RocResult& r) {
  os << "threshold,fpr,tpr\n";
  os.precision(9);
  for (const auto& p : r.points) os << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
}

}  // namespace gcl

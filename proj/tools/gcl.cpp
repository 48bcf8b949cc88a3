// gcl: train, evaluate and deploy gated-compression networks.
//
// Settings come from built-in defaults, then the --config JSON document, then
// command-line flags; later sources win.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gcl/experiment.hpp"

namespace fs = std::filesystem;
using namespace gcl;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> learning_rate;
  std::optional<std::string> train_mode;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::string> gating;
  std::optional<std::size_t> position;
  std::optional<double> threshold;
  std::optional<std::string> topology;
  std::optional<std::size_t> stream_total;
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<std::uint64_t> seeds;
  std::string model;
  bool force = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "experiment config JSON");
  cmd->add_option("-o,--output-dir", o.output_dir, "directory for output files");
  cmd->add_option("--seed", o.seed, "training seed");
  cmd->add_option("--policy", o.gating, "gating mode: none|independent|incremental|one_gate_only");
  cmd->add_option("--position", o.position, "gate index the policy refers to");
  cmd->add_option("--threshold", o.threshold, "P(interesting) a sample needs to pass a gate");
  cmd->add_flag("-f,--force", o.force, "overwrite existing output files");
}

void add_training(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--lr", o.learning_rate, "Adam learning rate");
  cmd->add_option("--mode", o.train_mode, "end_to_end|two_stage|gate_only|compression_only");
  cmd->add_option("--alpha", o.alpha, "alpha for every GC layer");
  cmd->add_option("--beta", o.beta, "beta for every GC layer");
}

void add_model(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-m,--model", o.model, "model JSON (default: <output-dir>/model.json)");
}

ExperimentConfig resolve_config(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.seed) c.train.seed = *o.seed;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.train_mode) c.train.mode = detail::parse_mode(*o.train_mode);
  for (auto& g : c.gc) {
    if (o.alpha) g.alpha = *o.alpha;
    if (o.beta) g.beta = *o.beta;
  }
  if (o.gating) {
    c.policy.mode = detail::parse_gate_mode(*o.gating);
    if (c.policy.mode == GateMode::one_gate_only) c.policy.position = 0;
  }
  if (o.position) c.policy.position = *o.position;
  if (o.threshold) c.policy.threshold = *o.threshold;
  if (o.topology) c.topology = *o.topology;
  if (o.stream_total) c.stream.total = *o.stream_total;
  if (!o.alphas.empty()) c.sweep.alphas = o.alphas;
  if (!o.betas.empty()) c.sweep.betas = o.betas;
  if (!o.seeds.empty()) c.sweep.seeds = o.seeds;
  c.validate();
  return c;
}

std::string output_path(const ExperimentConfig& c, const std::string& name, bool force) {
  fs::create_directories(c.output_dir);
  const fs::path p = fs::path(c.output_dir) / name;
  if (fs::exists(p) && !force) throw ConfigError(p.string() + " exists; pass --force to overwrite");
  return p.string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  return out;
}

Network load_model_for(const ExperimentConfig& c, const Overrides& o) {
  return load_model(o.model.empty() ? (fs::path(c.output_dir) / "model.json").string() : o.model);
}

void check_model_fits(const Network& net, const DataSplit& split) {
  if (split.val.width() != net.input_width) throw ConfigError("model input width does not match the dataset");
  if (split.val.num_classes > net.num_classes) throw ConfigError("dataset has more classes than the model head");
}

void emit(const std::string& what, const std::string& path) {
  std::cout << nlohmann::json{{"wrote", what}, {"path", path}}.dump() << '\n';
}

int cmd_train(const Overrides& o) {
  const auto c = resolve_config(o);
  const auto model_path = output_path(c, "model.json", o.force);
  const auto history_path = output_path(c, "history.csv", o.force);
  const auto split = prepare_data(c);
  const auto r = run_training(c, split);
  save_model(r.net, model_path);
  auto h = open_out(history_path);
  write_history_csv(h, r.history);
  emit("model", model_path);
  emit("history", history_path);
  return 0;
}

int cmd_eval(const Overrides& o) {
  const auto c = resolve_config(o);
  const auto path = output_path(c, "metrics.json", o.force);
  const auto split = prepare_data(c);
  const auto net = load_model_for(c, o);
  check_model_fits(net, split);
  save_json(eval_to_json(evaluate(net, split.val, c.policy)), path);
  emit("metrics", path);
  return 0;
}

int cmd_roc(const Overrides& o) {
  const auto c = resolve_config(o);
  const auto path = output_path(c, "roc.csv", o.force);
  const auto split = prepare_data(c);
  const auto net = load_model_for(c, o);
  check_model_fits(net, split);
  const auto r = roc_sweep(net, split.val, c.roc.gate, threshold_grid(c.roc.steps),
                           ClassMapping::background_vs_rest(net.num_classes));
  auto out = open_out(path);
  write_roc_csv(out, r);
  std::cout << nlohmann::json{{"wrote", "roc"}, {"path", path}, {"auc", r.auc}}.dump() << '\n';
  return 0;
}

int cmd_sweep(const Overrides& o) {
  const auto c = resolve_config(o);
  const auto path = output_path(c, "sweep.csv", o.force);
  const auto split = prepare_data(c);
  const auto rows = run_sweep(c, split);
  auto out = open_out(path);
  write_sweep_csv(out, rows);
  emit("sweep", path);
  return 0;
}

int cmd_simulate(const Overrides& o) {
  const auto c = resolve_config(o);
  const auto path = output_path(c, "cost_report.json", o.force);
  const auto split = prepare_data(c);
  const auto net = load_model_for(c, o);
  check_model_fits(net, split);
  auto parts = split_at_gc(net);
  const IslandTopology topo = c.topology.empty() ? IslandTopology::chain(parts.size())
                                                 : topology_from_json(load_json(c.topology));
  const auto plan = assign(parts, topo);
  const ClassMapping omega = ClassMapping::background_vs_rest(net.num_classes);
  const Dataset stream = make_stream(split.val, c.stream, omega, net.input_width);
  nlohmann::json j = cost_report_to_json(simulate(plan, net, stream, c.policy));
  j["topology"] = topology_to_json(topo);
  const auto eq = equivalence_check(net, parts, stream.features);
  j["equivalence"] = {{"samples", eq.samples}, {"max_abs_diff", eq.max_abs_diff}};
  save_json(j, path);
  emit("cost_report", path);
  return 0;
}

int cmd_export(const Overrides& o) {
  const auto c = resolve_config(o);
  const auto path = output_path(c, "deploy.json", o.force);
  const auto net = load_model_for(c, o);
  const auto deployed = model_from_json(deploy_to_json(net));
  // The 1-bit export must not change any output.
  Tensor probe({16, net.input_width});
  std::mt19937_64 rng(c.train.seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : probe.values()) v = u(rng);
  const auto a = forward_eval(net, probe);
  const auto b = forward_eval(deployed, probe);
  if (!(a.final_logits == b.final_logits)) throw EquivalenceError("deploy export changed the final outputs");
  for (std::size_t i = 0; i < a.gate_logits.size(); ++i) {
    if (!(a.gate_logits[i] == b.gate_logits[i])) throw EquivalenceError("deploy export changed gate " + std::to_string(i));
  }
  save_deploy(net, path);
  emit("deploy", path);
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated compression layer toolkit"};
  app.require_subcommand(1);
  Overrides o;

  auto* train = app.add_subcommand("train", "train a model; writes model.json and history.csv");
  add_common(train, o);
  add_training(train, o);

  auto* eval = app.add_subcommand("eval", "evaluate a model on the validation split; writes metrics.json");
  add_common(eval, o);
  add_model(eval, o);

  auto* roc = app.add_subcommand("roc", "sweep a gate's threshold; writes roc.csv");
  add_common(roc, o);
  add_model(roc, o);

  auto* sweep = app.add_subcommand("sweep", "train over the alpha x beta grid; writes sweep.csv");
  add_common(sweep, o);
  add_training(sweep, o);
  sweep->add_option("--alphas", o.alphas)->delimiter(',');
  sweep->add_option("--betas", o.betas)->delimiter(',');
  sweep->add_option("--seeds", o.seeds)->delimiter(',');

  auto* simulate = app.add_subcommand("simulate", "cost a sample stream across compute islands; writes cost_report.json");
  add_common(simulate, o);
  add_model(simulate, o);
  simulate->add_option("--topology", o.topology, "island topology JSON");
  simulate->add_option("--stream-total", o.stream_total);

  auto* exp = app.add_subcommand("export-deploy", "store phi as a packed 1-bit mask; writes deploy.json");
  add_common(exp, o);
  add_model(exp, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return 2;
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*roc) return cmd_roc(o);
    if (*sweep) return cmd_sweep(o);
    if (*simulate) return cmd_simulate(o);
    if (*exp) return cmd_export(o);
  } catch (const gcl::Error& e) {
    print_error(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    print_error("config", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}

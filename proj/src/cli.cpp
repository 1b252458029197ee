// SPDX-License-Identifier: Apache-2.0
#include "gncf/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "gncf/checkpoint.hpp"
#include "gncf/config.hpp"
#include "gncf/error.hpp"
#include "gncf/gnconv.hpp"
#include "gncf/gradcheck.hpp"
#include "gncf/metrics.hpp"
#include "gncf/params.hpp"
#include "gncf/train.hpp"

namespace gncf {

namespace {

constexpr double kGradCheckGate = 1e-4;

struct TrainArgs {
  std::string config;
  std::size_t order = 0;
  std::string fusion, esa, metrics, checkpoint;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<std::string> set;
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint, config, task = "copy";
  std::uint64_t task_seed = 1;
};

struct DecodeArgs {
  std::string checkpoint, source;
  std::size_t max_steps = 0;
};

struct AnalyzeArgs {
  std::size_t dim = 256, order = 5, kernel = 32, layers = 6, heads = 4;
  std::vector<std::size_t> orders;
  std::string csv;
  bool groups = false;
};

struct GradArgs {
  std::string module = "all";
  std::uint64_t seed = 1;
};

struct AblateArgs {
  std::string kind, config, out;
  std::size_t steps = 0;
  bool quiet = false;
};

struct ScheduleArgs {
  std::size_t dim = 0, order = 0;
};

struct Cli {
  CLI::App app{"Encoder-decoder transformer with recursive gated convolution in attention", "gncformer"};
  CLI::App* train = nullptr;
  CLI::App* eval = nullptr;
  CLI::App* decode = nullptr;
  CLI::App* analyze = nullptr;
  CLI::App* grad = nullptr;
  CLI::App* ablate = nullptr;
  CLI::App* schedule = nullptr;
  TrainArgs train_args;
  EvalArgs eval_args;
  DecodeArgs decode_args;
  AnalyzeArgs analyze_args;
  GradArgs grad_args;
  AblateArgs ablate_args;
  ScheduleArgs schedule_args;

  Cli();
};

std::string config_key_help() {
  const TrainConfig defaults;
  std::string text = "Config file keys (key = default: meaning):\n";
  for (const auto& k : config_keys()) text += "  " + k.name + " = " + k.get(defaults) + ": " + k.help + "\n";
  return text;
}

Cli::Cli() {
  app.require_subcommand(1);
  app.fallthrough(false);

  train = app.add_subcommand("train", "Train on a synthetic sequence task");
  auto& t = train_args;
  train->add_option("--config", t.config, "key = value config file");
  train->add_option("--order", t.order, "override: gated convolution order");
  train->add_option("--fusion", t.fusion, "override: internal, serial, parallel or none");
  train->add_option("--esa", t.esa, "override: none, encoder, decoder or both");
  train->add_option("--seed", t.seed, "override: initialization and batching seed");
  train->add_option("--steps", t.steps, "override: optimizer steps");
  train->add_option("--metrics", t.metrics, "override: metrics CSV path");
  train->add_option("--checkpoint", t.checkpoint, "override: best-accuracy checkpoint path");
  train->add_option("--set", t.set, "override any config key, as key=value (repeatable)");
  train->add_flag("--quiet", t.quiet, "print only the final summary");
  train->footer(config_key_help());

  eval = app.add_subcommand("eval", "Greedy-decode a task's validation split with a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval->add_option("--task-seed", eval_args.task_seed, "dataset seed")->capture_default_str();
  eval->add_option("--task", eval_args.task, "copy, reverse or sort")->capture_default_str();
  eval->add_option("--config", eval_args.config, "config file supplying the task settings");

  decode = app.add_subcommand("decode", "Greedy-decode one source sequence");
  decode->add_option("--checkpoint", decode_args.checkpoint, "checkpoint file")->required();
  decode->add_option("--source", decode_args.source, "space-separated source token ids")->required();
  decode->add_option("--max-steps", decode_args.max_steps, "token limit, 0 for source length + 2")
      ->capture_default_str();

  analyze = app.add_subcommand("analyze-params", "Parameter counts and gated-convolution overhead");
  auto& a = analyze_args;
  analyze->add_option("--dim", a.dim, "model width D")->capture_default_str();
  analyze->add_option("--order", a.order, "gated convolution order n")->capture_default_str();
  analyze->add_option("--kernel", a.kernel, "depthwise kernel width K")->capture_default_str();
  analyze->add_option("--layers", a.layers, "encoder and decoder layers")->capture_default_str();
  analyze->add_option("--heads", a.heads, "attention heads")->capture_default_str();
  analyze->add_option("--orders", a.orders, "also tabulate these orders");
  analyze->add_option("--csv", a.csv, "write the order table as CSV to this path");
  analyze->add_flag("--groups", a.groups, "list counts per module");

  grad = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  grad->add_option("--module", grad_args.module, "tensor, gnconv, esa, model or all")->capture_default_str();
  grad->add_option("--seed", grad_args.seed, "seed for the random instances")->capture_default_str();

  ablate = app.add_subcommand("ablate", "Train every cell of an ablation grid");
  ablate->add_option("--kind", ablate_args.kind, "order, placement or fusion")->required();
  ablate->add_option("--config", ablate_args.config, "base config file");
  ablate->add_option("--steps", ablate_args.steps, "override: optimizer steps per cell");
  ablate->add_option("--out", ablate_args.out, "CSV path (default: standard output)");
  ablate->add_flag("--quiet", ablate_args.quiet, "suppress per-cell progress");

  schedule = app.add_subcommand("schedule", "Print the channel schedule [M0 N0 .. N(n-1)]");
  schedule->add_option("--dim", schedule_args.dim, "model width D")->required();
  schedule->add_option("--order", schedule_args.order, "gated convolution order n")->required();
}

TrainConfig load_train_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : load_config(path, false);
}

std::vector<int> parse_tokens(const std::string& text, std::size_t vocab) {
  std::istringstream is(text);
  std::vector<int> ids;
  std::string word;
  while (is >> word) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size() || used == 0) throw ConfigError("--source: '" + word + "' is not a token id");
    if (v < 0 || static_cast<std::size_t>(v) >= vocab)
      throw ConfigError("--source: token " + word + " outside vocabulary of " + std::to_string(vocab));
    ids.push_back(v);
  }
  if (ids.empty()) throw ConfigError("--source: no tokens");
  return ids;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path);
}

int cmd_train(const TrainArgs& t, const CLI::App& sub, std::ostream& out) {
  TrainConfig c = load_train_config(t.config);
  for (const auto& kv : t.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (sub.count("--order")) c.model.order = t.order;
  if (sub.count("--fusion")) c.model.fusion = parse_fusion_mode(t.fusion);
  if (sub.count("--esa")) apply_placement(c.model, t.esa);
  if (sub.count("--seed")) c.seed = t.seed;
  if (sub.count("--steps")) c.steps = t.steps;
  if (sub.count("--metrics")) c.metrics_path = t.metrics;
  if (sub.count("--checkpoint")) c.checkpoint_path = t.checkpoint;
  c.validate();
  if (!t.quiet) out << kMetricsHeader << '\n';
  const TrainResult r = train(c, [&](const MetricsRow& row) {
    if (!t.quiet) out << format_metrics_row(row) << std::endl;
  });
  char buf[256];
  std::snprintf(buf, sizeof buf, "final step %zu token_acc %.4f seq_acc %.4f edit_rate %.4f; best token_acc %.4f at step %zu\n",
                r.final_row.step, r.final_row.token_acc, r.final_row.seq_acc, r.final_row.edit_rate,
                r.best_row.token_acc, r.best_row.step);
  out << buf << "parameters " << with_commas(static_cast<std::int64_t>(r.parameter_count)) << '\n';
  if (!c.checkpoint_path.empty()) out << "best checkpoint " << c.checkpoint_path << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& e, std::ostream& out) {
  const GncformerModel model = load_checkpoint(e.checkpoint);
  TaskSpec task = e.config.empty() ? TaskSpec{} : load_config(e.config, false).task;
  if (e.config.empty()) task.kind = parse_task_kind(e.task);
  task.seed = e.task_seed;
  task.vocab = model.config.source_vocab;
  if (task.max_len + 1 > model.config.max_len)
    throw ConfigError("task max_len " + std::to_string(task.max_len) + " needs a model max_len above it, got " +
                      std::to_string(model.config.max_len));
  const Dataset data = generate_task(task);
  const EvalResult r = evaluate(model, data.validation);
  char buf[200];
  std::snprintf(buf, sizeof buf, "examples %zu token_acc %.6f seq_acc %.6f edit_rate %.6f\n", data.validation.size(),
                r.token_accuracy, r.sequence_accuracy, r.edit_rate);
  out << buf;
  return kExitOk;
}

int cmd_decode(const DecodeArgs& d, std::ostream& out) {
  const GncformerModel model = load_checkpoint(d.checkpoint);
  const auto src = parse_tokens(d.source, model.config.source_vocab);
  const std::size_t steps = d.max_steps ? d.max_steps : src.size() + 2;
  out << join(greedy_decode(model, src, steps)) << '\n';
  return kExitOk;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  ModelConfig c;
  c.dim = a.dim;
  c.order = a.order;
  c.kernel = a.kernel;
  c.heads = a.heads;
  c.encoder_layers = a.layers;
  c.decoder_layers = a.layers;
  c.validate();
  GncformerModel m = build_model(c, 0);
  const ParamReport r = count_parameters(m);
  const std::size_t per_layer = r.esa_overhead.empty() ? 0 : r.esa_overhead.front().count;
  out << "schedule [M0 N0 .. N(n-1)]: " << join(dimension_schedule(c.dim, c.order)) << '\n';
  out << "linear_in width: " << 2 * c.dim << '\n';
  out << "per-layer gnconv overhead: " << with_commas(static_cast<std::int64_t>(per_layer)) << '\n';
  out << "gnconv layers: " << r.esa_overhead.size() << '\n';
  out << "total delta vs plain attention: " << with_commas(r.delta) << '\n';
  out << "total parameters: " << with_commas(static_cast<std::int64_t>(r.total)) << '\n';
  out << "plain-attention parameters: " << with_commas(static_cast<std::int64_t>(r.baseline_total)) << '\n';
  if (a.groups)
    for (const auto& g : r.groups) out << "  " << g.module << ' ' << g.count << '\n';
  std::vector<std::size_t> orders = a.orders;
  if (!orders.empty()) out << '\n' << format_overhead_text(overhead_table(c, orders));
  if (!a.csv.empty()) {
    if (orders.empty()) orders = {a.order};
    write_text(a.csv, format_overhead_csv(overhead_table(c, orders)));
  }
  return kExitOk;
}

int cmd_grad(const GradArgs& g, std::ostream& out) {
  const auto entries = run_grad_check(g.module, g.seed);
  bool ok = true;
  char buf[200];
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error < kGradCheckGate;
    ok = ok && pass;
    std::snprintf(buf, sizeof buf, "%-7s %-28s max_rel_error %.3e  %s\n", e.module.c_str(), e.name.c_str(),
                  e.max_rel_error, pass ? "PASS" : "FAIL");
    out << buf;
  }
  out << (ok ? "all " : "some of ") << entries.size() << " checks " << (ok ? "below" : "not below") << " 1e-4\n";
  return ok ? kExitOk : kExitRuntime;
}

int cmd_ablate(const AblateArgs& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  const AblationKind kind = parse_ablation_kind(a.kind);
  TrainConfig base = load_train_config(a.config);
  if (sub.count("--steps")) {
    base.steps = a.steps;
    base.warmup = std::min(base.warmup, base.steps);
  }
  base.validate();
  const auto rows = run_ablation(kind, base, a.quiet ? std::function<void(const std::string&)>{}
                                                     : [&](const std::string& line) { err << line << std::endl; });
  const std::string csv = format_ablation_csv(rows);
  if (a.out.empty()) out << csv;
  else write_text(a.out, csv);
  return kExitOk;
}

int cmd_schedule(const ScheduleArgs& s, std::ostream& out) {
  out << join(dimension_schedule(s.dim, s.order)) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto cli = std::make_unique<Cli>();
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli->app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = cli->app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (cli->train->parsed()) return cmd_train(cli->train_args, *cli->train, out);
    if (cli->eval->parsed()) return cmd_eval(cli->eval_args, out);
    if (cli->decode->parsed()) return cmd_decode(cli->decode_args, out);
    if (cli->analyze->parsed()) return cmd_analyze(cli->analyze_args, out);
    if (cli->grad->parsed()) return cmd_grad(cli->grad_args, out);
    if (cli->ablate->parsed()) return cmd_ablate(cli->ablate_args, *cli->ablate, out, err);
    if (cli->schedule->parsed()) return cmd_schedule(cli->schedule_args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

std::map<std::string, std::vector<std::string>> cli_accepted_flags() {
  Cli cli;
  std::map<std::string, std::vector<std::string>> flags;
  for (const CLI::App* sub : cli.app.get_subcommands([](const CLI::App*) { return true; })) {
    auto& list = flags[sub->get_name()];
    for (const CLI::Option* opt : sub->get_options())
      for (const auto& name : opt->get_lnames()) list.push_back("--" + name);
  }
  return flags;
}

}  // namespace gncf

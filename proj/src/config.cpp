// SPDX-License-Identifier: Apache-2.0
#include "gncf/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "gncf/error.hpp"

namespace gncf {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Field>
ConfigKey size_key(std::string name, std::string help, Field field) {
  return {name, std::move(help),
          [name, field](TrainConfig& c, const std::string& v) { field(c) = to_size(name, v); },
          [field](const TrainConfig& c) { return std::to_string(field(c)); }};
}

template <typename Field>
ConfigKey real_key(std::string name, std::string help, Field field) {
  return {name, std::move(help),
          [name, field](TrainConfig& c, const std::string& v) { field(c) = to_real(name, v); },
          [field](const TrainConfig& c) { return real_text(field(c)); }};
}

template <typename Field>
ConfigKey text_key(std::string name, std::string help, Field field) {
  return {name, std::move(help), [field](TrainConfig& c, const std::string& v) { field(c) = v; },
          [field](const TrainConfig& c) { return field(c); }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back(size_key("encoder_layers", "encoder layers M", [](auto& c) -> auto& { return c.model.encoder_layers; }));
  k.push_back(size_key("decoder_layers", "decoder layers N", [](auto& c) -> auto& { return c.model.decoder_layers; }));
  k.push_back(size_key("dim", "model width D", [](auto& c) -> auto& { return c.model.dim; }));
  k.push_back(size_key("heads", "attention heads h", [](auto& c) -> auto& { return c.model.heads; }));
  k.push_back(size_key("ffn_dim", "feed-forward width, 0 for 4*dim", [](auto& c) -> auto& { return c.model.ffn_dim; }));
  k.push_back(size_key("order", "gated convolution order n", [](auto& c) -> auto& { return c.model.order; }));
  k.push_back(size_key("kernel", "depthwise kernel width K", [](auto& c) -> auto& { return c.model.kernel; }));
  k.push_back(real_key("alpha", "per-step divisor of the recursion", [](auto& c) -> auto& { return c.model.alpha; }));
  k.push_back({"fusion", "internal, serial, parallel or none",
               [](TrainConfig& c, const std::string& v) { c.model.fusion = parse_fusion_mode(v); },
               [](const TrainConfig& c) { return to_string(c.model.fusion); }});
  k.push_back({"esa", "attention blocks with gated convolution: none, encoder, decoder or both",
               [](TrainConfig& c, const std::string& v) { apply_placement(c.model, v); },
               [](const TrainConfig& c) { return placement_name(c.model.esa_in_encoder, c.model.esa_in_decoder); }});
  k.push_back(size_key("max_len", "longest sequence the model accepts", [](auto& c) -> auto& { return c.model.max_len; }));
  k.push_back(real_key("dropout", "dropout rate", [](auto& c) -> auto& { return c.model.dropout; }));
  k.push_back({"task", "copy, reverse or sort",
               [](TrainConfig& c, const std::string& v) { c.task.kind = parse_task_kind(v); },
               [](const TrainConfig& c) { return to_string(c.task.kind); }});
  k.push_back(size_key("vocab", "vocabulary size including pad, bos, eos", [](auto& c) -> auto& { return c.task.vocab; }));
  k.push_back(size_key("task_min_len", "shortest source", [](auto& c) -> auto& { return c.task.min_len; }));
  k.push_back(size_key("task_max_len", "longest source", [](auto& c) -> auto& { return c.task.max_len; }));
  k.push_back(size_key("task_samples", "distinct examples, split 90/10", [](auto& c) -> auto& { return c.task.samples; }));
  k.push_back({"task_seed", "dataset seed",
               [](TrainConfig& c, const std::string& v) { c.task.seed = to_size("task_seed", v); },
               [](const TrainConfig& c) { return std::to_string(c.task.seed); }});
  k.push_back(size_key("steps", "optimizer steps", [](auto& c) -> auto& { return c.steps; }));
  k.push_back(size_key("batch_size", "examples per step", [](auto& c) -> auto& { return c.batch_size; }));
  k.push_back(real_key("peak_lr", "learning rate at the end of warmup", [](auto& c) -> auto& { return c.peak_lr; }));
  k.push_back(size_key("warmup", "warmup steps", [](auto& c) -> auto& { return c.warmup; }));
  k.push_back(real_key("beta1", "Adam first-moment decay", [](auto& c) -> auto& { return c.adam.beta1; }));
  k.push_back(real_key("beta2", "Adam second-moment decay", [](auto& c) -> auto& { return c.adam.beta2; }));
  k.push_back(real_key("adam_eps", "Adam epsilon", [](auto& c) -> auto& { return c.adam.eps; }));
  k.push_back(real_key("clip_norm", "global gradient-norm clip", [](auto& c) -> auto& { return c.clip_norm; }));
  k.push_back(real_key("label_smoothing", "label-smoothing weight", [](auto& c) -> auto& { return c.label_smoothing; }));
  k.push_back({"seed", "initialization and batching seed",
               [](TrainConfig& c, const std::string& v) { c.seed = to_size("seed", v); },
               [](const TrainConfig& c) { return std::to_string(c.seed); }});
  k.push_back(size_key("eval_interval", "steps between validation rows", [](auto& c) -> auto& { return c.eval_interval; }));
  k.push_back(size_key("eval_samples", "validation examples per row, 0 for all", [](auto& c) -> auto& { return c.eval_samples; }));
  k.push_back(real_key("target_token_acc", "stop once validation token accuracy reaches this, 0 never", [](auto& c) -> auto& { return c.target_token_acc; }));
  k.push_back(text_key("metrics_path", "metrics CSV, empty for none", [](auto& c) -> auto& { return c.metrics_path; }));
  k.push_back(text_key("checkpoint_path", "best-accuracy checkpoint, empty for none", [](auto& c) -> auto& { return c.checkpoint_path; }));
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(TrainConfig& config, std::string_view key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

TrainConfig parse_config(std::string_view text, const std::string& source, TrainConfig base,
                         bool validate) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto prefix = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(prefix + "expected 'key = value', got '" + body + "'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError(prefix + "missing key before '='");
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(prefix + e.what());
    }
  }
  if (validate) base.validate();
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, bool validate) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), {}, validate);
}

std::string dump_config(const TrainConfig& config) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

}  // namespace gncf

// SPDX-License-Identifier: Apache-2.0
#include "gncf/train.hpp"

#include <chrono>
#include <memory>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gncf/checkpoint.hpp"
#include "gncf/error.hpp"
#include "gncf/gnconv.hpp"
#include "gncf/params.hpp"

namespace gncf {

TrainConfig::TrainConfig() {
  model.encoder_layers = 2;
  model.decoder_layers = 2;
  model.dim = 32;
  model.heads = 4;
  model.order = 2;
  model.kernel = 7;
  model.max_len = 16;
}

ModelConfig TrainConfig::effective_model() const {
  ModelConfig m = model;
  m.source_vocab = task.vocab;
  m.target_vocab = task.vocab;
  return m;
}

void TrainConfig::validate() const {
  effective_model().validate();
  task.validate();
  if (task.max_len + 1 > model.max_len)
    throw ConfigError("max_len " + std::to_string(model.max_len) + " must exceed task max_len " +
                      std::to_string(task.max_len) + " (decoder input adds bos)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (warmup > steps) throw ConfigError("warmup " + std::to_string(warmup) + " exceeds steps " + std::to_string(steps));
  if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
  if (target_token_acc < 0.0 || target_token_acc > 1.0) throw ConfigError("target_token_acc must be in [0, 1]");
}

Tensor batch_loss(const GncformerModel& model, std::span<const Example> batch, double label_smoothing,
                  Rng* dropout_rng) {
  std::vector<std::vector<int>> src, tgt_in;
  std::size_t longest = 0;
  for (const auto& ex : batch) {
    src.push_back(ex.source);
    std::vector<int> in{kBosToken};
    in.insert(in.end(), ex.target.begin(), ex.target.end());
    longest = std::max(longest, in.size());
    tgt_in.push_back(std::move(in));
  }
  std::vector<int> targets(batch.size() * longest, -1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& t = batch[b].target;
    std::copy(t.begin(), t.end(), targets.begin() + static_cast<std::ptrdiff_t>(b * longest));
    targets[b * longest + t.size()] = kEosToken;
  }
  ForwardOptions opt;
  opt.dropout_rng = dropout_rng;
  Tensor logits = forward_batch(model, TokenBatch::from_sequences(src), TokenBatch::from_sequences(tgt_in), opt);
  const std::size_t v = model.config.target_vocab;
  return cross_entropy(reshape(logits, {batch.size() * longest, v}), targets, -1, label_smoothing);
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<Example> eval_subset(const Dataset& data, std::size_t n) {
  if (n == 0 || n >= data.validation.size()) return data.validation;
  return {data.validation.begin(), data.validation.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

TrainResult train(const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  const auto start = Clock::now();
  const Dataset data = generate_task(config.task);
  if (data.train.empty()) throw ConfigError("task produced no training examples");
  const std::vector<Example> eval_set = eval_subset(data, config.eval_samples);

  TrainResult result;
  result.model = build_model(config.effective_model(), config.seed);
  GncformerModel& model = result.model;
  result.dataset_hash = data.hash();
  result.parameter_count = count_parameters(model).total;

  Rng order_rng(config.seed * 0x9E3779B97F4A7C15ull + 1);
  Rng dropout_rng(config.seed * 0x9E3779B97F4A7C15ull + 2);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order_rng.shuffle(order.begin(), order.end());
  std::size_t cursor = 0;
  auto next_batch = [&] {
    std::vector<Example> batch;
    const std::size_t n = std::min(config.batch_size, data.train.size());
    while (batch.size() < n) {
      if (cursor == order.size()) {
        order_rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(data.train[order[cursor++]]);
    }
    return batch;
  };

  std::unique_ptr<MetricsWriter> writer;
  if (!config.metrics_path.empty()) writer = std::make_unique<MetricsWriter>(config.metrics_path);
  bool have_best = false;
  auto record = [&](std::size_t step, double loss) {
    const EvalResult ev = evaluate(model, eval_set);
    MetricsRow row{step, loss, ev.token_accuracy, ev.sequence_accuracy, ev.edit_rate,
                   std::chrono::duration<double>(Clock::now() - start).count()};
    result.history.push_back(row);
    if (writer) writer->append(row);
    if (!have_best || row.token_acc > result.best_row.token_acc) {
      have_best = true;
      result.best_row = row;
      if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
    }
    if (progress) progress(row);
    return row;
  };

  {
    NoGradGuard no_grad;
    const auto first = next_batch();
    cursor = 0;
    result.final_row = record(0, batch_loss(model, first, config.label_smoothing).item());
  }

  const std::vector<Tensor> params = model.parameters();
  Adam adam(params, config.adam);
  Rng* drop = config.model.dropout > 0.0 ? &dropout_rng : nullptr;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto batch = next_batch();
    Tensor loss;
    try {
      loss = batch_loss(model, batch, config.label_smoothing, drop);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const double value = loss.item();
    if (!std::isfinite(value))
      throw NumericError("non-finite training loss " + std::to_string(value) + " at step " + std::to_string(step));
    model.zero_grad();
    loss.backward();
    const double norm = grad_norm(params);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    adam.step(warmup_rate(step, config.peak_lr, config.warmup), clip_scale(norm, config.clip_norm));
    loss_sum += value;
    ++loss_count;
    if (step % config.eval_interval == 0 || step == config.steps) {
      result.final_row = record(step, loss_sum / static_cast<double>(loss_count));
      loss_sum = 0.0;
      loss_count = 0;
      if (config.target_token_acc > 0.0 && result.final_row.token_acc >= config.target_token_acc) break;
    }
  }
  return result;
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::Order: return "order";
    case AblationKind::Placement: return "placement";
    case AblationKind::Fusion: return "fusion";
  }
  return "?";
}

AblationKind parse_ablation_kind(std::string_view text) {
  if (text == "order") return AblationKind::Order;
  if (text == "placement") return AblationKind::Placement;
  if (text == "fusion") return AblationKind::Fusion;
  throw ConfigError("unknown ablation kind '" + std::string(text) + "' (expected order, placement or fusion)");
}

std::string placement_name(bool encoder, bool decoder) {
  if (encoder && decoder) return "both";
  if (encoder) return "encoder";
  if (decoder) return "decoder";
  return "none";
}

void apply_placement(ModelConfig& config, std::string_view placement) {
  if (placement == "none") config.esa_in_encoder = false, config.esa_in_decoder = false;
  else if (placement == "encoder") config.esa_in_encoder = true, config.esa_in_decoder = false;
  else if (placement == "decoder") config.esa_in_encoder = false, config.esa_in_decoder = true;
  else if (placement == "both") config.esa_in_encoder = true, config.esa_in_decoder = true;
  else throw ConfigError("unknown placement '" + std::string(placement) + "' (expected none, encoder, decoder or both)");
}

std::vector<AblationRow> run_ablation(AblationKind kind, const TrainConfig& base,
                                      const std::function<void(const std::string&)>& log) {
  struct Cell {
    std::string name;
    TrainConfig config;
  };
  std::vector<Cell> cells;
  auto add = [&](std::string name, auto&& edit) {
    TrainConfig c = base;
    edit(c.model);
    cells.push_back({std::move(name), std::move(c)});
  };
  switch (kind) {
    case AblationKind::Order:
      for (std::size_t n : {3, 5}) add("order" + std::to_string(n), [&](ModelConfig& m) { m.order = n; });
      break;
    case AblationKind::Placement:
      for (const char* p : {"none", "encoder", "decoder", "both"})
        add(p, [&](ModelConfig& m) { apply_placement(m, p); });
      break;
    case AblationKind::Fusion:
      for (FusionMode f : {FusionMode::Internal, FusionMode::Serial, FusionMode::Parallel})
        add(to_string(f), [&](ModelConfig& m) {
          m.fusion = f;
          if (!m.esa_in_encoder && !m.esa_in_decoder) m.esa_in_encoder = true;
        });
      break;
  }

  std::vector<AblationRow> rows;
  for (auto& cell : cells) {
    if (!base.metrics_path.empty()) cell.config.metrics_path = base.metrics_path + "." + cell.name + ".csv";
    if (!base.checkpoint_path.empty()) cell.config.checkpoint_path = base.checkpoint_path + "." + cell.name;
    if (log) log("ablation cell " + cell.name);
    TrainResult r;
    try {
      r = train(cell.config, log ? ProgressFn([&](const MetricsRow& m) { log("  " + cell.name + " " + format_metrics_row(m)); })
                                 : ProgressFn{});
    } catch (const NumericError& e) {
      throw NumericError("ablation cell " + cell.name + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("ablation cell " + cell.name + ": " + e.what());
    }
    const ModelConfig& m = r.model.config;
    AblationRow row;
    row.cell = cell.name;
    row.order = m.order;
    row.placement = placement_name(m.esa_in_encoder, m.esa_in_decoder);
    row.fusion = m.fusion;
    const ParamReport rep = count_parameters(r.model);
    row.params = rep.total;
    row.delta_params = rep.delta;
    row.schedule = dimension_schedule(m.dim, m.order);
    row.final_row = r.final_row;
    row.best_row = r.best_row;
    row.dataset_hash = r.dataset_hash;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "cell,order,placement,fusion,params,delta_params,schedule,steps,loss,token_acc,seq_acc,edit_rate,"
        "best_token_acc,dataset_hash\n";
  char buf[256];
  for (const auto& r : rows) {
    std::string sched;
    for (std::size_t i = 0; i < r.schedule.size(); ++i) sched += (i ? " " : "") + std::to_string(r.schedule[i]);
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%016llx", r.final_row.step, r.final_row.loss,
                  r.final_row.token_acc, r.final_row.seq_acc, r.final_row.edit_rate, r.best_row.token_acc,
                  static_cast<unsigned long long>(r.dataset_hash));
    os << r.cell << ',' << r.order << ',' << r.placement << ',' << to_string(r.fusion) << ',' << r.params << ','
       << r.delta_params << ',' << sched << ',' << buf << '\n';
  }
  return os.str();
}

}  // namespace gncf

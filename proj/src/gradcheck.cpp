// SPDX-License-Identifier: Apache-2.0
#include "gncf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gncf/attention.hpp"
#include "gncf/error.hpp"
#include "gncf/gnconv.hpp"
#include "gncf/model.hpp"
#include "gncf/ops.hpp"
#include "gncf/random.hpp"

namespace gncf {

double finite_difference_error(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                               double step) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
    else analytic.emplace_back(t.numel(), 0.0);
  }
  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + step;
      const double up = loss().item();
      values[j] = saved - step;
      const double down = loss().item();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i][j];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3}));
    }
  }
  return worst;
}

namespace {

constexpr double kPrimitiveTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

Tensor rand(const Shape& shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  Tensor t(shape, std::move(v));
  t.set_requires_grad(grad);
  return t;
}

// Contracts an output with fixed random weights so every element matters.
Tensor probe(const Tensor& y, Rng& rng) { return sum(mul(y, rand(y.shape(), rng, false))); }

struct Check {
  std::string name;
  std::function<Tensor()> loss;
  std::vector<Tensor> inputs;
};

std::vector<Tensor> collect(const std::function<void(const ParamVisitor&)>& visit) {
  std::vector<Tensor> out;
  visit([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

void randomize_biases(const std::function<void(const ParamVisitor&)>& visit, Rng& rng) {
  visit([&](const std::string& name, Tensor& t) {
    if (name.ends_with(".bias") || name.ends_with(".shift"))
      for (auto& v : t.mutable_values()) v = rng.uniform(-0.3, 0.3);
  });
}

std::vector<Check> tensor_checks(Rng& rng) {
  std::vector<Check> c;
  {
    Tensor a = rand({2, 3}, rng), b = rand({3}, rng);
    Rng w(rng.next_u64());
    c.push_back({"add_broadcast", [=]() mutable { Rng r = w; return probe(add(a, b), r); }, {a, b}});
  }
  {
    Tensor a = rand({2, 1, 3}, rng), b = rand({4, 1}, rng);
    Rng w(rng.next_u64());
    c.push_back({"sub_mul_broadcast", [=]() mutable { Rng r = w; return probe(mul(sub(a, b), a), r); }, {a, b}});
  }
  {
    Tensor a = rand({2, 3, 4}, rng), b = rand({4, 5}, rng);
    Rng w(rng.next_u64());
    c.push_back({"matmul", [=]() mutable { Rng r = w; return probe(matmul(a, b), r); }, {a, b}});
  }
  {
    Tensor x = rand({3, 4}, rng), wt = rand({4, 2}, rng), b = rand({2}, rng);
    Rng w(rng.next_u64());
    c.push_back({"linear", [=]() mutable { Rng r = w; return probe(linear(x, wt, b), r); }, {x, wt, b}});
  }
  {
    Tensor x = rand({2, 3, 4}, rng);
    const std::vector<std::size_t> axes{2, 0, 1};
    Rng w(rng.next_u64());
    c.push_back({"transpose_permute_reshape",
                 [=]() mutable {
                   Rng r = w;
                   return probe(reshape(permute(transpose_last2(x), axes), {4, 6}), r);
                 },
                 {x}});
  }
  {
    std::vector<double> v{-0.9, -0.4, 0.3, 0.8, -0.2, 0.6};
    Tensor x({2, 3}, v);
    x.set_requires_grad();
    Rng w(rng.next_u64());
    c.push_back({"relu", [=]() mutable { Rng r = w; return probe(relu(x), r); }, {x}});
  }
  {
    Tensor x = rand({3, 5}, rng, true, -3, 3);
    Rng w(rng.next_u64());
    c.push_back({"softmax", [=]() mutable { Rng r = w; return probe(softmax_lastdim(x), r); }, {x}});
  }
  {
    Tensor x = rand({3, 6}, rng), g = rand({6}, rng), s = rand({6}, rng);
    Rng w(rng.next_u64());
    c.push_back({"layer_norm", [=]() mutable { Rng r = w; return probe(layer_norm(x, g, s), r); }, {x, g, s}});
  }
  for (ConvPadding pad : {ConvPadding::Same, ConvPadding::Causal}) {
    Tensor x = rand({2, 5, 3}, rng), k = rand({3, 4}, rng), b = rand({3}, rng);
    Rng w(rng.next_u64());
    c.push_back({pad == ConvPadding::Same ? "depthwise_conv1d_same" : "depthwise_conv1d_causal",
                 [=]() mutable { Rng r = w; return probe(depthwise_conv1d(x, k, b, pad), r); },
                 {x, k, b}});
  }
  {
    Tensor x = rand({3, 7}, rng);
    const std::vector<std::size_t> widths{2, 4, 1};
    Rng w(rng.next_u64());
    c.push_back({"split_concat",
                 [=]() mutable {
                   Rng r = w;
                   auto parts = split_lastdim(x, widths);
                   std::vector<Tensor> swapped{mul(parts[2], parts[2]), parts[0], scale(parts[1], 3.0)};
                   return probe(concat_lastdim(swapped), r);
                 },
                 {x}});
  }
  {
    Tensor table = rand({6, 3}, rng);
    const std::vector<int> ids{1, 4, 4, 0, 5};
    Rng w(rng.next_u64());
    c.push_back({"embedding", [=]() mutable { Rng r = w; return probe(embedding(table, ids, {5}), r); }, {table}});
  }
  {
    Tensor logits = rand({4, 5}, rng, true, -2, 2);
    const std::vector<int> targets{1, -1, 4, 0};
    c.push_back({"cross_entropy_smoothed", [=] { return cross_entropy(logits, targets, -1, 0.1); }, {logits}});
  }
  {
    Tensor x = rand({2, 3}, rng);
    c.push_back({"mean_scale", [=] { return mean(scale(mul(x, x), 0.5)); }, {x}});
  }
  return c;
}

std::vector<Check> gnconv_checks(Rng& rng) {
  std::vector<Check> c;
  for (std::size_t order = 1; order <= 3; ++order) {
    auto p = std::make_shared<GnConvParams>(make_gnconv(GnConvConfig{8, order, 3, 1.5, ConvPadding::Same}, rng));
    randomize_biases([&](const ParamVisitor& fn) { p->visit("g", fn); }, rng);
    Tensor x = rand({5, 8}, rng);
    std::vector<Tensor> inputs{x};
    for (auto& t : collect([&](const ParamVisitor& fn) { p->visit("g", fn); })) inputs.push_back(t);
    Rng w(rng.next_u64());
    c.push_back({"gnconv_order" + std::to_string(order),
                 [=]() mutable { Rng r = w; return probe(gnconv_forward(x, *p), r); }, inputs});
  }
  {
    auto p = std::make_shared<GnConvParams>(make_gnconv(GnConvConfig{6, 1, 3, 1.0, ConvPadding::Causal}, rng));
    randomize_biases([&](const ParamVisitor& fn) { p->visit("g", fn); }, rng);
    Tensor x = rand({4, 6}, rng);
    std::vector<Tensor> inputs{x};
    for (auto& t : collect([&](const ParamVisitor& fn) { p->visit("g", fn); })) inputs.push_back(t);
    Rng w(rng.next_u64());
    c.push_back({"gconv_causal", [=]() mutable { Rng r = w; return probe(gconv_forward(x, *p), r); }, inputs});
  }
  return c;
}

std::vector<Check> esa_checks(Rng& rng) {
  std::vector<Check> c;
  {
    Tensor q = rand({2, 4, 3}, rng), k = rand({2, 4, 3}, rng);
    const auto mask = AttentionMask::causal(4);
    Rng w(rng.next_u64());
    c.push_back({"attention_matrix", [=]() mutable { Rng r = w; return probe(attention_matrix(q, k, mask), r); }, {q, k}});
  }
  for (FusionMode mode : {FusionMode::None, FusionMode::Internal, FusionMode::Serial, FusionMode::Parallel}) {
    EsaConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.fusion = mode;
    cfg.gnconv = GnConvConfig{8, 2, 3, 1.0, ConvPadding::Same};
    auto p = std::make_shared<EsaParams>(make_esa(cfg, rng));
    randomize_biases([&](const ParamVisitor& fn) { p->visit("a", fn); }, rng);
    Tensor x = rand({4, 8}, rng);
    std::vector<Tensor> inputs{x};
    for (auto& t : collect([&](const ParamVisitor& fn) { p->visit("a", fn); })) inputs.push_back(t);
    const auto mask = AttentionMask::causal(4);
    Rng w(rng.next_u64());
    c.push_back({"self_attention_" + to_string(mode),
                 [=]() mutable { Rng r = w; return probe(self_attention_forward(x, *p, mask), r); }, inputs});
  }
  return c;
}

std::vector<Check> model_checks(Rng& rng) {
  ModelConfig cfg;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.order = 2;
  cfg.kernel = 3;
  cfg.source_vocab = 11;
  cfg.target_vocab = 11;
  cfg.max_len = 8;
  cfg.esa_in_encoder = true;
  cfg.esa_in_decoder = true;
  auto m = std::make_shared<GncformerModel>(build_model(cfg, rng.next_u64()));
  randomize_biases([&](const ParamVisitor& fn) { m->visit(fn); }, rng);
  std::vector<int> src(4);
  for (auto& t : src) t = kFirstSymbol + static_cast<int>(rng.below(8));
  const std::vector<int> tgt_in{kBosToken, src[0], src[1], src[2]};
  const std::vector<int> tgt_out{src[0], src[1], src[2], kEosToken};
  return {{"full_model", [=] { return cross_entropy(forward(*m, src, tgt_in), tgt_out, -1, 0.1); }, m->parameters()}};
}

}  // namespace

const std::vector<std::string>& grad_check_modules() {
  static const std::vector<std::string> names{"tensor", "gnconv", "esa", "model"};
  return names;
}

std::vector<GradCheckEntry> run_grad_check(std::string_view module, std::uint64_t seed) {
  const auto& names = grad_check_modules();
  if (module != "all" && std::find(names.begin(), names.end(), module) == names.end())
    throw ConfigError("unknown grad-check module '" + std::string(module) + "' (expected tensor, gnconv, esa, model or all)");
  std::vector<GradCheckEntry> out;
  Rng rng(seed);
  for (const auto& name : names) {
    if (module != "all" && module != name) continue;
    std::vector<Check> checks;
    if (name == "tensor") checks = tensor_checks(rng);
    else if (name == "gnconv") checks = gnconv_checks(rng);
    else if (name == "esa") checks = esa_checks(rng);
    else checks = model_checks(rng);
    const double tol = name == "model" ? kModelTolerance : kPrimitiveTolerance;
    for (auto& c : checks) out.push_back({name, c.name, finite_difference_error(c.loss, c.inputs), tol});
  }
  return out;
}

}  // namespace gncf

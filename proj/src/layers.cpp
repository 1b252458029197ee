// SPDX-License-Identifier: Apache-2.0
#include "gncf/layers.hpp"

#include <cmath>

namespace gncf {

namespace {

std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace

Tensor make_param(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

void Affine::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  if (bias.defined()) fn(prefix + ".bias", bias);
}

Affine make_affine(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Affine{make_param({in, out}, uniform_values(in * out, bound, rng)),
                make_param({out}, std::vector<double>(out, 0.0))};
}

void DepthwiseConv::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".kernel", kernel);
  if (bias.defined()) fn(prefix + ".bias", bias);
}

DepthwiseConv make_depthwise(std::size_t channels, std::size_t width, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  return DepthwiseConv{make_param({channels, width}, uniform_values(channels * width, bound, rng)),
                       make_param({channels}, std::vector<double>(channels, 0.0))};
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gain", gain);
  fn(prefix + ".shift", shift);
}

LayerNorm make_layer_norm(std::size_t dim) {
  return LayerNorm{make_param({dim}, std::vector<double>(dim, 1.0)),
                   make_param({dim}, std::vector<double>(dim, 0.0))};
}

void FeedForward::visit(const std::string& prefix, const ParamVisitor& fn) {
  up.visit(prefix + ".up", fn);
  down.visit(prefix + ".down", fn);
}

FeedForward make_feed_forward(std::size_t dim, std::size_t hidden, Rng& rng) {
  Affine up = make_affine(dim, hidden, rng);
  Affine down = make_affine(hidden, dim, rng);
  return FeedForward{std::move(up), std::move(down)};
}

}  // namespace gncf

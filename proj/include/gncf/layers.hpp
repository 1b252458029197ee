// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "gncf/ops.hpp"
#include "gncf/random.hpp"
#include "gncf/tensor.hpp"

namespace gncf {

/// Receives every trainable tensor under a dotted module path.
using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;

struct Affine {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t in_dim() const { return weight.extent(0); }
  std::size_t out_dim() const { return weight.extent(1); }
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Weights uniform in +-1/sqrt(fan_in), zero bias.
Affine make_affine(std::size_t in, std::size_t out, Rng& rng);

struct DepthwiseConv {
  Tensor kernel;  // [C, K]
  Tensor bias;    // [C]

  std::size_t channels() const { return kernel.extent(0); }
  std::size_t width() const { return kernel.extent(1); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Kernels uniform in +-1/sqrt(K), zero bias.
DepthwiseConv make_depthwise(std::size_t channels, std::size_t width, Rng& rng);

struct LayerNorm {
  Tensor gain;
  Tensor shift;
  double eps = 1e-12;

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift, eps); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

LayerNorm make_layer_norm(std::size_t dim);

/// Two affine maps with a ReLU between.
struct FeedForward {
  Affine up;
  Affine down;

  Tensor operator()(const Tensor& x) const { return down(relu(up(x))); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

FeedForward make_feed_forward(std::size_t dim, std::size_t hidden, Rng& rng);

/// Marks a freshly built parameter as trainable.
Tensor make_param(Shape shape, std::vector<double> values);

}  // namespace gncf

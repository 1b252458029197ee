// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gncf/layers.hpp"
#include "gncf/ops.hpp"

namespace gncf {

/// Split widths of the input projection: [D_0 (for M_0), D_0, D_1, ..., D_{n-1}]
/// with D_k = D / 2^(n-k-1). The widths sum to 2D.
///
/// Throws ConfigError unless 2^(n-1) divides D.
std::vector<std::size_t> dimension_schedule(std::size_t dim, std::size_t order);

/// Per-order channel widths D_0..D_{n-1}.
std::vector<std::size_t> order_widths(std::size_t dim, std::size_t order);

struct GnConvConfig {
  std::size_t dim = 0;
  std::size_t order = 1;
  std::size_t kernel = 7;
  double alpha = 1.0;
  ConvPadding padding = ConvPadding::Same;
};

/// Parameters of a recursive gated convolution block.
///
/// `dwconv[k]` convolves N_k over D_k channels; `proj[k-1]` maps M_k from
/// D_{k-1} to D_k for k >= 1 (the k = 0 step uses M_0 as is, since it
/// already has width D_0).
struct GnConvParams {
  std::size_t order = 1;
  std::size_t dim = 0;
  double alpha = 1.0;
  ConvPadding padding = ConvPadding::Same;
  Affine linear_in;  // D -> 2D
  std::vector<DepthwiseConv> dwconv;
  std::vector<Affine> proj;
  Affine linear_out;  // D -> D

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

GnConvParams make_gnconv(const GnConvConfig& config, Rng& rng);

/// Single gated convolution: linear_out(DWConv(N_0) * M_0) with
/// [M_0, N_0] = split(linear_in(x)). Requires params.order == 1.
///
/// `time_keep`, when defined, is a [..., T, 1] 0/1 tensor that zeroes padded
/// time steps before every convolution so they cannot leak into real ones.
Tensor gconv_forward(const Tensor& x, const GnConvParams& params,
                     const Tensor& time_keep = {});

/// Recursive gated convolution over v[..., T, D]:
/// M_{k+1} = DWConv_k(N_k) * proj_k(M_k) / alpha for k = 0..n-1, then
/// linear_out(M_n).
Tensor gnconv_forward(const Tensor& v, const GnConvParams& params,
                      const Tensor& time_keep = {});

/// Closed-form parameter count of a GnConvParams block.
std::size_t gnconv_param_count(std::size_t dim, std::size_t order, std::size_t kernel,
                               bool with_bias = true);

}  // namespace gncf

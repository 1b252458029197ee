// SPDX-License-Identifier: Apache-2.0
#include "gncf/gnconv.hpp"

#include "gncf/error.hpp"

namespace gncf {

namespace {

constexpr std::size_t kMaxOrder = 62;

void check_order(std::size_t dim, std::size_t order) {
  if (order == 0 || order > kMaxOrder) {
    throw ConfigError("order must be in [1, " + std::to_string(kMaxOrder) + "], got " +
                      std::to_string(order));
  }
  const std::size_t step = std::size_t{1} << (order - 1);
  if (dim == 0 || dim % step != 0) {
    throw ConfigError("order " + std::to_string(order) + " needs dim divisible by 2^" +
                      std::to_string(order - 1) + " = " + std::to_string(step) + ", got dim " +
                      std::to_string(dim));
  }
}

Tensor masked(const Tensor& x, const Tensor& time_keep) {
  return time_keep.defined() ? mul(x, time_keep) : x;
}

void check_input(const Tensor& v, const GnConvParams& p, const char* who) {
  if (v.rank() < 2 || v.extent(-1) != p.dim) {
    throw ShapeError(std::string(who) + ": input " + shape_str(v.shape()) +
                     " needs trailing extent " + std::to_string(p.dim));
  }
}

}  // namespace

std::vector<std::size_t> order_widths(std::size_t dim, std::size_t order) {
  check_order(dim, order);
  std::vector<std::size_t> widths(order);
  for (std::size_t k = 0; k < order; ++k) widths[k] = dim >> (order - k - 1);
  return widths;
}

std::vector<std::size_t> dimension_schedule(std::size_t dim, std::size_t order) {
  auto widths = order_widths(dim, order);
  std::vector<std::size_t> schedule;
  schedule.reserve(order + 1);
  schedule.push_back(widths[0]);
  schedule.insert(schedule.end(), widths.begin(), widths.end());
  return schedule;
}

void GnConvParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  linear_in.visit(prefix + ".linear_in", fn);
  for (std::size_t k = 0; k < dwconv.size(); ++k)
    dwconv[k].visit(prefix + ".dwconv." + std::to_string(k), fn);
  for (std::size_t k = 0; k < proj.size(); ++k)
    proj[k].visit(prefix + ".proj." + std::to_string(k + 1), fn);
  linear_out.visit(prefix + ".linear_out", fn);
}

GnConvParams make_gnconv(const GnConvConfig& config, Rng& rng) {
  const auto widths = order_widths(config.dim, config.order);
  if (config.kernel == 0) throw ConfigError("gnconv kernel width must be positive");
  if (!(config.alpha > 0.0)) throw ConfigError("gnconv alpha must be positive");
  GnConvParams p;
  p.order = config.order;
  p.dim = config.dim;
  p.alpha = config.alpha;
  p.padding = config.padding;
  p.linear_in = make_affine(config.dim, 2 * config.dim, rng);
  for (std::size_t k = 0; k < config.order; ++k)
    p.dwconv.push_back(make_depthwise(widths[k], config.kernel, rng));
  for (std::size_t k = 1; k < config.order; ++k)
    p.proj.push_back(make_affine(widths[k - 1], widths[k], rng));
  p.linear_out = make_affine(config.dim, config.dim, rng);
  return p;
}

namespace {

// Taps that can only ever read padding are dropped so that sequences shorter
// than the kernel still convolve as if zero-padded.
Tensor local_conv(const Tensor& x, const DepthwiseConv& conv, ConvPadding padding) {
  const std::size_t t_len = x.extent(-2), k = conv.width();
  if (k <= 2 * t_len + 1) return depthwise_conv1d(x, conv.kernel, conv.bias, padding);
  std::size_t start = 0, keep = 0;
  if (padding == ConvPadding::Causal) {
    start = k - t_len;
    keep = t_len;
  } else {
    start = (k - 1) / 2 - t_len;
    keep = 2 * t_len + 1;
  }
  const std::size_t widths[] = {start, keep, k - start - keep};
  std::vector<std::size_t> nonzero;
  for (std::size_t w : widths) if (w) nonzero.push_back(w);
  auto pieces = split_lastdim(conv.kernel, nonzero);
  Tensor cropped = pieces[start ? 1 : 0];
  return depthwise_conv1d(x, cropped, conv.bias, padding);
}

}  // namespace

Tensor gconv_forward(const Tensor& x, const GnConvParams& params, const Tensor& time_keep) {
  if (params.order != 1) {
    throw ConfigError("gconv_forward needs order-1 parameters, got order " +
                      std::to_string(params.order));
  }
  check_input(x, params, "gconv");
  const std::size_t d = params.dim;
  const std::size_t widths[] = {d, d};
  auto halves = split_lastdim(params.linear_in(x), widths);
  const auto& conv = params.dwconv.at(0);
  Tensor local = local_conv(masked(halves[1], time_keep), conv, params.padding);
  return params.linear_out(elementwise_mul(local, halves[0]));
}

Tensor gnconv_forward(const Tensor& v, const GnConvParams& params, const Tensor& time_keep) {
  check_input(v, params, "gnconv");
  const auto schedule = dimension_schedule(params.dim, params.order);
  if (params.dwconv.size() != params.order || params.proj.size() + 1 != params.order) {
    throw ConfigError("gnconv: parameter lists do not match order " +
                      std::to_string(params.order));
  }
  auto parts = split_lastdim(params.linear_in(v), schedule);
  const double inv_alpha = 1.0 / params.alpha;
  Tensor m = parts[0];
  for (std::size_t k = 0; k < params.order; ++k) {
    try {
      if (k > 0) m = params.proj[k - 1](m);
      const auto& conv = params.dwconv[k];
      Tensor local = local_conv(masked(parts[k + 1], time_keep), conv, params.padding);
      m = scale(elementwise_mul(local, m), inv_alpha);
    } catch (const ShapeError& e) {
      throw ShapeError("gnconv stage " + std::to_string(k) + ": " + e.what());
    }
  }
  return params.linear_out(m);
}

std::size_t gnconv_param_count(std::size_t dim, std::size_t order, std::size_t kernel,
                               bool with_bias) {
  check_order(dim, order);
  const std::size_t d = dim;
  const std::size_t d0 = dim >> (order - 1);
  // sum_{k<n} D_k = 2D - D_0;  sum_{1<=k<n} D_{k-1} D_k = 2 (D^2 - D_0^2) / 3.
  const std::size_t conv_channels = 2 * d - d0;
  const std::size_t proj_weights = 2 * (d * d - d0 * d0) / 3;
  std::size_t count = d * 2 * d + conv_channels * kernel + proj_weights + d * d;
  if (with_bias) count += 2 * d + conv_channels + (2 * d - 2 * d0) + d;
  return count;
}

}  // namespace gncf

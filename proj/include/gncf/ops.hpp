// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gncf/random.hpp"
#include "gncf/tensor.hpp"

namespace gncf {

// Elementwise arithmetic. add/sub/mul broadcast numpy-style over leading
// and unit extents; elementwise_mul insists on identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);

/// x·w + b along the last axis. `b` may be undefined for a bias-free map.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Numerically stable softmax over the last axis. Rejects non-finite input.
Tensor softmax_lastdim(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-12);

enum class ConvPadding {
  /// Output aligned with input; an even kernel gets its extra zero on the right.
  Same,
  /// Left padding only: output t depends on inputs <= t.
  Causal,
};

/// Per-channel 1-D cross-correlation of x[..., T, C] with kernels[C, K] plus
/// bias[C]. Output has the input's shape. K may exceed T up to 2T+1.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
                        ConvPadding padding = ConvPadding::Same);

std::vector<Tensor> split_lastdim(const Tensor& x, std::span<const std::size_t> widths);
Tensor concat_lastdim(std::span<const Tensor> parts);

/// Row lookup: result has shape lead + [D] for a table [V, D].
Tensor embedding(const Tensor& table, std::span<const int> ids, Shape lead);

/// Mean over non-ignored rows of the (optionally label-smoothed) negative
/// log-softmax of logits[N, V] at the target index.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     int ignore_index = -1, double label_smoothing = 0.0);

/// Inverted dropout; identity when rate is zero.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace gncf

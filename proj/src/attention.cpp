// SPDX-License-Identifier: Apache-2.0
#include "gncf/attention.hpp"

#include <cmath>

#include "gncf/error.hpp"

namespace gncf {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::None: return "none";
    case FusionMode::Internal: return "internal";
    case FusionMode::Serial: return "serial";
    case FusionMode::Parallel: return "parallel";
  }
  return "none";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "none") return FusionMode::None;
  if (text == "internal") return FusionMode::Internal;
  if (text == "serial") return FusionMode::Serial;
  if (text == "parallel") return FusionMode::Parallel;
  throw ConfigError("unknown fusion mode '" + std::string(text) +
                    "' (expected none, internal, serial or parallel)");
}

// ---------------------------------------------------------------------------
// AttentionMask

AttentionMask::AttentionMask(std::size_t batch, std::size_t queries, std::size_t keys,
                             std::vector<std::uint8_t> keep)
    : batch_(batch), queries_(queries), keys_(keys), keep_(std::move(keep)) {
  if (batch == 0 || queries == 0 || keys == 0 || keep_.size() != batch * queries * keys) {
    throw ShapeError("attention mask: " + std::to_string(keep_.size()) + " entries for [" +
                     std::to_string(batch) + ", " + std::to_string(queries) + ", " +
                     std::to_string(keys) + "]");
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t q = 0; q < queries; ++q) {
      bool any = false;
      for (std::size_t k = 0; k < keys && !any; ++k) any = this->keep(b, q, k);
      if (!any) {
        throw ShapeError("attention mask: query row " + std::to_string(q) + " of batch item " +
                         std::to_string(b) + " keeps no key");
      }
    }
  }
}

AttentionMask AttentionMask::full(std::size_t queries, std::size_t keys) {
  return AttentionMask(1, queries, keys, std::vector<std::uint8_t>(queries * keys, 1));
}

AttentionMask AttentionMask::causal(std::size_t length) {
  std::vector<std::uint8_t> keep(length * length, 0);
  for (std::size_t q = 0; q < length; ++q)
    for (std::size_t k = 0; k <= q; ++k) keep[q * length + k] = 1;
  return AttentionMask(1, length, length, std::move(keep));
}

AttentionMask AttentionMask::key_padding(std::size_t batch, std::size_t queries,
                                         std::size_t keys,
                                         const std::vector<std::uint8_t>& key_keep) {
  if (key_keep.size() != batch * keys) {
    throw ShapeError("key padding mask: expected " + std::to_string(batch * keys) +
                     " entries, got " + std::to_string(key_keep.size()));
  }
  std::vector<std::uint8_t> keep(batch * queries * keys);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < queries; ++q)
      for (std::size_t k = 0; k < keys; ++k)
        keep[(b * queries + q) * keys + k] = key_keep[b * keys + k];
  return AttentionMask(batch, queries, keys, std::move(keep));
}

AttentionMask AttentionMask::operator&(const AttentionMask& other) const {
  if (queries_ != other.queries_ || keys_ != other.keys_ ||
      (batch_ != other.batch_ && batch_ != 1 && other.batch_ != 1)) {
    throw ShapeError("attention mask: cannot combine masks of different geometry");
  }
  const std::size_t batch = std::max(batch_, other.batch_);
  std::vector<std::uint8_t> keep(batch * queries_ * keys_);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < queries_; ++q)
      for (std::size_t k = 0; k < keys_; ++k)
        keep[(b * queries_ + q) * keys_ + k] =
            this->keep(batch_ == 1 ? 0 : b, q, k) && other.keep(other.batch_ == 1 ? 0 : b, q, k);
  return AttentionMask(batch, queries_, keys_, std::move(keep));
}

Tensor AttentionMask::additive_bias() const {
  std::vector<double> bias(keep_.size());
  for (std::size_t i = 0; i < keep_.size(); ++i) bias[i] = keep_[i] ? 0.0 : kMaskedLogit;
  if (batch_ == 1) return Tensor({1, queries_, keys_}, std::move(bias));
  return Tensor({batch_, 1, queries_, keys_}, std::move(bias));
}

// ---------------------------------------------------------------------------
// Parameters

void EsaParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  w_q.visit(prefix + ".w_q", fn);
  w_k.visit(prefix + ".w_k", fn);
  w_v.visit(prefix + ".w_v", fn);
  if (gnconv) gnconv->visit(prefix + ".gnconv", fn);
  w_o.visit(prefix + ".w_o", fn);
}

EsaParams make_esa(const EsaConfig& config, Rng& rng) {
  if (config.heads == 0 || config.dim % config.heads != 0) {
    throw ConfigError("heads " + std::to_string(config.heads) + " must divide dim " +
                      std::to_string(config.dim));
  }
  EsaParams p;
  p.heads = config.heads;
  p.fusion = config.fusion;
  p.w_q = make_affine(config.dim, config.dim, rng);
  p.w_k = make_affine(config.dim, config.dim, rng);
  p.w_v = make_affine(config.dim, config.dim, rng);
  if (config.fusion != FusionMode::None) {
    GnConvConfig g = config.gnconv;
    g.dim = config.dim;
    p.gnconv = make_gnconv(g, rng);
  }
  p.w_o = make_affine(config.dim, config.dim, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward

Tensor attention_matrix(const Tensor& q, const Tensor& k, const AttentionMask& mask) {
  if (q.rank() < 3 || q.rank() != k.rank() || q.extent(-1) != k.extent(-1) ||
      q.extent(-3) != k.extent(-3)) {
    throw ShapeError("attention_matrix: Q " + shape_str(q.shape()) + " and K " +
                     shape_str(k.shape()) + " are incompatible");
  }
  const std::size_t tq = q.extent(-2), tk = k.extent(-2);
  if (mask.queries() != tq || mask.keys() != tk) {
    throw ShapeError("attention_matrix: mask [" + std::to_string(mask.queries()) + ", " +
                     std::to_string(mask.keys()) + "] does not match scores [" +
                     std::to_string(tq) + ", " + std::to_string(tk) + "]");
  }
  if (mask.batch() != 1 && (q.rank() != 4 || q.extent(0) != mask.batch())) {
    throw ShapeError("attention_matrix: mask batch " + std::to_string(mask.batch()) +
                     " does not match Q " + shape_str(q.shape()));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.extent(-1)));
  Tensor scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_d);
  return softmax_lastdim(add(scores, mask.additive_bias()));
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.extent(0), t = x.extent(1), d = x.extent(2);
  static constexpr std::size_t kSwap[] = {0, 2, 1, 3};
  return permute(reshape(x, {b, t, heads, d / heads}), kSwap);
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.extent(0), h = x.extent(1), t = x.extent(2), d = x.extent(3);
  static constexpr std::size_t kSwap[] = {0, 2, 1, 3};
  return reshape(permute(x, kSwap), {b, t, h * d});
}

namespace {

// Lifts [T, D] inputs to [1, T, D]; `restore` undoes it on the output.
struct Batched {
  Tensor x;
  bool lifted = false;

  Tensor restore(const Tensor& y) const {
    return lifted ? reshape(y, {y.extent(1), y.extent(2)}) : y;
  }
};

Batched lift(const Tensor& x, std::size_t dim, const char* who) {
  if ((x.rank() != 2 && x.rank() != 3) || x.extent(-1) != dim) {
    throw ShapeError(std::string(who) + ": input " + shape_str(x.shape()) +
                     " must be [T, " + std::to_string(dim) + "] or [B, T, " +
                     std::to_string(dim) + "]");
  }
  if (x.rank() == 3) return {x, false};
  return {reshape(x, {1, x.extent(0), x.extent(1)}), true};
}

Tensor lift_keep(const Tensor& time_keep) {
  if (!time_keep.defined() || time_keep.rank() == 3) return time_keep;
  return reshape(time_keep, {1, time_keep.extent(0), time_keep.extent(1)});
}

const GnConvParams& require_gnconv(const EsaParams& p, const char* who) {
  if (!p.gnconv) throw ConfigError(std::string(who) + ": attention block has no gnconv parameters");
  return *p.gnconv;
}

// w_o(merge(A(Q, K) x split(V))) with V = value_in, already transformed.
Tensor attend(const Tensor& query_in, const Tensor& key_in, const Tensor& value,
              const EsaParams& p, const AttentionMask& mask) {
  if (p.heads == 0 || p.dim() % p.heads != 0) {
    throw ShapeError("attention: heads " + std::to_string(p.heads) + " must divide dim " +
                     std::to_string(p.dim()));
  }
  Tensor q = split_heads(p.w_q(query_in), p.heads);
  Tensor k = split_heads(p.w_k(key_in), p.heads);
  Tensor v = split_heads(value, p.heads);
  Tensor weights = attention_matrix(q, k, mask);
  return p.w_o(merge_heads(matmul(weights, v)));
}

}  // namespace

Tensor multi_head_attention(const Tensor& query_in, const Tensor& memory, const EsaParams& params,
                            const AttentionMask& mask) {
  auto q = lift(query_in, params.dim(), "multi_head_attention");
  auto m = lift(memory, params.dim(), "multi_head_attention");
  return q.restore(attend(q.x, m.x, params.w_v(m.x), params, mask));
}

Tensor esa_forward(const Tensor& x, const EsaParams& params, const AttentionMask& mask,
                   const Tensor& time_keep) {
  const auto& g = require_gnconv(params, "esa_forward");
  auto in = lift(x, params.dim(), "esa_forward");
  Tensor v = gnconv_forward(params.w_v(in.x), g, lift_keep(time_keep));
  return in.restore(attend(in.x, in.x, v, params, mask));
}

Tensor serial_fusion_forward(const Tensor& x, const EsaParams& params, const AttentionMask& mask,
                             const Tensor& time_keep) {
  const auto& g = require_gnconv(params, "serial_fusion_forward");
  auto in = lift(x, params.dim(), "serial_fusion_forward");
  Tensor global = attend(in.x, in.x, params.w_v(in.x), params, mask);
  return in.restore(gnconv_forward(global, g, lift_keep(time_keep)));
}

Tensor parallel_fusion_forward(const Tensor& x, const EsaParams& params,
                               const AttentionMask& mask, const Tensor& time_keep) {
  const auto& g = require_gnconv(params, "parallel_fusion_forward");
  auto in = lift(x, params.dim(), "parallel_fusion_forward");
  Tensor global = attend(in.x, in.x, params.w_v(in.x), params, mask);
  Tensor local = gnconv_forward(in.x, g, lift_keep(time_keep));
  return in.restore(add(global, local));
}

Tensor self_attention_forward(const Tensor& x, const EsaParams& params, const AttentionMask& mask,
                              const Tensor& time_keep) {
  switch (params.fusion) {
    case FusionMode::Internal: return esa_forward(x, params, mask, time_keep);
    case FusionMode::Serial: return serial_fusion_forward(x, params, mask, time_keep);
    case FusionMode::Parallel: return parallel_fusion_forward(x, params, mask, time_keep);
    case FusionMode::None: break;
  }
  return multi_head_attention(x, x, params, mask);
}

}  // namespace gncf

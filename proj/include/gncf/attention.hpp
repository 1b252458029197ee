// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gncf/gnconv.hpp"
#include "gncf/layers.hpp"

namespace gncf {

/// Where the recursive gated convolution meets attention.
enum class FusionMode {
  None,      // plain multi-head attention
  Internal,  // gnconv transforms V inside the attention product
  Serial,    // gnconv applied to the attention block output
  Parallel,  // gnconv of the block input added to the attention output
};

std::string to_string(FusionMode mode);
/// Accepts "none", "internal", "serial", "parallel". Throws ConfigError.
FusionMode parse_fusion_mode(std::string_view text);

/// Keep/suppress pattern over [batch, queries, keys]. A batch of one
/// applies to every batch item.
class AttentionMask {
 public:
  /// Throws ShapeError if any query row keeps no key.
  AttentionMask(std::size_t batch, std::size_t queries, std::size_t keys,
                std::vector<std::uint8_t> keep);

  static AttentionMask full(std::size_t queries, std::size_t keys);
  static AttentionMask causal(std::size_t length);
  /// key_keep is [batch * keys]; every query sees the kept keys.
  static AttentionMask key_padding(std::size_t batch, std::size_t queries, std::size_t keys,
                                   const std::vector<std::uint8_t>& key_keep);

  /// Elementwise AND; a batch-1 operand is broadcast.
  AttentionMask operator&(const AttentionMask& other) const;

  std::size_t batch() const { return batch_; }
  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool keep(std::size_t b, std::size_t q, std::size_t k) const {
    return keep_[(b * queries_ + q) * keys_ + k] != 0;
  }

  /// 0 where kept, kMaskedLogit where suppressed. Shape [1, Tq, Tk] for a
  /// batch of one, otherwise [B, 1, Tq, Tk], so it broadcasts over heads.
  Tensor additive_bias() const;

  static constexpr double kMaskedLogit = -1e9;

 private:
  std::size_t batch_, queries_, keys_;
  std::vector<std::uint8_t> keep_;
};

struct EsaParams {
  Affine w_q, w_k, w_v, w_o;
  std::size_t heads = 1;
  FusionMode fusion = FusionMode::None;
  std::optional<GnConvParams> gnconv;  // present unless fusion is None

  std::size_t dim() const { return w_q.in_dim(); }
  std::size_t head_dim() const { return dim() / heads; }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct EsaConfig {
  std::size_t dim = 0;
  std::size_t heads = 1;
  FusionMode fusion = FusionMode::None;
  GnConvConfig gnconv;  // dim is taken from `dim`
};

EsaParams make_esa(const EsaConfig& config, Rng& rng);

/// softmax(Q K^T / sqrt(d) + mask) for Q[..., h, Tq, d], K[..., h, Tk, d].
Tensor attention_matrix(const Tensor& q, const Tensor& k, const AttentionMask& mask);

/// [B, T, D] -> [B, h, T, D/h] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

/// Plain multi-head attention of `query_in` over `memory`; gnconv unused.
Tensor multi_head_attention(const Tensor& query_in, const Tensor& memory,
                            const EsaParams& params, const AttentionMask& mask);

/// Enhanced self-attention: output = w_o(Attention(Q, K) x heads(gnconv(V))).
/// Inputs are [T, D] or [B, T, D]. `time_keep` ([B, T, 1] of 0/1) zeroes
/// padded steps before each convolution.
Tensor esa_forward(const Tensor& x, const EsaParams& params, const AttentionMask& mask,
                   const Tensor& time_keep = {});

/// gnconv(MHA(X)).
Tensor serial_fusion_forward(const Tensor& x, const EsaParams& params,
                             const AttentionMask& mask, const Tensor& time_keep = {});

/// MHA(X) + gnconv(X).
Tensor parallel_fusion_forward(const Tensor& x, const EsaParams& params,
                               const AttentionMask& mask, const Tensor& time_keep = {});

/// Self-attention dispatched on params.fusion.
Tensor self_attention_forward(const Tensor& x, const EsaParams& params,
                              const AttentionMask& mask, const Tensor& time_keep = {});

}  // namespace gncf

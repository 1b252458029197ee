// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gncf/attention.hpp"
#include "gncf/layers.hpp"

namespace gncf {

// Reserved token ids shared by every vocabulary.
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kFirstSymbol = 3;

struct ModelConfig {
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 6;
  std::size_t dim = 256;
  std::size_t heads = 4;
  std::size_t ffn_dim = 0;  // 0 means 4 * dim
  std::size_t order = 5;
  std::size_t kernel = 7;
  double alpha = 1.0;
  FusionMode fusion = FusionMode::Internal;
  bool esa_in_encoder = true;
  bool esa_in_decoder = false;
  std::size_t source_vocab = 32;
  std::size_t target_vocab = 32;
  std::size_t max_len = 64;
  double dropout = 0.0;

  std::size_t ffn_width() const { return ffn_dim ? ffn_dim : 4 * dim; }
  FusionMode encoder_fusion() const { return esa_in_encoder ? fusion : FusionMode::None; }
  FusionMode decoder_fusion() const { return esa_in_decoder ? fusion : FusionMode::None; }

  /// Throws ConfigError naming the first failing field.
  void validate() const;

  /// One `key=value` line per field in a fixed order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderLayer {
  LayerNorm attn_norm;
  EsaParams attn;
  LayerNorm ffn_norm;
  FeedForward ffn;
};

struct DecoderLayer {
  LayerNorm self_norm;
  EsaParams self_attn;
  LayerNorm cross_norm;
  EsaParams cross_attn;  // always plain
  LayerNorm ffn_norm;
  FeedForward ffn;
};

struct GncformerModel {
  ModelConfig config;
  Tensor source_embedding;  // [source_vocab, D]
  Tensor target_embedding;  // [target_vocab, D]
  std::vector<EncoderLayer> encoder;
  LayerNorm encoder_norm;
  std::vector<DecoderLayer> decoder;
  LayerNorm decoder_norm;
  Affine output;  // D -> target_vocab

  /// Visits parameters in a fixed order with dotted names.
  void visit(const ParamVisitor& fn);
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<Tensor> parameters();
  void zero_grad();
};

GncformerModel build_model(const ModelConfig& config, std::uint64_t seed);

/// Right-padded token matrix [batch, length] using kPadToken.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;

  static TokenBatch from_sequences(std::span<const std::vector<int>> seqs);
  int at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
};

struct ForwardOptions {
  /// Enables dropout when non-null and the configured rate is positive.
  Rng* dropout_rng = nullptr;
};

/// Sinusoidal position table [length, dim].
Tensor positional_encoding(std::size_t length, std::size_t dim);

/// Encoder output [B, S, D].
Tensor encode(const GncformerModel& model, const TokenBatch& source,
              const ForwardOptions& options = {});

/// Teacher-forced decoder logits [B, T, target_vocab].
Tensor decode(const GncformerModel& model, const Tensor& memory, const TokenBatch& source,
              const TokenBatch& target_in, const ForwardOptions& options = {});

Tensor forward_batch(const GncformerModel& model, const TokenBatch& source,
                     const TokenBatch& target_in, const ForwardOptions& options = {});

/// Logits [T_tgt, target_vocab] for one source and decoder-input sequence.
/// Source positions holding kPadToken are masked as padding.
Tensor forward(const GncformerModel& model, std::span<const int> source,
               std::span<const int> target_in);

/// Argmax decoding from `bos` until `eos` (excluded) or max_steps tokens.
std::vector<int> greedy_decode(const GncformerModel& model, std::span<const int> source,
                               std::size_t max_steps, int bos = kBosToken, int eos = kEosToken);

std::vector<std::vector<int>> greedy_decode_batch(const GncformerModel& model,
                                                  std::span<const std::vector<int>> sources,
                                                  std::size_t max_steps, int bos = kBosToken,
                                                  int eos = kEosToken);

}  // namespace gncf

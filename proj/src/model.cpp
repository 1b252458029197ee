// SPDX-License-Identifier: Apache-2.0
#include "gncf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "gncf/error.hpp"

namespace gncf {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (encoder_layers == 0) throw ConfigError("encoder_layers must be at least 1");
  if (decoder_layers == 0) throw ConfigError("decoder_layers must be at least 1");
  if (dim == 0) throw ConfigError("dim must be positive");
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("heads " + std::to_string(heads) + " must divide dim " + std::to_string(dim));
  }
  order_widths(dim, order);  // throws naming order and dim
  if (kernel == 0) throw ConfigError("kernel must be positive");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
  if (source_vocab < 3) throw ConfigError("source_vocab must be at least 3 (pad, bos, eos)");
  if (target_vocab < 3) throw ConfigError("target_vocab must be at least 3 (pad, bos, eos)");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  if (used != value.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
  if (used != value.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  return v;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1, got '" + value + "'");
}

}  // namespace

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "encoder_layers=" << encoder_layers << '\n'
     << "decoder_layers=" << decoder_layers << '\n'
     << "dim=" << dim << '\n'
     << "heads=" << heads << '\n'
     << "ffn_dim=" << ffn_dim << '\n'
     << "order=" << order << '\n'
     << "kernel=" << kernel << '\n'
     << "alpha=" << format_double(alpha) << '\n'
     << "fusion=" << to_string(fusion) << '\n'
     << "esa_in_encoder=" << (esa_in_encoder ? 1 : 0) << '\n'
     << "esa_in_decoder=" << (esa_in_decoder ? 1 : 0) << '\n'
     << "source_vocab=" << source_vocab << '\n'
     << "target_vocab=" << target_vocab << '\n'
     << "max_len=" << max_len << '\n'
     << "dropout=" << format_double(dropout) << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "encoder_layers") c.encoder_layers = parse_size(key, value);
    else if (key == "decoder_layers") c.decoder_layers = parse_size(key, value);
    else if (key == "dim") c.dim = parse_size(key, value);
    else if (key == "heads") c.heads = parse_size(key, value);
    else if (key == "ffn_dim") c.ffn_dim = parse_size(key, value);
    else if (key == "order") c.order = parse_size(key, value);
    else if (key == "kernel") c.kernel = parse_size(key, value);
    else if (key == "alpha") c.alpha = parse_real(key, value);
    else if (key == "fusion") c.fusion = parse_fusion_mode(value);
    else if (key == "esa_in_encoder") c.esa_in_encoder = parse_flag(key, value);
    else if (key == "esa_in_decoder") c.esa_in_decoder = parse_flag(key, value);
    else if (key == "source_vocab") c.source_vocab = parse_size(key, value);
    else if (key == "target_vocab") c.target_vocab = parse_size(key, value);
    else if (key == "max_len") c.max_len = parse_size(key, value);
    else if (key == "dropout") c.dropout = parse_real(key, value);
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

void GncformerModel::visit(const ParamVisitor& fn) {
  fn("source_embedding", source_embedding);
  fn("target_embedding", target_embedding);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    auto& l = encoder[i];
    l.attn_norm.visit(p + ".attn_norm", fn);
    l.attn.visit(p + ".attn", fn);
    l.ffn_norm.visit(p + ".ffn_norm", fn);
    l.ffn.visit(p + ".ffn", fn);
  }
  encoder_norm.visit("encoder_norm", fn);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    auto& l = decoder[i];
    l.self_norm.visit(p + ".self_norm", fn);
    l.self_attn.visit(p + ".self_attn", fn);
    l.cross_norm.visit(p + ".cross_norm", fn);
    l.cross_attn.visit(p + ".cross_attn", fn);
    l.ffn_norm.visit(p + ".ffn_norm", fn);
    l.ffn.visit(p + ".ffn", fn);
  }
  decoder_norm.visit("decoder_norm", fn);
  output.visit("output", fn);
}

std::vector<std::pair<std::string, Tensor>> GncformerModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> GncformerModel::parameters() {
  std::vector<Tensor> out;
  visit([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

void GncformerModel::zero_grad() {
  visit([](const std::string&, Tensor& t) { t.zero_grad(); });
}

GncformerModel build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.dim;
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const auto embedding_table = [&](std::size_t vocab) {
    std::vector<double> v(vocab * d);
    for (auto& x : v) x = rng.uniform(-emb_bound, emb_bound);
    return make_param({vocab, d}, std::move(v));
  };
  const auto attention = [&](FusionMode fusion, ConvPadding padding) {
    EsaConfig ec;
    ec.dim = d;
    ec.heads = config.heads;
    ec.fusion = fusion;
    ec.gnconv = GnConvConfig{d, config.order, config.kernel, config.alpha, padding};
    return make_esa(ec, rng);
  };

  GncformerModel m;
  m.config = config;
  m.source_embedding = embedding_table(config.source_vocab);
  m.target_embedding = embedding_table(config.target_vocab);
  for (std::size_t i = 0; i < config.encoder_layers; ++i) {
    EncoderLayer l;
    l.attn_norm = make_layer_norm(d);
    l.attn = attention(config.encoder_fusion(), ConvPadding::Same);
    l.ffn_norm = make_layer_norm(d);
    l.ffn = make_feed_forward(d, config.ffn_width(), rng);
    m.encoder.push_back(std::move(l));
  }
  m.encoder_norm = make_layer_norm(d);
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    DecoderLayer l;
    l.self_norm = make_layer_norm(d);
    l.self_attn = attention(config.decoder_fusion(), ConvPadding::Causal);
    l.cross_norm = make_layer_norm(d);
    l.cross_attn = attention(FusionMode::None, ConvPadding::Same);
    l.ffn_norm = make_layer_norm(d);
    l.ffn = make_feed_forward(d, config.ffn_width(), rng);
    m.decoder.push_back(std::move(l));
  }
  m.decoder_norm = make_layer_norm(d);
  m.output = make_affine(d, config.target_vocab, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Forward

TokenBatch TokenBatch::from_sequences(std::span<const std::vector<int>> seqs) {
  if (seqs.empty()) throw std::invalid_argument("token batch: no sequences");
  TokenBatch b;
  b.batch = seqs.size();
  for (const auto& s : seqs) {
    if (s.empty()) throw std::invalid_argument("token batch: empty sequence");
    b.length = std::max(b.length, s.size());
  }
  b.ids.assign(b.batch * b.length, kPadToken);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    std::copy(seqs[i].begin(), seqs[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.length));
  return b;
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * freq;
      pe[t * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({length, dim}, std::move(pe));
}

namespace {

void check_tokens(const TokenBatch& tokens, std::size_t vocab, std::size_t max_len,
                  const char* which) {
  if (tokens.length > max_len) {
    throw std::length_error(std::string(which) + " length " + std::to_string(tokens.length) +
                            " exceeds max_len " + std::to_string(max_len));
  }
  for (int id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range(std::string(which) + " token " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
  }
}

std::vector<std::uint8_t> keep_flags(const TokenBatch& tokens) {
  std::vector<std::uint8_t> keep(tokens.ids.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = tokens.ids[i] != kPadToken;
  return keep;
}

Tensor time_keep_tensor(const TokenBatch& tokens) {
  std::vector<double> v(tokens.ids.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = tokens.ids[i] != kPadToken ? 1.0 : 0.0;
  return Tensor({tokens.batch, tokens.length, 1}, std::move(v));
}

Tensor embed(const Tensor& table, const TokenBatch& tokens, std::size_t dim) {
  Tensor e = embedding(table, tokens.ids, {tokens.batch, tokens.length});
  e = scale(e, std::sqrt(static_cast<double>(dim)));
  return add(e, positional_encoding(tokens.length, dim));
}

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardOptions& opt) {
  if (!opt.dropout_rng || rate <= 0.0) return x;
  return dropout(x, rate, *opt.dropout_rng);
}

}  // namespace

Tensor encode(const GncformerModel& model, const TokenBatch& source, const ForwardOptions& options) {
  const auto& c = model.config;
  check_tokens(source, c.source_vocab, c.max_len, "source");
  const auto mask = AttentionMask::key_padding(source.batch, source.length, source.length,
                                               keep_flags(source));
  const Tensor keep = time_keep_tensor(source);
  Tensor x = maybe_dropout(embed(model.source_embedding, source, c.dim), c.dropout, options);
  for (const auto& layer : model.encoder) {
    Tensor a = self_attention_forward(layer.attn_norm(x), layer.attn, mask, keep);
    x = add(x, maybe_dropout(a, c.dropout, options));
    Tensor f = layer.ffn(layer.ffn_norm(x));
    x = add(x, maybe_dropout(f, c.dropout, options));
  }
  return model.encoder_norm(x);
}

Tensor decode(const GncformerModel& model, const Tensor& memory, const TokenBatch& source,
              const TokenBatch& target_in, const ForwardOptions& options) {
  const auto& c = model.config;
  check_tokens(target_in, c.target_vocab, c.max_len, "target");
  if (memory.rank() != 3 || memory.extent(0) != source.batch || memory.extent(1) != source.length) {
    throw ShapeError("decode: memory " + shape_str(memory.shape()) + " does not match source batch");
  }
  if (target_in.batch != source.batch) throw ShapeError("decode: source and target batch sizes differ");
  const std::size_t t = target_in.length;
  const auto target_keep = keep_flags(target_in);
  const auto self_mask = AttentionMask::causal(t) &
                         AttentionMask::key_padding(target_in.batch, t, t, target_keep);
  const auto cross_mask = AttentionMask::key_padding(source.batch, t, source.length, keep_flags(source));
  const Tensor keep = time_keep_tensor(target_in);
  Tensor y = maybe_dropout(embed(model.target_embedding, target_in, c.dim), c.dropout, options);
  for (const auto& layer : model.decoder) {
    Tensor a = self_attention_forward(layer.self_norm(y), layer.self_attn, self_mask, keep);
    y = add(y, maybe_dropout(a, c.dropout, options));
    Tensor x = multi_head_attention(layer.cross_norm(y), memory, layer.cross_attn, cross_mask);
    y = add(y, maybe_dropout(x, c.dropout, options));
    Tensor f = layer.ffn(layer.ffn_norm(y));
    y = add(y, maybe_dropout(f, c.dropout, options));
  }
  return model.output(model.decoder_norm(y));
}

Tensor forward_batch(const GncformerModel& model, const TokenBatch& source,
                     const TokenBatch& target_in, const ForwardOptions& options) {
  return decode(model, encode(model, source, options), source, target_in, options);
}

Tensor forward(const GncformerModel& model, std::span<const int> source, std::span<const int> target_in) {
  const std::vector<int> src(source.begin(), source.end());
  const std::vector<int> tgt(target_in.begin(), target_in.end());
  Tensor logits = forward_batch(model, TokenBatch::from_sequences(std::span(&src, 1)),
                                TokenBatch::from_sequences(std::span(&tgt, 1)));
  return reshape(logits, {logits.extent(1), logits.extent(2)});
}

std::vector<std::vector<int>> greedy_decode_batch(const GncformerModel& model,
                                                  std::span<const std::vector<int>> sources,
                                                  std::size_t max_steps, int bos, int eos) {
  NoGradGuard no_grad;
  const TokenBatch src = TokenBatch::from_sequences(sources);
  const Tensor memory = encode(model, src);
  const std::size_t b = src.batch;
  const std::size_t v = model.config.target_vocab;
  std::vector<std::vector<int>> prefix(b, std::vector<int>{bos});
  std::vector<std::vector<int>> out(b);
  std::vector<bool> done(b, false);
  const std::size_t steps = std::min(max_steps, model.config.max_len);
  for (std::size_t step = 0; step < steps; ++step) {
    const Tensor logits = decode(model, memory, src, TokenBatch::from_sequences(prefix));
    const auto lv = logits.values();
    const std::size_t t = prefix[0].size();
    bool all_done = true;
    for (std::size_t i = 0; i < b; ++i) {
      const double* row = lv.data() + (i * t + t - 1) * v;
      const int tok = static_cast<int>(std::max_element(row, row + v) - row);
      if (!done[i]) {
        if (tok == eos) done[i] = true;
        else out[i].push_back(tok);
      }
      prefix[i].push_back(tok);
      all_done = all_done && done[i];
    }
    if (all_done) break;
  }
  return out;
}

std::vector<int> greedy_decode(const GncformerModel& model, std::span<const int> source,
                               std::size_t max_steps, int bos, int eos) {
  const std::vector<int> src(source.begin(), source.end());
  return greedy_decode_batch(model, std::span(&src, 1), max_steps, bos, eos).front();
}

}  // namespace gncf

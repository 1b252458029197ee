// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "gncf/checkpoint.hpp"
#include "gncf/error.hpp"
#include "gncf/model.hpp"
#include "gncf/params.hpp"
#include "support/test_util.hpp"

namespace gncf {
namespace {

using testing::max_abs_diff;
using testing::max_gradient_error;

ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.dim = 8;
  c.heads = 2;
  c.order = 2;
  c.kernel = 3;
  c.source_vocab = 11;
  c.target_vocab = 11;
  c.max_len = 16;
  c.esa_in_encoder = true;
  c.esa_in_decoder = true;
  return c;
}

std::vector<int> random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<int> t(n);
  for (auto& v : t) v = kFirstSymbol + static_cast<int>(rng.below(vocab - kFirstSymbol));
  return t;
}

// Gives biases nonzero values so every path carries signal.
void perturb_biases(GncformerModel& m, Rng& rng) {
  m.visit([&](const std::string& name, Tensor& t) {
    if (name.ends_with(".bias") || name.ends_with(".shift"))
      for (auto& v : t.mutable_values()) v = rng.uniform(-0.2, 0.2);
  });
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gncf_model_test_" + name)).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TEST(ModelConfig, ValidateNamesFailingField) {
  auto expect_field = [](ModelConfig c, const std::string& field) {
    try {
      c.validate();
      FAIL() << "expected ConfigError for " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  ModelConfig c = tiny_config();
  c.encoder_layers = 0;
  expect_field(c, "encoder_layers");
  c = tiny_config();
  c.decoder_layers = 0;
  expect_field(c, "decoder_layers");
  c = tiny_config();
  c.heads = 3;
  expect_field(c, "heads");
  c = tiny_config();
  c.order = 5;
  expect_field(c, "order");
  EXPECT_THROW(build_model(c, 1), ConfigError);
}

TEST(ModelConfig, TextRoundTrip) {
  ModelConfig c = tiny_config();
  c.alpha = 0.1 + 0.2;
  c.fusion = FusionMode::Parallel;
  c.dropout = 0.125;
  EXPECT_EQ(ModelConfig::from_text(c.to_text()), c);
  EXPECT_EQ(ModelConfig::from_text(ModelConfig{}.to_text()), ModelConfig{});
  EXPECT_THROW(ModelConfig::from_text("colour=blue\n"), ConfigError);
}

TEST(BuildModel, SameSeedIsBitIdentical) {
  GncformerModel a = build_model(tiny_config(), 42);
  GncformerModel b = build_model(tiny_config(), 42);
  GncformerModel c = build_model(tiny_config(), 43);
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    ASSERT_EQ(pa[i].second.shape(), pb[i].second.shape());
    EXPECT_TRUE(std::equal(pa[i].second.values().begin(), pa[i].second.values().end(), pb[i].second.values().begin()));
    any_diff |= !std::equal(pa[i].second.values().begin(), pa[i].second.values().end(), pc[i].second.values().begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(BuildModel, InitializationRanges) {
  ModelConfig c = tiny_config();
  GncformerModel m = build_model(c, 3);
  m.visit([&](const std::string& name, Tensor& t) {
    const auto v = t.values();
    if (name.ends_with(".bias") || name.ends_with(".shift")) {
      for (double x : v) EXPECT_EQ(x, 0.0) << name;
    } else if (name.ends_with(".gain")) {
      for (double x : v) EXPECT_EQ(x, 1.0) << name;
    } else if (name.find(".dwconv.") != std::string::npos) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.extent(1)));
      for (double x : v) EXPECT_LE(std::abs(x), bound) << name;
    } else if (name.ends_with("embedding")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(c.dim));
      for (double x : v) EXPECT_LE(std::abs(x), bound) << name;
    } else {
      ASSERT_EQ(t.rank(), 2u) << name;
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.extent(0)));
      for (double x : v) EXPECT_LE(std::abs(x), bound) << name;
    }
  });
}

TEST(BuildModel, PlacementFlagsSelectAttentionKind) {
  ModelConfig c = tiny_config();
  c.esa_in_decoder = false;
  GncformerModel m = build_model(c, 1);
  EXPECT_TRUE(m.encoder[0].attn.gnconv.has_value());
  EXPECT_EQ(m.encoder[0].attn.fusion, FusionMode::Internal);
  EXPECT_FALSE(m.decoder[0].self_attn.gnconv.has_value());
  EXPECT_FALSE(m.decoder[0].cross_attn.gnconv.has_value());
  EXPECT_EQ(m.decoder[0].cross_attn.fusion, FusionMode::None);

  c.esa_in_encoder = false;
  c.esa_in_decoder = true;
  GncformerModel d = build_model(c, 1);
  EXPECT_FALSE(d.encoder[0].attn.gnconv.has_value());
  ASSERT_TRUE(d.decoder[0].self_attn.gnconv.has_value());
  EXPECT_EQ(d.decoder[0].self_attn.gnconv->padding, ConvPadding::Causal);
  EXPECT_FALSE(d.decoder[0].cross_attn.gnconv.has_value());
}

TEST(BuildModel, FlagsOffMatchesPlainCount) {
  ModelConfig c = tiny_config();
  c.esa_in_encoder = false;
  c.esa_in_decoder = false;
  GncformerModel m = build_model(c, 5);
  const ParamReport r = count_parameters(m);
  EXPECT_EQ(r.total, r.baseline_total);
  EXPECT_EQ(r.delta, 0);
  EXPECT_TRUE(r.esa_overhead.empty());
}

TEST(BuildModel, ReferenceConfigurationCarriesOrderFiveSchedule) {
  ModelConfig c;
  c.kernel = 32;
  c.source_vocab = 8;
  c.target_vocab = 8;
  ASSERT_EQ(c.dim, 256u);
  ASSERT_EQ(c.heads, 4u);
  ASSERT_EQ(c.order, 5u);
  GncformerModel m = build_model(c, 0);
  ASSERT_EQ(m.encoder.size(), 6u);
  ASSERT_EQ(m.decoder.size(), 6u);
  for (const auto& layer : m.encoder) {
    ASSERT_TRUE(layer.attn.gnconv.has_value());
    const GnConvParams& g = *layer.attn.gnconv;
    // M_0 shares D_0 with the first gate.
    std::vector<std::size_t> sched{g.dwconv[0].channels()};
    for (const auto& dw : g.dwconv) sched.push_back(dw.channels());
    EXPECT_EQ(sched, (std::vector<std::size_t>{16, 16, 32, 64, 128, 256}));
    EXPECT_EQ(dimension_schedule(g.dim, g.order), sched);
    EXPECT_EQ(g.dwconv[0].width(), 32u);
  }
}

TEST(Forward, LogitsShape) {
  Rng rng(7);
  GncformerModel m = build_model(tiny_config(), 7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto src = random_tokens(1 + rng.below(8), 11, rng);
    const auto tgt = random_tokens(1 + rng.below(8), 11, rng);
    Tensor logits = forward(m, src, tgt);
    EXPECT_EQ(logits.shape(), (Shape{tgt.size(), 11}));
  }
  std::vector<std::vector<int>> srcs{random_tokens(3, 11, rng), random_tokens(5, 11, rng)};
  std::vector<std::vector<int>> tgts{random_tokens(4, 11, rng), random_tokens(2, 11, rng)};
  Tensor batched = forward_batch(m, TokenBatch::from_sequences(srcs), TokenBatch::from_sequences(tgts));
  EXPECT_EQ(batched.shape(), (Shape{2, 4, 11}));
}

TEST(Forward, RejectsBadTokensAndLengths) {
  GncformerModel m = build_model(tiny_config(), 1);
  const std::vector<int> ok{3, 4, 5};
  EXPECT_THROW(forward(m, std::vector<int>{3, 11}, ok), std::out_of_range);
  EXPECT_THROW(forward(m, ok, std::vector<int>{-1}), std::out_of_range);
  EXPECT_THROW(forward(m, std::vector<int>(17, 3), ok), std::length_error);
  EXPECT_THROW(forward(m, ok, std::vector<int>(17, 3)), std::length_error);
  EXPECT_NO_THROW(forward(m, std::vector<int>(16, 3), ok));
}

TEST(Forward, DecoderIsCausal) {
  Rng rng(8);
  for (bool esa_dec : {false, true}) {
    ModelConfig c = tiny_config();
    c.esa_in_decoder = esa_dec;
    c.kernel = 5;
    GncformerModel m = build_model(c, 8);
    perturb_biases(m, rng);
    for (int trial = 0; trial < 10; ++trial) {
      const auto src = random_tokens(1 + rng.below(6), 11, rng);
      auto tgt = random_tokens(2 + rng.below(6), 11, rng);
      const std::size_t j = 1 + rng.below(tgt.size() - 1);
      Tensor before = forward(m, src, tgt);
      tgt[j] = kFirstSymbol + static_cast<int>((tgt[j] - kFirstSymbol + 1 + rng.below(7)) % 8);
      Tensor after = forward(m, src, tgt);
      EXPECT_LT(max_abs_diff(std::span(before.values().data(), j * 11), std::span(after.values().data(), j * 11)), 1e-12);
      EXPECT_GT(max_abs_diff(std::span(before.values().data() + j * 11, 11), std::span(after.values().data() + j * 11, 11)), 0.0);
    }
  }
}

TEST(Forward, SourcePaddingIsInvisible) {
  Rng rng(9);
  for (FusionMode mode : {FusionMode::Internal, FusionMode::Serial, FusionMode::Parallel}) {
    ModelConfig c = tiny_config();
    c.fusion = mode;
    c.kernel = 5;
    GncformerModel m = build_model(c, 9);
    perturb_biases(m, rng);
    for (int trial = 0; trial < 5; ++trial) {
      auto src = random_tokens(1 + rng.below(6), 11, rng);
      const auto tgt = random_tokens(1 + rng.below(6), 11, rng);
      Tensor base = forward(m, src, tgt);
      src.resize(src.size() + 1 + rng.below(4), kPadToken);
      Tensor padded = forward(m, src, tgt);
      EXPECT_LT(max_abs_diff(base.values(), padded.values()), 1e-9) << to_string(mode);
    }
  }
}

TEST(Forward, BatchedMatchesSingleSequences) {
  Rng rng(10);
  GncformerModel m = build_model(tiny_config(), 10);
  perturb_biases(m, rng);
  std::vector<std::vector<int>> srcs, tgts;
  for (int i = 0; i < 3; ++i) {
    srcs.push_back(random_tokens(2 + rng.below(5), 11, rng));
    tgts.push_back(random_tokens(2 + rng.below(5), 11, rng));
  }
  const TokenBatch tb = TokenBatch::from_sequences(tgts);
  Tensor batched = forward_batch(m, TokenBatch::from_sequences(srcs), tb);
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor single = forward(m, srcs[b], tgts[b]);
    const std::size_t rows = tgts[b].size();
    EXPECT_LT(max_abs_diff(single.values(), std::span(batched.values().data() + b * tb.length * 11, rows * 11)), 1e-9);
  }
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  GncformerModel m = build_model(tiny_config(), 11);
  perturb_biases(m, rng);
  const auto src = random_tokens(4, 11, rng);
  const std::vector<int> tgt_in{kBosToken, 5, 7, 4};
  const std::vector<int> tgt_out{5, 7, 4, kEosToken};
  const double err = max_gradient_error(
      [&] { return cross_entropy(forward(m, src, tgt_in), tgt_out); }, m.parameters());
  EXPECT_LT(err, 1e-3);
}

TEST(GreedyDecode, DeterministicAndBounded) {
  Rng rng(12);
  GncformerModel m = build_model(tiny_config(), 12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto src = random_tokens(1 + rng.below(6), 11, rng);
    const std::size_t steps = 1 + rng.below(8);
    const auto a = greedy_decode(m, src, steps);
    const auto b = greedy_decode(m, src, steps);
    EXPECT_EQ(a, b);
    EXPECT_LE(a.size(), steps);
    for (int t : a) EXPECT_NE(t, kEosToken);
  }
}

TEST(GreedyDecode, EosFirstGivesEmpty) {
  GncformerModel m = build_model(tiny_config(), 13);
  m.output.bias.mutable_values()[kEosToken] = 1e3;
  EXPECT_TRUE(greedy_decode(m, std::vector<int>{3, 4, 5}, 10).empty());
}

TEST(GreedyDecode, BatchMatchesSingle) {
  Rng rng(14);
  GncformerModel m = build_model(tiny_config(), 14);
  perturb_biases(m, rng);
  std::vector<std::vector<int>> srcs;
  for (int i = 0; i < 4; ++i) srcs.push_back(random_tokens(1 + rng.below(7), 11, rng));
  const auto batch = greedy_decode_batch(m, srcs, 6);
  ASSERT_EQ(batch.size(), srcs.size());
  for (std::size_t i = 0; i < srcs.size(); ++i) EXPECT_EQ(batch[i], greedy_decode(m, srcs[i], 6));
}

TEST(ParameterCount, InvariantToSeed) {
  GncformerModel a = build_model(tiny_config(), 1);
  GncformerModel b = build_model(tiny_config(), 999);
  EXPECT_EQ(count_parameters(a).total, count_parameters(b).total);
}

TEST(Checkpoint, RoundTripRestoresParameters) {
  Rng rng(15);
  ModelConfig c = tiny_config();
  c.fusion = FusionMode::Serial;
  c.alpha = 1.0 / 3.0;
  GncformerModel m = build_model(c, 15);
  perturb_biases(m, rng);
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(m, path);
  GncformerModel r = load_checkpoint(path);
  EXPECT_EQ(r.config, c);
  auto pm = m.named_parameters(), pr = r.named_parameters();
  ASSERT_EQ(pm.size(), pr.size());
  for (std::size_t i = 0; i < pm.size(); ++i) {
    EXPECT_EQ(pm[i].first, pr[i].first);
    EXPECT_TRUE(std::equal(pm[i].second.values().begin(), pm[i].second.values().end(), pr[i].second.values().begin()));
  }
  const std::vector<int> src{3, 4, 5}, tgt{1, 6};
  EXPECT_EQ(max_abs_diff(forward(m, src, tgt).values(), forward(r, src, tgt).values()), 0.0);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  GncformerModel m = build_model(tiny_config(), 16);
  const std::string path = temp_path("corrupt.ckpt");
  save_checkpoint(m, path);
  const std::string good = read_file(path);

  std::string bad = good;
  bad[0] = 'X';
  write_file(path, bad);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  bad = good;
  const std::uint32_t version = 99;
  std::memcpy(bad.data() + 4, &version, 4);
  write_file(path, bad);
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  write_file(path, good.substr(0, good.size() - 3));
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  write_file(path, good + "x");
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsShapeMismatch) {
  ModelConfig small = tiny_config();
  ModelConfig wide = small;
  wide.ffn_dim = 24;
  GncformerModel a = build_model(small, 17);
  GncformerModel b = build_model(wide, 17);
  const std::string pa = temp_path("small.ckpt"), pb = temp_path("wide.ckpt");
  save_checkpoint(a, pa);
  save_checkpoint(b, pb);
  const std::string sa = read_file(pa), sb = read_file(pb);
  std::uint32_t la = 0, lb = 0;
  std::memcpy(&la, sa.data() + 8, 4);
  std::memcpy(&lb, sb.data() + 8, 4);
  // Header of the small model followed by the wide model's tensors.
  write_file(pa, sa.substr(0, 12 + la) + sb.substr(12 + lb));
  try {
    load_checkpoint(pa);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("shape"), std::string::npos) << e.what();
  }
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}

}  // namespace
}  // namespace gncf

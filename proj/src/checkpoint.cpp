// SPDX-License-Identifier: Apache-2.0
#include "gncf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "gncf/error.hpp"

namespace gncf {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}

  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void put_bytes(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(GncformerModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  Writer w(out);
  out.write("GNCF", 4);
  w.put(kCheckpointVersion);
  w.put_bytes(model.config.to_text());
  model.visit([&](const std::string& name, Tensor& t) {
    w.put_bytes(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.put(static_cast<std::uint64_t>(e));
    for (double v : t.values()) w.put(v);
  });
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

GncformerModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));

  if (r.get_bytes(4, "magic") != "GNCF") throw CheckpointError("not a GNCF checkpoint: " + path.string());
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = r.get<std::uint32_t>("config length");
  ModelConfig config;
  try {
    config = ModelConfig::from_text(r.get_bytes(config_len, "config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }

  GncformerModel model = build_model(config, 0);
  model.visit([&](const std::string& name, Tensor& t) {
    const auto name_len = r.get<std::uint32_t>("parameter name length");
    const std::string stored = r.get_bytes(name_len, "parameter name");
    if (stored != name) {
      throw CheckpointError("checkpoint parameter '" + stored + "' where config expects '" + name + "'");
    }
    const auto rank = r.get<std::uint32_t>("parameter rank");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>("parameter extent"));
    if (shape != t.shape()) {
      throw CheckpointError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                            ", config expects " + shape_str(t.shape()));
    }
    for (auto& v : t.mutable_values()) v = r.get<double>("parameter values");
  });
  if (!r.at_end()) throw CheckpointError("checkpoint has trailing data after the last parameter");
  return model;
}

}  // namespace gncf

// SPDX-License-Identifier: Apache-2.0
#include "gncf/task.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "gncf/error.hpp"
#include "gncf/model.hpp"
#include "gncf/random.hpp"

namespace gncf {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Sort: return "sort";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "copy") return TaskKind::Copy;
  if (text == "reverse") return TaskKind::Reverse;
  if (text == "sort") return TaskKind::Sort;
  throw ConfigError("unknown task '" + std::string(text) + "' (expected copy, reverse or sort)");
}

namespace {

// Number of distinct sources, saturating at `cap`.
std::size_t source_capacity(const TaskSpec& spec, std::size_t cap) {
  const std::size_t symbols = spec.vocab - kFirstSymbol;
  std::size_t total = 0;
  for (std::size_t len = spec.min_len; len <= spec.max_len; ++len) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < len && n < cap; ++i) n = n > cap / symbols ? cap : n * symbols;
    total = std::min(cap, total + n);
    if (total >= cap) break;
  }
  return total;
}

}  // namespace

void TaskSpec::validate() const {
  if (vocab <= static_cast<std::size_t>(kFirstSymbol))
    throw ConfigError("task vocab " + std::to_string(vocab) + " leaves no symbols beyond pad/bos/eos");
  if (min_len == 0) throw ConfigError("task min_len must be at least 1");
  if (min_len > max_len)
    throw ConfigError("task length range " + std::to_string(min_len) + ".." + std::to_string(max_len) + " is empty");
  if (samples < 2) throw ConfigError("task samples must be at least 2");
  if (source_capacity(*this, samples) < samples)
    throw ConfigError("task cannot produce " + std::to_string(samples) + " distinct sources");
}

std::vector<int> task_target(TaskKind kind, std::span<const int> source) {
  std::vector<int> t(source.begin(), source.end());
  if (kind == TaskKind::Reverse) std::reverse(t.begin(), t.end());
  if (kind == TaskKind::Sort) std::sort(t.begin(), t.end());
  return t;
}

Dataset generate_task(const TaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t symbols = spec.vocab - kFirstSymbol;
  const std::size_t span_len = spec.max_len - spec.min_len + 1;
  std::set<std::vector<int>> seen;
  std::vector<Example> all;
  all.reserve(spec.samples);
  while (all.size() < spec.samples) {
    std::vector<int> src(spec.min_len + rng.below(span_len));
    for (auto& t : src) t = kFirstSymbol + static_cast<int>(rng.below(symbols));
    if (!seen.insert(src).second) continue;
    Example ex{src, task_target(spec.kind, src)};
    all.push_back(std::move(ex));
  }
  const std::size_t n_val = std::max<std::size_t>(1, spec.samples / 10);
  Dataset d;
  d.validation.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  all.resize(all.size() - n_val);
  d.train = std::move(all);
  return d;
}

std::uint64_t Dataset::hash() const {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const auto* split : {&train, &validation}) {
    mix(split->size());
    for (const auto& ex : *split) {
      mix(ex.source.size());
      for (int t : ex.source) mix(static_cast<std::uint64_t>(t));
      mix(ex.target.size());
      for (int t : ex.target) mix(static_cast<std::uint64_t>(t));
    }
  }
  return h;
}

void save_examples(std::span<const Example> examples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path.string());
  auto put = [&](const std::vector<int>& seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
  };
  for (const auto& ex : examples) {
    put(ex.source);
    out << '\t';
    put(ex.target);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing dataset: " + path.string());
}

std::vector<Example> load_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  auto parse = [&](const std::string& text) {
    std::istringstream is(text);
    std::vector<int> seq;
    int t = 0;
    while (is >> t) seq.push_back(t);
    if (!is.eof()) throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": bad token");
    return seq;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": missing tab between source and target");
    examples.push_back({parse(line.substr(0, tab)), parse(line.substr(tab + 1))});
  }
  return examples;
}

}  // namespace gncf

// SPDX-License-Identifier: Apache-2.0
#include "gncf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace gncf {

std::size_t edit_distance(std::span<const int> reference, std::span<const int> hypothesis) {
  std::vector<std::size_t> prev(hypothesis.size() + 1), cur(hypothesis.size() + 1);
  for (std::size_t j = 0; j <= hypothesis.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hypothesis.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (reference[i - 1] != hypothesis[j - 1]);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hypothesis.size()];
}

EvalResult score(std::span<const std::vector<int>> references,
                 std::span<const std::vector<int>> hypotheses) {
  if (references.size() != hypotheses.size())
    throw std::invalid_argument("score: reference and hypothesis counts differ");
  if (references.empty()) throw std::invalid_argument("score: empty dataset");
  std::size_t tokens = 0, correct = 0, exact = 0, edits = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    const auto& ref = references[i];
    const auto& hyp = hypotheses[i];
    tokens += ref.size();
    for (std::size_t t = 0; t < std::min(ref.size(), hyp.size()); ++t) correct += ref[t] == hyp[t];
    exact += ref == hyp;
    edits += edit_distance(ref, hyp);
  }
  EvalResult r;
  const double n_tok = static_cast<double>(std::max<std::size_t>(tokens, 1));
  r.token_accuracy = static_cast<double>(correct) / n_tok;
  r.sequence_accuracy = static_cast<double>(exact) / static_cast<double>(references.size());
  r.edit_rate = static_cast<double>(edits) / n_tok;
  return r;
}

EvalResult evaluate(const GncformerModel& model, std::span<const Example> examples,
                    std::size_t batch_size) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<std::vector<int>> refs, hyps;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<std::vector<int>> sources;
    std::size_t longest = 0;
    for (std::size_t i = start; i < end; ++i) {
      sources.push_back(examples[i].source);
      refs.push_back(examples[i].target);
      longest = std::max(longest, examples[i].source.size());
    }
    auto out = greedy_decode_batch(model, sources, longest + 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i].size() > sources[i].size() + 2) out[i].resize(sources[i].size() + 2);
      hyps.push_back(std::move(out[i]));
    }
  }
  return score(refs, hyps);
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.3f", row.step, row.loss, row.token_acc,
                row.seq_acc, row.edit_rate, row.seconds);
  return buf;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot write metrics: " + path.string());
  out_ << kMetricsHeader << '\n';
  out_.flush();
}

void MetricsWriter::append(const MetricsRow& row) {
  if (any_ && row.step <= last_step_)
    throw std::logic_error("metrics step " + std::to_string(row.step) + " does not follow " +
                           std::to_string(last_step_));
  out_ << format_metrics_row(row) << '\n';
  out_.flush();
  any_ = true;
  last_step_ = row.step;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw std::runtime_error("unexpected metrics header in " + path.string());
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.step, &r.loss, &r.token_acc, &r.seq_acc,
                    &r.edit_rate, &r.seconds) != 6)
      throw std::runtime_error("malformed metrics line: " + line);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace gncf

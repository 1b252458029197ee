// SPDX-License-Identifier: Apache-2.0
#include "gncf/params.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "gncf/gnconv.hpp"

namespace gncf {

namespace {

std::size_t total_of(GncformerModel& model) {
  std::size_t n = 0;
  model.visit([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

ModelConfig baseline_config(const ModelConfig& config) {
  ModelConfig c = config;
  c.esa_in_encoder = false;
  c.esa_in_decoder = false;
  return c;
}

ParamReport count_parameters(GncformerModel& model) {
  ParamReport r;
  std::map<std::string, std::size_t> overhead;
  std::vector<std::string> overhead_order;
  model.visit([&](const std::string& name, Tensor& t) {
    const std::string module = name.substr(0, name.rfind('.'));
    if (r.groups.empty() || r.groups.back().module != module) r.groups.push_back({module, 0});
    r.groups.back().count += t.numel();
    r.total += t.numel();
    if (const auto pos = name.find(".gnconv."); pos != std::string::npos) {
      const std::string block = name.substr(0, pos);
      if (!overhead.count(block)) overhead_order.push_back(block);
      overhead[block] += t.numel();
    }
  });
  for (const auto& b : overhead_order) r.esa_overhead.push_back({b, overhead[b]});

  const ModelConfig base = baseline_config(model.config);
  if (base == model.config) {
    r.baseline_total = r.total;
  } else {
    GncformerModel plain = build_model(base, 0);
    r.baseline_total = total_of(plain);
  }
  r.delta = static_cast<std::int64_t>(r.total) - static_cast<std::int64_t>(r.baseline_total);
  return r;
}

std::vector<OverheadRow> overhead_table(const ModelConfig& base, std::span<const std::size_t> orders) {
  std::vector<OverheadRow> rows;
  for (std::size_t order : orders) {
    ModelConfig c = base;
    c.order = order;
    c.validate();
    GncformerModel m = build_model(c, 0);
    const ParamReport rep = count_parameters(m);
    OverheadRow row;
    row.order = order;
    row.total = rep.total;
    row.delta = rep.delta;
    row.per_layer = rep.esa_overhead.empty() ? 0 : rep.esa_overhead.front().count;
    row.schedule = dimension_schedule(c.dim, order);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string with_commas(std::int64_t value) {
  std::string digits = std::to_string(value < 0 ? -value : value);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return value < 0 ? "-" + out : out;
}

std::string format_overhead_text(std::span<const OverheadRow> rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %14s %12s %12s  %s\n", "order", "total_params",
                "delta", "per_layer", "schedule [M0 N0 .. N(n-1)]");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-6zu %14s %12s %12s  ", r.order, with_commas(static_cast<std::int64_t>(r.total)).c_str(),
                  with_commas(r.delta).c_str(), with_commas(static_cast<std::int64_t>(r.per_layer)).c_str());
    os << line << join(r.schedule) << '\n';
  }
  return os.str();
}

std::string format_overhead_csv(std::span<const OverheadRow> rows) {
  std::ostringstream os;
  os << "order,total_params,delta_params,schedule\n";
  for (const auto& r : rows) os << r.order << ',' << r.total << ',' << r.delta << ',' << join(r.schedule) << '\n';
  return os.str();
}

}  // namespace gncf

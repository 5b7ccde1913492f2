#include <srr/io.hpp>

#include <charconv>
#include <cmath>

namespace srr::io {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string report_csv(const harness::ExperimentReport& report, bool include_timing) {
  std::string out = "instance,ensemble,method,k,scaled_error,surrogate,k_star,seed";
  if (include_timing) out += ",runtime_ms";
  out += '\n';
  for (const auto& row : report.rows) {
    out += row.instance + ',' + row.ensemble + ',' + row.method + ',' + std::to_string(row.k) +
           ',' + format_double(row.scaled_error) + ',' +
           (row.has_surrogate ? format_double(row.surrogate) : std::string()) + ',' +
           std::to_string(row.k_star) + ',' + std::to_string(row.seed);
    if (include_timing) out += ',' + format_double(row.runtime_ms);
    out += '\n';
  }
  return out;
}

nlohmann::ordered_json report_json(const harness::ExperimentReport& report, bool include_timing) {
  nlohmann::ordered_json j;
  j["kind"] = report.kind;
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    nlohmann::ordered_json r;
    r["instance"] = row.instance;
    r["ensemble"] = row.ensemble;
    r["method"] = row.method;
    r["k"] = row.k;
    r["scaled_error"] = row.scaled_error;
    if (row.has_surrogate) r["surrogate"] = row.surrogate;
    r["k_star"] = row.k_star;
    r["seed"] = row.seed;
    if (include_timing) r["runtime_ms"] = row.runtime_ms;
    rows.push_back(std::move(r));
  }
  auto& agg = j["aggregates"] = nlohmann::ordered_json::object();
  for (const auto& [key, value] : report.aggregates) agg[key] = value;
  return j;
}

}  // namespace srr::io

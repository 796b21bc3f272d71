// SPDX-License-Identifier: Apache-2.0
#include "eah/report.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace eah {

std::string format_real(double value) {
  if (!std::isfinite(value)) return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

ordered_json json_real(double value) {
  if (!std::isfinite(value)) return nullptr;
  return std::strtod(format_real(value).c_str(), nullptr);
}

ordered_json to_json(const LayerSinkReport& report) {
  ordered_json heads = ordered_json::array();
  for (const auto& h : report.per_head) {
    ordered_json entry;
    entry["head"] = h.head;
    entry["sink_count"] = h.sink_count;
    entry["alpha"] = json_real(h.alpha);
    entry["dense"] = h.is_dense;
    heads.push_back(std::move(entry));
  }
  ordered_json j;
  j["layer"] = report.layer + 1;
  j["heads"] = std::move(heads);
  j["p"] = json_real(report.dense_proportion);
  j["skewness"] = report.skewness ? json_real(*report.skewness) : ordered_json(nullptr);
  return j;
}

ordered_json to_json(const EahOutcome& outcome, const EahConfig& config) {
  ordered_json j;
  j["layer"] = outcome.layer + 1;
  j["beta"] = json_real(config.beta);
  j["top_n"] = config.top_n;
  j["copy_targets"] = outcome.overwritten_heads.size();
  j["anchor_k"] = config.resolved_anchor();
  j["selected_heads"] = outcome.selected_heads;
  j["sink_counts"] = outcome.selected_sink_counts;
  j["overwritten_heads"] = outcome.overwritten_heads;
  ordered_json ranking = ordered_json::array();
  for (const auto& r : outcome.ranking) {
    ranking.push_back(ordered_json{{"head", r.head}, {"sink_count", r.sink_count}});
  }
  j["ranking"] = std::move(ranking);
  return j;
}

ordered_json to_json(const toy::RunDiff& diff) {
  auto reals = [](const std::vector<double>& values) {
    ordered_json arr = ordered_json::array();
    for (double v : values) arr.push_back(json_real(v));
    return arr;
  };
  ordered_json j;
  j["attention_max_abs"] = reals(diff.attention_max_abs);
  j["logit_max_abs"] = reals(diff.logit_max_abs);
  j["span_mass_before"] = reals(diff.span_mass_before);
  j["span_mass_after"] = reals(diff.span_mass_after);
  return j;
}

namespace {

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
  out << kSweepCsvHeader << '\n';
  for (const auto& row : result.rows) {
    out << (row.layer + 1) << ',' << format_real(row.beta) << ',' << row.top_n << ','
        << row.copy_targets << ',' << join(row.selected_heads) << ',' << join(row.sink_counts)
        << ',' << format_real(row.p_after) << ','
        << (row.skewness_after ? format_real(*row.skewness_after) : std::string()) << '\n';
  }
}

}  // namespace eah

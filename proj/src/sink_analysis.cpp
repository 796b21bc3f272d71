// SPDX-License-Identifier: Apache-2.0
#include "eah/sink_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "eah/error.hpp"

namespace eah {

void SinkParams::validate(std::size_t size) const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw Error(ErrorCode::Config, "beta must be a finite non-negative number");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw Error(ErrorCode::Config, "gamma must lie in (0, 1]");
  }
  require_span(span, size);
  if (anchor_k >= size) {
    throw Error(ErrorCode::InvalidAnchor, "anchor row " + std::to_string(anchor_k) +
                                              " is outside a matrix with " + std::to_string(size) +
                                              " rows");
  }
}

std::size_t random_anchor(const TokenSpan& span, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return span.start + static_cast<std::size_t>(rng() % span.length());
}

double column_sink_score(const AttentionMap& map, std::size_t col, std::size_t anchor_k,
                         const DiagMask& mask) {
  const std::size_t rows = map.rows();
  if (anchor_k >= rows) {
    throw Error(ErrorCode::InvalidAnchor, "anchor row " + std::to_string(anchor_k) +
                                              " is outside a matrix with " + std::to_string(rows) +
                                              " rows");
  }
  if (col >= map.cols() || mask.size() != rows) {
    throw Error(ErrorCode::Shape, "column " + std::to_string(col) + " or mask size " +
                                      std::to_string(mask.size()) + " does not fit the map");
  }
  double sum = 0.0;
  for (std::size_t x = anchor_k; x < rows; ++x) {
    sum += static_cast<double>(map(x, col)) * mask(x, col);
  }
  return sum / static_cast<double>(rows - anchor_k);
}

std::vector<double> column_sink_scores(const AttentionMap& map, std::size_t anchor_k) {
  const std::size_t n = map.rows();
  if (anchor_k >= n) {
    throw Error(ErrorCode::InvalidAnchor, "anchor row " + std::to_string(anchor_k) +
                                              " is outside a matrix with " + std::to_string(n) +
                                              " rows");
  }
  // Row-major sweep; each column still accumulates rows in ascending order,
  // so the result matches column_sink_score() exactly.
  std::vector<double> sums(n, 0.0);
  for (std::size_t x = anchor_k; x < n; ++x) {
    const auto row = map.row(x);
    for (std::size_t y = 0; y < n; ++y) {
      if (y != x) sums[y] += static_cast<double>(row[y]);
    }
  }
  const double denom = static_cast<double>(n - anchor_k);
  for (auto& s : sums) s /= denom;
  return sums;
}

HeadSinkResult detect_vision_sinks(const AttentionMap& map, const SinkParams& params,
                                   std::size_t head_index) {
  params.validate(map.rows());
  const auto scores = column_sink_scores(map, params.anchor_k);

  HeadSinkResult result;
  result.head = head_index;
  for (std::size_t y = params.span.start; y <= params.span.end; ++y) {
    if (scores[y] > params.beta) result.sink_columns.push_back(y);
  }
  result.sink_count = result.sink_columns.size();
  result.alpha = static_cast<double>(result.sink_count) / static_cast<double>(params.span.length());
  result.is_dense = result.alpha >= params.gamma;
  return result;
}

LayerSinkReport analyze_layer(const LayerAttention& layer, const SinkParams& params) {
  LayerSinkReport report;
  report.layer = layer.layer_index();
  report.per_head.reserve(layer.head_count());

  std::size_t dense = 0;
  std::vector<double> alphas;
  for (std::size_t h = 0; h < layer.head_count(); ++h) {
    auto head = detect_vision_sinks(layer.head(h), params, h);
    if (head.is_dense) ++dense;
    if (params.skew_scope == SkewnessScope::AllHeads || head.is_dense) {
      alphas.push_back(head.alpha);
    }
    report.per_head.push_back(std::move(head));
  }
  report.dense_proportion = static_cast<double>(dense) / static_cast<double>(layer.head_count());
  report.skewness = skewness(alphas);
  return report;
}

std::optional<double> skewness(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 3) return std::nullopt;

  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);

  double m2 = 0.0;
  double m3 = 0.0;
  double scale = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    scale = std::max(scale, std::abs(v));
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);

  // Constant samples leave only rounding noise in the central moments.
  const double noise = 64.0 * std::numeric_limits<double>::epsilon() * scale;
  if (!(m2 > noise * noise)) return std::nullopt;

  const double g1 = m3 / std::pow(m2, 1.5);
  const double nn = static_cast<double>(n);
  return g1 * std::sqrt(nn * (nn - 1.0)) / (nn - 2.0);
}

std::vector<LayerSinkReport> analyze_model(const ModelAttention& model, const SinkParams& params,
                                           std::span<const std::size_t> layers) {
  for (auto idx : layers) (void)model.layer(idx);
  std::vector<LayerSinkReport> reports;
  reports.reserve(layers.size());
  for (auto idx : layers) reports.push_back(analyze_layer(model.layer(idx), params));
  return reports;
}

}  // namespace eah

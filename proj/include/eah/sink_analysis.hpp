// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "eah/tensor.hpp"

namespace eah {

// Which heads feed the layer skewness statistic.
enum class SkewnessScope { AllHeads, DenseHeads };

struct SinkParams {
  double beta = 0.002;   // strict threshold on the masked mean column attention
  double gamma = 0.15;   // density threshold, head is dense iff alpha >= gamma
  TokenSpan span{36, 611};
  std::size_t anchor_k = 36;  // first row included in the column mean
  SkewnessScope skew_scope = SkewnessScope::AllHeads;

  // Error{Config} for bad thresholds, Error{Span} / Error{InvalidAnchor}
  // when the span or anchor do not fit a matrix of `size` rows.
  void validate(std::size_t size) const;
};

// Draws an anchor row uniformly from the span, reproducibly for a given seed.
std::size_t random_anchor(const TokenSpan& span, std::uint64_t seed);

struct HeadSinkResult {
  std::size_t head = 0;
  std::vector<std::size_t> sink_columns;  // ascending, all inside the span
  std::size_t sink_count = 0;
  double alpha = 0.0;
  bool is_dense = false;
};

struct LayerSinkReport {
  std::size_t layer = 0;
  std::vector<HeadSinkResult> per_head;
  double dense_proportion = 0.0;
  std::optional<double> skewness;  // nullopt when the estimator is undefined
};

// Mean over rows [anchor_k, rows) of map[x][col] * mask[x][col].
// Error{InvalidAnchor} if anchor_k >= rows, Error{Shape} if col is out of range.
double column_sink_score(const AttentionMap& map, std::size_t col, std::size_t anchor_k,
                         const DiagMask& mask);

// Scores for every column at once; entry y equals column_sink_score(map, y, ...).
std::vector<double> column_sink_scores(const AttentionMap& map, std::size_t anchor_k);

HeadSinkResult detect_vision_sinks(const AttentionMap& map, const SinkParams& params,
                                   std::size_t head_index = 0);

LayerSinkReport analyze_layer(const LayerAttention& layer, const SinkParams& params);

// Adjusted Fisher-Pearson sample skewness G1. Undefined (nullopt) for fewer
// than three values or a zero-variance sample.
std::optional<double> skewness(std::span<const double> values);

// One report per requested layer, in request order. Error{Layer} for an
// unknown index.
std::vector<LayerSinkReport> analyze_model(const ModelAttention& model, const SinkParams& params,
                                           std::span<const std::size_t> layers);

}  // namespace eah

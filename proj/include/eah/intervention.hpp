// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "eah/sink_analysis.hpp"
#include "eah/tensor.hpp"

namespace eah {

struct EahConfig {
  std::size_t layer = 1;  // 0-based
  double beta = 0.002;
  std::size_t top_n = 1;
  std::optional<std::size_t> copy_targets;  // nullopt: every head in the layer
  TokenSpan span{36, 611};
  std::optional<std::size_t> anchor_k;  // nullopt: span.start

  std::size_t resolved_anchor() const noexcept { return anchor_k.value_or(span.start); }
  std::size_t resolved_copy_targets(std::size_t head_count) const noexcept {
    return copy_targets.value_or(head_count);
  }
  // Error{Config} for top_n / copy_targets outside [1, head_count], plus the
  // span and anchor checks of SinkParams.
  void validate(std::size_t head_count, std::size_t size) const;
};

struct RankedHead {
  std::size_t head = 0;
  std::size_t sink_count = 0;

  friend bool operator==(const RankedHead&, const RankedHead&) = default;
};

// Heads ordered by sink count, descending; equal counts keep ascending head index.
std::vector<RankedHead> rank_heads_by_sinks(const LayerAttention& layer, double beta,
                                            const TokenSpan& span, std::size_t anchor_k);

// top_n == 1 returns the leading head's map itself (shared storage). Larger
// top_n returns the entrywise mean of the leading maps. Error{Config} if
// top_n is 0 or exceeds the ranking.
AttentionMap select_source(const LayerAttention& layer, std::span<const RankedHead> ranked,
                           std::size_t top_n);

// Heads to overwrite: the `copy_targets` weakest heads, walking the ranking
// from the back. Error{Config} if copy_targets is 0 or exceeds the ranking.
std::vector<std::size_t> broadcast_targets(std::span<const RankedHead> ranked,
                                           std::size_t copy_targets);

// Replaces every head listed in `targets` with `source`; other heads are kept
// as-is. Error{Shape} if the source does not match the layer.
LayerAttention broadcast(const LayerAttention& layer, const AttentionMap& source,
                         std::span<const std::size_t> targets);

// Convenience form: targets chosen by broadcast_targets() over `ranked`.
LayerAttention broadcast(const LayerAttention& layer, const AttentionMap& source,
                         std::span<const RankedHead> ranked, std::size_t copy_targets);

struct LayerEahResult {
  std::vector<RankedHead> ranking;
  std::vector<std::size_t> selected_heads;
  std::vector<std::size_t> selected_sink_counts;
  std::vector<std::size_t> overwritten_heads;  // ascending
  LayerAttention layer;
};

// Rank, select, and broadcast within one layer. cfg.layer is ignored.
LayerEahResult apply_eah_layer(const LayerAttention& layer, const EahConfig& cfg);

struct EahOutcome {
  std::size_t layer = 0;
  std::vector<RankedHead> ranking;
  std::vector<std::size_t> selected_heads;
  std::vector<std::size_t> selected_sink_counts;
  std::vector<std::size_t> overwritten_heads;
  ModelAttention modified;
};

// Error{Layer} if cfg.layer is not in the model.
EahOutcome apply_eah(const ModelAttention& model, const EahConfig& cfg);

struct SweepGrid {
  std::vector<std::size_t> layers;  // 0-based
  std::vector<double> betas;
  std::vector<std::size_t> top_ns;
  std::vector<std::optional<std::size_t>> copy_counts;  // nullopt: all heads
};

struct SweepOptions {
  TokenSpan span{36, 611};
  std::optional<std::size_t> anchor_k;
  double gamma = 0.15;
};

struct SweepRow {
  std::size_t layer = 0;  // 0-based
  double beta = 0.0;
  std::size_t top_n = 1;
  std::size_t copy_targets = 0;
  std::vector<std::size_t> selected_heads;
  std::vector<std::size_t> sink_counts;
  double p_after = 0.0;
  std::optional<double> skewness_after;
};

struct SweepSummary {
  std::size_t points = 0;
  double mean_p_after = 0.0;
  double min_p_after = 0.0;
  double max_p_after = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepSummary summary;
};

// Evaluates every grid point. Rows come out sorted by (layer, beta, top_n,
// copy_targets) whatever order the axes were given in. Points are evaluated
// on `threads` workers; output does not depend on the thread count.
SweepResult sweep(const ModelAttention& model, const SweepGrid& grid, const SweepOptions& options,
                  unsigned threads = 1);

}  // namespace eah

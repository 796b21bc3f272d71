// SPDX-License-Identifier: Apache-2.0
#include "eah/intervention.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "eah/error.hpp"

namespace eah {

void EahConfig::validate(std::size_t head_count, std::size_t size) const {
  if (top_n < 1 || top_n > head_count) {
    throw Error(ErrorCode::Config, "top_n " + std::to_string(top_n) + " outside [1, " +
                                       std::to_string(head_count) + "]");
  }
  const auto copies = resolved_copy_targets(head_count);
  if (copies < 1 || copies > head_count) {
    throw Error(ErrorCode::Config, "copy target count " + std::to_string(copies) +
                                       " outside [1, " + std::to_string(head_count) + "]");
  }
  SinkParams params;
  params.beta = beta;
  params.span = span;
  params.anchor_k = resolved_anchor();
  params.validate(size);
}

std::vector<RankedHead> rank_heads_by_sinks(const LayerAttention& layer, double beta,
                                            const TokenSpan& span, std::size_t anchor_k) {
  SinkParams params;
  params.beta = beta;
  params.span = span;
  params.anchor_k = anchor_k;

  std::vector<RankedHead> ranked;
  ranked.reserve(layer.head_count());
  for (std::size_t h = 0; h < layer.head_count(); ++h) {
    ranked.push_back({h, detect_vision_sinks(layer.head(h), params, h).sink_count});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedHead& a, const RankedHead& b) {
    return a.sink_count > b.sink_count;
  });
  return ranked;
}

AttentionMap select_source(const LayerAttention& layer, std::span<const RankedHead> ranked,
                           std::size_t top_n) {
  if (top_n < 1 || top_n > ranked.size()) {
    throw Error(ErrorCode::Config, "cannot select top " + std::to_string(top_n) + " of " +
                                       std::to_string(ranked.size()) + " heads");
  }
  if (top_n == 1) return layer.head(ranked.front().head);

  const std::size_t n = layer.size();
  std::vector<double> acc(n * n, 0.0);
  for (std::size_t i = 0; i < top_n; ++i) {
    const auto values = layer.head(ranked[i].head).values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += values[k];
  }
  std::vector<float> mean(acc.size());
  const double denom = static_cast<double>(top_n);
  for (std::size_t k = 0; k < acc.size(); ++k) mean[k] = static_cast<float>(acc[k] / denom);
  return AttentionMap(n, std::move(mean));
}

std::vector<std::size_t> broadcast_targets(std::span<const RankedHead> ranked,
                                           std::size_t copy_targets) {
  if (copy_targets < 1 || copy_targets > ranked.size()) {
    throw Error(ErrorCode::Config, "copy target count " + std::to_string(copy_targets) +
                                       " outside [1, " + std::to_string(ranked.size()) + "]");
  }
  std::vector<std::size_t> targets;
  targets.reserve(copy_targets);
  for (auto it = ranked.rbegin(); it != ranked.rbegin() + copy_targets; ++it) {
    targets.push_back(it->head);
  }
  std::sort(targets.begin(), targets.end());
  return targets;
}

LayerAttention broadcast(const LayerAttention& layer, const AttentionMap& source,
                         std::span<const std::size_t> targets) {
  if (source.rows() != layer.size()) {
    throw Error(ErrorCode::Shape, "source map of size " + std::to_string(source.rows()) +
                                      " does not match layer size " + std::to_string(layer.size()));
  }
  auto heads = layer.heads();
  for (auto t : targets) {
    if (t >= heads.size()) {
      throw Error(ErrorCode::Config, "broadcast target head " + std::to_string(t) +
                                         " out of range");
    }
    heads[t] = source;
  }
  return LayerAttention(layer.layer_index(), std::move(heads));
}

LayerAttention broadcast(const LayerAttention& layer, const AttentionMap& source,
                         std::span<const RankedHead> ranked, std::size_t copy_targets) {
  const auto targets = broadcast_targets(ranked, copy_targets);
  return broadcast(layer, source, targets);
}

LayerEahResult apply_eah_layer(const LayerAttention& layer, const EahConfig& cfg) {
  cfg.validate(layer.head_count(), layer.size());

  LayerEahResult result;
  result.ranking = rank_heads_by_sinks(layer, cfg.beta, cfg.span, cfg.resolved_anchor());
  for (std::size_t i = 0; i < cfg.top_n; ++i) {
    result.selected_heads.push_back(result.ranking[i].head);
    result.selected_sink_counts.push_back(result.ranking[i].sink_count);
  }
  const auto source = select_source(layer, result.ranking, cfg.top_n);
  result.overwritten_heads =
      broadcast_targets(result.ranking, cfg.resolved_copy_targets(layer.head_count()));
  result.layer = broadcast(layer, source, result.overwritten_heads);
  return result;
}

EahOutcome apply_eah(const ModelAttention& model, const EahConfig& cfg) {
  const auto& target = model.layer(cfg.layer);
  auto layer_result = apply_eah_layer(target, cfg);

  EahOutcome outcome;
  outcome.layer = cfg.layer;
  outcome.ranking = std::move(layer_result.ranking);
  outcome.selected_heads = std::move(layer_result.selected_heads);
  outcome.selected_sink_counts = std::move(layer_result.selected_sink_counts);
  outcome.overwritten_heads = std::move(layer_result.overwritten_heads);
  outcome.modified = model.with_layer(cfg.layer, std::move(layer_result.layer));
  return outcome;
}

namespace {

struct GridPoint {
  std::size_t layer;
  double beta;
  std::size_t top_n;
  std::size_t copy_targets;
};

SweepRow evaluate_point(const ModelAttention& model, const GridPoint& point,
                        const SweepOptions& options) {
  EahConfig cfg;
  cfg.layer = point.layer;
  cfg.beta = point.beta;
  cfg.top_n = point.top_n;
  cfg.copy_targets = point.copy_targets;
  cfg.span = options.span;
  cfg.anchor_k = options.anchor_k;

  const auto result = apply_eah_layer(model.layer(point.layer), cfg);

  SinkParams params;
  params.beta = point.beta;
  params.gamma = options.gamma;
  params.span = options.span;
  params.anchor_k = cfg.resolved_anchor();
  const auto after = analyze_layer(result.layer, params);

  SweepRow row;
  row.layer = point.layer;
  row.beta = point.beta;
  row.top_n = point.top_n;
  row.copy_targets = point.copy_targets;
  row.selected_heads = result.selected_heads;
  row.sink_counts = result.selected_sink_counts;
  row.p_after = after.dense_proportion;
  row.skewness_after = after.skewness;
  return row;
}

}  // namespace

SweepResult sweep(const ModelAttention& model, const SweepGrid& grid, const SweepOptions& options,
                  unsigned threads) {
  const std::size_t heads = model.head_count();

  auto layers = grid.layers;
  auto betas = grid.betas;
  auto top_ns = grid.top_ns;
  std::vector<std::size_t> copies;
  for (const auto& c : grid.copy_counts) copies.push_back(c.value_or(heads));
  std::sort(layers.begin(), layers.end());
  std::sort(betas.begin(), betas.end());
  std::sort(top_ns.begin(), top_ns.end());
  std::sort(copies.begin(), copies.end());

  std::vector<GridPoint> points;
  for (auto l : layers)
    for (auto b : betas)
      for (auto t : top_ns)
        for (auto c : copies) points.push_back({l, b, t, c});

  // Reject the whole grid before doing any work.
  for (const auto& p : points) {
    (void)model.layer(p.layer);
    EahConfig cfg;
    cfg.beta = p.beta;
    cfg.top_n = p.top_n;
    cfg.copy_targets = p.copy_targets;
    cfg.span = options.span;
    cfg.anchor_k = options.anchor_k;
    cfg.validate(heads, model.size());
  }

  SweepResult result;
  result.rows.resize(points.size());
  const unsigned workers =
      std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(points.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      result.rows[i] = evaluate_point(model, points[i], options);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
          try {
            result.rows[i] = evaluate_point(model, points[i], options);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  auto& s = result.summary;
  s.points = result.rows.size();
  if (!result.rows.empty()) {
    s.min_p_after = result.rows.front().p_after;
    s.max_p_after = result.rows.front().p_after;
    double total = 0.0;
    for (const auto& row : result.rows) {
      total += row.p_after;
      s.min_p_after = std::min(s.min_p_after, row.p_after);
      s.max_p_after = std::max(s.max_p_after, row.p_after);
    }
    s.mean_p_after = total / static_cast<double>(result.rows.size());
  }
  return result;
}

}  // namespace eah

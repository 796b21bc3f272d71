// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "eah/intervention.hpp"
#include "eah/tensor.hpp"

namespace eah::toy {

/**
 * Configuration of a small pre-norm decoder-only transformer.
 *
 * Token `vocab_size - 1` is the marker token. Its embedding carries a large
 * value on channel 0, which no other token or position uses. For each layer
 * l < sink_gain.size(), head h gets a key weight and a query bias of
 * sink_gain[l] * (h + 1) / n_heads on that channel, so the marked positions
 * become attention sinks whose strength grows with the head index.
 */
struct ToyModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t d_model = 32;
  std::size_t seq_len = 128;
  std::size_t vocab_size = 64;
  std::size_t ffn_mult = 4;
  TokenSpan image_span{16, 79};
  std::uint64_t seed = 0;
  std::vector<float> sink_gain;
  float marker_scale = 8.0f;
  std::size_t marker_stride = 4;  // synthetic_inputs(): every n-th image token is a marker

  std::size_t d_head() const noexcept { return n_heads ? d_model / n_heads : 0; }
  std::size_t marker_token() const noexcept { return vocab_size - 1; }
  void validate() const;  // Error{Config}
};

// Row-major weights; y = x * W + b with W shaped [in, out].
struct LayerParams {
  std::vector<float> ln1_gain, ln1_bias;
  std::vector<float> wq, wk, wv, wo;
  std::vector<float> bq, bk, bv, bo;
  std::vector<float> ln2_gain, ln2_bias;
  std::vector<float> w1, b1, w2, b2;
};

struct ToyModel {
  ToyModelConfig config;
  std::vector<float> token_embedding;     // [vocab, d_model]
  std::vector<float> position_embedding;  // [seq_len, d_model]
  std::vector<LayerParams> layers;
  std::vector<float> final_gain, final_bias;
  std::vector<float> unembedding;  // [d_model, vocab]

  // FNV-1a over the bit patterns of every parameter, in declaration order.
  std::uint64_t checksum() const;
};

ToyModel init_model(const ToyModelConfig& config);

// Deterministic token sequence of length seq_len with markers in the image span.
std::vector<std::size_t> synthetic_inputs(const ToyModelConfig& config, std::uint64_t seed);

// Called once per layer with the post-softmax weights, before they multiply
// the values. Whatever it returns is recorded and consumed downstream.
using AttentionHook = std::function<LayerAttention(std::size_t layer, const LayerAttention&)>;

struct ForwardTrace {
  std::size_t seq_len = 0;
  std::size_t d_model = 0;
  std::size_t vocab_size = 0;
  std::vector<LayerAttention> attention;
  std::vector<float> hidden;  // [seq_len, d_model], after the final norm
  std::vector<float> logits;  // [seq_len, vocab_size]

  ModelAttention to_model_attention(ModelMetadata metadata) const;
};

// Error{Config} if inputs.size() != seq_len or a token is out of range,
// Error{Hook} if the hook returns weights of the wrong shape.
ForwardTrace forward(const ToyModel& model, std::span<const std::size_t> inputs,
                     const AttentionHook& hook = {});

// EAH at cfg.layer, identity elsewhere. When `record` is set, it receives
// the layer-level result of the intervention.
AttentionHook make_eah_hook(EahConfig cfg, LayerEahResult* record = nullptr);

struct RunDiff {
  std::vector<double> attention_max_abs;  // per layer
  std::vector<double> logit_max_abs;      // per token
  std::vector<double> span_mass_before;   // per layer, summed over heads and rows
  std::vector<double> span_mass_after;
};

// Total attention received by the span columns, summed over heads and rows.
double span_mass(const LayerAttention& layer, const TokenSpan& span);

// Error{Shape} if the traces differ in shape; Error{Span} if the span does not fit.
RunDiff compare_runs(const ForwardTrace& base, const ForwardTrace& modified,
                     const TokenSpan& image_span);

}  // namespace eah::toy

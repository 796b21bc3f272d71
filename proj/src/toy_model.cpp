// SPDX-License-Identifier: Apache-2.0
#include "eah/toy_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "eah/error.hpp"

namespace eah::toy {
namespace {

constexpr float kNormEps = 1e-5f;

class UniformSource {
 public:
  explicit UniformSource(std::uint64_t seed) : rng_(seed) {}

  // Uniform in [-scale, scale), independent of the standard library's
  // distribution implementations.
  float next(float scale) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return static_cast<float>((2.0 * u - 1.0) * scale);
  }

  void fill(std::vector<float>& out, std::size_t n, float scale) {
    out.resize(n);
    for (auto& v : out) v = next(scale);
  }

 private:
  std::mt19937_64 rng_;
};

void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias,
                std::span<float> out) {
  const std::size_t d = x.size();
  float mean = 0.0f;
  for (float v : x) mean += v;
  mean /= static_cast<float>(d);
  float var = 0.0f;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<float>(d);
  const float inv = 1.0f / std::sqrt(var + kNormEps);
  for (std::size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

// out[rows, n_out] = in[rows, n_in] * w[n_in, n_out] + b
void affine(std::span<const float> in, std::size_t rows, std::size_t n_in,
            const std::vector<float>& w, const std::vector<float>& b, std::size_t n_out,
            std::vector<float>& out) {
  out.assign(rows * n_out, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    float* o = out.data() + r * n_out;
    for (std::size_t j = 0; j < n_out; ++j) o[j] = b.empty() ? 0.0f : b[j];
    const float* x = in.data() + r * n_in;
    for (std::size_t i = 0; i < n_in; ++i) {
      const float xi = x[i];
      const float* wrow = w.data() + i * n_out;
      for (std::size_t j = 0; j < n_out; ++j) o[j] += xi * wrow[j];
    }
  }
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::tanh(0.7978845608f * (x + 0.044715f * x * x * x)));
}

void hash_floats(std::uint64_t& h, const std::vector<float>& values) {
  for (float v : values) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 0x100000001b3ull;
    }
  }
}

}  // namespace

void ToyModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::Config, msg); };
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || seq_len == 0 || ffn_mult == 0) {
    fail("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (vocab_size < 2) fail("vocab_size must be at least 2 (one regular token plus the marker)");
  if (!image_span.fits(seq_len)) {
    fail("image span " + std::to_string(image_span.start) + ":" + std::to_string(image_span.end) +
         " does not fit seq_len " + std::to_string(seq_len));
  }
  if (sink_gain.size() > n_layers) fail("more sink gains than layers");
  if (marker_stride == 0) fail("marker_stride must be positive");
}

std::uint64_t ToyModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  hash_floats(h, token_embedding);
  hash_floats(h, position_embedding);
  for (const auto& l : layers) {
    for (const auto* v : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.bq, &l.bk,
                          &l.bv, &l.bo, &l.ln2_gain, &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2}) {
      hash_floats(h, *v);
    }
  }
  hash_floats(h, final_gain);
  hash_floats(h, final_bias);
  hash_floats(h, unembedding);
  return h;
}

ToyModel init_model(const ToyModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t ff = d * config.ffn_mult;
  UniformSource rng(config.seed);

  ToyModel model;
  model.config = config;

  // Channel 0 is reserved for the marker signal.
  rng.fill(model.token_embedding, config.vocab_size * d, 0.5f);
  rng.fill(model.position_embedding, config.seq_len * d, 0.1f);
  for (std::size_t t = 0; t < config.vocab_size; ++t) model.token_embedding[t * d] = 0.0f;
  for (std::size_t p = 0; p < config.seq_len; ++p) model.position_embedding[p * d] = 0.0f;
  model.token_embedding[config.marker_token() * d] = config.marker_scale;

  const float w_scale = 1.0f / std::sqrt(static_cast<float>(d));
  const float ff_scale = 1.0f / std::sqrt(static_cast<float>(ff));
  model.layers.resize(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    auto& p = model.layers[l];
    p.ln1_gain.assign(d, 1.0f);
    p.ln1_bias.assign(d, 0.0f);
    rng.fill(p.wq, d * d, w_scale);
    rng.fill(p.wk, d * d, w_scale);
    rng.fill(p.wv, d * d, w_scale);
    rng.fill(p.wo, d * d, w_scale);
    p.bq.assign(d, 0.0f);
    p.bk.assign(d, 0.0f);
    p.bv.assign(d, 0.0f);
    p.bo.assign(d, 0.0f);
    p.ln2_gain.assign(d, 1.0f);
    p.ln2_bias.assign(d, 0.0f);
    rng.fill(p.w1, d * ff, w_scale);
    p.b1.assign(ff, 0.0f);
    rng.fill(p.w2, ff * d, ff_scale);
    p.b2.assign(d, 0.0f);

    if (l < config.sink_gain.size()) {
      const std::size_t dh = config.d_head();
      // Input channel 0 feeds only the first key lane of each head.
      for (std::size_t j = 0; j < d; ++j) p.wk[j] = 0.0f;
      for (std::size_t h = 0; h < config.n_heads; ++h) {
        const float g = config.sink_gain[l] * static_cast<float>(h + 1) /
                        static_cast<float>(config.n_heads);
        const std::size_t lane = h * dh;
        p.wk[lane] = g;
        p.bq[lane] = g;
      }
    }
  }
  model.final_gain.assign(d, 1.0f);
  model.final_bias.assign(d, 0.0f);
  rng.fill(model.unembedding, d * config.vocab_size, w_scale);
  return model;
}

std::vector<std::size_t> synthetic_inputs(const ToyModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t regular = config.vocab_size - 1;
  std::vector<std::size_t> ids(config.seq_len);
  for (std::size_t t = 0; t < config.seq_len; ++t) {
    const bool marker = config.image_span.contains(t) &&
                        (t - config.image_span.start) % config.marker_stride == 0;
    ids[t] = marker ? config.marker_token() : static_cast<std::size_t>(rng() % regular);
  }
  return ids;
}

ModelAttention ForwardTrace::to_model_attention(ModelMetadata metadata) const {
  if (metadata.seq_len == 0) metadata.seq_len = seq_len;
  return ModelAttention(attention, std::move(metadata));
}

ForwardTrace forward(const ToyModel& model, std::span<const std::size_t> inputs,
                     const AttentionHook& hook) {
  const auto& cfg = model.config;
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.d_head();
  const std::size_t ff = d * cfg.ffn_mult;
  if (inputs.size() != n) {
    throw Error(ErrorCode::Config, "expected " + std::to_string(n) + " input tokens, got " +
                                       std::to_string(inputs.size()));
  }

  std::vector<float> h(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    if (inputs[t] >= cfg.vocab_size) {
      throw Error(ErrorCode::Config, "token " + std::to_string(inputs[t]) + " at position " +
                                         std::to_string(t) + " is outside the vocabulary");
    }
    const float* tok = model.token_embedding.data() + inputs[t] * d;
    const float* pos = model.position_embedding.data() + t * d;
    for (std::size_t i = 0; i < d; ++i) h[t * d + i] = tok[i] + pos[i];
  }

  ForwardTrace trace;
  trace.seq_len = n;
  trace.d_model = d;
  trace.vocab_size = cfg.vocab_size;

  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> normed(n * d), q, k, v, mixed(n * d), proj, up, down;
  std::vector<float> scores(n);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& p = model.layers[l];
    for (std::size_t t = 0; t < n; ++t) {
      layer_norm({h.data() + t * d, d}, p.ln1_gain, p.ln1_bias, {normed.data() + t * d, d});
    }
    affine(normed, n, d, p.wq, p.bq, d, q);
    affine(normed, n, d, p.wk, p.bk, d, k);
    affine(normed, n, d, p.wv, p.bv, d, v);

    std::vector<AttentionMap> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
      const std::size_t lane = head * dh;
      std::vector<float> weights(n * n, 0.0f);
      for (std::size_t x = 0; x < n; ++x) {
        float max_score = -INFINITY;
        for (std::size_t y = 0; y <= x; ++y) {
          float s = 0.0f;
          for (std::size_t i = 0; i < dh; ++i) s += q[x * d + lane + i] * k[y * d + lane + i];
          scores[y] = s * inv_sqrt_dh;
          max_score = std::max(max_score, scores[y]);
        }
        float total = 0.0f;
        for (std::size_t y = 0; y <= x; ++y) {
          scores[y] = std::exp(scores[y] - max_score);
          total += scores[y];
        }
        float* row = weights.data() + x * n;
        for (std::size_t y = 0; y <= x; ++y) row[y] = scores[y] / total;
      }
      heads.emplace_back(n, std::move(weights));
    }
    LayerAttention layer(l, std::move(heads));
    if (hook) {
      auto hooked = hook(l, layer);
      if (hooked.head_count() != cfg.n_heads || hooked.size() != n) {
        throw Error(ErrorCode::Hook, "hook at layer " + std::to_string(l) + " returned " +
                                         std::to_string(hooked.head_count()) + " heads of size " +
                                         std::to_string(hooked.size()) + ", expected " +
                                         std::to_string(cfg.n_heads) + " of size " +
                                         std::to_string(n));
      }
      layer = LayerAttention(l, hooked.heads());
    }

    // Every column takes part, so hooked weights are consumed exactly as given.
    std::fill(mixed.begin(), mixed.end(), 0.0f);
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
      const std::size_t lane = head * dh;
      const auto& map = layer.head(head);
      for (std::size_t x = 0; x < n; ++x) {
        const auto row = map.row(x);
        float* out = mixed.data() + x * d + lane;
        for (std::size_t y = 0; y < n; ++y) {
          const float w = row[y];
          const float* val = v.data() + y * d + lane;
          for (std::size_t i = 0; i < dh; ++i) out[i] += w * val[i];
        }
      }
    }
    trace.attention.push_back(std::move(layer));

    affine(mixed, n, d, p.wo, p.bo, d, proj);
    for (std::size_t i = 0; i < n * d; ++i) h[i] += proj[i];

    for (std::size_t t = 0; t < n; ++t) {
      layer_norm({h.data() + t * d, d}, p.ln2_gain, p.ln2_bias, {normed.data() + t * d, d});
    }
    affine(normed, n, d, p.w1, p.b1, ff, up);
    for (auto& u : up) u = gelu(u);
    affine(up, n, ff, p.w2, p.b2, d, down);
    for (std::size_t i = 0; i < n * d; ++i) h[i] += down[i];
  }

  trace.hidden.resize(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    layer_norm({h.data() + t * d, d}, model.final_gain, model.final_bias,
               {trace.hidden.data() + t * d, d});
  }
  affine(trace.hidden, n, d, model.unembedding, {}, cfg.vocab_size, trace.logits);
  return trace;
}

AttentionHook make_eah_hook(EahConfig cfg, LayerEahResult* record) {
  return [cfg, record](std::size_t layer, const LayerAttention& weights) {
    if (layer != cfg.layer) return weights;
    auto result = apply_eah_layer(weights, cfg);
    auto modified = result.layer;
    if (record) *record = std::move(result);
    return modified;
  };
}

double span_mass(const LayerAttention& layer, const TokenSpan& span) {
  require_span(span, layer.size());
  double total = 0.0;
  for (const auto& head : layer.heads()) {
    for (std::size_t x = 0; x < head.rows(); ++x) {
      const auto row = head.row(x);
      for (std::size_t y = span.start; y <= span.end; ++y) total += row[y];
    }
  }
  return total;
}

RunDiff compare_runs(const ForwardTrace& base, const ForwardTrace& modified,
                     const TokenSpan& image_span) {
  if (base.attention.size() != modified.attention.size() || base.seq_len != modified.seq_len ||
      base.logits.size() != modified.logits.size() || base.vocab_size != modified.vocab_size) {
    throw Error(ErrorCode::Shape, "traces have different shapes");
  }
  require_span(image_span, base.seq_len);

  RunDiff diff;
  for (std::size_t l = 0; l < base.attention.size(); ++l) {
    const auto& a = base.attention[l];
    const auto& b = modified.attention[l];
    if (a.head_count() != b.head_count() || a.size() != b.size()) {
      throw Error(ErrorCode::Shape, "layer " + std::to_string(l) + " differs in shape");
    }
    double worst = 0.0;
    for (std::size_t h = 0; h < a.head_count(); ++h) {
      const auto va = a.head(h).values();
      const auto vb = b.head(h).values();
      for (std::size_t i = 0; i < va.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(va[i]) - vb[i]));
      }
    }
    diff.attention_max_abs.push_back(worst);
    diff.span_mass_before.push_back(span_mass(a, image_span));
    diff.span_mass_after.push_back(span_mass(b, image_span));
  }
  for (std::size_t t = 0; t < base.seq_len; ++t) {
    double worst = 0.0;
    for (std::size_t j = 0; j < base.vocab_size; ++j) {
      const std::size_t i = t * base.vocab_size + j;
      worst = std::max(worst, std::abs(static_cast<double>(base.logits[i]) - modified.logits[i]));
    }
    diff.logit_max_abs.push_back(worst);
  }
  return diff;
}

}  // namespace eah::toy

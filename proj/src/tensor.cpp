// SPDX-License-Identifier: Apache-2.0
#include "eah/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "eah/error.hpp"

namespace eah {

AttentionMap::AttentionMap(std::size_t size, std::vector<float> values) : size_(size) {
  if (size == 0) {
    throw Error(ErrorCode::InvalidDimension, "attention map must have at least one row");
  }
  if (values.size() != size * size) {
    throw Error(ErrorCode::Shape, "attention map of size " + std::to_string(size) +
                                      " needs " + std::to_string(size * size) +
                                      " values, got " + std::to_string(values.size()));
  }
  values_ = std::make_shared<const std::vector<float>>(std::move(values));
}

bool AttentionMap::bitwise_equal(const AttentionMap& other) const noexcept {
  if (size_ != other.size_) return false;
  if (shares_storage_with(other) || size_ == 0) return true;
  return std::memcmp(values_->data(), other.values_->data(), values_->size() * sizeof(float)) == 0;
}

LayerAttention::LayerAttention(std::size_t layer_index, std::vector<AttentionMap> heads)
    : layer_index_(layer_index), heads_(std::move(heads)) {
  if (heads_.empty()) {
    throw Error(ErrorCode::Config, "layer " + std::to_string(layer_index) + " has no heads");
  }
  const std::size_t n = heads_.front().rows();
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (heads_[h].rows() != n) {
      throw Error(ErrorCode::Shape, "layer " + std::to_string(layer_index) + " head " +
                                        std::to_string(h) + " has size " +
                                        std::to_string(heads_[h].rows()) + ", expected " +
                                        std::to_string(n));
    }
  }
}

bool LayerAttention::bitwise_equal(const LayerAttention& other) const noexcept {
  if (heads_.size() != other.heads_.size()) return false;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (!heads_[h].bitwise_equal(other.heads_[h])) return false;
  }
  return true;
}

void require_span(const TokenSpan& span, std::size_t cols) {
  if (!span.fits(cols)) {
    throw Error(ErrorCode::Span, "span " + std::to_string(span.start) + ":" +
                                     std::to_string(span.end) + " does not fit " +
                                     std::to_string(cols) + " columns");
  }
}

ModelAttention::ModelAttention(std::vector<LayerAttention> layers, ModelMetadata metadata)
    : metadata_(std::move(metadata)) {
  if (layers.empty()) {
    throw Error(ErrorCode::Config, "model has no layers");
  }
  const std::size_t heads = layers.front().head_count();
  const std::size_t n = layers.front().size();
  layers_.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].head_count() != heads || layers[i].size() != n) {
      throw Error(ErrorCode::Shape, "layer " + std::to_string(i) + " has " +
                                        std::to_string(layers[i].head_count()) + " heads of size " +
                                        std::to_string(layers[i].size()) + ", expected " +
                                        std::to_string(heads) + " of size " + std::to_string(n));
    }
    if (layers[i].layer_index() == i) {
      layers_.push_back(std::move(layers[i]));
    } else {
      layers_.emplace_back(i, layers[i].heads());
    }
  }
}

const LayerAttention& ModelAttention::layer(std::size_t i) const {
  if (i >= layers_.size()) {
    throw Error(ErrorCode::Layer, "layer index " + std::to_string(i) + " out of range (model has " +
                                      std::to_string(layers_.size()) + " layers)");
  }
  return layers_[i];
}

ModelAttention ModelAttention::with_layer(std::size_t index, LayerAttention replacement) const {
  const auto& current = layer(index);
  if (replacement.head_count() != current.head_count() || replacement.size() != current.size()) {
    throw Error(ErrorCode::Shape, "replacement for layer " + std::to_string(index) +
                                      " does not match the model's shape");
  }
  auto layers = layers_;
  layers[index] = LayerAttention(index, replacement.heads());
  return ModelAttention(std::move(layers), metadata_);
}

bool ModelAttention::bitwise_equal(const ModelAttention& other) const noexcept {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].bitwise_equal(other.layers_[i])) return false;
  }
  return true;
}

DiagMask build_diag_mask(std::size_t n) {
  if (n == 0) {
    throw Error(ErrorCode::InvalidDimension, "diagonal mask needs n >= 1");
  }
  return DiagMask(n);
}

ValidationResult validate_attention(const AttentionMap& map, bool causal, double tol) {
  using Failure = ValidationResult::Failure;
  ValidationResult result;
  if (map.empty()) {
    result.ok = false;
    result.failure = Failure::NotSquare;
    return result;
  }
  const std::size_t n = map.rows();
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = map.row(r);
    double sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double v = row[c];
      if (!(v >= 0.0 && v <= 1.0 + tol)) {
        return {false, Failure::OutOfRange, r, c, v};
      }
      if (causal && c > r && v != 0.0) {
        return {false, Failure::NonCausal, r, c, v};
      }
      sum += v;
    }
    if (!(std::abs(sum - 1.0) <= tol)) {
      return {false, Failure::RowSum, r, 0, sum};
    }
  }
  return result;
}

std::string describe(const ValidationResult& result) {
  using Failure = ValidationResult::Failure;
  const std::string at = "(" + std::to_string(result.row) + ", " + std::to_string(result.col) + ")";
  switch (result.failure) {
    case Failure::None: return "ok";
    case Failure::NotSquare: return "empty or non-square matrix";
    case Failure::OutOfRange: return "entry " + std::to_string(result.value) + " outside [0, 1] at " + at;
    case Failure::NonCausal: return "non-zero entry above the diagonal at " + at;
    case Failure::RowSum:
      return "row " + std::to_string(result.row) + " sums to " + std::to_string(result.value);
  }
  return "unknown";
}

}  // namespace eah

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eah {

/**
 * One head's post-softmax attention matrix, square and row-major.
 *
 * The buffer is immutable and shared between copies, so copying a map (or
 * broadcasting it to many heads) never duplicates the weights. Stochasticity
 * is not enforced here; see validate_attention().
 */
class AttentionMap {
 public:
  AttentionMap() = default;

  // Throws Error{Shape} unless values.size() == size * size, and
  // Error{InvalidDimension} if size == 0.
  AttentionMap(std::size_t size, std::vector<float> values);

  std::size_t rows() const noexcept { return size_; }
  std::size_t cols() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  float operator()(std::size_t row, std::size_t col) const noexcept {
    return (*values_)[row * size_ + col];
  }
  std::span<const float> row(std::size_t r) const noexcept {
    return {values_->data() + r * size_, size_};
  }
  std::span<const float> values() const noexcept {
    return values_ ? std::span<const float>(*values_) : std::span<const float>();
  }

  // True when both maps view the same underlying buffer.
  bool shares_storage_with(const AttentionMap& other) const noexcept {
    return values_ && values_ == other.values_;
  }

  // Element-wise bit equality (NaN payloads included).
  bool bitwise_equal(const AttentionMap& other) const noexcept;

 private:
  std::size_t size_ = 0;
  std::shared_ptr<const std::vector<float>> values_;
};

// All heads of one layer. Heads share one (rows, cols) shape.
class LayerAttention {
 public:
  LayerAttention() = default;
  // Throws Error{Config} for an empty head list, Error{Shape} on mixed shapes.
  LayerAttention(std::size_t layer_index, std::vector<AttentionMap> heads);

  std::size_t layer_index() const noexcept { return layer_index_; }
  std::size_t head_count() const noexcept { return heads_.size(); }
  std::size_t size() const noexcept { return heads_.empty() ? 0 : heads_.front().rows(); }
  const AttentionMap& head(std::size_t h) const { return heads_.at(h); }
  const std::vector<AttentionMap>& heads() const noexcept { return heads_; }

  bool bitwise_equal(const LayerAttention& other) const noexcept;

 private:
  std::size_t layer_index_ = 0;
  std::vector<AttentionMap> heads_;
};

struct TokenSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive

  std::size_t length() const noexcept { return end - start + 1; }
  bool contains(std::size_t idx) const noexcept { return idx >= start && idx <= end; }
  bool fits(std::size_t cols) const noexcept { return start <= end && end < cols; }

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

// Throws Error{Span} if the span is inverted or does not fit in `cols`.
void require_span(const TokenSpan& span, std::size_t cols);

struct ModelMetadata {
  std::string model_name;
  std::size_t seq_len = 0;
  std::optional<TokenSpan> span;
  std::string notes;

  friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

class ModelAttention {
 public:
  ModelAttention() = default;
  // Throws Error{Shape} if layers disagree on head count or matrix size,
  // Error{Config} if there are no layers. Layer indices are renumbered 0..n-1.
  ModelAttention(std::vector<LayerAttention> layers, ModelMetadata metadata);

  std::size_t layer_count() const noexcept { return layers_.size(); }
  std::size_t head_count() const noexcept {
    return layers_.empty() ? 0 : layers_.front().head_count();
  }
  std::size_t size() const noexcept { return layers_.empty() ? 0 : layers_.front().size(); }
  const LayerAttention& layer(std::size_t i) const;  // Error{Layer} if out of range
  const std::vector<LayerAttention>& layers() const noexcept { return layers_; }
  const ModelMetadata& metadata() const noexcept { return metadata_; }

  // Copy with one layer replaced. Error{Layer} / Error{Shape} on mismatch.
  ModelAttention with_layer(std::size_t index, LayerAttention replacement) const;

  bool bitwise_equal(const ModelAttention& other) const noexcept;

 private:
  std::vector<LayerAttention> layers_;
  ModelMetadata metadata_;
};

// Square 0/1 mask: zero on the main diagonal, one elsewhere. Entries are
// computed on access rather than stored.
class DiagMask {
 public:
  explicit DiagMask(std::size_t n) : n_(n) {}

  std::size_t size() const noexcept { return n_; }
  float operator()(std::size_t row, std::size_t col) const noexcept {
    return row == col ? 0.0f : 1.0f;
  }

 private:
  std::size_t n_;
};

// Error{InvalidDimension} when n == 0.
DiagMask build_diag_mask(std::size_t n);

struct ValidationResult {
  enum class Failure { None, NotSquare, OutOfRange, NonCausal, RowSum };

  bool ok = true;
  Failure failure = Failure::None;
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;  // offending entry, or the row sum for RowSum

  explicit operator bool() const noexcept { return ok; }
};

// Checks the AttentionMap invariants: entries in [0, 1], rows summing to 1
// within `tol`, and (if `causal`) zeros strictly above the diagonal. Reports
// the first violation in row-major order.
ValidationResult validate_attention(const AttentionMap& map, bool causal, double tol = 1e-5);

std::string describe(const ValidationResult& result);

}  // namespace eah

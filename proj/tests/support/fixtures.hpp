// SPDX-License-Identifier: Apache-2.0
//
// Test-only fixture builders and independent oracles. Nothing here calls the
// library's analysis code; oracles recompute everything with plain loops.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "eah/tensor.hpp"

namespace eah::testing {

// Row-wise softmax of N(0, logit_scale) logits restricted to the causal
// triangle. Computed in double, stored as float.
AttentionMap random_causal_map(std::size_t n, std::mt19937_64& rng, double logit_scale);

// Causal map where each row x spreads `uniform_mass` evenly over columns
// 0..x, gives `sink_mass` to every column of `sinks` strictly below the
// diagonal, and puts the remainder on column 0.
AttentionMap planted_map(std::size_t n, const std::vector<std::size_t>& sinks, double sink_mass,
                         double uniform_mass);

// Columns span_start .. span_start + count - 1.
std::vector<std::size_t> leading_columns(std::size_t span_start, std::size_t count);

// Random model: every head is random_causal_map() with a random logit scale,
// and roughly half of the heads also get planted sink columns.
ModelAttention random_model(std::size_t layers, std::size_t heads, std::size_t n,
                            std::uint64_t seed);

// 612-token, 32-head, two-layer model built with planted_map(). Sink columns
// of each head are the first `counts[l][h]` columns of the span [36, 611],
// tuned so that at beta = 0.002 (anchor 36) exactly those columns are sinks.
struct ReferenceFixture {
  ModelAttention model;
  std::vector<std::vector<std::size_t>> counts;  // [layer][head]
};
const ReferenceFixture& reference_fixture();

// Brute-force sink detection: explicit dense mask, explicit double loop.
std::set<std::size_t> oracle_sink_columns(const AttentionMap& map, std::size_t span_start,
                                          std::size_t span_end, std::size_t anchor_k, double beta);

// Adjusted skewness through the sample standard deviation:
//   G1 = n / ((n-1)(n-2)) * sum(((x - mean) / s)^3),  s^2 = sum((x-mean)^2) / (n-1)
std::optional<double> oracle_skewness(const std::vector<double>& values);

// Number of heads in `layer` whose maps differ bitwise between the two layers.
std::size_t changed_heads(const LayerAttention& before, const LayerAttention& after);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace eah::testing

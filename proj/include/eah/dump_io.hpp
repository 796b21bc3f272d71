// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "eah/tensor.hpp"

namespace eah {

// ATND attention dump, version 1. All integers and reals little-endian:
//
//   offset  size  field
//   0       4     magic "ATND"
//   4       2     version (u16) = 1
//   6       4     n_layers (u32)
//   10      4     n_heads  (u32)
//   14      4     rows     (u32)
//   18      4     cols     (u32)
//   22      4     metadata length in bytes (u32)
//   26      m     metadata, UTF-8 JSON object
//   26+m    ...   payload: n_layers*n_heads*rows*cols f32, ordered
//                 layer, head, row, column
//
// Metadata keys: "model" (string), "seq_len" (integer), "span" ({"start",
// "end"}, optional), "notes" (string). Unknown keys are ignored on read.
inline constexpr char kDumpMagic[4] = {'A', 'T', 'N', 'D'};
inline constexpr std::uint16_t kDumpVersion = 1;
inline constexpr std::size_t kDumpFixedHeaderBytes = 26;

struct ReadOptions {
  bool strict = false;          // run validate_attention on every head
  bool require_causal = false;  // strict mode also rejects mass above the diagonal
  double tolerance = 1e-5;
};

std::vector<std::uint8_t> encode_dump(const ModelAttention& model);

// Errors: BadMagic, BadVersion, BadHeader (zero or non-square dims, bad
// metadata), SizeMismatch (truncated or trailing bytes), NonStochastic
// (strict mode, message names layer/head/row).
ModelAttention decode_dump(std::span<const std::uint8_t> bytes, const ReadOptions& options = {});

// Error{Io} with the path on open/write failure.
void write_dump(const ModelAttention& model, const std::filesystem::path& path);
ModelAttention read_dump(const std::filesystem::path& path, const ReadOptions& options = {});

}  // namespace eah

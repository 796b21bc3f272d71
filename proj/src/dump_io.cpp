// SPDX-License-Identifier: Apache-2.0
#include "eah/dump_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include <json.hpp>

#include "eah/error.hpp"

namespace eah {
namespace {

using json = nlohmann::ordered_json;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFFu));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFFu));
  }
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::BadHeader, std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

std::string encode_metadata(const ModelMetadata& meta, std::size_t rows) {
  json j;
  j["model"] = meta.model_name;
  j["seq_len"] = meta.seq_len != 0 ? meta.seq_len : rows;
  if (meta.span) j["span"] = {{"start", meta.span->start}, {"end", meta.span->end}};
  j["notes"] = meta.notes;
  return j.dump();
}

ModelMetadata decode_metadata(std::string_view text) {
  ModelMetadata meta;
  if (text.empty()) return meta;
  try {
    const auto j = json::parse(text);
    if (!j.is_object()) throw Error(ErrorCode::BadHeader, "metadata is not a JSON object");
    meta.model_name = j.value("model", std::string{});
    meta.seq_len = j.value("seq_len", std::size_t{0});
    if (j.contains("span")) {
      const auto& s = j.at("span");
      meta.span = TokenSpan{s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>()};
    }
    meta.notes = j.value("notes", std::string{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadHeader, std::string("malformed metadata: ") + e.what());
  }
  return meta;
}

}  // namespace

std::vector<std::uint8_t> encode_dump(const ModelAttention& model) {
  const std::string meta = encode_metadata(model.metadata(), model.size());
  const std::size_t n = model.size();

  std::vector<std::uint8_t> out;
  out.reserve(kDumpFixedHeaderBytes + meta.size() +
              model.layer_count() * model.head_count() * n * n * 4);
  out.insert(out.end(), std::begin(kDumpMagic), std::end(kDumpMagic));
  put_u16(out, kDumpVersion);
  put_u32(out, checked_u32(model.layer_count(), "layer count"));
  put_u32(out, checked_u32(model.head_count(), "head count"));
  put_u32(out, checked_u32(n, "rows"));
  put_u32(out, checked_u32(n, "cols"));
  put_u32(out, checked_u32(meta.size(), "metadata length"));
  out.insert(out.end(), meta.begin(), meta.end());

  for (const auto& layer : model.layers()) {
    for (const auto& head : layer.heads()) {
      for (float v : head.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  return out;
}

ModelAttention decode_dump(std::span<const std::uint8_t> bytes, const ReadOptions& options) {
  if (bytes.size() < kDumpFixedHeaderBytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kDumpMagic, 4) != 0) {
      throw Error(ErrorCode::BadMagic, "file does not start with \"ATND\"");
    }
    throw Error(ErrorCode::SizeMismatch, "header needs " + std::to_string(kDumpFixedHeaderBytes) +
                                             " bytes, file has " + std::to_string(bytes.size()));
  }
  const std::uint8_t* p = bytes.data();
  if (std::memcmp(p, kDumpMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "file does not start with \"ATND\"");
  }
  const auto version = get_u16(p + 4);
  if (version != kDumpVersion) {
    throw Error(ErrorCode::BadVersion, "unsupported version " + std::to_string(version) +
                                           ", expected " + std::to_string(kDumpVersion));
  }
  const std::uint64_t n_layers = get_u32(p + 6);
  const std::uint64_t n_heads = get_u32(p + 10);
  const std::uint64_t rows = get_u32(p + 14);
  const std::uint64_t cols = get_u32(p + 18);
  const std::uint64_t meta_len = get_u32(p + 22);
  if (n_layers == 0 || n_heads == 0 || rows == 0 || cols == 0) {
    throw Error(ErrorCode::BadHeader, "dimensions must be positive");
  }
  if (rows != cols) {
    throw Error(ErrorCode::BadHeader, "attention maps must be square, got " +
                                          std::to_string(rows) + "x" + std::to_string(cols));
  }

  // Each factor is < 2^32, so only the running product can overflow.
  std::uint64_t payload = 4;
  bool overflow = false;
  for (std::uint64_t f : {n_layers, n_heads, rows, cols}) {
    if (payload > std::numeric_limits<std::uint64_t>::max() / f) overflow = true;
    else payload *= f;
  }
  const std::uint64_t expected = kDumpFixedHeaderBytes + meta_len + payload;
  if (overflow) {
    throw Error(ErrorCode::SizeMismatch, "header dimensions describe an impossibly large payload");
  }
  if (bytes.size() != expected) {
    throw Error(ErrorCode::SizeMismatch, "expected " + std::to_string(expected) +
                                             " bytes, file has " + std::to_string(bytes.size()));
  }

  const auto* meta_begin = reinterpret_cast<const char*>(p + kDumpFixedHeaderBytes);
  auto meta = decode_metadata(std::string_view(meta_begin, meta_len));

  const std::size_t n = rows;
  const std::uint8_t* cursor = p + kDumpFixedHeaderBytes + meta_len;
  std::vector<LayerAttention> layers;
  layers.reserve(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::vector<AttentionMap> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      std::vector<float> values(n * n);
      for (auto& v : values) {
        v = std::bit_cast<float>(get_u32(cursor));
        cursor += 4;
      }
      AttentionMap map(n, std::move(values));
      if (options.strict) {
        const auto check = validate_attention(map, options.require_causal, options.tolerance);
        if (!check) {
          throw Error(ErrorCode::NonStochastic,
                      "layer " + std::to_string(l) + " head " + std::to_string(h) + " row " +
                          std::to_string(check.row) + ": " + describe(check));
        }
      }
      heads.push_back(std::move(map));
    }
    layers.emplace_back(l, std::move(heads));
  }
  return ModelAttention(std::move(layers), std::move(meta));
}

void write_dump(const ModelAttention& model, const std::filesystem::path& path) {
  const auto bytes = encode_dump(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

ModelAttention read_dump(const std::filesystem::path& path, const ReadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::Io, "failed reading " + path.string());
  try {
    return decode_dump(bytes, options);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Io) throw;
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

}  // namespace eah

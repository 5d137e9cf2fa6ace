#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "oca/errors.hpp"
#include "oca/matrix.hpp"
#include "oca/text_io.hpp"

namespace oca {

struct FeatureRecord {
  std::int64_t id = 0;
  std::int32_t label = 0;
  std::vector<double> values;
};

/// Labeled feature vectors for a gallery or query set.
struct FeatureStore {
  std::size_t dim = 0;
  std::vector<FeatureRecord> records;

  void validate() const {
    if (dim == 0) throw StructuralError("FeatureStore: dim must be positive");
    std::unordered_set<std::int64_t> ids;
    ids.reserve(records.size());
    for (const FeatureRecord& r : records) {
      if (r.values.size() != dim) {
        throw StructuralError("FeatureStore: record " + std::to_string(r.id) + " has wrong dim");
      }
      if (!all_finite(r.values)) {
        throw NumericError("FeatureStore: non-finite feature in record " + std::to_string(r.id));
      }
      if (!ids.insert(r.id).second) {
        throw StructuralError("FeatureStore: duplicate id " + std::to_string(r.id));
      }
    }
  }
};

/// Extend every feature with zeros up to target_dim. Padding with zeros
/// leaves all pairwise dot products among padded vectors unchanged.
inline FeatureStore zero_pad(const FeatureStore& store, std::size_t target_dim) {
  if (target_dim < store.dim) {
    throw StructuralError("zero_pad: target_dim " + std::to_string(target_dim) +
                          " below store dim " + std::to_string(store.dim));
  }
  FeatureStore out;
  out.dim = target_dim;
  out.records = store.records;
  for (FeatureRecord& r : out.records) r.values.resize(target_dim, 0.0);
  return out;
}

/// Keep only the first target_dim coordinates (the h_bct comparison rule).
inline FeatureStore truncate_store(const FeatureStore& store, std::size_t target_dim) {
  if (target_dim > store.dim || target_dim == 0) {
    throw StructuralError("truncate_store: bad target_dim " + std::to_string(target_dim));
  }
  FeatureStore out;
  out.dim = target_dim;
  out.records = store.records;
  for (FeatureRecord& r : out.records) r.values.resize(target_dim);
  return out;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;
  const std::string& where;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw ParseError(where + ": truncated at offset " + std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace detail

/// Binary store format: magic "OCAF", u32 version (=1), u32 dim, u64 record
/// count, then per record i64 id, i32 label, dim x f32 values. All fields
/// little-endian; internal doubles are rounded to 32-bit for portability.
inline void save_store(const FeatureStore& store, const std::filesystem::path& path) {
  store.validate();
  std::string out;
  out.reserve(20 + store.records.size() * (12 + 4 * store.dim));
  out += "OCAF";
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(store.dim));
  detail::put_u64(out, static_cast<std::uint64_t>(store.records.size()));
  for (const FeatureRecord& r : store.records) {
    detail::put_u64(out, static_cast<std::uint64_t>(r.id));
    detail::put_u32(out, static_cast<std::uint32_t>(r.label));
    for (double v : r.values) detail::put_f32(out, static_cast<float>(v));
  }
  write_file(path, out);
}

inline FeatureStore load_store_text(const std::string& text, const std::string& where) {
  FeatureStore store;
  const std::vector<std::string> lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    const std::string ctx = where + ": line " + std::to_string(i + 1);
    const std::vector<std::string> parts = split(line, ',');
    if (parts.size() < 3) throw ParseError(ctx + ": expected 'id, label, values...'");
    FeatureRecord r;
    r.id = parse_int(trim(parts[0]), ctx);
    r.label = static_cast<std::int32_t>(parse_int(trim(parts[1]), ctx));
    for (std::size_t k = 2; k < parts.size(); ++k) {
      r.values.push_back(parse_double(trim(parts[k]), ctx));
    }
    if (store.records.empty()) {
      store.dim = r.values.size();
    } else if (r.values.size() != store.dim) {
      throw ParseError(ctx + ": inconsistent feature length");
    }
    store.records.push_back(std::move(r));
  }
  if (store.records.empty()) throw ParseError(where + ": no records");
  try {
    store.validate();
  } catch (const std::runtime_error& e) {
    throw ParseError(where + ": invalid store: " + e.what());
  }
  return store;
}

/// Reads either the binary format (magic "OCAF") or the line-delimited text
/// alternative (one record per line: id, label, comma-separated values).
inline FeatureStore load_store(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.string();
  if (bytes.size() < 4 || bytes.compare(0, 4, "OCAF") != 0) {
    return load_store_text(bytes, where);
  }
  detail::ByteReader rd{bytes, 4, where};
  const std::uint32_t version = rd.u32();
  if (version != 1) {
    throw ParseError(where + ": unsupported store version " + std::to_string(version));
  }
  FeatureStore store;
  store.dim = rd.u32();
  const std::uint64_t count = rd.u64();
  store.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord r;
    r.id = static_cast<std::int64_t>(rd.u64());
    r.label = static_cast<std::int32_t>(rd.u32());
    r.values.resize(store.dim);
    for (std::size_t d = 0; d < store.dim; ++d) r.values[d] = rd.f32();
    store.records.push_back(std::move(r));
  }
  if (rd.pos != bytes.size()) throw ParseError(where + ": trailing bytes after records");
  try {
    store.validate();
  } catch (const std::runtime_error& e) {
    throw ParseError(where + ": invalid store: " + e.what());
  }
  return store;
}

}  // namespace oca

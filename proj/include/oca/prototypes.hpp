#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oca/errors.hpp"
#include "oca/matrix.hpp"
#include "oca/text_io.hpp"

namespace oca {

/// Per-class mean feature vectors of the frozen old model; the alignment
/// targets for the prototype losses. Row y is the exact arithmetic mean of
/// the old-model features of every sample with label y.
struct Prototypes {
  std::int32_t classes = 0;
  std::size_t dim = 0;
  Matrix vectors;                    // classes x dim
  std::vector<std::int64_t> counts;  // samples averaged per class

  void validate() const {
    if (classes <= 0) throw StructuralError("Prototypes: classes must be positive");
    if (dim == 0) throw StructuralError("Prototypes: dim must be positive");
    if (vectors.rows() != static_cast<std::size_t>(classes) || vectors.cols() != dim) {
      throw StructuralError("Prototypes: vector matrix shape mismatch");
    }
    if (counts.size() != static_cast<std::size_t>(classes)) {
      throw StructuralError("Prototypes: counts size mismatch");
    }
    for (std::int64_t c : counts) {
      if (c <= 0) throw StructuralError("Prototypes: class with no samples");
    }
    if (!all_finite(vectors)) throw NumericError("Prototypes: non-finite entries");
  }
};

inline void save_prototypes(const Prototypes& p, const std::filesystem::path& path) {
  p.validate();
  std::string out = "oca-prototypes v1\n";
  out += "classes = " + std::to_string(p.classes) + "\n";
  out += "dim = " + std::to_string(p.dim) + "\n";
  for (std::int32_t y = 0; y < p.classes; ++y) {
    out += std::to_string(y);
    out += ',';
    out += std::to_string(p.counts[static_cast<std::size_t>(y)]);
    for (std::size_t d = 0; d < p.dim; ++d) {
      out += ',';
      out += format_double(p.vectors(static_cast<std::size_t>(y), d));
    }
    out += '\n';
  }
  write_file(path, out);
}

inline Prototypes load_prototypes(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::vector<std::string> lines = split(text, '\n');
  const std::string where = path.string();
  if (lines.empty() || trim(lines[0]) != "oca-prototypes v1") {
    throw ParseError(where + ": unsupported prototypes version");
  }
  auto header_value = [&](std::size_t i, const std::string& key) {
    if (i >= lines.size()) throw ParseError(where + ": truncated header");
    const std::string prefix = key + " = ";
    if (lines[i].rfind(prefix, 0) != 0) {
      throw ParseError(where + ": line " + std::to_string(i + 1) + ": expected '" + key + "'");
    }
    return trim(lines[i].substr(prefix.size()));
  };
  Prototypes p;
  p.classes = static_cast<std::int32_t>(parse_int(header_value(1, "classes"), where));
  p.dim = static_cast<std::size_t>(parse_int(header_value(2, "dim"), where));
  if (p.classes <= 0 || p.dim == 0) throw ParseError(where + ": bad header values");
  p.vectors = Matrix(static_cast<std::size_t>(p.classes), p.dim);
  p.counts.assign(static_cast<std::size_t>(p.classes), 0);
  for (std::int32_t y = 0; y < p.classes; ++y) {
    const std::size_t line_no = 3 + static_cast<std::size_t>(y);
    if (line_no >= lines.size()) throw ParseError(where + ": truncated at class " + std::to_string(y));
    const std::string ctx = where + ": line " + std::to_string(line_no + 1);
    const std::vector<std::string> parts = split(lines[line_no], ',');
    if (parts.size() != 2 + p.dim) throw ParseError(ctx + ": wrong field count");
    if (parse_int(parts[0], ctx) != y) throw ParseError(ctx + ": class rows out of order");
    p.counts[static_cast<std::size_t>(y)] = parse_int(parts[1], ctx);
    for (std::size_t d = 0; d < p.dim; ++d) {
      p.vectors(static_cast<std::size_t>(y), d) = parse_double(parts[2 + d], ctx);
    }
  }
  try {
    p.validate();
  } catch (const StructuralError& e) {
    throw ParseError(where + ": invalid prototypes: " + e.what());
  }
  return p;
}

}  // namespace oca

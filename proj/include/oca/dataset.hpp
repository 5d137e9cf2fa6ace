#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "oca/errors.hpp"
#include "oca/text_io.hpp"

namespace oca {

struct Sample {
  std::int64_t id = 0;
  std::int32_t label = 0;
  std::vector<double> x;
};

/// Labeled vectors for one split of the synthetic class-update scenario.
struct Dataset {
  std::size_t input_dim = 0;
  std::int32_t num_classes = 0;
  std::string split;  // "train" or "eval"
  std::vector<Sample> samples;

  void validate() const {
    if (input_dim == 0) throw StructuralError("Dataset: input_dim must be positive");
    if (num_classes <= 0) throw StructuralError("Dataset: num_classes must be positive");
    if (samples.empty()) throw StructuralError("Dataset: no samples");
    std::vector<std::int64_t> per_class(static_cast<std::size_t>(num_classes), 0);
    std::unordered_set<std::int64_t> ids;
    ids.reserve(samples.size());
    for (const Sample& s : samples) {
      if (s.label < 0 || s.label >= num_classes) {
        throw StructuralError("Dataset: label " + std::to_string(s.label) + " out of range");
      }
      if (s.x.size() != input_dim) {
        throw StructuralError("Dataset: sample " + std::to_string(s.id) + " has wrong dim");
      }
      if (!ids.insert(s.id).second) {
        throw StructuralError("Dataset: duplicate id " + std::to_string(s.id));
      }
      ++per_class[static_cast<std::size_t>(s.label)];
    }
    for (std::int32_t c = 0; c < num_classes; ++c) {
      if (per_class[static_cast<std::size_t>(c)] == 0) {
        throw StructuralError("Dataset: class " + std::to_string(c) + " has no samples");
      }
    }
  }
};

/// Gaussian clusters around class centers drawn uniformly on the sphere of
/// radius class_separation. Train and eval are independent draws from the
/// same class distributions; ids are unique across both splits.
inline std::pair<Dataset, Dataset> gen_synthetic(std::int32_t num_classes,
                                                 std::size_t per_class_train,
                                                 std::size_t per_class_eval,
                                                 std::size_t input_dim,
                                                 double class_separation,
                                                 double noise_sigma,
                                                 std::uint64_t seed) {
  if (num_classes < 1) throw StructuralError("gen_synthetic: num_classes must be >= 1");
  if (per_class_train < 1 || per_class_eval < 1) {
    throw StructuralError("gen_synthetic: per-class counts must be >= 1");
  }
  if (input_dim < 1) throw StructuralError("gen_synthetic: input_dim must be >= 1");
  if (!(class_separation > 0.0)) {
    throw StructuralError("gen_synthetic: class_separation must be > 0");
  }
  if (!(noise_sigma > 0.0)) throw StructuralError("gen_synthetic: noise_sigma must be > 0");

  std::mt19937_64 engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> centers(static_cast<std::size_t>(num_classes));
  for (auto& c : centers) {
    c.resize(input_dim);
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (double& v : c) {
        v = gauss(engine);
        n2 += v * v;
      }
    } while (n2 == 0.0);
    const double scale = class_separation / std::sqrt(n2);
    for (double& v : c) v *= scale;
  }

  std::int64_t next_id = 0;
  auto draw_split = [&](std::size_t per_class, const std::string& tag) {
    Dataset ds;
    ds.input_dim = input_dim;
    ds.num_classes = num_classes;
    ds.split = tag;
    ds.samples.reserve(static_cast<std::size_t>(num_classes) * per_class);
    for (std::int32_t y = 0; y < num_classes; ++y) {
      const auto& center = centers[static_cast<std::size_t>(y)];
      for (std::size_t k = 0; k < per_class; ++k) {
        Sample s;
        s.id = next_id++;
        s.label = y;
        s.x.resize(input_dim);
        for (std::size_t d = 0; d < input_dim; ++d) {
          s.x[d] = center[d] + noise_sigma * gauss(engine);
        }
        ds.samples.push_back(std::move(s));
      }
    }
    return ds;
  };

  Dataset train = draw_split(per_class_train, "train");
  Dataset eval = draw_split(per_class_eval, "eval");
  return {std::move(train), std::move(eval)};
}

/// Keep only the first `keep` classes; ids are preserved.
inline Dataset restrict_classes(const Dataset& ds, std::int32_t keep) {
  if (keep < 1 || keep > ds.num_classes) {
    throw StructuralError("restrict_classes: keep=" + std::to_string(keep) +
                          " out of range [1, " + std::to_string(ds.num_classes) + "]");
  }
  Dataset out;
  out.input_dim = ds.input_dim;
  out.num_classes = keep;
  out.split = ds.split;
  for (const Sample& s : ds.samples) {
    if (s.label < keep) out.samples.push_back(s);
  }
  return out;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::string out;
  out.reserve(ds.samples.size() * ds.input_dim * 20);
  out += "oca-dataset v1\n";
  out += "input_dim = " + std::to_string(ds.input_dim) + "\n";
  out += "num_classes = " + std::to_string(ds.num_classes) + "\n";
  out += "split = " + ds.split + "\n";
  out += "samples = " + std::to_string(ds.samples.size()) + "\n";
  for (const Sample& s : ds.samples) {
    out += std::to_string(s.id);
    out += ',';
    out += std::to_string(s.label);
    for (double v : s.x) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  write_file(path, out);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> lines = split(text, '\n');
  const std::string where = path.string();

  auto line_at = [&](std::size_t i) -> const std::string& {
    if (i >= lines.size()) throw ParseError(where + ": truncated file at line " + std::to_string(i + 1));
    return lines[i];
  };
  auto header_value = [&](std::size_t i, const std::string& key) {
    const std::string& line = line_at(i);
    const std::string prefix = key + " = ";
    if (line.rfind(prefix, 0) != 0) {
      throw ParseError(where + ": line " + std::to_string(i + 1) + ": expected '" + key + " = ...'");
    }
    return trim(line.substr(prefix.size()));
  };

  if (trim(line_at(0)) != "oca-dataset v1") {
    throw ParseError(where + ": unsupported dataset version (expected 'oca-dataset v1')");
  }
  Dataset ds;
  ds.input_dim = static_cast<std::size_t>(parse_int(header_value(1, "input_dim"), where));
  ds.num_classes = static_cast<std::int32_t>(parse_int(header_value(2, "num_classes"), where));
  ds.split = header_value(3, "split");
  const std::size_t count = static_cast<std::size_t>(parse_int(header_value(4, "samples"), where));

  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t line_no = 5 + i;
    const std::string& line = line_at(line_no);
    std::vector<std::string> parts = split(line, ',');
    const std::string ctx = where + ": line " + std::to_string(line_no + 1);
    if (parts.size() != 2 + ds.input_dim) {
      throw ParseError(ctx + ": expected " + std::to_string(2 + ds.input_dim) + " fields, got " +
                       std::to_string(parts.size()));
    }
    Sample s;
    s.id = parse_int(parts[0], ctx);
    s.label = static_cast<std::int32_t>(parse_int(parts[1], ctx));
    s.x.resize(ds.input_dim);
    for (std::size_t d = 0; d < ds.input_dim; ++d) s.x[d] = parse_double(parts[2 + d], ctx);
    ds.samples.push_back(std::move(s));
  }
  try {
    ds.validate();
  } catch (const StructuralError& e) {
    throw ParseError(where + ": invalid dataset: " + e.what());
  }
  return ds;
}

}  // namespace oca

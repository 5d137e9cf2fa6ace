#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "oca/errors.hpp"
#include "oca/losses.hpp"
#include "oca/text_io.hpp"
#include "oca/trainer.hpp"

namespace oca {

struct DataParams {
  std::int32_t num_classes = 20;
  std::int32_t old_classes = -1;  // -1: half of num_classes
  std::size_t per_class_train = 200;
  std::size_t per_class_eval = 50;
  std::size_t input_dim = 32;
  double class_separation = 1.0;
  double noise_sigma = 0.35;
  std::uint64_t seed = 12345;

  std::int32_t resolved_old_classes() const {
    return old_classes < 0 ? num_classes / 2 : old_classes;
  }
};

struct EvalParams {
  bool self_exclusion = true;
  std::string padding = "zero";  // "zero" or "truncate"
  std::vector<int> cmc_k = {1, 5};
  std::uint64_t def1_sample_cap = 2000000;
  std::uint64_t def1_seed = 99;
};

struct RunParams {
  std::string output_dir;  // required
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

namespace detail {

struct RawEntry {
  std::string value;
  std::size_t line = 0;
  bool consumed = false;
};

/// Sectioned key = value file. '#' starts a comment; values may be quoted.
/// Unknown or duplicate keys are hard errors at a higher level.
inline std::map<std::string, RawEntry> parse_kv_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::vector<std::string> lines = split(text, '\n');
  std::map<std::string, RawEntry> entries;
  std::string section;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = lines[i];
    bool in_quote = false;
    for (std::size_t p = 0; p < line.size(); ++p) {
      if (line[p] == '"') in_quote = !in_quote;
      if (line[p] == '#' && !in_quote) {
        line = line.substr(0, p);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ": line " + std::to_string(i + 1);
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError(where + ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(where + ": empty key");
    if (section.empty()) throw ParseError(where + ": key outside any [section]");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    const std::string full = section + "." + key;
    if (entries.count(full)) throw ConfigError(path.string() + ": duplicate key " + full);
    entries[full] = RawEntry{value, i + 1, false};
  }
  return entries;
}

}  // namespace detail

/// Everything one experiment needs: data generation, training, evaluation
/// and run layout. Unknown keys in the file are hard errors so a typo in a
/// lambda cannot silently change an experiment.
struct ExperimentConfig {
  DataParams data;
  TrainConfig train;
  EvalParams eval;
  RunParams run;

  void validate() const {
    if (data.num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
    const std::int32_t old_c = data.resolved_old_classes();
    if (old_c < 1 || old_c >= data.num_classes) {
      throw ConfigError("data.old_classes must be in [1, num_classes)");
    }
    if (data.per_class_train < 1 || data.per_class_eval < 1) {
      throw ConfigError("data per-class counts must be >= 1");
    }
    if (data.input_dim < 1) throw ConfigError("data.input_dim must be >= 1");
    if (!(data.class_separation > 0.0)) throw ConfigError("data.class_separation must be > 0");
    if (!(data.noise_sigma > 0.0)) throw ConfigError("data.noise_sigma must be > 0");
    train.validate();
    if (eval.padding != "zero" && eval.padding != "truncate") {
      throw ConfigError("eval.padding must be 'zero' or 'truncate'");
    }
    for (int k : eval.cmc_k) {
      if (k < 1) throw ConfigError("eval.cmc_k entries must be >= 1");
    }
    if (eval.def1_sample_cap < 1) throw ConfigError("eval.def1_sample_cap must be >= 1");
    if (run.output_dir.empty()) throw ConfigError("missing required field run.output_dir");
    if (run.seeds.empty()) throw ConfigError("run.seeds must not be empty");
  }

  /// Stable canonical dump of every effective field, the input of the
  /// config hash embedded in reports and manifests.
  std::string canonical() const {
    std::string s;
    s += "data.num_classes = " + std::to_string(data.num_classes) + "\n";
    s += "data.old_classes = " + std::to_string(data.resolved_old_classes()) + "\n";
    s += "data.per_class_train = " + std::to_string(data.per_class_train) + "\n";
    s += "data.per_class_eval = " + std::to_string(data.per_class_eval) + "\n";
    s += "data.input_dim = " + std::to_string(data.input_dim) + "\n";
    s += "data.class_separation = " + format_double(data.class_separation) + "\n";
    s += "data.noise_sigma = " + format_double(data.noise_sigma) + "\n";
    s += "data.seed = " + std::to_string(data.seed) + "\n";
    s += "train.epochs = " + std::to_string(train.epochs) + "\n";
    s += "train.batch_size = " + std::to_string(train.batch_size) + "\n";
    s += "train.lr = " + format_double(train.lr) + "\n";
    s += "train.beta1 = " + format_double(train.beta1) + "\n";
    s += "train.beta2 = " + format_double(train.beta2) + "\n";
    s += "train.eps = " + format_double(train.eps) + "\n";
    s += "train.d_old = " + std::to_string(train.d_old) + "\n";
    s += "train.d_extra = " + std::to_string(train.d_extra) + "\n";
    s += "train.lambda1 = " + format_double(train.lambda1) + "\n";
    s += "train.lambda2 = " + format_double(train.lambda2) + "\n";
    s += "train.lambda_bct = " + format_double(train.lambda_bct) + "\n";
    s += "train.mode = " + std::string(to_string(train.mode)) + "\n";
    s += "train.hidden_dims = ";
    for (std::size_t i = 0; i < train.hidden_dims.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(train.hidden_dims[i]);
    }
    s += "\n";
    s += "train.skew_init = " + format_double(train.skew_init) + "\n";
    s += "train.warm_start = " + std::string(train.warm_start ? "true" : "false") + "\n";
    s += "eval.self_exclusion = " + std::string(eval.self_exclusion ? "true" : "false") + "\n";
    s += "eval.padding = " + eval.padding + "\n";
    s += "eval.cmc_k = ";
    for (std::size_t i = 0; i < eval.cmc_k.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(eval.cmc_k[i]);
    }
    s += "\n";
    s += "eval.def1_sample_cap = " + std::to_string(eval.def1_sample_cap) + "\n";
    s += "eval.def1_seed = " + std::to_string(eval.def1_seed) + "\n";
    s += "run.output_dir = " + run.output_dir + "\n";
    s += "run.seeds = ";
    for (std::size_t i = 0; i < run.seeds.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(run.seeds[i]);
    }
    s += "\n";
    return s;
  }

  std::string hash() const { return to_hex(fnv1a64(canonical())); }

  static ExperimentConfig from_file(const std::filesystem::path& path);
};

namespace detail {

struct ConfigReader {
  std::map<std::string, RawEntry> entries;
  const std::string file;

  bool has(const std::string& key) { return entries.count(key) != 0; }

  std::string take(const std::string& key) {
    auto it = entries.find(key);
    it->second.consumed = true;
    return it->second.value;
  }

  template <typename T, typename Fn>
  void get(const std::string& key, T& out, Fn convert) {
    if (!has(key)) return;
    out = convert(take(key));
  }

  void get_int(const std::string& key, std::int32_t& out) {
    get(key, out, [&](const std::string& v) {
      return static_cast<std::int32_t>(parse_config_int(key, v));
    });
  }
  void get_size(const std::string& key, std::size_t& out) {
    get(key, out, [&](const std::string& v) {
      const long long n = parse_config_int(key, v);
      if (n < 0) throw ConfigError(key + " must be non-negative");
      return static_cast<std::size_t>(n);
    });
  }
  void get_u64(const std::string& key, std::uint64_t& out) {
    get(key, out, [&](const std::string& v) {
      const long long n = parse_config_int(key, v);
      if (n < 0) throw ConfigError(key + " must be non-negative");
      return static_cast<std::uint64_t>(n);
    });
  }
  void get_double(const std::string& key, double& out) {
    get(key, out, [&](const std::string& v) {
      try {
        return parse_double(v, key);
      } catch (const ParseError& e) {
        throw ConfigError(e.what());
      }
    });
  }
  void get_bool(const std::string& key, bool& out) {
    get(key, out, [&](const std::string& v) {
      if (v == "true") return true;
      if (v == "false") return false;
      throw ConfigError(key + ": expected true or false, got '" + v + "'");
    });
  }
  void get_string(const std::string& key, std::string& out) {
    get(key, out, [](const std::string& v) { return v; });
  }

  template <typename T>
  void get_int_list(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    const std::string v = take(key);
    std::vector<T> result;
    for (const std::string& tok : split(v, ',')) {
      const long long n = parse_config_int(key, trim(tok));
      if (n < 0 && !std::is_signed_v<T>) throw ConfigError(key + ": negative entry");
      result.push_back(static_cast<T>(n));
    }
    out = std::move(result);
  }

  long long parse_config_int(const std::string& key, const std::string& v) {
    try {
      return parse_int(v, key);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [key, entry] : entries) {
      if (!entry.consumed) {
        throw ConfigError(file + ": unknown key '" + key + "' (line " +
                          std::to_string(entry.line) + ")");
      }
    }
  }
};

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  detail::ConfigReader rd{detail::parse_kv_file(path), path.string()};
  ExperimentConfig cfg;

  rd.get_int("data.num_classes", cfg.data.num_classes);
  rd.get_int("data.old_classes", cfg.data.old_classes);
  rd.get_size("data.per_class_train", cfg.data.per_class_train);
  rd.get_size("data.per_class_eval", cfg.data.per_class_eval);
  rd.get_size("data.input_dim", cfg.data.input_dim);
  rd.get_double("data.class_separation", cfg.data.class_separation);
  rd.get_double("data.noise_sigma", cfg.data.noise_sigma);
  rd.get_u64("data.seed", cfg.data.seed);

  rd.get_size("train.epochs", cfg.train.epochs);
  rd.get_size("train.batch_size", cfg.train.batch_size);
  rd.get_double("train.lr", cfg.train.lr);
  rd.get_double("train.beta1", cfg.train.beta1);
  rd.get_double("train.beta2", cfg.train.beta2);
  rd.get_double("train.eps", cfg.train.eps);
  rd.get_size("train.d_old", cfg.train.d_old);
  rd.get_size("train.d_extra", cfg.train.d_extra);
  rd.get_double("train.lambda1", cfg.train.lambda1);
  rd.get_double("train.lambda2", cfg.train.lambda2);
  rd.get_double("train.lambda_bct", cfg.train.lambda_bct);
  if (rd.has("train.mode")) cfg.train.mode = parse_loss_mode(rd.take("train.mode"));
  rd.get_int_list("train.hidden_dims", cfg.train.hidden_dims);
  rd.get_double("train.skew_init", cfg.train.skew_init);
  rd.get_bool("train.warm_start", cfg.train.warm_start);

  rd.get_bool("eval.self_exclusion", cfg.eval.self_exclusion);
  rd.get_string("eval.padding", cfg.eval.padding);
  rd.get_int_list("eval.cmc_k", cfg.eval.cmc_k);
  rd.get_u64("eval.def1_sample_cap", cfg.eval.def1_sample_cap);
  rd.get_u64("eval.def1_seed", cfg.eval.def1_seed);

  rd.get_string("run.output_dir", cfg.run.output_dir);
  rd.get_int_list("run.seeds", cfg.run.seeds);

  rd.reject_unknown();

  // OCA_OUTPUT_ROOT anchors relative output dirs.
  if (!cfg.run.output_dir.empty()) {
    const std::filesystem::path out(cfg.run.output_dir);
    if (out.is_relative()) {
      if (const char* root = std::getenv("OCA_OUTPUT_ROOT")) {
        cfg.run.output_dir = (std::filesystem::path(root) / out).string();
      }
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace oca

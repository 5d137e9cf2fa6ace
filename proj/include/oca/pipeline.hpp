#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "oca/config.hpp"
#include "oca/dataset.hpp"
#include "oca/errors.hpp"
#include "oca/feature_store.hpp"
#include "oca/retrieval.hpp"
#include "oca/text_io.hpp"
#include "oca/trainer.hpp"

namespace oca {

using Json = nlohmann::ordered_json;

/// Directory layout of one experiment under run.output_dir.
struct RunPaths {
  std::filesystem::path root;

  explicit RunPaths(const std::string& output_dir) : root(output_dir) {}

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path train_file() const { return data_dir() / "train.ds"; }
  std::filesystem::path eval_file() const { return data_dir() / "eval.ds"; }
  std::filesystem::path seed_dir(std::uint64_t s) const {
    return root / ("seed_" + std::to_string(s));
  }
  std::filesystem::path old_checkpoint(std::uint64_t s) const { return seed_dir(s) / "old.ckpt"; }
  std::filesystem::path prototypes_file(std::uint64_t s) const {
    return seed_dir(s) / "prototypes.txt";
  }
  std::filesystem::path new_checkpoint(std::uint64_t s, LossMode mode) const {
    return seed_dir(s) / ("new_" + std::string(to_string(mode)) + ".ckpt");
  }
  std::filesystem::path store_file(std::uint64_t s, const std::string& name) const {
    return seed_dir(s) / "stores" / (name + ".fs");
  }
  std::filesystem::path seed_report(std::uint64_t s) const { return seed_dir(s) / "report.json"; }
  std::filesystem::path aggregate_report() const { return root / "compat_report.json"; }
  std::filesystem::path manifest() const { return root / "manifest.log"; }
};

inline std::string file_checksum(const std::filesystem::path& path) {
  return to_hex(fnv1a64(read_file(path)));
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataResult {
  std::filesystem::path train_path;
  std::filesystem::path eval_path;
  std::string train_checksum;
  std::string eval_checksum;
};

inline GenDataResult run_gen_data(const ExperimentConfig& cfg) {
  const RunPaths paths(cfg.run.output_dir);
  auto [train, eval] = gen_synthetic(cfg.data.num_classes, cfg.data.per_class_train,
                                     cfg.data.per_class_eval, cfg.data.input_dim,
                                     cfg.data.class_separation, cfg.data.noise_sigma,
                                     cfg.data.seed);
  save_dataset(train, paths.train_file());
  save_dataset(eval, paths.eval_file());
  return {paths.train_file(), paths.eval_file(), file_checksum(paths.train_file()),
          file_checksum(paths.eval_file())};
}

// ---------------------------------------------------------------------------
// train

inline Dataset load_train_data_or_hint(const RunPaths& paths, const std::string& config_path) {
  if (!std::filesystem::exists(paths.train_file())) {
    throw ConfigError("training data not found at " + paths.train_file().string() +
                      "; run 'oca gen-data --config " + config_path + "' first");
  }
  return load_dataset(paths.train_file());
}

/// Train every configured seed for one role. role=new loads the old
/// checkpoint (hard requirement) and computes prototypes when the
/// per-seed prototypes file is absent.
inline void run_train(const ExperimentConfig& cfg, const std::string& role,
                      const std::string& config_path, std::ostream& log) {
  if (role != "old" && role != "new") {
    throw ConfigError("role must be 'old' or 'new', got '" + role + "'");
  }
  const RunPaths paths(cfg.run.output_dir);
  const Dataset train_data = load_train_data_or_hint(paths, config_path);
  if (train_data.num_classes != cfg.data.num_classes ||
      train_data.input_dim != cfg.data.input_dim) {
    throw ConfigError("dataset at " + paths.train_file().string() +
                      " does not match the [data] section; regenerate with gen-data");
  }
  const std::string cfg_hash = cfg.hash();

  for (const std::uint64_t seed : cfg.run.seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    if (role == "old") {
      const Dataset old_data = restrict_classes(train_data, cfg.data.resolved_old_classes());
      const ModelBundle bundle = train_old(tc, old_data);
      save_checkpoint(bundle, paths.old_checkpoint(seed));
      append_manifest(paths.manifest(), "old:independent:seed" + std::to_string(seed), cfg_hash,
                      seed, bundle.history.back());
      log << "trained old model (seed " << seed << ") -> " << paths.old_checkpoint(seed).string()
          << "\n";
    } else {
      if (!std::filesystem::exists(paths.old_checkpoint(seed))) {
        throw ConfigError("old checkpoint missing at " + paths.old_checkpoint(seed).string() +
                          "; run 'oca train --config " + config_path + " --role old' first");
      }
      const ModelBundle old_bundle = load_checkpoint(paths.old_checkpoint(seed));
      Prototypes protos;
      if (std::filesystem::exists(paths.prototypes_file(seed))) {
        protos = load_prototypes(paths.prototypes_file(seed));
      } else {
        protos = compute_prototypes(old_bundle, train_data);
        save_prototypes(protos, paths.prototypes_file(seed));
        log << "computed prototypes (seed " << seed << ") -> "
            << paths.prototypes_file(seed).string() << "\n";
      }
      const ModelBundle bundle =
          train_new(tc, train_data, &protos, tc.warm_start ? &old_bundle.backbone : nullptr);
      save_checkpoint(bundle, paths.new_checkpoint(seed, tc.mode));
      append_manifest(paths.manifest(),
                      "new:" + std::string(to_string(tc.mode)) + ":seed" + std::to_string(seed),
                      cfg_hash, seed, bundle.history.back());
      log << "trained new model mode=" << to_string(tc.mode) << " (seed " << seed << ") -> "
          << paths.new_checkpoint(seed, tc.mode).string() << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// extract

inline void run_extract(const std::filesystem::path& checkpoint_path,
                        const std::filesystem::path& data_path, FeaturePart part,
                        const std::filesystem::path& out_path) {
  const ModelBundle bundle = load_checkpoint(checkpoint_path);
  const Dataset data = load_dataset(data_path);
  const FeatureStore store = extract_features(bundle, data, part);
  save_store(store, out_path);
}

// ---------------------------------------------------------------------------
// eval

inline Json report_to_json(const RetrievalReport& r) {
  Json j;
  j["query_model"] = r.query_model;
  j["gallery_model"] = r.gallery_model;
  j["padding"] = r.padding_mode;
  j["map_at_1"] = r.map_at_1;
  j["cmc_1"] = r.cmc_1;
  Json cmc;
  for (const auto& [k, v] : r.cmc) cmc[std::to_string(k)] = v;
  j["cmc"] = cmc;
  j["num_queries"] = r.num_queries;
  j["num_gallery"] = r.num_gallery;
  j["skipped_queries"] = r.skipped_queries;
  return j;
}

/// Equalize dims under the requested rule and evaluate. padding="zero"
/// extends the narrower store with zeros; "truncate" keeps the shared
/// leading coordinates of the wider store.
inline RetrievalReport evaluate_padded(const FeatureStore& queries, const FeatureStore& gallery,
                                       const std::string& padding, bool self_exclusion,
                                       const std::vector<int>& cmc_k,
                                       const std::string& query_tag,
                                       const std::string& gallery_tag) {
  const FeatureStore* q = &queries;
  const FeatureStore* g = &gallery;
  FeatureStore adjusted;
  std::string applied = "none";
  if (queries.dim != gallery.dim) {
    if (padding == "zero") {
      const std::size_t target = std::max(queries.dim, gallery.dim);
      adjusted = queries.dim < target ? zero_pad(queries, target) : zero_pad(gallery, target);
      (queries.dim < target ? q : g) = &adjusted;
      applied = "zero";
    } else if (padding == "truncate") {
      const std::size_t target = std::min(queries.dim, gallery.dim);
      adjusted =
          queries.dim > target ? truncate_store(queries, target) : truncate_store(gallery, target);
      (queries.dim > target ? q : g) = &adjusted;
      applied = "truncate";
    } else {
      throw ConfigError("padding must be 'zero' or 'truncate', got '" + padding + "'");
    }
  }
  RetrievalReport report = evaluate(*q, *g, self_exclusion, cmc_k);
  report.query_model = query_tag;
  report.gallery_model = gallery_tag;
  report.padding_mode = applied;
  return report;
}

inline Json run_eval(const std::filesystem::path& query_path,
                     const std::filesystem::path& gallery_path, const std::string& padding,
                     bool self_exclusion, const std::vector<int>& cmc_k) {
  const FeatureStore queries = load_store(query_path);
  const FeatureStore gallery = load_store(gallery_path);
  const RetrievalReport report =
      evaluate_padded(queries, gallery, padding, self_exclusion, cmc_k,
                      query_path.stem().string(), gallery_path.stem().string());

  // A bare eval has no experiment config; hash the effective settings and
  // input bytes instead so reruns remain verifiable.
  std::string settings = "query=" + file_checksum(query_path) +
                         "|gallery=" + file_checksum(gallery_path) + "|padding=" + padding +
                         "|self_exclusion=" + (self_exclusion ? "true" : "false") + "|cmc_k=";
  for (int k : cmc_k) settings += std::to_string(k) + ",";

  Json j;
  j["kind"] = "oca-eval-report";
  j["settings_hash"] = to_hex(fnv1a64(settings));
  j["query_store"] = query_path.string();
  j["gallery_store"] = gallery_path.string();
  j["self_exclusion"] = self_exclusion;
  j["metrics"] = report_to_json(report);
  return j;
}

// ---------------------------------------------------------------------------
// compat-report

namespace detail {

struct CaseResult {
  std::string name;
  std::string query_part;
  std::string gallery_part;
  RetrievalReport report;
};

inline Json case_to_json(const CaseResult& c) {
  Json j;
  j["name"] = c.name;
  j["query_part"] = c.query_part;
  j["gallery_part"] = c.gallery_part;
  j.update(report_to_json(c.report));
  return j;
}

}  // namespace detail

/// Build the full compatibility report for one experiment: the Table-style
/// retrieval cases, the empirical compatibility criterion and the pairwise
/// compatibility fractions, per seed plus the seed mean.
inline Json run_compat_report(const ExperimentConfig& cfg, const std::string& config_path,
                              std::ostream& log) {
  const RunPaths paths(cfg.run.output_dir);
  const LossMode mode = cfg.train.mode;
  const bool expanded = is_expanded_mode(mode);

  // Everything that must exist before any artifact is written.
  std::vector<std::string> missing;
  auto require = [&](const std::filesystem::path& p, const std::string& remedy) {
    if (!std::filesystem::exists(p)) missing.push_back(p.string() + "  (run: " + remedy + ")");
  };
  require(paths.eval_file(), "oca gen-data --config " + config_path);
  for (const std::uint64_t seed : cfg.run.seeds) {
    require(paths.old_checkpoint(seed), "oca train --config " + config_path + " --role old");
    require(paths.new_checkpoint(seed, mode),
            "oca train --config " + config_path + " --role new --mode " + to_string(mode));
    if (mode != LossMode::independent) {
      require(paths.new_checkpoint(seed, LossMode::independent),
              "oca train --config " + config_path + " --role new --mode independent");
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing artifacts:";
    for (const std::string& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }

  const Dataset eval_data = load_dataset(paths.eval_file());
  const std::string cfg_hash = cfg.hash();
  const std::string mode_tag = "new_" + std::string(to_string(mode));

  Json aggregate;
  aggregate["kind"] = "oca-compat-aggregate";
  aggregate["config_hash"] = cfg_hash;
  aggregate["mode"] = to_string(mode);
  aggregate["query_convention"] = "query model left of '/', gallery model right";
  Json per_seed = Json::array();

  std::map<std::string, std::vector<double>> case_maps;
  std::map<std::string, std::vector<double>> case_cmcs;
  bool ecc_all = true;
  std::vector<double> def1_same, def1_diff;

  for (const std::uint64_t seed : cfg.run.seeds) {
    const ModelBundle old_bundle = load_checkpoint(paths.old_checkpoint(seed));
    const ModelBundle new_bundle = load_checkpoint(paths.new_checkpoint(seed, mode));
    const ModelBundle ind_bundle =
        mode == LossMode::independent ? new_bundle
                                      : load_checkpoint(paths.new_checkpoint(seed, LossMode::independent));

    const FeatureStore old_store = extract_features(old_bundle, eval_data, FeaturePart::bct);
    const FeatureStore new_bct = extract_features(new_bundle, eval_data, FeaturePart::bct);
    const FeatureStore new_full =
        expanded ? extract_features(new_bundle, eval_data, FeaturePart::full) : new_bct;
    const FeatureStore ind_store = extract_features(ind_bundle, eval_data, FeaturePart::bct);

    save_store(old_store, paths.store_file(seed, "old_eval"));
    save_store(new_bct, paths.store_file(seed, "new_bct_eval"));
    if (expanded) save_store(new_full, paths.store_file(seed, "new_full_eval"));
    save_store(ind_store, paths.store_file(seed, "independent_eval"));

    const bool excl = cfg.eval.self_exclusion;
    const std::vector<int>& ks = cfg.eval.cmc_k;
    std::vector<detail::CaseResult> cases;
    cases.push_back({"old/old", "bct", "bct",
                     evaluate_padded(old_store, old_store, "zero", excl, ks, "old", "old")});
    if (expanded) {
      cases.push_back({"new/old zero-pad", "full", "bct",
                       evaluate_padded(new_full, old_store, "zero", excl, ks, mode_tag, "old")});
      cases.push_back({"new/old truncate", "bct", "bct",
                       evaluate_padded(new_bct, old_store, "truncate", excl, ks, mode_tag, "old")});
      cases.push_back({"new/new", "full", "full",
                       evaluate_padded(new_full, new_full, "zero", excl, ks, mode_tag, mode_tag)});
    } else {
      cases.push_back({"new/old", "bct", "bct",
                       evaluate_padded(new_bct, old_store, "zero", excl, ks, mode_tag, "old")});
      cases.push_back({"new/new", "bct", "bct",
                       evaluate_padded(new_bct, new_bct, "zero", excl, ks, mode_tag, mode_tag)});
    }
    cases.push_back({"independent/old", "bct", "bct",
                     evaluate_padded(ind_store, old_store, "zero", excl, ks, "new_independent",
                                     "old")});
    cases.push_back({"independent/independent", "bct", "bct",
                     evaluate_padded(ind_store, ind_store, "zero", excl, ks, "new_independent",
                                     "new_independent")});

    const std::string cross_case = !expanded ? "new/old"
                                   : cfg.eval.padding == "zero" ? "new/old zero-pad"
                                                                : "new/old truncate";
    CompatReport compat;
    for (const auto& c : cases) {
      if (c.name == cross_case) compat.m_cross = c.report.map_at_1;
      if (c.name == "old/old") compat.m_self_old = c.report.map_at_1;
    }
    compat.ecc_holds = ecc_check(compat.m_cross, compat.m_self_old);
    const Def1Result def1 = def1_check(old_store, expanded ? new_full : new_bct,
                                       cfg.eval.def1_sample_cap, cfg.eval.def1_seed);
    compat.same_class_pairs_ok_fraction = def1.same_class_ok;
    compat.diff_class_pairs_ok_fraction = def1.diff_class_ok;
    compat.same_pairs = def1.same_pairs;
    compat.diff_pairs = def1.diff_pairs;
    compat.sampled = def1.sampled;

    ecc_all = ecc_all && compat.ecc_holds;
    def1_same.push_back(def1.same_class_ok);
    def1_diff.push_back(def1.diff_class_ok);

    Json seed_json;
    seed_json["kind"] = "oca-compat-report";
    seed_json["config_hash"] = cfg_hash;
    seed_json["seed"] = seed;
    Json case_array = Json::array();
    for (const auto& c : cases) {
      case_array.push_back(detail::case_to_json(c));
      case_maps[c.name].push_back(c.report.map_at_1);
      case_cmcs[c.name].push_back(c.report.cmc_1);
    }
    seed_json["cases"] = case_array;
    seed_json["ecc"] = Json{{"metric", "map_at_1"},
                            {"padding", expanded ? cfg.eval.padding : "none"},
                            {"m_cross", compat.m_cross},
                            {"m_self_old", compat.m_self_old},
                            {"holds", compat.ecc_holds}};
    seed_json["def1"] = Json{{"same_class_pairs_ok_fraction", compat.same_class_pairs_ok_fraction},
                             {"diff_class_pairs_ok_fraction", compat.diff_class_pairs_ok_fraction},
                             {"same_pairs", compat.same_pairs},
                             {"diff_pairs", compat.diff_pairs},
                             {"sampled", compat.sampled},
                             {"sample_cap", cfg.eval.def1_sample_cap}};
    write_file(paths.seed_report(seed), seed_json.dump(2) + "\n");
    per_seed.push_back(seed_json);

    log << "seed " << seed << ":";
    for (const auto& c : cases) {
      log << "  " << c.name << " mAP=" << c.report.map_at_1;
    }
    log << "  ecc=" << (compat.ecc_holds ? "holds" : "fails") << "\n";
  }

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };

  aggregate["seeds"] = cfg.run.seeds;
  aggregate["per_seed"] = per_seed;
  Json means;
  for (const auto& [name, maps] : case_maps) {
    means[name] = Json{{"map_at_1", mean(maps)}, {"cmc_1", mean(case_cmcs[name])}};
  }
  aggregate["mean"] = means;
  aggregate["ecc_holds_all_seeds"] = ecc_all;
  aggregate["def1_mean"] = Json{{"same_class_pairs_ok_fraction", mean(def1_same)},
                                {"diff_class_pairs_ok_fraction", mean(def1_diff)}};
  write_file(paths.aggregate_report(), aggregate.dump(2) + "\n");
  return aggregate;
}

}  // namespace oca

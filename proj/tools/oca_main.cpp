// Command-line driver for the compatible-representation toolkit: synthetic
// data generation, two-phase training, feature extraction, retrieval
// evaluation and the compatibility report.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oca/oca.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitParse = 3;
constexpr int kExitNumeric = 4;

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& tok : oca::split(csv, ',')) {
    const long long v = oca::parse_int(oca::trim(tok), "--seeds");
    if (v < 0) throw oca::ConfigError("--seeds entries must be non-negative");
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (seeds.empty()) throw oca::ConfigError("--seeds must not be empty");
  return seeds;
}

struct CommonOptions {
  std::string config_path;
  std::string seeds_override;
};

oca::ExperimentConfig load_config(const CommonOptions& opts) {
  oca::ExperimentConfig cfg = oca::ExperimentConfig::from_file(opts.config_path);
  if (!opts.seeds_override.empty()) {
    cfg.run.seeds = parse_seed_list(opts.seeds_override);
    cfg.validate();
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compatible-representation training and retrieval evaluation toolkit"};
  app.require_subcommand(1);

  // gen-data
  CommonOptions gen_opts;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic train/eval datasets");
  gen->add_option("--config", gen_opts.config_path, "Experiment config file")->required();

  // train
  CommonOptions train_opts;
  std::string role;
  std::string mode_override;
  CLI::App* train = app.add_subcommand("train", "Train the old or the new model for every seed");
  train->add_option("--config", train_opts.config_path, "Experiment config file")->required();
  train->add_option("--role", role, "Which model to train: old or new")->required();
  train->add_option("--mode", mode_override,
                    "Training objective for role=new (overrides the config): independent, bct, "
                    "oca, oca_no_ortho, oca_no_cos, oca_no_ortho_no_cos");
  train->add_option("--seeds", train_opts.seeds_override, "Comma-separated seed list override");

  // extract
  std::string ckpt_path, data_path, part_name = "full", out_path;
  CLI::App* extract = app.add_subcommand("extract", "Embed a dataset into a feature store");
  extract->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  extract->add_option("--data", data_path, "Dataset file")->required();
  extract->add_option("--part", part_name, "Feature slice: full or bct");
  extract->add_option("--out", out_path, "Output feature store path")->required();

  // eval
  std::string query_path, gallery_path, pad_mode = "zero", report_path;
  bool no_self_exclusion = false;
  std::string cmc_list = "1,5";
  CLI::App* eval_cmd = app.add_subcommand("eval", "Retrieval metrics for a query/gallery pair");
  eval_cmd->add_option("--query", query_path, "Query feature store")->required();
  eval_cmd->add_option("--gallery", gallery_path, "Gallery feature store")->required();
  eval_cmd->add_option("--pad", pad_mode, "Dim-mismatch rule: zero or truncate");
  eval_cmd->add_flag("--no-self-exclusion", no_self_exclusion,
                     "Keep same-id gallery items in each query's ranking");
  eval_cmd->add_option("--cmc-k", cmc_list, "Comma-separated CMC ranks");
  eval_cmd->add_option("--out", report_path, "Report JSON path")->required();

  // compat-report
  CommonOptions compat_opts;
  CLI::App* compat = app.add_subcommand("compat-report",
                                        "Full compatibility report over all configured seeds");
  compat->add_option("--config", compat_opts.config_path, "Experiment config file")->required();
  compat->add_option("--seeds", compat_opts.seeds_override, "Comma-separated seed list override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const oca::ExperimentConfig cfg = load_config(gen_opts);
      const oca::GenDataResult r = oca::run_gen_data(cfg);
      std::cout << "wrote " << r.train_path.string() << " checksum=" << r.train_checksum << "\n";
      std::cout << "wrote " << r.eval_path.string() << " checksum=" << r.eval_checksum << "\n";
    } else if (train->parsed()) {
      oca::ExperimentConfig cfg = load_config(train_opts);
      if (!mode_override.empty()) {
        cfg.train.mode = oca::parse_loss_mode(mode_override);
        cfg.validate();
      }
      oca::run_train(cfg, role, train_opts.config_path, std::cout);
    } else if (extract->parsed()) {
      oca::run_extract(ckpt_path, data_path, oca::parse_feature_part(part_name), out_path);
      std::cout << "wrote " << out_path << " checksum=" << oca::file_checksum(out_path) << "\n";
    } else if (eval_cmd->parsed()) {
      std::vector<int> ks;
      for (const std::string& tok : oca::split(cmc_list, ',')) {
        ks.push_back(static_cast<int>(oca::parse_int(oca::trim(tok), "--cmc-k")));
      }
      const oca::Json report =
          oca::run_eval(query_path, gallery_path, pad_mode, !no_self_exclusion, ks);
      oca::write_file(report_path, report.dump(2) + "\n");
      const auto& metrics = report.at("metrics");
      std::cout << "mAP@1.0 = " << metrics.at("map_at_1").get<double>()
                << "  CMC-1 = " << metrics.at("cmc_1").get<double>() << "\n";
      std::cout << "wrote " << report_path << "\n";
    } else if (compat->parsed()) {
      const oca::ExperimentConfig cfg = load_config(compat_opts);
      const oca::Json aggregate = oca::run_compat_report(cfg, compat_opts.config_path, std::cout);
      std::cout << "mean over seeds:\n";
      for (const auto& [name, vals] : aggregate.at("mean").items()) {
        std::cout << "  " << name << "  mAP@1.0=" << vals.at("map_at_1").get<double>()
                  << "  CMC-1=" << vals.at("cmc_1").get<double>() << "\n";
      }
      std::cout << "ECC holds on all seeds: "
                << (aggregate.at("ecc_holds_all_seeds").get<bool>() ? "yes" : "no") << "\n";
      std::cout << "wrote " << oca::RunPaths(cfg.run.output_dir).aggregate_report().string()
                << "\n";
    }
  } catch (const oca::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const oca::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const oca::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const oca::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const oca::StructuralError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

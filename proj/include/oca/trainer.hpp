#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oca/adam.hpp"
#include "oca/backbone.hpp"
#include "oca/dataset.hpp"
#include "oca/errors.hpp"
#include "oca/feature_store.hpp"
#include "oca/losses.hpp"
#include "oca/matrix.hpp"
#include "oca/ortho.hpp"
#include "oca/prototypes.hpp"
#include "oca/text_io.hpp"

namespace oca {

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t d_old = 16;
  std::size_t d_extra = 4;
  double lambda1 = 10.0;
  double lambda2 = 5.0;
  double lambda_bct = 1.0;
  LossMode mode = LossMode::oca;
  std::vector<std::size_t> hidden_dims = {64, 64};
  double skew_init = 0.01;
  bool warm_start = false;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (d_old < 1) throw ConfigError("train.d_old must be >= 1");
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda_bct < 0.0) {
      throw ConfigError("train lambda weights must be >= 0");
    }
    if (is_expanded_mode(mode) && d_extra == 0) {
      throw ConfigError("train.d_extra must be >= 1 for mode " + std::string(to_string(mode)));
    }
    if (!(skew_init >= 0.0)) throw ConfigError("train.skew_init must be >= 0");
    for (std::size_t h : hidden_dims) {
      if (h == 0) throw ConfigError("train.hidden_dims entries must be positive");
    }
  }

  std::size_t embedding_dim() const { return is_expanded_mode(mode) ? d_old + d_extra : d_old; }
};

/// A trained model plus everything needed to reproduce and evaluate it.
/// The ortho layer is present only for the modes that train one; inference
/// never applies it.
struct ModelBundle {
  Backbone backbone;
  std::optional<OrthoLayer> ortho;
  Classifier classifier;
  TrainConfig config;
  std::vector<LossBreakdown> history;  // per-epoch mean losses
};

struct GradSet {
  BackboneGrads backbone;
  Matrix classifier;
  std::vector<double> skew;  // empty for modes without the ortho layer
  LossBreakdown breakdown;
};

/// One reverse-mode pass for the configured objective: gradients for the
/// backbone, the trainable classifier and (when present) the skew
/// parameters of the ortho layer. Frozen prototypes receive no gradient.
inline GradSet full_backward(const Backbone& net, const ForwardCache& cache, const Matrix& h,
                             const OrthoLayer* ortho, const Classifier& classifier,
                             const Prototypes* protos, std::span<const std::int32_t> labels,
                             const LossSpec& spec) {
  GradSet out;
  Matrix h_grad;
  switch (spec.mode) {
    case LossMode::independent: {
      CeResult ce = ce_learnable(h, labels, classifier);
      out.breakdown.ce_new = ce.value;
      out.breakdown.total = ce.value;
      out.classifier = std::move(ce.grad_w);
      h_grad = std::move(ce.grad_h);
      break;
    }
    case LossMode::bct: {
      if (!protos) throw StructuralError("full_backward: bct mode requires prototypes");
      BctResult r = bct_loss(h, labels, classifier, *protos, spec.lambda_bct);
      out.breakdown = r.breakdown;
      out.classifier = std::move(r.grad_classifier);
      h_grad = std::move(r.grad_h);
      break;
    }
    default: {
      if (!protos) throw StructuralError("full_backward: oca modes require prototypes");
      OcaTotalResult r = oca_total(h, ortho, labels, classifier, *protos, spec);
      out.breakdown = r.breakdown;
      out.classifier = std::move(r.grad_classifier);
      out.skew = std::move(r.grad_skew);
      h_grad = std::move(r.grad_h_new);
      break;
    }
  }
  out.backbone = backbone_backward(net, cache, h_grad);
  return out;
}

namespace detail {

/// Independent deterministic RNG stream per (seed, role, mode). Keeping the
/// streams apart matters: with a shared stream the Independent baseline
/// would start from the same weights as the old model and inherit aligned
/// features instead of being a genuine from-scratch run.
inline std::uint64_t run_stream_seed(std::uint64_t seed, const std::string& role, LossMode mode) {
  std::string tag = "role=" + role + "|mode=" + to_string(mode);
  std::uint64_t h = fnv1a64(tag);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline Matrix gather_batch(const Dataset& data, std::span<const std::size_t> idx) {
  Matrix batch(idx.size(), data.input_dim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Sample& s = data.samples[idx[r]];
    std::copy(s.x.begin(), s.x.end(), batch.data() + r * data.input_dim);
  }
  return batch;
}

struct OptimizerStates {
  std::vector<AdamState> weights;
  std::vector<AdamState> biases;
  AdamState classifier;
  AdamState skew;
};

}  // namespace detail

/// Core single-threaded training loop shared by every mode. Mini-batch
/// order comes from the seeded shuffler only; the last partial batch is
/// kept.
inline ModelBundle train_model(const TrainConfig& config, const Dataset& data,
                               const Prototypes* protos, const std::string& role,
                               const Backbone* warm_from = nullptr) {
  config.validate();
  data.validate();
  if (config.mode != LossMode::independent) {
    if (!protos) throw StructuralError("train_model: mode requires prototypes");
    protos->validate();
    if (protos->classes != data.num_classes) {
      throw StructuralError("train_model: prototypes cover " + std::to_string(protos->classes) +
                            " classes, dataset has " + std::to_string(data.num_classes));
    }
    if (protos->dim != config.d_old) {
      throw StructuralError("train_model: prototype dim does not match d_old");
    }
  }

  std::mt19937_64 master(detail::run_stream_seed(config.seed, role, config.mode));
  const std::uint64_t backbone_seed = master();
  const std::uint64_t classifier_seed = master();
  const std::uint64_t skew_seed = master();
  std::mt19937_64 shuffler(master());

  std::vector<std::size_t> layer_dims;
  layer_dims.push_back(data.input_dim);
  layer_dims.insert(layer_dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  layer_dims.push_back(config.embedding_dim());

  ModelBundle bundle;
  bundle.config = config;
  bundle.backbone = init_backbone(layer_dims, backbone_seed);
  if (warm_from != nullptr && config.warm_start) {
    // Copy every layer that exists in both nets; rows of the last layer
    // beyond the old embedding dim stay freshly initialized.
    for (std::size_t l = 0; l < bundle.backbone.num_layers() && l < warm_from->num_layers(); ++l) {
      Matrix& dst = bundle.backbone.weights[l];
      const Matrix& src = warm_from->weights[l];
      if (dst.cols() != src.cols()) break;
      for (std::size_t i = 0; i < std::min(dst.rows(), src.rows()); ++i) {
        for (std::size_t j = 0; j < dst.cols(); ++j) dst(i, j) = src(i, j);
      }
      auto& db = bundle.backbone.biases[l];
      const auto& sb = warm_from->biases[l];
      for (std::size_t i = 0; i < std::min(db.size(), sb.size()); ++i) db[i] = sb[i];
    }
  }
  bundle.classifier = init_classifier(static_cast<std::size_t>(data.num_classes),
                                      config.embedding_dim(), classifier_seed);
  if (uses_ortho_layer(config.mode)) {
    bundle.ortho = OrthoLayer::init(config.embedding_dim(), config.skew_init, skew_seed);
  }

  LossSpec spec;
  spec.mode = config.mode;
  spec.lambda1 = config.lambda1;
  spec.lambda2 = config.lambda2;
  spec.lambda_bct = config.lambda_bct;

  AdamConfig adam{config.lr, config.beta1, config.beta2, config.eps};
  detail::OptimizerStates opt;
  opt.weights.resize(bundle.backbone.num_layers());
  opt.biases.resize(bundle.backbone.num_layers());

  std::vector<std::size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::int32_t> labels;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffler);
    LossBreakdown epoch_loss;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      Matrix batch = detail::gather_batch(data, idx);
      labels.clear();
      for (std::size_t i : idx) labels.push_back(data.samples[i].label);

      ForwardCache cache;
      Matrix h = forward(bundle.backbone, batch, &cache);
      GradSet grads = full_backward(bundle.backbone, cache, h,
                                    bundle.ortho ? &*bundle.ortho : nullptr, bundle.classifier,
                                    protos, labels, spec);

      for (std::size_t l = 0; l < bundle.backbone.num_layers(); ++l) {
        adam_step(bundle.backbone.weights[l].flat(), grads.backbone.weights[l].flat(),
                  opt.weights[l], adam);
        adam_step(bundle.backbone.biases[l], grads.backbone.biases[l], opt.biases[l], adam);
      }
      bundle.backbone.revision += 1;
      adam_step(bundle.classifier.weight.flat(), grads.classifier.flat(), opt.classifier, adam);
      if (bundle.ortho) {
        adam_step(bundle.ortho->params.values, grads.skew, opt.skew, adam);
        bundle.ortho->refresh();
      }

      const double w = static_cast<double>(idx.size()) / static_cast<double>(order.size());
      epoch_loss.total += w * grads.breakdown.total;
      epoch_loss.ce_new += w * grads.breakdown.ce_new;
      epoch_loss.ce_proto += w * grads.breakdown.ce_proto;
      epoch_loss.cos_align += w * grads.breakdown.cos_align;
    }
    bundle.history.push_back(epoch_loss);
  }
  return bundle;
}

/// Phase one: the old model, plain cross-entropy on the old classes.
inline ModelBundle train_old(const TrainConfig& config, const Dataset& old_data) {
  TrainConfig cfg = config;
  cfg.mode = LossMode::independent;
  cfg.d_extra = 0;
  return train_model(cfg, old_data, nullptr, "old");
}

/// Phase two: the new model under the configured objective.
inline ModelBundle train_new(const TrainConfig& config, const Dataset& new_data,
                             const Prototypes* protos, const Backbone* warm_from = nullptr) {
  TrainConfig cfg = config;
  if (!is_expanded_mode(cfg.mode)) cfg.d_extra = 0;
  return train_model(cfg, new_data, cfg.mode == LossMode::independent ? nullptr : protos, "new",
                     warm_from);
}

enum class FeaturePart { full, bct };

inline FeaturePart parse_feature_part(const std::string& s) {
  if (s == "full") return FeaturePart::full;
  if (s == "bct") return FeaturePart::bct;
  throw ConfigError("unknown feature part '" + s + "' (expected full or bct)");
}

/// Embed a dataset with the trained backbone. part=bct keeps the first
/// d_old coordinates, part=full keeps everything. The ortho layer and the
/// classifier are never applied here.
inline FeatureStore extract_features(const ModelBundle& bundle, const Dataset& data,
                                     FeaturePart part) {
  data.validate();
  const std::size_t d_emb = bundle.backbone.embedding_dim();
  const std::size_t d_old = bundle.config.d_old;
  if (d_emb < d_old) throw StructuralError("extract_features: model narrower than d_old");
  if (part == FeaturePart::full && d_emb == d_old) {
    throw StructuralError("extract_features: part=full on a d_old-only model");
  }
  const std::size_t out_dim = part == FeaturePart::full ? d_emb : d_old;

  FeatureStore store;
  store.dim = out_dim;
  store.records.reserve(data.samples.size());
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.samples.size(); start += kChunk) {
    const std::size_t stop = std::min(data.samples.size(), start + kChunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix batch = detail::gather_batch(data, idx);
    const Matrix h = forward(bundle.backbone, batch);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const Sample& s = data.samples[idx[r]];
      FeatureRecord rec;
      rec.id = s.id;
      rec.label = s.label;
      rec.values.assign(h.data() + r * d_emb, h.data() + r * d_emb + out_dim);
      store.records.push_back(std::move(rec));
    }
  }
  return store;
}

/// Prototypes are means of old-model features over the *new* training set,
/// so every class of the update scenario gets a row, including classes the
/// old model never trained on.
inline Prototypes compute_prototypes(const ModelBundle& old_model, const Dataset& new_data) {
  new_data.validate();
  const FeatureStore feats = extract_features(old_model, new_data, FeaturePart::bct);
  Prototypes p;
  p.classes = new_data.num_classes;
  p.dim = feats.dim;
  p.vectors = Matrix(static_cast<std::size_t>(p.classes), p.dim);
  p.counts.assign(static_cast<std::size_t>(p.classes), 0);
  for (const FeatureRecord& r : feats.records) {
    const auto y = static_cast<std::size_t>(r.label);
    p.counts[y] += 1;
    for (std::size_t d = 0; d < p.dim; ++d) p.vectors(y, d) += r.values[d];
  }
  for (std::size_t y = 0; y < static_cast<std::size_t>(p.classes); ++y) {
    if (p.counts[y] == 0) {
      throw StructuralError("compute_prototypes: class " + std::to_string(y) + " has no samples");
    }
    const double inv = 1.0 / static_cast<double>(p.counts[y]);
    for (std::size_t d = 0; d < p.dim; ++d) p.vectors(y, d) *= inv;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoint file format (structured text): metadata, then one block per
// parameter tensor as "tensor <name> <rows> <cols>" followed by one line of
// space-separated decimal values per row. Decimals carry 17 significant
// digits, so loading reproduces forward outputs bit-exactly.

inline void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  std::string out = "oca-checkpoint v1\n";
  out += "layer_dims = ";
  for (std::size_t i = 0; i < bundle.backbone.layer_dims.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(bundle.backbone.layer_dims[i]);
  }
  out += '\n';
  out += "d_old = " + std::to_string(bundle.config.d_old) + "\n";
  out += "d_extra = " + std::to_string(bundle.config.d_extra) + "\n";
  out += "seed = " + std::to_string(bundle.config.seed) + "\n";
  out += "mode = " + std::string(to_string(bundle.config.mode)) + "\n";

  const std::size_t layers = bundle.backbone.num_layers();
  const std::size_t tensors = 2 * layers + 1 + (bundle.ortho ? 1 : 0);
  out += "tensors = " + std::to_string(tensors) + "\n";

  auto emit_matrix = [&out](const std::string& name, const Matrix& m) {
    out += "tensor " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        if (j) out += ' ';
        out += format_double(m(i, j));
      }
      out += '\n';
    }
  };
  auto emit_vector = [&out](const std::string& name, std::span<const double> v) {
    out += "tensor " + name + " 1 " + std::to_string(v.size()) + "\n";
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (j) out += ' ';
      out += format_double(v[j]);
    }
    out += '\n';
  };

  for (std::size_t l = 0; l < layers; ++l) {
    emit_matrix("backbone.weight." + std::to_string(l), bundle.backbone.weights[l]);
    emit_vector("backbone.bias." + std::to_string(l), bundle.backbone.biases[l]);
  }
  emit_matrix("classifier.weight", bundle.classifier.weight);
  if (bundle.ortho) emit_vector("ortho.skew", bundle.ortho->params.values);
  write_file(path, out);
}

inline ModelBundle load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::vector<std::string> lines = split(text, '\n');
  const std::string where = path.string();
  auto line_at = [&](std::size_t i) -> const std::string& {
    if (i >= lines.size()) throw ParseError(where + ": truncated at line " + std::to_string(i + 1));
    return lines[i];
  };
  auto header_value = [&](std::size_t i, const std::string& key) {
    const std::string prefix = key + " = ";
    if (line_at(i).rfind(prefix, 0) != 0) {
      throw ParseError(where + ": line " + std::to_string(i + 1) + ": expected '" + key + "'");
    }
    return trim(line_at(i).substr(prefix.size()));
  };
  if (trim(line_at(0)) != "oca-checkpoint v1") {
    throw ParseError(where + ": unsupported checkpoint version");
  }

  ModelBundle bundle;
  std::vector<std::size_t> layer_dims;
  for (const std::string& tok : split(header_value(1, "layer_dims"), ',')) {
    layer_dims.push_back(static_cast<std::size_t>(parse_int(trim(tok), where)));
  }
  bundle.config.d_old = static_cast<std::size_t>(parse_int(header_value(2, "d_old"), where));
  bundle.config.d_extra = static_cast<std::size_t>(parse_int(header_value(3, "d_extra"), where));
  bundle.config.seed = static_cast<std::uint64_t>(parse_int(header_value(4, "seed"), where));
  try {
    bundle.config.mode = parse_loss_mode(header_value(5, "mode"));
  } catch (const ConfigError& e) {
    throw ParseError(where + ": " + e.what());
  }
  const std::size_t tensors = static_cast<std::size_t>(parse_int(header_value(6, "tensors"), where));
  if (layer_dims.size() < 2) throw ParseError(where + ": bad layer_dims");

  std::size_t line_no = 7;
  auto read_tensor = [&](const std::string& expected_name, std::size_t rows, std::size_t cols,
                         double* dst) {
    const std::string header = line_at(line_no++);
    const std::string expected = "tensor " + expected_name + " " + std::to_string(rows) + " " +
                                 std::to_string(cols);
    if (trim(header) != expected) {
      throw ParseError(where + ": line " + std::to_string(line_no) + ": expected '" + expected +
                       "', got '" + trim(header) + "'");
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const std::string& row = line_at(line_no++);
      const std::string ctx = where + ": line " + std::to_string(line_no);
      std::vector<std::string> toks = split(row, ' ');
      if (toks.size() != cols) throw ParseError(ctx + ": wrong value count");
      for (std::size_t j = 0; j < cols; ++j) dst[i * cols + j] = parse_double(toks[j], ctx);
    }
  };

  bundle.backbone.layer_dims = layer_dims;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    Matrix w(layer_dims[l + 1], layer_dims[l]);
    read_tensor("backbone.weight." + std::to_string(l), w.rows(), w.cols(), w.data());
    bundle.backbone.weights.push_back(std::move(w));
    std::vector<double> b(layer_dims[l + 1]);
    read_tensor("backbone.bias." + std::to_string(l), 1, b.size(), b.data());
    bundle.backbone.biases.push_back(std::move(b));
  }

  const std::size_t d_emb = layer_dims.back();
  const std::size_t expected_tensors =
      2 * (layer_dims.size() - 1) + 1 + (uses_ortho_layer(bundle.config.mode) ? 1 : 0);
  if (tensors != expected_tensors) {
    throw ParseError(where + ": tensor count " + std::to_string(tensors) + " does not match mode");
  }
  // The classifier row count is recoverable from the remaining layout.
  std::size_t remaining_rows = 0;
  {
    const std::string header = trim(line_at(line_no));
    const std::vector<std::string> toks = split(header, ' ');
    if (toks.size() != 4 || toks[0] != "tensor" || toks[1] != "classifier.weight") {
      throw ParseError(where + ": line " + std::to_string(line_no + 1) +
                       ": expected classifier.weight tensor");
    }
    remaining_rows = static_cast<std::size_t>(parse_int(toks[2], where));
  }
  bundle.classifier.weight = Matrix(remaining_rows, d_emb);
  read_tensor("classifier.weight", remaining_rows, d_emb, bundle.classifier.weight.data());

  if (uses_ortho_layer(bundle.config.mode)) {
    OrthoLayer layer;
    layer.params.dim = d_emb;
    layer.params.values.resize(SkewParams::packed_size(d_emb));
    read_tensor("ortho.skew", 1, layer.params.values.size(), layer.params.values.data());
    layer.refresh();
    bundle.ortho = std::move(layer);
  }
  while (line_no < lines.size()) {
    if (!trim(lines[line_no]).empty()) {
      throw ParseError(where + ": trailing content at line " + std::to_string(line_no + 1));
    }
    ++line_no;
  }
  return bundle;
}

/// One plain-text line per finished run: id, config hash, seed, final
/// losses. Appending keeps a growing log across runs of an experiment.
inline void append_manifest(const std::filesystem::path& path, const std::string& run_id,
                            const std::string& config_hash, std::uint64_t seed,
                            const LossBreakdown& final_loss) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw ParseError("cannot open manifest for append: " + path.string());
  out << "run=" << run_id << " cfg=" << config_hash << " seed=" << seed
      << " total=" << format_double(final_loss.total) << " ce_new=" << format_double(final_loss.ce_new)
      << " ce_proto=" << format_double(final_loss.ce_proto)
      << " cos_align=" << format_double(final_loss.cos_align) << "\n";
}

}  // namespace oca

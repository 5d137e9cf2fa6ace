#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "oca/dataset.hpp"
#include "oca/trainer.hpp"
#include "test_util.hpp"

using namespace oca;

namespace {

std::filesystem::path scratch_dir() {
  const auto dir = std::filesystem::path("test_scratch") / "trainer";
  std::filesystem::create_directories(dir);
  return dir;
}

TrainConfig tiny_config(LossMode mode) {
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.d_old = 6;
  cfg.d_extra = 2;
  cfg.mode = mode;
  cfg.hidden_dims = {12};
  return cfg;
}

Dataset small_data(std::int32_t classes, std::uint64_t seed, std::size_t per_class = 12) {
  auto [train, eval] = gen_synthetic(classes, per_class, 4, 8, 1.0, 0.25, seed);
  return train;
}

double train_accuracy(const ModelBundle& bundle, const Dataset& data) {
  std::size_t hits = 0;
  for (const Sample& s : data.samples) {
    Matrix x(1, data.input_dim);
    for (std::size_t j = 0; j < data.input_dim; ++j) x(0, j) = s.x[j];
    const Matrix h = forward(bundle.backbone, x);
    const Matrix logits = matmul_nt(h, bundle.classifier.weight);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits(0, c) > logits(0, best)) best = c;
    }
    if (static_cast<std::int32_t>(best) == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.samples.size());
}

}  // namespace

TEST_CASE("train_old") {
  Dataset data = small_data(4, 50);
  TrainConfig cfg = tiny_config(LossMode::independent);
  SECTION("deterministic: identical checkpoints across reruns") {
    ModelBundle a = train_old(cfg, data);
    ModelBundle b = train_old(cfg, data);
    const auto pa = scratch_dir() / "old_a.ckpt";
    const auto pb = scratch_dir() / "old_b.ckpt";
    save_checkpoint(a, pa);
    save_checkpoint(b, pb);
    REQUIRE(read_file(pa) == read_file(pb));
  }
  SECTION("separable two-class problem trains to high accuracy") {
    auto [train, eval] = gen_synthetic(2, 60, 5, 8, 2.0, 0.1, 77);
    TrainConfig c2 = tiny_config(LossMode::independent);
    c2.epochs = 50;
    ModelBundle bundle = train_old(c2, train);
    REQUIRE(train_accuracy(bundle, train) >= 0.99);
  }
  SECTION("loss history is finite and decreases overall") {
    ModelBundle bundle = train_old(cfg, data);
    REQUIRE(bundle.history.size() == cfg.epochs);
    for (const LossBreakdown& l : bundle.history) REQUIRE(std::isfinite(l.total));
    REQUIRE(bundle.history.back().total < bundle.history.front().total);
  }
  SECTION("empty dataset is a structural error") {
    Dataset empty;
    empty.input_dim = 8;
    empty.num_classes = 2;
    REQUIRE_THROWS_AS(train_old(cfg, empty), StructuralError);
  }
}

TEST_CASE("compute_prototypes") {
  Dataset data = small_data(3, 51);
  TrainConfig cfg = tiny_config(LossMode::independent);
  cfg.epochs = 2;
  ModelBundle old_model = train_old(cfg, restrict_classes(data, 2));
  SECTION("rows are per-class means over the new dataset") {
    Prototypes p = compute_prototypes(old_model, data);
    REQUIRE(p.classes == 3);
    REQUIRE(p.dim == cfg.d_old);
    FeatureStore feats = extract_features(old_model, data, FeaturePart::bct);
    for (std::int32_t y = 0; y < 3; ++y) {
      std::vector<double> mean(p.dim, 0.0);
      std::size_t count = 0;
      for (const FeatureRecord& r : feats.records) {
        if (r.label != y) continue;
        ++count;
        for (std::size_t d = 0; d < p.dim; ++d) mean[d] += r.values[d];
      }
      for (std::size_t d = 0; d < p.dim; ++d) {
        REQUIRE(p.vectors(static_cast<std::size_t>(y), d) ==
                Catch::Approx(mean[d] / count).margin(1e-15));
      }
      REQUIRE(p.counts[static_cast<std::size_t>(y)] == static_cast<std::int64_t>(count));
    }
  }
  SECTION("single sample per class yields that sample's feature") {
    auto [train, eval] = gen_synthetic(3, 1, 1, 8, 1.0, 0.3, 52);
    Prototypes p = compute_prototypes(old_model, train);
    FeatureStore feats = extract_features(old_model, train, FeaturePart::bct);
    for (const FeatureRecord& r : feats.records) {
      for (std::size_t d = 0; d < p.dim; ++d) {
        REQUIRE(p.vectors(static_cast<std::size_t>(r.label), d) == r.values[d]);
      }
    }
  }
  SECTION("duplicating every sample leaves prototypes unchanged") {
    Dataset doubled = data;
    std::int64_t next_id = 1000000;
    for (const Sample& s : data.samples) {
      Sample copy = s;
      copy.id = next_id++;
      doubled.samples.push_back(copy);
    }
    Prototypes p1 = compute_prototypes(old_model, data);
    Prototypes p2 = compute_prototypes(old_model, doubled);
    REQUIRE(max_abs_diff(p1.vectors, p2.vectors) <= 1e-12);
  }
  SECTION("hand-checked mean of two unit features") {
    Prototypes p;
    p.classes = 1;
    p.dim = 2;
    p.vectors = Matrix(1, 2);
    p.counts = {2};
    // mean of [1,0] and [0,1]
    p.vectors(0, 0) = (1.0 + 0.0) / 2.0;
    p.vectors(0, 1) = (0.0 + 1.0) / 2.0;
    REQUIRE(p.vectors(0, 0) == 0.5);
    REQUIRE(p.vectors(0, 1) == 0.5);
  }
}

TEST_CASE("train_new modes") {
  Dataset data = small_data(4, 53);
  TrainConfig cfg = tiny_config(LossMode::independent);
  cfg.epochs = 3;
  ModelBundle old_model = train_old(cfg, restrict_classes(data, 2));
  Prototypes protos = compute_prototypes(old_model, data);

  SECTION("oca with d_extra=0 is rejected before training") {
    TrainConfig bad = tiny_config(LossMode::oca);
    bad.d_extra = 0;
    REQUIRE_THROWS_AS(train_new(bad, data, &protos), ConfigError);
  }
  SECTION("oca bundle carries an ortho layer within tolerance") {
    ModelBundle bundle = train_new(tiny_config(LossMode::oca), data, &protos);
    REQUIRE(bundle.ortho.has_value());
    REQUIRE(orthogonality_defect(bundle.ortho->q) <= OrthoLayer::kDefectTolerance);
    REQUIRE(bundle.backbone.embedding_dim() == 8);
  }
  SECTION("no_ortho ablations do not carry the layer") {
    REQUIRE_FALSE(train_new(tiny_config(LossMode::oca_no_ortho), data, &protos).ortho.has_value());
    REQUIRE_FALSE(
        train_new(tiny_config(LossMode::oca_no_ortho_no_cos), data, &protos).ortho.has_value());
    REQUIRE(train_new(tiny_config(LossMode::oca_no_cos), data, &protos).ortho.has_value());
  }
  SECTION("independent/bct stay at d_old") {
    ModelBundle ind = train_new(tiny_config(LossMode::independent), data, nullptr);
    REQUIRE(ind.backbone.embedding_dim() == 6);
    ModelBundle bct = train_new(tiny_config(LossMode::bct), data, &protos);
    REQUIRE(bct.backbone.embedding_dim() == 6);
  }
  SECTION("bct without prototypes is a structural error") {
    REQUIRE_THROWS_AS(train_new(tiny_config(LossMode::bct), data, nullptr), StructuralError);
  }
  SECTION("epoch-level determinism across reruns") {
    ModelBundle a = train_new(tiny_config(LossMode::oca), data, &protos);
    ModelBundle b = train_new(tiny_config(LossMode::oca), data, &protos);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
      REQUIRE(a.history[e].total == b.history[e].total);
    }
  }
}

TEST_CASE("full gradient check per loss configuration") {
  // Tiny net, well under 200 parameters: dims [5, 8, 6], d_old 4, d_extra 2.
  auto [data, eval] = gen_synthetic(3, 4, 1, 5, 1.0, 0.4, 54);
  const std::size_t d_old = 4, d_new = 6;
  Matrix batch(4, 5);
  std::vector<std::int32_t> labels;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) batch(i, j) = data.samples[i * 2].x[j];
    labels.push_back(data.samples[i * 2].label);
  }
  Prototypes protos;
  protos.classes = 3;
  protos.dim = d_old;
  protos.vectors = testutil::random_matrix(3, d_old, 60);
  protos.counts = {1, 1, 1};

  const std::vector<LossMode> modes = {LossMode::independent,     LossMode::bct,
                                       LossMode::oca,             LossMode::oca_no_ortho,
                                       LossMode::oca_no_cos,      LossMode::oca_no_ortho_no_cos};
  for (LossMode mode : modes) {
    CAPTURE(to_string(mode));
    const bool expanded = is_expanded_mode(mode);
    const std::size_t d_emb = expanded ? d_new : d_old;
    Backbone net = init_backbone({5, 8, d_emb}, 61);
    Classifier w = init_classifier(3, d_emb, 62);
    OrthoLayer ortho = OrthoLayer::init(d_new, 0.05, 63);
    LossSpec spec;
    spec.mode = mode;
    spec.lambda1 = 10.0;
    spec.lambda2 = 5.0;
    spec.lambda_bct = 0.8;
    const OrthoLayer* ortho_ptr = uses_ortho_layer(mode) ? &ortho : nullptr;
    const Prototypes* protos_ptr = mode == LossMode::independent ? nullptr : &protos;

    auto loss_of = [&](const Backbone& b, const Classifier& c, const OrthoLayer* o) {
      ForwardCache cache;
      Matrix h = forward(b, batch, &cache);
      return full_backward(b, cache, h, o, c, protos_ptr, labels, spec).breakdown.total;
    };

    ForwardCache cache;
    Matrix h = forward(net, batch, &cache);
    GradSet grads = full_backward(net, cache, h, ortho_ptr, w, protos_ptr, labels, spec);

    double max_fd = 0.0, max_diff = 0.0;
    const double step = 1e-5;
    auto probe = [&](double* slot, double analytic) {
      const double saved = *slot;
      *slot = saved + step;
      const double lp = loss_of(net, w, ortho_ptr);
      *slot = saved - step;
      const double lm = loss_of(net, w, ortho_ptr);
      *slot = saved;
      const double fd = (lp - lm) / (2.0 * step);
      max_fd = std::max(max_fd, std::abs(fd));
      max_diff = std::max(max_diff, std::abs(analytic - fd));
    };

    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      for (std::size_t k = 0; k < net.weights[l].size(); ++k) {
        probe(&net.weights[l].flat()[k], grads.backbone.weights[l].flat()[k]);
      }
      for (std::size_t k = 0; k < net.biases[l].size(); ++k) {
        probe(&net.biases[l][k], grads.backbone.biases[l][k]);
      }
    }
    for (std::size_t k = 0; k < w.weight.size(); ++k) {
      probe(&w.weight.flat()[k], grads.classifier.flat()[k]);
    }
    if (uses_ortho_layer(mode)) {
      REQUIRE_FALSE(grads.skew.empty());
      for (std::size_t k = 0; k < ortho.params.values.size(); ++k) {
        const double saved = ortho.params.values[k];
        ortho.params.values[k] = saved + step;
        ortho.refresh();
        const double lp = loss_of(net, w, &ortho);
        ortho.params.values[k] = saved - step;
        ortho.refresh();
        const double lm = loss_of(net, w, &ortho);
        ortho.params.values[k] = saved;
        ortho.refresh();
        const double fd = (lp - lm) / (2.0 * step);
        max_fd = std::max(max_fd, std::abs(fd));
        max_diff = std::max(max_diff, std::abs(grads.skew[k] - fd));
      }
    }
    REQUIRE(max_fd > 0.0);
    REQUIRE(max_diff / max_fd <= 1e-4);
  }
}

TEST_CASE("extract_features") {
  Dataset data = small_data(4, 55);
  TrainConfig cfg = tiny_config(LossMode::oca);
  cfg.epochs = 2;
  ModelBundle old_model = train_old(cfg, restrict_classes(data, 2));
  Prototypes protos = compute_prototypes(old_model, data);
  ModelBundle bundle = train_new(cfg, data, &protos);

  SECTION("full then slicing the first d_old columns equals bct") {
    FeatureStore full = extract_features(bundle, data, FeaturePart::full);
    FeatureStore bct = extract_features(bundle, data, FeaturePart::bct);
    REQUIRE(full.dim == 8);
    REQUIRE(bct.dim == 6);
    for (std::size_t i = 0; i < full.records.size(); ++i) {
      for (std::size_t d = 0; d < bct.dim; ++d) {
        REQUIRE(full.records[i].values[d] == bct.records[i].values[d]);
      }
    }
  }
  SECTION("byte-identical stores across reruns") {
    const auto pa = scratch_dir() / "store_a.fs";
    const auto pb = scratch_dir() / "store_b.fs";
    save_store(extract_features(bundle, data, FeaturePart::full), pa);
    save_store(extract_features(bundle, data, FeaturePart::full), pb);
    REQUIRE(read_file(pa) == read_file(pb));
  }
  SECTION("part=full on a d_old-only model is a structural error") {
    ModelBundle ind = train_new(tiny_config(LossMode::independent), data, nullptr);
    REQUIRE_THROWS_AS(extract_features(ind, data, FeaturePart::full), StructuralError);
  }
  SECTION("inference purity: the ortho layer and classifier do not matter") {
    FeatureStore before = extract_features(bundle, data, FeaturePart::full);
    ModelBundle tampered = bundle;
    tampered.ortho->params.values.assign(tampered.ortho->params.values.size(), 0.123);
    tampered.ortho->refresh();
    tampered.classifier.weight = testutil::random_matrix(4, 8, 99);
    FeatureStore after = extract_features(tampered, data, FeaturePart::full);
    for (std::size_t i = 0; i < before.records.size(); ++i) {
      REQUIRE(before.records[i].values == after.records[i].values);
    }
  }
}

TEST_CASE("checkpoint round-trip reproduces forward outputs bit-exactly") {
  Dataset data = small_data(3, 56);
  TrainConfig cfg = tiny_config(LossMode::oca);
  cfg.epochs = 2;
  ModelBundle old_model = train_old(cfg, restrict_classes(data, 2));
  Prototypes protos = compute_prototypes(old_model, data);
  ModelBundle bundle = train_new(cfg, data, &protos);

  const auto path = scratch_dir() / "roundtrip.ckpt";
  save_checkpoint(bundle, path);
  ModelBundle loaded = load_checkpoint(path);

  REQUIRE(loaded.config.d_old == cfg.d_old);
  REQUIRE(loaded.config.d_extra == cfg.d_extra);
  REQUIRE(loaded.config.mode == LossMode::oca);
  REQUIRE(loaded.ortho.has_value());

  Matrix batch(data.samples.size(), data.input_dim);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    for (std::size_t j = 0; j < data.input_dim; ++j) batch(i, j) = data.samples[i].x[j];
  }
  Matrix h1 = forward(bundle.backbone, batch);
  Matrix h2 = forward(loaded.backbone, batch);
  REQUIRE(max_abs_diff(h1, h2) == 0.0);

  SECTION("saving the loaded bundle reproduces the file") {
    const auto path2 = scratch_dir() / "roundtrip2.ckpt";
    save_checkpoint(loaded, path2);
    REQUIRE(read_file(path) == read_file(path2));
  }
  SECTION("prototype file round-trip") {
    const auto ppath = scratch_dir() / "protos.txt";
    save_prototypes(protos, ppath);
    Prototypes loaded_p = load_prototypes(ppath);
    REQUIRE(loaded_p.classes == protos.classes);
    REQUIRE(max_abs_diff(loaded_p.vectors, protos.vectors) == 0.0);
    REQUIRE(loaded_p.counts == protos.counts);
  }
}

TEST_CASE("manifest line is appended") {
  const auto path = scratch_dir() / "manifest.log";
  std::filesystem::remove(path);
  LossBreakdown final_loss{1.5, 1.0, 0.04, 0.02};
  append_manifest(path, "new:oca:seed1", "deadbeef00000000", 1, final_loss);
  append_manifest(path, "new:oca:seed2", "deadbeef00000000", 2, final_loss);
  const std::string text = read_file(path);
  REQUIRE(text.find("run=new:oca:seed1") != std::string::npos);
  REQUIRE(text.find("seed=2") != std::string::npos);
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 2);
}

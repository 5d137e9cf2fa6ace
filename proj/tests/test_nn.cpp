#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "oca/adam.hpp"
#include "oca/backbone.hpp"
#include "oca/ortho.hpp"
#include "test_util.hpp"

using namespace oca;

TEST_CASE("init_backbone") {
  SECTION("deterministic given seed") {
    Backbone a = init_backbone({8, 16, 12}, 0);
    Backbone b = init_backbone({8, 16, 12}, 0);
    for (std::size_t l = 0; l < a.num_layers(); ++l) {
      REQUIRE(max_abs_diff(a.weights[l], b.weights[l]) == 0.0);
      REQUIRE(a.biases[l] == b.biases[l]);
    }
  }
  SECTION("weight shapes follow the dim chain") {
    Backbone net = init_backbone({8, 16, 12}, 1);
    REQUIRE(net.weights[0].rows() == 16);
    REQUIRE(net.weights[0].cols() == 8);
    REQUIRE(net.weights[1].rows() == 12);
    REQUIRE(net.weights[1].cols() == 16);
  }
  SECTION("too few dims is a structural error") {
    REQUIRE_THROWS_AS(init_backbone({4}, 0), StructuralError);
    REQUIRE_THROWS_AS(init_backbone({}, 0), StructuralError);
  }
  SECTION("zero dim is a structural error") {
    REQUIRE_THROWS_AS(init_backbone({4, 0, 3}, 0), StructuralError);
  }
}

TEST_CASE("forward") {
  SECTION("zero weights and biases give zero embeddings") {
    Backbone net;
    net.layer_dims = {3, 4, 2};
    net.weights = {Matrix(4, 3), Matrix(2, 4)};
    net.biases = {std::vector<double>(4, 0.0), std::vector<double>(2, 0.0)};
    Matrix h = forward(net, testutil::random_matrix(5, 3, 9));
    REQUIRE(max_abs(h) == 0.0);
  }
  SECTION("identity single layer passes input through") {
    Backbone net;
    net.layer_dims = {3, 3};
    net.weights = {Matrix::identity(3)};
    net.biases = {std::vector<double>(3, 0.0)};
    Matrix x = testutil::random_matrix(4, 3, 10);
    REQUIRE(max_abs_diff(forward(net, x), x) == 0.0);
  }
  SECTION("batched forward equals row-stacked single forwards") {
    Backbone net = init_backbone({6, 9, 4}, 5);
    Matrix batch = testutil::random_matrix(2, 6, 11);
    Matrix both = forward(net, batch);
    for (std::size_t r = 0; r < 2; ++r) {
      Matrix single(1, 6);
      for (std::size_t j = 0; j < 6; ++j) single(0, j) = batch(r, j);
      Matrix one = forward(net, single);
      for (std::size_t j = 0; j < 4; ++j) REQUIRE(one(0, j) == both(r, j));
    }
  }
  SECTION("shape mismatch is a structural error") {
    Backbone net = init_backbone({6, 9, 4}, 5);
    REQUIRE_THROWS_AS(forward(net, Matrix(2, 5)), StructuralError);
  }
}

TEST_CASE("split_embedding") {
  SECTION("splits and round-trips") {
    std::vector<double> h = {1, 2, 3, 4};
    auto [bct, extra] = split_embedding(std::span<const double>(h), 3);
    REQUIRE(bct == std::vector<double>{1, 2, 3});
    REQUIRE(extra == std::vector<double>{4});
  }
  SECTION("d_old equal to the total dim is forbidden") {
    std::vector<double> h = {1, 2, 3};
    REQUIRE_THROWS_AS(split_embedding(std::span<const double>(h), 3), StructuralError);
  }
  SECTION("concat of the parts is the identity") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::vector<double> h = testutil::random_vector(10, seed);
      auto [bct, extra] = split_embedding(std::span<const double>(h), 7);
      std::vector<double> joined = bct;
      joined.insert(joined.end(), extra.begin(), extra.end());
      REQUIRE(joined == h);
    }
  }
}

TEST_CASE("backbone_backward guards its cache") {
  Backbone net = init_backbone({4, 6, 3}, 2);
  Matrix batch = testutil::random_matrix(5, 4, 3);
  SECTION("missing cache is a usage error") {
    ForwardCache cache;
    REQUIRE_THROWS_AS(backbone_backward(net, cache, Matrix(5, 3)), UsageError);
  }
  SECTION("stale cache after a parameter change is a usage error") {
    ForwardCache cache;
    forward(net, batch, &cache);
    net.revision += 1;
    REQUIRE_THROWS_AS(backbone_backward(net, cache, Matrix(5, 3)), UsageError);
  }
  SECTION("zero upstream gradient gives zero parameter gradients") {
    ForwardCache cache;
    forward(net, batch, &cache);
    BackboneGrads grads = backbone_backward(net, cache, Matrix(5, 3));
    for (const Matrix& g : grads.weights) REQUIRE(max_abs(g) == 0.0);
    for (const auto& g : grads.biases) {
      for (double v : g) REQUIRE(v == 0.0);
    }
  }
}

TEST_CASE("backbone gradients match finite differences") {
  Backbone net = init_backbone({4, 5, 3}, 21);
  Matrix batch = testutil::random_matrix(6, 4, 22);
  // Scalar loss: weighted sum of embeddings with fixed random coefficients.
  Matrix coeff = testutil::random_matrix(6, 3, 23);
  auto loss_of = [&](const Backbone& b) {
    Matrix h = forward(b, batch);
    double s = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) s += coeff.flat()[i] * h.flat()[i];
    return s;
  };
  ForwardCache cache;
  forward(net, batch, &cache);
  BackboneGrads grads = backbone_backward(net, cache, coeff);
  const double h = 1e-6;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (std::size_t k = 0; k < net.weights[l].size(); ++k) {
      Backbone plus = net, minus = net;
      plus.weights[l].flat()[k] += h;
      minus.weights[l].flat()[k] -= h;
      const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
      REQUIRE(grads.weights[l].flat()[k] == Catch::Approx(fd).margin(1e-6));
    }
    for (std::size_t k = 0; k < net.biases[l].size(); ++k) {
      Backbone plus = net, minus = net;
      plus.biases[l][k] += h;
      minus.biases[l][k] -= h;
      const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
      REQUIRE(grads.biases[l][k] == Catch::Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("adam_step") {
  AdamConfig cfg;
  cfg.lr = 0.001;
  SECTION("zero gradients leave parameters unchanged and bump the step") {
    std::vector<double> p = {1.0, -2.0, 3.0};
    std::vector<double> g(3, 0.0);
    AdamState state;
    adam_step(p, g, state, cfg);
    REQUIRE(p == std::vector<double>{1.0, -2.0, 3.0});
    REQUIRE(state.step == 1);
  }
  SECTION("first step on a scalar matches the hand-computed update") {
    // m_hat = g, v_hat = g^2 at step 1, so the update is -lr * g/(|g| + eps).
    std::vector<double> p = {0.5};
    std::vector<double> g = {1.0};
    AdamState state;
    adam_step(p, g, state, cfg);
    const double expected = 0.5 - 0.001 * (1.0 / (1.0 + 1e-8));
    REQUIRE(p[0] == Catch::Approx(expected).margin(1e-15));
    REQUIRE(std::abs(p[0] - (0.5 - 0.001)) <= 1e-10);
  }
  SECTION("two identical runs stay bit-identical") {
    std::vector<double> p1 = {0.1, 0.2}, p2 = {0.1, 0.2};
    AdamState s1, s2;
    for (int i = 0; i < 25; ++i) {
      std::vector<double> g = {0.3 * i, -0.1 * i};
      adam_step(p1, g, s1, cfg);
      adam_step(p2, g, s2, cfg);
    }
    REQUIRE(p1 == p2);
    REQUIRE(s1.m == s2.m);
    REQUIRE(s1.v == s2.v);
  }
  SECTION("shape mismatch is a structural error") {
    std::vector<double> p = {1.0, 2.0};
    std::vector<double> g = {1.0};
    AdamState state;
    REQUIRE_THROWS_AS(adam_step(p, g, state, cfg), StructuralError);
  }
}

TEST_CASE("OrthoLayer keeps its orthogonality invariant") {
  OrthoLayer layer = OrthoLayer::init(12, 0.01, 99);
  REQUIRE(orthogonality_defect(layer.q) <= OrthoLayer::kDefectTolerance);
  SECTION("refresh after a parameter change") {
    layer.params.values[0] += 0.5;
    layer.refresh();
    REQUIRE(orthogonality_defect(layer.q) <= OrthoLayer::kDefectTolerance);
  }
  SECTION("application preserves pairwise inner products") {
    Matrix h = testutil::random_matrix(6, 12, 4, 2.0);
    Matrix rotated = apply_ortho(layer, h);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        const double before = dot(h.row(i), h.row(j));
        const double after = dot(rotated.row(i), rotated.row(j));
        REQUIRE(std::abs(before - after) <= 1e-6 * norm2(h.row(i)) * norm2(h.row(j)));
      }
    }
  }
}

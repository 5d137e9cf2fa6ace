#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oca/matrix.hpp"
#include "test_util.hpp"

using namespace oca;
using testutil::random_matrix;
using testutil::random_skew_params;

TEST_CASE("skew_from_params packs the strictly lower triangle") {
  SECTION("d=2 single angle") {
    const double theta = 0.37;
    Matrix a = skew_from_params({2, {theta}});
    Matrix expected(2, 2, {0.0, -theta, theta, 0.0});
    REQUIRE(max_abs_diff(a, expected) == 0.0);
  }
  SECTION("d=3 zero params give the zero matrix") {
    Matrix a = skew_from_params({3, {0.0, 0.0, 0.0}});
    REQUIRE(max_abs(a) == 0.0);
  }
  SECTION("d=3 row-major packing order") {
    Matrix a = skew_from_params({3, {1.0, 2.0, 3.0}});
    REQUIRE(a(1, 0) == 1.0);
    REQUIRE(a(2, 0) == 2.0);
    REQUIRE(a(2, 1) == 3.0);
    REQUIRE(a(0, 1) == -1.0);
    REQUIRE(a(0, 2) == -2.0);
    REQUIRE(a(1, 2) == -3.0);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(a(i, i) == 0.0);
  }
  SECTION("length mismatch is a structural error") {
    REQUIRE_THROWS_AS(skew_from_params({3, {1.0, 2.0}}), StructuralError);
  }
  SECTION("antisymmetry is exact for random params") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Matrix a = skew_from_params(random_skew_params(7, seed));
      Matrix sum = a;
      add_inplace(sum, transpose(a));
      REQUIRE(max_abs(sum) == 0.0);
    }
  }
}

TEST_CASE("mat_exp basics") {
  SECTION("exp(0) = I") {
    for (std::size_t d : {1u, 3u, 8u}) {
      Matrix z(d, d);
      REQUIRE(max_abs_diff(mat_exp(z), Matrix::identity(d)) == 0.0);
    }
  }
  SECTION("2x2 skew matches the closed-form rotation") {
    const double theta = std::acos(-1.0) / 2.0;  // pi/2
    Matrix a(2, 2, {0.0, -theta, theta, 0.0});
    Matrix expected(2, 2, {0.0, -1.0, 1.0, 0.0});
    REQUIRE(max_abs_diff(mat_exp(a), expected) <= 1e-12);
  }
  SECTION("random 6x6 matches the truncated-series oracle") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Matrix a = random_matrix(6, 6, seed, 0.5);
      Matrix oracle = testutil::exp_taylor_oracle(a, 40);
      REQUIRE(max_abs_diff(mat_exp(a), oracle) <= 1e-11);
    }
  }
  SECTION("non-square input is a structural error") {
    REQUIRE_THROWS_AS(mat_exp(Matrix(2, 3)), StructuralError);
  }
  SECTION("non-finite input is a numeric error") {
    Matrix a(2, 2);
    a(0, 1) = std::nan("");
    REQUIRE_THROWS_AS(mat_exp(a), NumericError);
  }
}

TEST_CASE("frechet_exp") {
  SECTION("L(0, E) = E") {
    Matrix e = random_matrix(5, 5, 11);
    REQUIRE(max_abs_diff(frechet_exp(Matrix(5, 5), e), e) <= 1e-14);
  }
  SECTION("commuting direction: L(A, A) = A exp(A)") {
    Matrix a = random_matrix(4, 4, 3, 0.6);
    Matrix expected = matmul(a, mat_exp(a));
    REQUIRE(max_abs_diff(frechet_exp(a, a), expected) <= 1e-10);
  }
  SECTION("matches central finite differences on random 4x4 pairs") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      Matrix a = random_matrix(4, 4, 100 + seed, 0.8);
      Matrix e = random_matrix(4, 4, 200 + seed, 0.8);
      Matrix fd = testutil::frechet_fd_oracle(a, e, 1e-5);
      REQUIRE(testutil::relative_error(frechet_exp(a, e), fd) <= 1e-5);
    }
  }
  SECTION("dimension mismatch is a structural error") {
    REQUIRE_THROWS_AS(frechet_exp(Matrix(3, 3), Matrix(4, 4)), StructuralError);
  }
}

TEST_CASE("orthogonality_defect") {
  REQUIRE(orthogonality_defect(Matrix::identity(4)) == 0.0);
  SECTION("Q = 2I has defect 3") {
    Matrix q = Matrix::identity(2);
    scale_inplace(q, 2.0);
    REQUIRE(orthogonality_defect(q) == 3.0);
  }
  SECTION("exp of a random skew matrix is orthogonal") {
    Matrix q = mat_exp(skew_from_params(random_skew_params(32, 7)));
    REQUIRE(orthogonality_defect(q) <= 1e-10);
  }
  SECTION("non-square is a structural error") {
    REQUIRE_THROWS_AS(orthogonality_defect(Matrix(2, 3)), StructuralError);
  }
}

TEST_CASE("orthogonality holds up to d=160") {
  for (std::size_t d : {2u, 16u, 64u, 160u}) {
    Matrix q = mat_exp(skew_from_params(random_skew_params(d, 40 + d)));
    REQUIRE(orthogonality_defect(q) <= 1e-8);
  }
}

TEST_CASE("orthogonal map preserves inner products") {
  for (std::size_t d : {8u, 160u}) {
    Matrix q = mat_exp(skew_from_params(random_skew_params(d, d)));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::vector<double> hi = testutil::random_vector(d, 1000 + seed, 3.0);
      std::vector<double> hj = testutil::random_vector(d, 2000 + seed, 3.0);
      Matrix h(2, d);
      for (std::size_t k = 0; k < d; ++k) {
        h(0, k) = hi[k];
        h(1, k) = hj[k];
      }
      Matrix rotated = matmul_nt(h, q);
      const double before = dot(hi, hj);
      const double after = dot(rotated.row(0), rotated.row(1));
      REQUIRE(std::abs(before - after) <= 1e-6 * norm2(hi) * norm2(hj));
    }
  }
}

TEST_CASE("det(exp(skew)) = 1 for small dims") {
  for (std::size_t d : {2u, 3u, 5u, 8u}) {
    Matrix q = mat_exp(skew_from_params(random_skew_params(d, 77 + d)));
    REQUIRE(std::abs(testutil::det_cofactor_oracle(q) - 1.0) <= 1e-6);
  }
}

TEST_CASE("frechet_exp passes finite-difference checks across dims") {
  int cases = 0;
  for (std::size_t d : {2u, 4u, 8u}) {
    for (std::uint64_t seed = 0; seed < 17 && cases < 50; ++seed, ++cases) {
      Matrix a = random_matrix(d, d, 300 + 10 * d + seed, 0.7);
      Matrix e = random_matrix(d, d, 400 + 10 * d + seed, 0.7);
      Matrix fd = testutil::frechet_fd_oracle(a, e, 1e-5);
      REQUIRE(testutil::relative_error(frechet_exp(a, e), fd) <= 1e-5);
    }
  }
  REQUIRE(cases >= 50);
}

TEST_CASE("skew_param_gradient matches direct finite differences") {
  const std::size_t d = 5;
  SkewParams p = random_skew_params(d, 55, 0.3);
  // A scalar function of Q: L(Q) = sum_ij c_ij Q_ij with random c.
  Matrix c = random_matrix(d, d, 66);
  auto loss_of = [&](const SkewParams& params) {
    Matrix q = mat_exp(skew_from_params(params));
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += c.flat()[i] * q.flat()[i];
    return s;
  };
  const std::vector<double> grad = skew_param_gradient(skew_from_params(p), c);
  REQUIRE(grad.size() == p.values.size());
  const double h = 1e-6;
  for (std::size_t k = 0; k < p.values.size(); ++k) {
    SkewParams plus = p, minus = p;
    plus.values[k] += h;
    minus.values[k] -= h;
    const double fd = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
    REQUIRE(grad[k] == Catch::Approx(fd).margin(1e-7));
  }
}

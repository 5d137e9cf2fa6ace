#pragma once

#include <cstdint>
#include <random>

#include "oca/errors.hpp"
#include "oca/matrix.hpp"

namespace oca {

/// Learnable orthogonal transformation: Q = exp(A) for a skew-symmetric A
/// built from packed parameters. Q is cached and must be refreshed after
/// every parameter change (the trainer does this once per optimizer step).
struct OrthoLayer {
  SkewParams params;
  Matrix q;

  static constexpr double kDefectTolerance = 1e-8;

  static OrthoLayer init(std::size_t dim, double init_range, std::uint64_t seed) {
    if (dim < 2) throw StructuralError("OrthoLayer: dim must be >= 2");
    if (!(init_range >= 0.0)) throw StructuralError("OrthoLayer: init_range must be >= 0");
    OrthoLayer layer;
    layer.params.dim = dim;
    layer.params.values.resize(SkewParams::packed_size(dim));
    std::mt19937_64 engine(seed);
    std::uniform_real_distribution<double> uni(-init_range, init_range);
    for (double& v : layer.params.values) v = uni(engine);
    layer.refresh();
    return layer;
  }

  std::size_t dim() const { return params.dim; }

  void refresh() {
    q = mat_exp(skew_from_params(params));
    const double defect = orthogonality_defect(q);
    if (defect > kDefectTolerance) {
      throw NumericError("OrthoLayer: orthogonality defect " + std::to_string(defect) +
                         " exceeds tolerance");
    }
  }
};

/// Row-vector convention: h_perp = h Q^T, so each row is Q h.
inline Matrix apply_ortho(const OrthoLayer& layer, const Matrix& h) {
  if (h.cols() != layer.dim()) {
    throw StructuralError("apply_ortho: feature dim " + std::to_string(h.cols()) +
                          " does not match layer dim " + std::to_string(layer.dim()));
  }
  return matmul_nt(h, layer.q);
}

}  // namespace oca

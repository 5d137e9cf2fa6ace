#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oca/backbone.hpp"
#include "oca/errors.hpp"
#include "oca/matrix.hpp"
#include "oca/ortho.hpp"
#include "oca/prototypes.hpp"

namespace oca {

enum class LossMode {
  independent,
  bct,
  oca,
  oca_no_ortho,
  oca_no_cos,
  oca_no_ortho_no_cos,
};

inline const char* to_string(LossMode mode) {
  switch (mode) {
    case LossMode::independent: return "independent";
    case LossMode::bct: return "bct";
    case LossMode::oca: return "oca";
    case LossMode::oca_no_ortho: return "oca_no_ortho";
    case LossMode::oca_no_cos: return "oca_no_cos";
    case LossMode::oca_no_ortho_no_cos: return "oca_no_ortho_no_cos";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "independent") return LossMode::independent;
  if (s == "bct") return LossMode::bct;
  if (s == "oca") return LossMode::oca;
  if (s == "oca_no_ortho") return LossMode::oca_no_ortho;
  if (s == "oca_no_cos") return LossMode::oca_no_cos;
  if (s == "oca_no_ortho_no_cos") return LossMode::oca_no_ortho_no_cos;
  throw ConfigError("unknown mode '" + s + "'");
}

inline bool is_expanded_mode(LossMode mode) {
  return mode == LossMode::oca || mode == LossMode::oca_no_ortho ||
         mode == LossMode::oca_no_cos || mode == LossMode::oca_no_ortho_no_cos;
}

inline bool uses_ortho_layer(LossMode mode) {
  return mode == LossMode::oca || mode == LossMode::oca_no_cos;
}

inline bool uses_cos_align(LossMode mode) {
  return mode == LossMode::oca || mode == LossMode::oca_no_ortho;
}

struct LossSpec {
  LossMode mode = LossMode::oca;
  double lambda1 = 10.0;
  double lambda2 = 5.0;
  double lambda_bct = 1.0;

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda_bct < 0.0) {
      throw StructuralError("LossSpec: weights must be >= 0");
    }
  }
};

/// Per-batch loss components. `total` always equals the mode-specific
/// weighted combination of the components.
struct LossBreakdown {
  double total = 0.0;
  double ce_new = 0.0;
  double ce_proto = 0.0;
  double cos_align = 0.0;
};

namespace detail {

inline void check_labels(std::span<const std::int32_t> labels, std::size_t batch,
                         std::size_t num_classes, const char* who) {
  if (labels.size() != batch) {
    throw StructuralError(std::string(who) + ": labels/batch size mismatch");
  }
  for (std::int32_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw StructuralError(std::string(who) + ": label " + std::to_string(y) +
                            " out of range [0, " + std::to_string(num_classes) + ")");
    }
  }
}

/// Mean softmax cross-entropy of logits = h . w^T against labels.
/// Returns the loss and writes d(loss)/d(logits) (already divided by the
/// batch size) into grad_logits.
inline double softmax_ce(const Matrix& h, std::span<const std::int32_t> labels, const Matrix& w,
                         Matrix& grad_logits, const char* who) {
  if (h.cols() != w.cols()) {
    throw StructuralError(std::string(who) + ": feature dim " + std::to_string(h.cols()) +
                          " does not match classifier dim " + std::to_string(w.cols()));
  }
  check_labels(labels, h.rows(), w.rows(), who);
  const std::size_t n = h.rows();
  const std::size_t c = w.rows();

  Matrix logits = matmul_nt(h, w);
  grad_logits = Matrix(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - m);
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    loss += m + std::log(se) - row[y];
    double* g = grad_logits.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(row[j] - m) / se;
    g[y] -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  scale_inplace(grad_logits, inv_n);
  return loss * inv_n;
}

}  // namespace detail

struct CeResult {
  double value = 0.0;
  Matrix grad_h;
  Matrix grad_w;
};

/// Cross-entropy against the trainable classifier; gradients for both the
/// features and the classifier weights.
inline CeResult ce_learnable(const Matrix& h, std::span<const std::int32_t> labels,
                             const Classifier& w) {
  CeResult r;
  Matrix grad_logits;
  r.value = detail::softmax_ce(h, labels, w.weight, grad_logits, "ce_learnable");
  r.grad_h = matmul(grad_logits, w.weight);
  r.grad_w = matmul_tn(grad_logits, h);
  return r;
}

struct ProtoCeResult {
  double value = 0.0;
  Matrix grad_h;
};

/// Influence loss: cross-entropy against the frozen old prototypes. No
/// gradient flows to the prototypes.
inline ProtoCeResult ce_prototypes(const Matrix& h_bct, std::span<const std::int32_t> labels,
                                   const Prototypes& protos) {
  if (h_bct.cols() != protos.dim) {
    throw StructuralError("ce_prototypes: feature dim does not match prototype dim");
  }
  ProtoCeResult r;
  Matrix grad_logits;
  r.value = detail::softmax_ce(h_bct, labels, protos.vectors, grad_logits, "ce_prototypes");
  r.grad_h = matmul(grad_logits, protos.vectors);
  return r;
}

struct CosAlignResult {
  double value = 0.0;
  Matrix grad_h;
};

/// Mean cosine distance between each feature row and its own-class
/// prototype: sum(1 - cos(h_i, w_{y_i})) / n, in [0, 2]. Scale-invariant in
/// each feature row, which is exactly what the plain cross-entropy term is
/// not.
inline CosAlignResult cos_align(const Matrix& h_bct, std::span<const std::int32_t> labels,
                                const Prototypes& protos) {
  if (h_bct.cols() != protos.dim) {
    throw StructuralError("cos_align: feature dim does not match prototype dim");
  }
  detail::check_labels(labels, h_bct.rows(), static_cast<std::size_t>(protos.classes),
                       "cos_align");
  const std::size_t n = h_bct.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  CosAlignResult r;
  r.grad_h = Matrix(n, h_bct.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> h = h_bct.row(i);
    const std::span<const double> w = protos.vectors.row(static_cast<std::size_t>(labels[i]));
    const double hn = norm2(h);
    const double wn = norm2(w);
    if (hn == 0.0) throw NumericError("cos_align: zero-norm feature at row " + std::to_string(i));
    if (wn == 0.0) {
      throw NumericError("cos_align: zero-norm prototype for class " +
                         std::to_string(labels[i]));
    }
    const double c = dot(h, w) / (hn * wn);
    r.value += 1.0 - c;
    // d(1 - cos)/dh = cos * h / |h|^2 - w / (|h| |w|)
    std::span<double> g = r.grad_h.row(i);
    const double a = c / (hn * hn);
    const double b = 1.0 / (hn * wn);
    for (std::size_t d = 0; d < h.size(); ++d) g[d] = inv_n * (a * h[d] - b * w[d]);
  }
  r.value *= inv_n;
  return r;
}

struct AceResult {
  double value = 0.0;
  double ce_proto = 0.0;
  double cos_align = 0.0;
  Matrix grad_h;
};

/// Alignment objective on the compatible slice:
/// lambda1 * ce_prototypes + lambda2 * cos_align. Terms with zero weight are
/// skipped entirely.
inline AceResult ace_loss(const Matrix& h_bct, std::span<const std::int32_t> labels,
                          const Prototypes& protos, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw StructuralError("ace_loss: weights must be >= 0");
  AceResult r;
  r.grad_h = Matrix(h_bct.rows(), h_bct.cols());
  if (lambda1 > 0.0) {
    ProtoCeResult ce = ce_prototypes(h_bct, labels, protos);
    r.ce_proto = ce.value;
    add_inplace(r.grad_h, ce.grad_h, lambda1);
  }
  if (lambda2 > 0.0) {
    CosAlignResult ca = cos_align(h_bct, labels, protos);
    r.cos_align = ca.value;
    add_inplace(r.grad_h, ca.grad_h, lambda2);
  }
  r.value = lambda1 * r.ce_proto + lambda2 * r.cos_align;
  return r;
}

struct OcaTotalResult {
  LossBreakdown breakdown;
  Matrix grad_h_new;
  Matrix grad_classifier;
  std::vector<double> grad_skew;  // empty for modes without the ortho layer
};

/// Full training objective of the expanded-embedding modes:
/// ce_learnable(T(h_new), W) + ace(h_bct), where T is the orthogonal layer
/// for mode oca/oca_no_cos and the identity for the no_ortho ablations.
inline OcaTotalResult oca_total(const Matrix& h_new, const OrthoLayer* ortho,
                                std::span<const std::int32_t> labels, const Classifier& w,
                                const Prototypes& protos, const LossSpec& spec) {
  spec.validate();
  if (!is_expanded_mode(spec.mode)) {
    throw StructuralError("oca_total: mode must be one of the oca variants");
  }
  const bool with_ortho = uses_ortho_layer(spec.mode);
  if (with_ortho) {
    if (ortho == nullptr) throw StructuralError("oca_total: mode requires an ortho layer");
    if (ortho->dim() != h_new.cols()) {
      throw StructuralError("oca_total: ortho layer dim does not match embedding dim");
    }
  }
  if (w.dim() != h_new.cols()) {
    throw StructuralError("oca_total: classifier dim does not match embedding dim");
  }
  if (protos.dim >= h_new.cols()) {
    throw StructuralError("oca_total: prototype dim must be smaller than the embedding dim");
  }
  const double lambda2 = uses_cos_align(spec.mode) ? spec.lambda2 : 0.0;

  OcaTotalResult r;
  const Matrix h_for_ce = with_ortho ? apply_ortho(*ortho, h_new) : h_new;
  CeResult ce = ce_learnable(h_for_ce, labels, w);
  r.breakdown.ce_new = ce.value;
  r.grad_classifier = std::move(ce.grad_w);
  if (with_ortho) {
    // h_perp = h_new Q^T: dL/dh_new = dL/dh_perp Q, dL/dQ = dL/dh_perp^T h_new.
    r.grad_h_new = matmul(ce.grad_h, ortho->q);
    const Matrix q_grad = matmul_tn(ce.grad_h, h_new);
    r.grad_skew = skew_param_gradient(skew_from_params(ortho->params), q_grad);
  } else {
    r.grad_h_new = std::move(ce.grad_h);
  }

  const Matrix h_bct = slice_cols(h_new, 0, protos.dim);
  AceResult ace = ace_loss(h_bct, labels, protos, spec.lambda1, lambda2);
  r.breakdown.ce_proto = ace.ce_proto;
  r.breakdown.cos_align = ace.cos_align;
  for (std::size_t i = 0; i < h_new.rows(); ++i) {
    for (std::size_t d = 0; d < protos.dim; ++d) r.grad_h_new(i, d) += ace.grad_h(i, d);
  }

  r.breakdown.total = r.breakdown.ce_new + spec.lambda1 * r.breakdown.ce_proto +
                      lambda2 * r.breakdown.cos_align;
  return r;
}

struct BctResult {
  LossBreakdown breakdown;
  Matrix grad_h;
  Matrix grad_classifier;
};

/// Baseline compatible training: classification loss plus the influence
/// loss against the frozen old prototypes, on the unexpanded embedding.
inline BctResult bct_loss(const Matrix& h, std::span<const std::int32_t> labels,
                          const Classifier& w, const Prototypes& protos, double lambda_bct) {
  if (lambda_bct < 0.0) throw StructuralError("bct_loss: lambda_bct must be >= 0");
  if (h.cols() != protos.dim) {
    throw StructuralError("bct_loss: bct uses the unexpanded embedding (dim must equal "
                          "prototype dim)");
  }
  BctResult r;
  CeResult ce = ce_learnable(h, labels, w);
  r.breakdown.ce_new = ce.value;
  r.grad_h = std::move(ce.grad_h);
  r.grad_classifier = std::move(ce.grad_w);
  if (lambda_bct > 0.0) {
    ProtoCeResult proto = ce_prototypes(h, labels, protos);
    r.breakdown.ce_proto = proto.value;
    add_inplace(r.grad_h, proto.grad_h, lambda_bct);
  }
  r.breakdown.total = r.breakdown.ce_new + lambda_bct * r.breakdown.ce_proto;
  return r;
}

}  // namespace oca

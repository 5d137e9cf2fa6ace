#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oca/errors.hpp"
#include "oca/matrix.hpp"

namespace oca {

/// Linear classifier head, logits = h . weight^T. Also the container for a
/// frozen copy when a head is kept around as an alignment target.
struct Classifier {
  Matrix weight;  // num_classes x dim

  std::size_t num_classes() const { return weight.rows(); }
  std::size_t dim() const { return weight.cols(); }
};

/// Fully connected embedding network: rectifier on every layer but the last,
/// identity on the last. layer_dims runs input -> hidden... -> embedding.
struct Backbone {
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> weights;              // weights[l]: dims[l+1] x dims[l]
  std::vector<std::vector<double>> biases;  // biases[l]: dims[l+1]
  std::uint64_t revision = 0;               // bumped on every parameter mutation

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t embedding_dim() const { return layer_dims.back(); }
};

/// Fan-in scaled uniform init (limit sqrt(6/fan_in)), zero biases.
/// Bit-reproducible for a given (layer_dims, seed).
inline Backbone init_backbone(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) {
    throw StructuralError("init_backbone: need at least input and embedding dims");
  }
  for (std::size_t d : layer_dims) {
    if (d == 0) throw StructuralError("init_backbone: layer dims must be positive");
  }
  Backbone net;
  net.layer_dims = layer_dims;
  std::mt19937_64 engine(seed);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t fan_in = layer_dims[l];
    const std::size_t fan_out = layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uni(-limit, limit);
    Matrix w(fan_out, fan_in);
    for (double& v : w.flat()) v = uni(engine);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(fan_out, 0.0);
  }
  return net;
}

inline Classifier init_classifier(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
  if (num_classes == 0 || dim == 0) {
    throw StructuralError("init_classifier: num_classes and dim must be positive");
  }
  std::mt19937_64 engine(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(dim));
  std::uniform_real_distribution<double> uni(-limit, limit);
  Classifier c;
  c.weight = Matrix(num_classes, dim);
  for (double& v : c.weight.flat()) v = uni(engine);
  return c;
}

/// Per-batch activations kept for the backward pass. Tied to the backbone
/// revision that produced it; a cache from before a parameter update is
/// rejected by backbone_backward.
struct ForwardCache {
  std::vector<Matrix> layer_inputs;  // X_l entering layer l
  std::vector<Matrix> pre_acts;      // S_l = X_l W_l^T + b_l
  std::uint64_t revision = 0;
  bool valid = false;
};

inline Matrix forward(const Backbone& net, const Matrix& batch, ForwardCache* cache = nullptr) {
  if (batch.cols() != net.input_dim()) {
    throw StructuralError("forward: batch has " + std::to_string(batch.cols()) +
                          " columns, expected " + std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->layer_inputs.clear();
    cache->pre_acts.clear();
    cache->revision = net.revision;
    cache->valid = true;
  }
  Matrix x = batch;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    if (cache) cache->layer_inputs.push_back(x);
    Matrix s = matmul_nt(x, net.weights[l]);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double* row = s.data() + i * s.cols();
      for (std::size_t j = 0; j < s.cols(); ++j) row[j] += net.biases[l][j];
    }
    if (cache) cache->pre_acts.push_back(s);
    if (l + 1 < net.num_layers()) {
      for (double& v : s.flat()) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(s);
  }
  return x;
}

struct BackboneGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

/// Reverse-mode pass from d(loss)/d(embedding). Requires the cache written
/// by forward() against the current parameters.
inline BackboneGrads backbone_backward(const Backbone& net, const ForwardCache& cache,
                                       const Matrix& embedding_grad) {
  if (!cache.valid || cache.pre_acts.size() != net.num_layers()) {
    throw UsageError("backbone_backward: missing forward cache");
  }
  if (cache.revision != net.revision) {
    throw UsageError("backbone_backward: stale forward cache (parameters changed)");
  }
  if (embedding_grad.rows() != cache.pre_acts.back().rows() ||
      embedding_grad.cols() != net.embedding_dim()) {
    throw StructuralError("backbone_backward: gradient shape mismatch");
  }

  BackboneGrads grads;
  grads.weights.resize(net.num_layers());
  grads.biases.resize(net.num_layers());

  Matrix delta = embedding_grad;
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    grads.weights[l] = matmul_tn(delta, cache.layer_inputs[l]);
    std::vector<double>& bg = grads.biases[l];
    bg.assign(net.biases[l].size(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      for (std::size_t j = 0; j < delta.cols(); ++j) bg[j] += delta(i, j);
    }
    if (l > 0) {
      delta = matmul(delta, net.weights[l]);
      const Matrix& s = cache.pre_acts[l - 1];
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (s.flat()[i] <= 0.0) delta.flat()[i] = 0.0;
      }
    }
  }
  return grads;
}

/// h_new = [h_bct | h_e]; the compatible slice and the extra dims.
inline std::pair<std::vector<double>, std::vector<double>> split_embedding(
    std::span<const double> h_new, std::size_t d_old) {
  if (d_old >= h_new.size()) {
    throw StructuralError("split_embedding: d_old=" + std::to_string(d_old) +
                          " leaves no extra dims in a vector of size " +
                          std::to_string(h_new.size()));
  }
  std::vector<double> bct(h_new.begin(), h_new.begin() + static_cast<std::ptrdiff_t>(d_old));
  std::vector<double> extra(h_new.begin() + static_cast<std::ptrdiff_t>(d_old), h_new.end());
  return {std::move(bct), std::move(extra)};
}

inline std::pair<Matrix, Matrix> split_embedding(const Matrix& h_new, std::size_t d_old) {
  if (d_old >= h_new.cols()) {
    throw StructuralError("split_embedding: d_old=" + std::to_string(d_old) +
                          " leaves no extra dims in a matrix with " +
                          std::to_string(h_new.cols()) + " columns");
  }
  return {slice_cols(h_new, 0, d_old), slice_cols(h_new, d_old, h_new.cols())};
}

}  // namespace oca

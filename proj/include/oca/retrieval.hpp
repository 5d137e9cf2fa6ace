#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "oca/errors.hpp"
#include "oca/feature_store.hpp"
#include "oca/matrix.hpp"

namespace oca {

struct RetrievalReport {
  double map_at_1 = 0.0;  // mAP with recall integrated over [0, 1]
  double cmc_1 = 0.0;
  std::map<int, double> cmc;  // per requested k
  std::size_t num_queries = 0;
  std::size_t num_gallery = 0;
  std::size_t skipped_queries = 0;  // queries with no positive gallery item
  std::string query_model;
  std::string gallery_model;
  std::string padding_mode = "none";
};

struct CompatReport {
  double same_class_pairs_ok_fraction = 0.0;
  double diff_class_pairs_ok_fraction = 0.0;
  bool ecc_holds = false;
  double m_cross = 0.0;
  double m_self_old = 0.0;
  std::uint64_t same_pairs = 0;
  std::uint64_t diff_pairs = 0;
  bool sampled = false;
};

namespace detail {

inline double cosine_distance(std::span<const double> a, std::span<const double> b,
                              std::int64_t id_a, std::int64_t id_b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0) throw NumericError("cosine distance: zero-norm vector in record " + std::to_string(id_a));
  if (nb == 0.0) throw NumericError("cosine distance: zero-norm vector in record " + std::to_string(id_b));
  return 1.0 - dot(a, b) / (na * nb);
}

}  // namespace detail

/// Entry (i, j) = 1 - cos(q_i, g_j), in [0, 2].
inline Matrix cosine_distance_matrix(const FeatureStore& queries, const FeatureStore& gallery) {
  if (queries.dim != gallery.dim) {
    throw StructuralError("cosine_distance_matrix: dim mismatch (apply zero_pad first)");
  }
  Matrix d(queries.records.size(), gallery.records.size());
  for (std::size_t i = 0; i < queries.records.size(); ++i) {
    const FeatureRecord& q = queries.records[i];
    for (std::size_t j = 0; j < gallery.records.size(); ++j) {
      const FeatureRecord& g = gallery.records[j];
      d(i, j) = detail::cosine_distance(q.values, g.values, q.id, g.id);
    }
  }
  return d;
}

/// AP over the full recall interval: mean of precision@k over the ranks k of
/// the positive items. Empty if the ranking contains no positive.
inline std::optional<double> average_precision(std::span<const std::int32_t> ranked_labels,
                                               std::int32_t query_label) {
  std::size_t positives = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < ranked_labels.size(); ++k) {
    if (ranked_labels[k] == query_label) {
      ++positives;
      sum += static_cast<double>(positives) / static_cast<double>(k + 1);
    }
  }
  if (positives == 0) return std::nullopt;
  return sum / static_cast<double>(positives);
}

/// Rank the gallery for every query by ascending cosine distance (ties by
/// ascending gallery id) and compute mAP and CMC-k. With self_exclusion, a
/// gallery item with the same id as the query is dropped from that query's
/// ranking. Queries with no positive among the ranked items are skipped and
/// tallied.
inline RetrievalReport evaluate(const FeatureStore& queries, const FeatureStore& gallery,
                                bool self_exclusion, std::span<const int> k_list) {
  if (queries.records.empty() || gallery.records.empty()) {
    throw StructuralError("evaluate: empty query or gallery store");
  }
  if (queries.dim != gallery.dim) {
    throw StructuralError("evaluate: dim mismatch (apply zero_pad or truncate first)");
  }
  std::vector<int> ks(k_list.begin(), k_list.end());
  if (std::find(ks.begin(), ks.end(), 1) == ks.end()) ks.push_back(1);
  std::sort(ks.begin(), ks.end());
  for (int k : ks) {
    if (k < 1) throw StructuralError("evaluate: CMC k values must be >= 1");
  }

  RetrievalReport report;
  report.num_queries = queries.records.size();
  report.num_gallery = gallery.records.size();
  for (int k : ks) report.cmc[k] = 0.0;

  struct Entry {
    double dist;
    std::int64_t id;
    std::int32_t label;
  };

  double ap_sum = 0.0;
  std::size_t evaluated = 0;
  std::vector<Entry> ranked;
  ranked.reserve(gallery.records.size());
  for (const FeatureRecord& q : queries.records) {
    ranked.clear();
    for (const FeatureRecord& g : gallery.records) {
      if (self_exclusion && g.id == q.id) continue;
      ranked.push_back({detail::cosine_distance(q.values, g.values, q.id, g.id), g.id, g.label});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Entry& a, const Entry& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      return a.id < b.id;
    });

    std::size_t positives = 0;
    double ap = 0.0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      if (ranked[k].label == q.label) {
        ++positives;
        ap += static_cast<double>(positives) / static_cast<double>(k + 1);
      }
    }
    if (positives == 0) {
      ++report.skipped_queries;
      continue;
    }
    ++evaluated;
    ap_sum += ap / static_cast<double>(positives);
    for (int k : ks) {
      const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size());
      bool hit = false;
      for (std::size_t r = 0; r < top && !hit; ++r) hit = ranked[r].label == q.label;
      if (hit) report.cmc[k] += 1.0;
    }
  }
  if (evaluated == 0) throw StructuralError("evaluate: every query was skipped (no positives)");
  report.map_at_1 = ap_sum / static_cast<double>(evaluated);
  for (auto& [k, v] : report.cmc) v /= static_cast<double>(evaluated);
  report.cmc_1 = report.cmc.at(1);
  return report;
}

/// Empirical compatibility criterion: the cross-model metric must strictly
/// exceed the old model's self-test on the same gallery.
inline bool ecc_check(double m_cross, double m_self_old) { return m_cross > m_self_old; }

struct Def1Result {
  double same_class_ok = 0.0;
  double diff_class_ok = 0.0;
  std::uint64_t same_pairs = 0;
  std::uint64_t diff_pairs = 0;
  bool sampled = false;
};

/// Pairwise compatibility check over ordered pairs (i, j), i != j, of the
/// common id set: same-class pairs must satisfy
/// d(old_i, new_j) <= d(old_i, old_j) and different-class pairs the reverse
/// inequality. Beyond sample_cap pairs, a seeded uniform sample is used.
inline Def1Result def1_check(const FeatureStore& old_feats, const FeatureStore& new_feats,
                             std::uint64_t sample_cap, std::uint64_t seed = 99) {
  if (old_feats.records.empty() || new_feats.records.empty()) {
    throw StructuralError("def1_check: empty store");
  }
  if (old_feats.records.size() != new_feats.records.size()) {
    throw StructuralError("def1_check: stores must hold the same ids");
  }
  std::unordered_map<std::int64_t, std::size_t> new_by_id;
  new_by_id.reserve(new_feats.records.size());
  for (std::size_t j = 0; j < new_feats.records.size(); ++j) {
    new_by_id.emplace(new_feats.records[j].id, j);
  }

  // Align by id, sorted for a deterministic pair order.
  std::vector<std::size_t> old_order(old_feats.records.size());
  for (std::size_t i = 0; i < old_order.size(); ++i) old_order[i] = i;
  std::sort(old_order.begin(), old_order.end(), [&](std::size_t a, std::size_t b) {
    return old_feats.records[a].id < old_feats.records[b].id;
  });
  std::vector<const FeatureRecord*> olds;
  std::vector<const FeatureRecord*> news;
  olds.reserve(old_order.size());
  news.reserve(old_order.size());
  for (std::size_t i : old_order) {
    const FeatureRecord& o = old_feats.records[i];
    auto it = new_by_id.find(o.id);
    if (it == new_by_id.end()) {
      throw StructuralError("def1_check: id " + std::to_string(o.id) + " missing from new store");
    }
    const FeatureRecord& n = new_feats.records[it->second];
    if (n.label != o.label) {
      throw StructuralError("def1_check: label mismatch for id " + std::to_string(o.id));
    }
    olds.push_back(&o);
    news.push_back(&n);
  }

  const std::size_t dim = std::max(old_feats.dim, new_feats.dim);
  const FeatureStore old_padded = old_feats.dim < dim ? zero_pad(old_feats, dim) : FeatureStore{};
  const FeatureStore new_padded = new_feats.dim < dim ? zero_pad(new_feats, dim) : FeatureStore{};
  if (old_feats.dim < dim) {
    for (std::size_t i = 0; i < olds.size(); ++i) olds[i] = &old_padded.records[old_order[i]];
  }
  if (new_feats.dim < dim) {
    news.clear();
    for (std::size_t i : old_order) {
      news.push_back(&new_padded.records[new_by_id.at(old_feats.records[i].id)]);
    }
  }

  const std::uint64_t n = olds.size();
  const std::uint64_t total_pairs = n * (n - 1);
  if (total_pairs == 0) throw StructuralError("def1_check: need at least two records");

  Def1Result result;
  std::uint64_t same_ok = 0;
  std::uint64_t diff_ok = 0;
  auto check_pair = [&](std::size_t i, std::size_t j) {
    const double cross = detail::cosine_distance(olds[i]->values, news[j]->values, olds[i]->id,
                                                 news[j]->id);
    const double within = detail::cosine_distance(olds[i]->values, olds[j]->values, olds[i]->id,
                                                  olds[j]->id);
    if (olds[i]->label == olds[j]->label) {
      ++result.same_pairs;
      if (cross <= within) ++same_ok;
    } else {
      ++result.diff_pairs;
      if (cross >= within) ++diff_ok;
    }
  };

  if (total_pairs <= sample_cap) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) check_pair(i, j);
      }
    }
  } else {
    result.sampled = true;
    std::mt19937_64 engine(seed);
    std::uniform_int_distribution<std::size_t> pick_i(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_j(0, n - 2);
    for (std::uint64_t k = 0; k < sample_cap; ++k) {
      const std::size_t i = pick_i(engine);
      std::size_t j = pick_j(engine);
      if (j >= i) ++j;
      check_pair(i, j);
    }
  }
  result.same_class_ok =
      result.same_pairs ? static_cast<double>(same_ok) / static_cast<double>(result.same_pairs) : 1.0;
  result.diff_class_ok =
      result.diff_pairs ? static_cast<double>(diff_ok) / static_cast<double>(result.diff_pairs) : 1.0;
  return result;
}

}  // namespace oca

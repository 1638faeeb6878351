#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dcdr/errors.hpp"
#include "dcdr/random.hpp"

namespace dcdr {

struct ScoredLabel {
  double score = 0.0;
  int label = 0;
};

/// P(random positive outranks random negative), ties counted 0.5.
/// Returns nullopt when only one class is present.
inline std::optional<double> auc(std::span<const ScoredLabel> items) {
  std::vector<ScoredLabel> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  double pos = 0, neg = 0, wins = 0;
  // Walk tie groups in ascending score order.
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    double gp = 0, gn = 0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].label ? gp : gn) += 1;
      ++j;
    }
    wins += gp * neg + 0.5 * gp * gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return wins / (pos * neg);
}

inline std::optional<double> auc(const std::vector<ScoredLabel>& items) {
  return auc(std::span<const ScoredLabel>(items));
}

inline double dcg_at_k(std::span<const double> gains, std::size_t k) {
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, gains.size()); ++i) dcg += gains[i] / std::log2(static_cast<double>(i) + 2.0);
  return dcg;
}

/// NDCG@k of gains listed in ranked order; 1 when every gain is zero.
inline double ndcg_at_k(std::span<const double> ranked_gains, std::size_t k) {
  if (k < 1) throw InvalidArgument("ndcg_at_k requires k >= 1");
  std::vector<double> ideal(ranked_gains.begin(), ranked_gains.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg_at_k(ideal, k);
  if (idcg == 0.0) return 1.0;
  return dcg_at_k(ranked_gains, k) / idcg;
}

inline double ndcg_at_k(const std::vector<double>& ranked_gains, std::size_t k) {
  return ndcg_at_k(std::span<const double>(ranked_gains), k);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct BootstrapResult {
  double mean_difference = 0.0;
  double p_value = 1.0;  // fraction of resamples with mean difference <= 0
};

/// One-sided paired bootstrap for mean(a - b) > 0.
inline BootstrapResult paired_bootstrap(std::span<const double> a, std::span<const double> b,
                                        std::size_t resamples, std::uint64_t seed) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("paired_bootstrap: need equal non-empty samples");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  BootstrapResult r;
  r.mean_difference = mean(diff);
  Rng rng(seed);
  std::size_t not_better = 0;
  for (std::size_t s = 0; s < resamples; ++s) {
    double sum = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) sum += diff[uniform_index(rng, diff.size())];
    if (sum <= 0.0) ++not_better;
  }
  r.p_value = static_cast<double>(not_better) / static_cast<double>(resamples);
  return r;
}

}  // namespace dcdr

#pragma once

/**
 * Discrete noising kernels.
 *
 * Permutation level: each step keeps the ordering with probability 1 - beta
 * or swaps one uniformly chosen pair of positions. Token level: each position
 * independently keeps its item with probability 1 - beta or is replaced by one
 * of the other l_s - 1 candidates.
 *
 * The permutation kernel is a random walk on the symmetric group, so
 * Qbar_t[i][j] depends only on inverse(perm_i) * perm_j. We store the t-step
 * distribution started at the identity (one vector of length l_o! per step)
 * and read any Qbar_t entry from it. This is the same matrix, just not laid
 * out densely.
 */

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dcdr/errors.hpp"
#include "dcdr/permutation.hpp"
#include "dcdr/random.hpp"

namespace dcdr {

struct NoiseSchedule {
  double beta = 0.1;
  std::size_t steps = 5;  // T

  NoiseSchedule() = default;
  NoiseSchedule(double b, std::size_t t) : beta(b), steps(t) { validate(); }

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0))
      throw InvalidArgument("noise beta must lie in (0, 1), got " + std::to_string(beta));
    if (steps < 1) throw InvalidArgument("diffusion steps T must be >= 1");
  }

  /// Constant across steps; t is accepted so variable schedules can slot in.
  double beta_at(std::size_t /*t*/) const { return beta; }
};

enum class NoiseOp { kPerm, kToken };

inline std::string to_string(NoiseOp op) { return op == NoiseOp::kPerm ? "perm" : "token"; }

inline NoiseOp parse_noise_op(const std::string& s) {
  if (s == "perm") return NoiseOp::kPerm;
  if (s == "token") return NoiseOp::kToken;
  throw InvalidArgument("unknown noise op '" + s + "' (expected perm or token)");
}

template <typename T>
struct Categorical {
  std::vector<T> support;
  std::vector<double> probs;

  double sum() const {
    double s = 0.0;
    for (double p : probs) s += p;
    return s;
  }
};

namespace detail {

inline void renormalize(std::vector<double>& probs, const char* what) {
  double s = 0.0;
  for (double p : probs) s += p;
  if (!(std::abs(s - 1.0) <= 1e-6))
    throw NumericalError(std::string(what) + ": posterior mass " + std::to_string(s) +
                         " deviates from 1 by more than 1e-6");
  for (double& p : probs) p /= s;
}

inline void check_step(std::size_t t, std::size_t T) {
  if (t < 1 || t > T)
    throw RangeError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(T) +
                     "]");
}

}  // namespace detail

class PermTransitionModel {
 public:
  PermTransitionModel(std::size_t l_o, NoiseSchedule sched) : l_o_(l_o), sched_(sched) {
    if (l_o > kMaxOutputLength)
      throw CapacityError("permutation-level kernel supports l_o <= " +
                          std::to_string(kMaxOutputLength) + ", got " + std::to_string(l_o));
    if (l_o < 2) throw InvalidArgument("permutation-level kernel needs l_o >= 2");
    sched_.validate();
    n_ = static_cast<std::size_t>(factorial(l_o));
    perms_.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) perms_.push_back(unrank(i, l_o));
    const std::size_t c = swap_count();
    neighbors_.resize(n_ * c);
    for (std::size_t i = 0; i < n_; ++i) {
      auto nb = swap_neighbors(perms_[i]);
      for (std::size_t k = 0; k < c; ++k) neighbors_[i * c + k] = static_cast<std::uint32_t>(rank(nb[k]));
    }
    from_identity_.emplace_back(n_, 0.0);
    from_identity_[0][0] = 1.0;
    for (std::size_t t = 1; t <= sched_.steps; ++t) extend();
  }

  PermTransitionModel(const SequenceSpec& spec, NoiseSchedule sched)
      : PermTransitionModel(spec.output_length, sched) {}

  std::size_t output_length() const noexcept { return l_o_; }
  std::size_t state_count() const noexcept { return n_; }
  std::size_t swap_count() const noexcept { return l_o_ * (l_o_ - 1) / 2; }
  const NoiseSchedule& schedule() const noexcept { return sched_; }
  std::size_t horizon() const noexcept { return from_identity_.size() - 1; }
  const Perm& perm(std::size_t index) const { return perms_.at(index); }

  double stay_prob() const { return 1.0 - sched_.beta; }
  double swap_prob() const { return sched_.beta / static_cast<double>(swap_count()); }

  /// [Q]_{ij}
  double q(std::size_t i, std::size_t j) const {
    const std::size_t d = seq_distance(perms_.at(i), perms_.at(j));
    if (d == 0) return stay_prob();
    if (d == 2) return swap_prob();
    return 0.0;
  }

  /// Ranks of the swap neighbors of state i, in swap-pair order.
  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {neighbors_.data() + i * swap_count(), swap_count()};
  }

  /// t-step distribution started at the identity ordering (t <= horizon()).
  const std::vector<double>& identity_row(std::size_t t) const { return from_identity_.at(t); }

  /// [Qbar_t]_{ij}; Qbar_0 is the identity.
  double qbar(std::size_t t, std::size_t i, std::size_t j) const {
    const Perm rel = compose(inverse(perms_.at(i)), perms_.at(j));
    return from_identity_.at(t)[rank(rel)];
  }

  /// Full row i of Qbar_t.
  std::vector<double> qbar_row(std::size_t t, std::size_t i) const {
    const Perm inv = inverse(perms_.at(i));
    const auto& g = from_identity_.at(t);
    std::vector<double> row(n_);
    for (std::size_t j = 0; j < n_; ++j) row[j] = g[rank(compose(inv, perms_[j]))];
    return row;
  }

  /// Append one more cumulative step (row_{t+1} = row_t * Q).
  void extend() {
    const auto& prev = from_identity_.back();
    std::vector<double> next(n_, 0.0);
    const double stay = stay_prob(), move = swap_prob();
    const std::size_t c = swap_count();
    for (std::size_t i = 0; i < n_; ++i) {
      const double p = prev[i];
      if (p == 0.0) continue;
      next[i] += p * stay;
      for (std::size_t k = 0; k < c; ++k) next[neighbors_[i * c + k]] += p * move;
    }
    from_identity_.push_back(std::move(next));
  }

  Eigen::SparseMatrix<double, Eigen::RowMajor> step_matrix() const {
    std::vector<Eigen::Triplet<double>> trip;
    const std::size_t c = swap_count();
    trip.reserve(n_ * (c + 1));
    for (std::size_t i = 0; i < n_; ++i) {
      trip.emplace_back(static_cast<int>(i), static_cast<int>(i), stay_prob());
      for (std::size_t k = 0; k < c; ++k)
        trip.emplace_back(static_cast<int>(i), static_cast<int>(neighbors_[i * c + k]), swap_prob());
    }
    Eigen::SparseMatrix<double, Eigen::RowMajor> m(static_cast<int>(n_), static_cast<int>(n_));
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  }

  /// Dense Q. Only sensible for small l_o (720 x 720 at l_o = 6).
  Eigen::MatrixXd dense_step_matrix() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    const std::size_t c = swap_count();
    for (std::size_t i = 0; i < n_; ++i) {
      m(i, i) = stay_prob();
      for (std::size_t k = 0; k < c; ++k) m(i, neighbors_[i * c + k]) = swap_prob();
    }
    return m;
  }

  Eigen::MatrixXd dense_cumulative(std::size_t t) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
      auto row = qbar_row(t, i);
      for (std::size_t j = 0; j < n_; ++j) m(i, j) = row[j];
    }
    return m;
  }

 private:
  std::size_t l_o_;
  NoiseSchedule sched_;
  std::size_t n_ = 0;
  std::vector<Perm> perms_;
  std::vector<std::uint32_t> neighbors_;
  std::vector<std::vector<double>> from_identity_;
};

class TokenTransitionModel {
 public:
  TokenTransitionModel(std::size_t l_s, NoiseSchedule sched) : l_s_(l_s), sched_(sched) {
    if (l_s < 2) throw InvalidArgument("token-level kernel needs l_s >= 2, got " + std::to_string(l_s));
    sched_.validate();
    const auto n = static_cast<Eigen::Index>(l_s);
    step_ = Eigen::MatrixXd::Constant(n, n, sched_.beta / static_cast<double>(l_s - 1));
    step_.diagonal().setConstant(1.0 - sched_.beta);
    cumulative_.push_back(Eigen::MatrixXd::Identity(n, n));
    for (std::size_t t = 1; t <= sched_.steps; ++t) extend();
  }

  TokenTransitionModel(const SequenceSpec& spec, NoiseSchedule sched)
      : TokenTransitionModel(spec.input_length, sched) {}

  std::size_t input_length() const noexcept { return l_s_; }
  std::size_t state_count() const noexcept { return l_s_; }
  const NoiseSchedule& schedule() const noexcept { return sched_; }
  std::size_t horizon() const noexcept { return cumulative_.size() - 1; }

  const Eigen::MatrixXd& step_matrix() const noexcept { return step_; }
  const Eigen::MatrixXd& cumulative(std::size_t t) const { return cumulative_.at(t); }

  void extend() { cumulative_.push_back(cumulative_.back() * step_); }

 private:
  std::size_t l_s_;
  NoiseSchedule sched_;
  Eigen::MatrixXd step_;
  std::vector<Eigen::MatrixXd> cumulative_;
};

/// Draw R_t ~ q(R_t | R_0) under the permutation-level operation.
inline ItemSequence sample_forward(const PermTransitionModel& tm, const ItemSequence& r0, std::size_t t,
                                   Rng& rng) {
  detail::check_step(t, tm.schedule().steps);
  if (r0.size() != tm.output_length() || !r0.is_permutation_sequence())
    throw InvalidPermutation("permutation-level forward sample needs a permutation of length " +
                             std::to_string(tm.output_length()));
  const auto& g = tm.identity_row(t);
  const std::size_t sigma = sample_discrete(rng, g);
  return r0.with_positions(compose(r0.positions(), tm.perm(sigma)));
}

/// Draw R_t ~ q(R_t | R_0) under the token-level operation (positions independent).
inline ItemSequence sample_forward(const TokenTransitionModel& tm, const ItemSequence& r0, std::size_t t,
                                   Rng& rng) {
  detail::check_step(t, tm.schedule().steps);
  if (r0.base_items().size() != tm.input_length())
    throw InvalidArgument("token-level forward sample: base size differs from l_s");
  const Eigen::MatrixXd& m = tm.cumulative(t);
  Perm pos(r0.size());
  std::vector<double> row(tm.input_length());
  for (std::size_t k = 0; k < r0.size(); ++k) {
    const auto b = static_cast<Eigen::Index>(r0.positions()[k]);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = m(b, static_cast<Eigen::Index>(j));
    pos[k] = sample_discrete(rng, row);
  }
  return r0.with_positions(std::move(pos));
}

/// Support {R_t} followed by swap_neighbors(R_t).
inline std::vector<ItemSequence> perm_support(const ItemSequence& rt) {
  std::vector<ItemSequence> out;
  out.push_back(rt);
  for (auto& p : swap_neighbors(rt.positions())) out.push_back(rt.with_positions(std::move(p)));
  return out;
}

/// q(R_{t-1} | R_t, R_0) for the permutation-level operation.
inline Categorical<ItemSequence> posterior_perm(const ItemSequence& rt, const ItemSequence& r0, std::size_t t,
                                                const PermTransitionModel& tm) {
  detail::check_step(t, tm.horizon());
  if (rt.base_items() != r0.base_items()) throw InvalidArgument("posterior_perm: R_t and R_0 differ in base items");
  const auto rt_idx = rank(rt.positions());
  const auto r0_idx = rank(r0.positions());
  const double denom = tm.qbar(t, r0_idx, rt_idx);
  if (!(denom > 0.0))
    throw InconsistentEvidence("posterior_perm: R_t unreachable from R_0 in " + std::to_string(t) + " steps");
  Categorical<ItemSequence> out;
  out.support = perm_support(rt);
  out.probs.reserve(out.support.size());
  for (std::size_t k = 0; k < out.support.size(); ++k) {
    const double lik = k == 0 ? tm.stay_prob() : tm.swap_prob();  // q(R_t | r), symmetric
    const double prior = tm.qbar(t - 1, r0_idx, rank(out.support[k].positions()));
    out.probs.push_back(lik * prior / denom);
  }
  detail::renormalize(out.probs, "posterior_perm");
  return out;
}

/// Per-position q(z_{t-1} | z_t, z_0) over the l_s base slots.
inline std::vector<Categorical<std::size_t>> posterior_token(const ItemSequence& rt, const ItemSequence& r0,
                                                             std::size_t t, const TokenTransitionModel& tm) {
  detail::check_step(t, tm.horizon());
  if (rt.size() != r0.size() || rt.base_items() != r0.base_items())
    throw InvalidArgument("posterior_token: R_t and R_0 are not over the same candidates");
  const Eigen::MatrixXd& step = tm.step_matrix();
  const Eigen::MatrixXd& prev = tm.cumulative(t - 1);
  const Eigen::MatrixXd& cur = tm.cumulative(t);
  const auto n = static_cast<Eigen::Index>(tm.input_length());
  std::vector<Categorical<std::size_t>> out(rt.size());
  for (std::size_t k = 0; k < rt.size(); ++k) {
    const auto a = static_cast<Eigen::Index>(rt.positions()[k]);
    const auto b = static_cast<Eigen::Index>(r0.positions()[k]);
    const double denom = cur(b, a);
    if (!(denom > 0.0))
      throw InconsistentEvidence("posterior_token: position " + std::to_string(k) + " unreachable");
    auto& cat = out[k];
    cat.support.resize(static_cast<std::size_t>(n));
    cat.probs.resize(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      cat.support[j] = static_cast<std::size_t>(j);
      cat.probs[j] = step(j, a) * prev(b, j) / denom;
    }
    detail::renormalize(cat.probs, "posterior_token");
  }
  return out;
}

}  // namespace dcdr

#pragma once

// Computational checks that a noising kernel mixes to the uniform distribution:
// doubly-stochastic rows/columns, strong connectivity plus a self-loop
// (ergodicity), and the total-variation distance to uniform over time.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <vector>

#include "dcdr/errors.hpp"
#include "dcdr/forward.hpp"

namespace dcdr {

struct StochasticCheck {
  bool ok = false;
  double max_row_deviation = 0.0;
  double max_col_deviation = 0.0;
};

struct TvPoint {
  std::size_t t = 0;
  double tv = 0.0;
  std::size_t worst_start = 0;
};

struct ChainReport {
  StochasticCheck doubly_stochastic;
  bool ergodic = false;
  std::vector<TvPoint> tv_curve;
  std::optional<std::size_t> mixing_step;  // first t with tv < threshold
  double threshold = 1e-3;
};

namespace detail {

template <typename Visit>
StochasticCheck stochastic_sums(Eigen::Index rows, Eigen::Index cols, double tol, Visit&& for_each_entry) {
  if (rows != cols) throw InvalidMatrix("matrix is not square");
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  for_each_entry([&](Eigen::Index i, Eigen::Index j, double v) {
    if (v < 0.0 || !std::isfinite(v)) throw InvalidMatrix("matrix has a negative or non-finite entry");
    row_sum[i] += v;
    col_sum[j] += v;
  });
  StochasticCheck out;
  for (double s : row_sum) out.max_row_deviation = std::max(out.max_row_deviation, std::abs(s - 1.0));
  for (double s : col_sum) out.max_col_deviation = std::max(out.max_col_deviation, std::abs(s - 1.0));
  out.ok = out.max_row_deviation <= tol && out.max_col_deviation <= tol;
  return out;
}

inline bool all_reached(const std::vector<std::vector<Eigen::Index>>& adj) {
  std::vector<bool> seen(adj.size(), false);
  std::deque<Eigen::Index> queue{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (auto v : adj[u])
      if (!seen[v]) {
        seen[v] = true;
        ++count;
        queue.push_back(v);
      }
  }
  return count == adj.size();
}

template <typename Visit>
bool ergodic_from_entries(Eigen::Index n, Visit&& for_each_entry) {
  if (n == 0) throw InvalidMatrix("empty matrix");
  std::vector<std::vector<Eigen::Index>> fwd(n), bwd(n);
  bool self_loop = false;
  for_each_entry([&](Eigen::Index i, Eigen::Index j, double v) {
    if (v < 0.0) throw InvalidMatrix("matrix has a negative entry");
    if (v == 0.0) return;
    if (i == j) self_loop = true;
    fwd[i].push_back(j);
    bwd[j].push_back(i);
  });
  // Strongly connected iff every node is reachable from 0 in both directions.
  return self_loop && all_reached(fwd) && all_reached(bwd);
}

inline double tv_to_uniform(const double* dist, std::size_t n) {
  const double u = 1.0 / static_cast<double>(n);
  double l1 = 0.0;
  for (std::size_t j = 0; j < n; ++j) l1 += std::abs(dist[j] - u);
  return 0.5 * l1;
}

}  // namespace detail

inline StochasticCheck check_doubly_stochastic(const Eigen::MatrixXd& m, double tol = 1e-9) {
  return detail::stochastic_sums(m.rows(), m.cols(), tol, [&](auto&& f) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f(i, j, m(i, j));
  });
}

template <int Options>
StochasticCheck check_doubly_stochastic(const Eigen::SparseMatrix<double, Options>& m, double tol = 1e-9) {
  return detail::stochastic_sums(m.rows(), m.cols(), tol, [&](auto&& f) {
    for (int k = 0; k < m.outerSize(); ++k)
      for (typename Eigen::SparseMatrix<double, Options>::InnerIterator it(m, k); it; ++it)
        f(it.row(), it.col(), it.value());
  });
}

inline bool check_ergodic(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw InvalidMatrix("matrix is not square");
  return detail::ergodic_from_entries(m.rows(), [&](auto&& f) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f(i, j, m(i, j));
  });
}

template <int Options>
bool check_ergodic(const Eigen::SparseMatrix<double, Options>& m) {
  if (m.rows() != m.cols()) throw InvalidMatrix("matrix is not square");
  return detail::ergodic_from_entries(m.rows(), [&](auto&& f) {
    for (int k = 0; k < m.outerSize(); ++k)
      for (typename Eigen::SparseMatrix<double, Options>::InnerIterator it(m, k); it; ++it)
        f(it.row(), it.col(), it.value());
  });
}

/// Max over start states of TV(row of M^t, uniform), for t = 0..t_max.
/// Propagates every start state, so cost is O(n^2) per step for dense M.
inline std::vector<TvPoint> tv_curve(const Eigen::MatrixXd& m, std::size_t t_max) {
  if (m.rows() != m.cols()) throw InvalidMatrix("matrix is not square");
  if (t_max < 1) throw InvalidArgument("t_max must be >= 1");
  const auto n = static_cast<std::size_t>(m.rows());
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(m.rows(), m.cols());
  std::vector<TvPoint> curve;
  for (std::size_t t = 0; t <= t_max; ++t) {
    if (t > 0) power = power * m;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = power;
    TvPoint p{t, -1.0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const double tv = detail::tv_to_uniform(rows.row(static_cast<Eigen::Index>(i)).data(), n);
      if (tv > p.tv) p = {t, tv, i};
    }
    curve.push_back(p);
  }
  return curve;
}

namespace detail {

inline ChainReport finish_report(StochasticCheck ds, bool ergodic, std::vector<TvPoint> curve, double threshold) {
  ChainReport r;
  r.doubly_stochastic = ds;
  r.ergodic = ergodic;
  r.threshold = threshold;
  for (const auto& p : curve)
    if (p.tv < threshold) {
      r.mixing_step = p.t;
      break;
    }
  r.tv_curve = std::move(curve);
  return r;
}

}  // namespace detail

/// Report for an arbitrary dense kernel (every start state propagated).
inline ChainReport stationary_gap(const Eigen::MatrixXd& m, std::size_t t_max, double threshold = 1e-3) {
  return detail::finish_report(check_doubly_stochastic(m), check_ergodic(m), tv_curve(m, t_max), threshold);
}

/// Report for the permutation kernel. Every row of Qbar_t is a relabeling of
/// the identity row, so the max over start states equals the identity row's TV.
/// Extends the precomputed horizon on the fly when t_max exceeds it.
inline ChainReport stationary_gap(const PermTransitionModel& tm, std::size_t t_max, double threshold = 1e-3) {
  if (t_max < 1) throw InvalidArgument("t_max must be >= 1");
  PermTransitionModel work = tm;
  while (work.horizon() < t_max) work.extend();
  std::vector<TvPoint> curve;
  for (std::size_t t = 0; t <= t_max; ++t) {
    const auto& g = work.identity_row(t);
    curve.push_back({t, detail::tv_to_uniform(g.data(), g.size()), 0});
  }
  const auto q = tm.step_matrix();
  return detail::finish_report(check_doubly_stochastic(q), check_ergodic(q), std::move(curve), threshold);
}

inline ChainReport stationary_gap(const TokenTransitionModel& tm, std::size_t t_max, double threshold = 1e-3) {
  return stationary_gap(tm.step_matrix(), t_max, threshold);
}

/// Largest |(u M)_j - 1/n| for the uniform row vector u.
template <typename Matrix>
double uniform_residual(const Matrix& m) {
  const Eigen::RowVectorXd u = Eigen::RowVectorXd::Constant(m.rows(), 1.0 / static_cast<double>(m.rows()));
  const Eigen::RowVectorXd r = u * m;
  return (r.array() - 1.0 / static_cast<double>(m.rows())).abs().maxCoeff();
}

}  // namespace dcdr

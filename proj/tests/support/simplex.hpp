#pragma once

// Self-contained dense two-phase simplex for the test oracles. Independent of
// the conic module by design: it provides the second algebraic route for
// checking the main solver. Bland's rule, so it cannot cycle; intended for
// the small LPs that appear in the oracles, not for production use.

#include <Eigen/Dense>

#include <limits>
#include <vector>

namespace pcbf::testsupport {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SimplexResult {
  enum class Status { Optimal, Infeasible, Unbounded };
  Status status = Status::Infeasible;
  double value = 0.0;
  VectorXd x;
};

namespace detail {

constexpr double kTol = 1e-9;

// min c'v s.t. T v = rhs, v >= 0, starting from the given feasible basis.
// Returns false on unboundedness.
inline bool run_simplex(MatrixXd& T, VectorXd& rhs, VectorXd c, std::vector<int>& basis) {
  const int m = static_cast<int>(T.rows());
  const int ncol = static_cast<int>(T.cols());
  VectorXd red(ncol);
  for (int guard = 0; guard < 100000; ++guard) {
    // reduced costs: c - c_B' B^-1 T, with the tableau kept in canonical form
    red = c;
    for (int i = 0; i < m; ++i)
      if (c(basis[i]) != 0.0) red -= c(basis[i]) * T.row(i).transpose();

    int enter = -1;
    for (int j = 0; j < ncol; ++j)
      if (red(j) < -kTol) {
        enter = j;  // Bland: first improving index
        break;
      }
    if (enter < 0) return true;

    int leave = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
      if (T(i, enter) > kTol) {
        const double ratio = rhs(i) / T(i, enter);
        if (ratio < best - kTol ||
            (ratio < best + kTol && (leave < 0 || basis[i] < basis[leave]))) {
          best = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) return false;  // unbounded

    const double piv = T(leave, enter);
    T.row(leave) /= piv;
    rhs(leave) /= piv;
    for (int i = 0; i < m; ++i) {
      if (i == leave) continue;
      const double f = T(i, enter);
      if (f != 0.0) {
        T.row(i) -= f * T.row(leave);
        rhs(i) -= f * rhs(leave);
      }
    }
    basis[leave] = enter;
  }
  return false;
}

}  // namespace detail

/// min c'x subject to A x <= b. Components with nonneg[j] true are
/// constrained to x_j >= 0, the rest are free (split internally).
inline SimplexResult simplex_solve(const VectorXd& c, const MatrixXd& A, const VectorXd& b,
                                   const std::vector<bool>& nonneg = {}) {
  const int n = static_cast<int>(A.cols());
  const int m = static_cast<int>(A.rows());
  std::vector<bool> nn = nonneg.empty() ? std::vector<bool>(n, false) : nonneg;

  // column layout: for each variable one or two nonnegative columns, then
  // slacks, then artificials
  std::vector<int> pos_col(n), neg_col(n, -1);
  int ncol = 0;
  for (int j = 0; j < n; ++j) {
    pos_col[j] = ncol++;
    if (!nn[j]) neg_col[j] = ncol++;
  }
  const int slack0 = ncol;
  ncol += m;
  const int art0 = ncol;
  ncol += m;

  MatrixXd T = MatrixXd::Zero(m, ncol);
  VectorXd rhs = b;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T(i, pos_col[j]) = A(i, j);
      if (neg_col[j] >= 0) T(i, neg_col[j]) = -A(i, j);
    }
    T(i, slack0 + i) = 1.0;
    if (rhs(i) < 0) {
      T.row(i) *= -1.0;
      rhs(i) *= -1.0;
    }
    T(i, art0 + i) = 1.0;
  }

  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) basis[i] = art0 + i;

  // phase 1
  VectorXd c1 = VectorXd::Zero(ncol);
  c1.segment(art0, m).setOnes();
  SimplexResult res;
  if (!detail::run_simplex(T, rhs, c1, basis)) return res;  // cannot happen
  double phase1 = 0.0;
  for (int i = 0; i < m; ++i)
    if (basis[i] >= art0) phase1 += rhs(i);
  if (phase1 > 1e-7) {
    res.status = SimplexResult::Status::Infeasible;
    return res;
  }
  // pivot lingering artificials out where possible; rows that cannot be
  // pivoted are redundant and harmless with rhs ~ 0
  for (int i = 0; i < m; ++i) {
    if (basis[i] < art0) continue;
    for (int j = 0; j < art0; ++j) {
      if (std::abs(T(i, j)) > 1e-7) {
        const double piv = T(i, j);
        T.row(i) /= piv;
        rhs(i) /= piv;
        for (int r = 0; r < m; ++r) {
          if (r == i) continue;
          const double f = T(r, j);
          if (f != 0.0) {
            T.row(r) -= f * T.row(i);
            rhs(r) -= f * rhs(i);
          }
        }
        basis[i] = j;
        break;
      }
    }
  }

  // phase 2: forbid artificials by pricing them out
  VectorXd c2 = VectorXd::Zero(ncol);
  for (int j = 0; j < n; ++j) {
    c2(pos_col[j]) = c(j);
    if (neg_col[j] >= 0) c2(neg_col[j]) = -c(j);
  }
  c2.segment(art0, m).setConstant(1e12);
  if (!detail::run_simplex(T, rhs, c2, basis)) {
    res.status = SimplexResult::Status::Unbounded;
    return res;
  }

  VectorXd v = VectorXd::Zero(ncol);
  for (int i = 0; i < m; ++i) v(basis[i]) = rhs(i);
  res.x.resize(n);
  for (int j = 0; j < n; ++j)
    res.x(j) = v(pos_col[j]) - (neg_col[j] >= 0 ? v(neg_col[j]) : 0.0);
  res.value = c.dot(res.x);
  res.status = SimplexResult::Status::Optimal;
  return res;
}

/// Feasibility of {x : A x <= b} via phase 1 only.
inline bool simplex_feasible(const MatrixXd& A, const VectorXd& b) {
  VectorXd c = VectorXd::Zero(A.cols());
  auto r = simplex_solve(c, A, b);
  return r.status == SimplexResult::Status::Optimal;
}

}  // namespace pcbf::testsupport

#pragma once

// Independent reference for the linear soft MPC: a condensed (single
// shooting) transcription with states eliminated through the prediction
// matrices, the ellipsoidal terminal set replaced by inscribed/circumscribed
// polygons, and the resulting LPs solved by the test simplex. Brackets the
// true value: v_outer <= V* <= v_inner.

#include "pcbf/model.hpp"
#include "support/simplex.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace pcbf::testsupport {

struct OracleBracket {
  bool feasible_outer = false;  // relaxation feasible (necessary condition)
  bool feasible_inner = false;  // restriction feasible (sufficient condition)
  double v_outer = 0.0;
  double v_inner = 0.0;
};

// rows of the polygonal approximations of {x : x'Px <= alpha}
inline void ellipse_polygons(const MatrixXd& P, double alpha, int cuts,
                             MatrixXd& G_outer, VectorXd& g_outer,
                             MatrixXd& G_inner, VectorXd& g_inner) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
  const MatrixXd sqrt_inv = es.operatorInverseSqrt();
  std::vector<VectorXd> pts(cuts);
  for (int k = 0; k < cuts; ++k) {
    const double th = 2.0 * std::numbers::pi * k / cuts;
    VectorXd w(2);
    w << std::cos(th), std::sin(th);
    pts[k] = std::sqrt(alpha) * (sqrt_inv * w);
  }
  G_outer.resize(cuts, 2);
  g_outer.resize(cuts);
  G_inner.resize(cuts, 2);
  g_inner.resize(cuts);
  for (int k = 0; k < cuts; ++k) {
    const VectorXd grad = P * pts[k];  // tangent halfplane at the boundary point
    G_outer.row(k) = grad.transpose();
    g_outer(k) = alpha;
    const VectorXd& a = pts[k];
    const VectorXd& b = pts[(k + 1) % cuts];
    VectorXd nrm(2);
    nrm << b(1) - a(1), -(b(0) - a(0));  // outward for a CCW polygon
    G_inner.row(k) = nrm.transpose();
    g_inner(k) = nrm.dot(a);
  }
}

// condensed rows for one terminal representation; with_slack=false builds
// the hard problem (no slack columns)
inline SimplexResult condensed_solve(const ProblemPreset& pr, const VectorXd& x0,
                                     const MatrixXd& Gf, const VectorXd& gf,
                                     bool with_slack = true) {
  const int n = pr.system.n, m = pr.system.m, N = pr.N;
  const MatrixXd& A = pr.system.A;
  const MatrixXd& B = pr.system.B;

  // x_i = powA[i] x0 + sum_j powA[i-1-j] B u_j
  std::vector<MatrixXd> powA(N + 1);
  powA[0] = MatrixXd::Identity(n, n);
  for (int i = 1; i <= N; ++i) powA[i] = A * powA[i - 1];
  auto reach = [&](int i, int j) { return MatrixXd(powA[i - 1 - j] * B); };

  const int nu = N * m;
  const int nv = nu + (with_slack ? N : 0);  // inputs then slacks
  const int kx = pr.X.rows(), ku = pr.U.rows(), kf = static_cast<int>(Gf.rows());
  const int rows = N * kx + N * ku + kf;
  MatrixXd Alp = MatrixXd::Zero(rows, nv);
  VectorXd blp(rows);
  int r = 0;
  for (int i = 0; i < N; ++i) {
    for (int c = 0; c < kx; ++c) {
      const VectorXd a = pr.X.G.row(c).transpose();
      for (int j = 0; j < i; ++j)
        Alp.block(r, j * m, 1, m) = (a.transpose() * reach(i, j));
      if (with_slack) Alp(r, nu + i) = -1.0;
      blp(r) = pr.X.g(c) - a.dot(powA[i] * x0);
      ++r;
    }
  }
  for (int i = 0; i < N; ++i) {
    Alp.block(r, i * m, ku, m) = pr.U.G;
    blp.segment(r, ku) = pr.U.g;
    r += ku;
  }
  for (int c = 0; c < kf; ++c) {
    const VectorXd a = Gf.row(c).transpose();
    for (int j = 0; j < N; ++j)
      Alp.block(r, j * m, 1, m) = (a.transpose() * reach(N, j));
    blp(r) = gf(c) - a.dot(powA[N] * x0);
    ++r;
  }

  VectorXd c = VectorXd::Zero(nv);
  std::vector<bool> nonneg(nv, false);
  if (with_slack) {
    c.tail(N).setOnes();
    for (int i = 0; i < N; ++i) nonneg[nu + i] = true;
  }
  return simplex_solve(c, Alp, blp, nonneg);
}

inline OracleBracket condensed_value_bracket(const ProblemPreset& pr, const VectorXd& x0,
                                             int cuts = 96) {
  OracleBracket out;
  MatrixXd Go, Gi;
  VectorXd go, gi;
  switch (pr.Xf.variant) {
    case TerminalSet::Variant::Ellipsoid:
      ellipse_polygons(pr.Xf.P, pr.Xf.alpha, cuts, Go, go, Gi, gi);
      break;
    case TerminalSet::Variant::Polytope:
      Go = Gi = pr.Xf.poly.G;
      go = gi = pr.Xf.poly.g;
      break;
    case TerminalSet::Variant::Point: {
      const int n = pr.system.n;
      Go.resize(2 * n, n);
      go.resize(2 * n);
      Go << MatrixXd::Identity(n, n), -MatrixXd::Identity(n, n);
      go << pr.Xf.xf, -pr.Xf.xf;
      Gi = Go;
      gi = go;
      break;
    }
  }
  auto outer = condensed_solve(pr, x0, Go, go);
  out.feasible_outer = outer.status == SimplexResult::Status::Optimal;
  if (out.feasible_outer) out.v_outer = outer.value;
  auto inner = condensed_solve(pr, x0, Gi, gi);
  out.feasible_inner = inner.status == SimplexResult::Status::Optimal;
  if (out.feasible_inner) out.v_inner = inner.value;
  return out;
}

/// Hard-problem feasibility bracket: phase-1 on the slack-free condensed
/// transcription. Returns (outer feasible = necessary, inner feasible =
/// sufficient) for true hard feasibility.
inline std::pair<bool, bool> condensed_hard_feasible(const ProblemPreset& pr,
                                                     const VectorXd& x0, int cuts = 96) {
  MatrixXd Go, Gi;
  VectorXd go, gi;
  if (pr.Xf.variant == TerminalSet::Variant::Ellipsoid) {
    ellipse_polygons(pr.Xf.P, pr.Xf.alpha, cuts, Go, go, Gi, gi);
  } else if (pr.Xf.variant == TerminalSet::Variant::Polytope) {
    Go = Gi = pr.Xf.poly.G;
    go = gi = pr.Xf.poly.g;
  } else {
    const int n = pr.system.n;
    Go.resize(2 * n, n);
    go.resize(2 * n);
    Go << MatrixXd::Identity(n, n), -MatrixXd::Identity(n, n);
    go << pr.Xf.xf, -pr.Xf.xf;
    Gi = Go;
    gi = go;
  }
  const bool outer = condensed_solve(pr, x0, Go, go, false).status ==
                     SimplexResult::Status::Optimal;
  const bool inner = condensed_solve(pr, x0, Gi, gi, false).status ==
                     SimplexResult::Status::Optimal;
  return {outer, inner};
}

}  // namespace pcbf::testsupport

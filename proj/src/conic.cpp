#include "pcbf/conic.hpp"

#include "pcbf/model.hpp"  // ConfigError

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace pcbf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Cone layout of the stacked constraints A z + s = b, s in K:
// rows [0, me) zero cone, [me, me+mi) nonnegative cone, then SOC blocks.
struct ConeLayout {
  int me = 0;
  int mi = 0;
  std::vector<int> soc_sizes;  // 1 + F.rows() per block
  int total = 0;
};

struct Stacked {
  MatrixXd A;
  VectorXd b;
  ConeLayout cones;
};

Stacked stack_constraints(const ConicProgram& p) {
  Stacked s;
  s.cones.me = p.eq_rows();
  s.cones.mi = p.in_rows();
  int m = s.cones.me + s.cones.mi;
  for (const auto& blk : p.soc) {
    s.cones.soc_sizes.push_back(1 + static_cast<int>(blk.F.rows()));
    m += s.cones.soc_sizes.back();
  }
  s.cones.total = m;

  s.A.setZero(m, p.nvar);
  s.b.setZero(m);
  int row = 0;
  if (s.cones.me > 0) {
    s.A.topRows(s.cones.me) = p.A_eq;
    s.b.head(s.cones.me) = p.b_eq;
    row += s.cones.me;
  }
  if (s.cones.mi > 0) {
    s.A.middleRows(row, s.cones.mi) = p.A_in;
    s.b.segment(row, s.cones.mi) = p.b_in;
    row += s.cones.mi;
  }
  // ||F z + d|| <= r'z + s  <=>  b_blk - A_blk z in SOC with
  // A_blk = -[r'; F], b_blk = [s; d].
  for (const auto& blk : p.soc) {
    const int k = 1 + static_cast<int>(blk.F.rows());
    s.A.row(row) = -blk.r.transpose();
    s.A.middleRows(row + 1, k - 1) = -blk.F;
    s.b(row) = blk.s;
    s.b.segment(row + 1, k - 1) = blk.d;
    row += k;
  }
  return s;
}

// Projection onto K (in place).
void project_cone(const ConeLayout& c, VectorXd& v) {
  v.head(c.me).setZero();
  v.segment(c.me, c.mi) = v.segment(c.me, c.mi).cwiseMax(0.0);
  int row = c.me + c.mi;
  for (int k : c.soc_sizes) {
    const double t = v(row);
    const double nv = v.segment(row + 1, k - 1).norm();
    if (nv <= t) {
      // inside, keep
    } else if (nv <= -t) {
      v.segment(row, k).setZero();
    } else {
      const double coef = 0.5 * (t + nv);
      v(row) = coef;
      v.segment(row + 1, k - 1) *= coef / nv;
    }
    row += k;
  }
}

// max(0, distance-type violation) of y against the dual cone of -K + the
// sign conventions of the Farkas certificate: y free on eq rows, y >= 0 on
// inequality rows, y in SOC on cone rows.
double dual_cone_violation(const ConeLayout& c, const VectorXd& y) {
  double viol = 0.0;
  if (c.mi > 0) viol = std::max(viol, -y.segment(c.me, c.mi).minCoeff());
  int row = c.me + c.mi;
  for (int k : c.soc_sizes) {
    viol = std::max(viol, y.segment(row + 1, k - 1).norm() - y(row));
    row += k;
  }
  return std::max(viol, 0.0);
}

// Primal feasibility violation of z on the original (unscaled) program.
double primal_violation(const ConicProgram& p, const VectorXd& z) {
  double v = 0.0;
  if (p.eq_rows() > 0) v = std::max(v, (p.A_eq * z - p.b_eq).cwiseAbs().maxCoeff());
  if (p.in_rows() > 0) v = std::max(v, (p.A_in * z - p.b_in).maxCoeff());
  for (const auto& blk : p.soc)
    v = std::max(v, (blk.F * z + blk.d).norm() - blk.r.dot(z) - blk.s);
  return std::max(v, 0.0);
}

struct PolishResult {
  bool ok = false;
  VectorXd z;
  VectorXd y;
};

// Lawson-Hanson least squares min ||M x - b|| with x_i >= 0 where nonneg[i],
// other components free. Small dense problems only.
VectorXd nnls(const MatrixXd& M, const VectorXd& b, const std::vector<bool>& nonneg) {
  const int nc = static_cast<int>(M.cols());
  VectorXd x = VectorXd::Zero(nc);
  std::vector<bool> passive(nc);
  for (int i = 0; i < nc; ++i) passive[i] = !nonneg[i];

  auto solve_passive = [&](VectorXd& zsol) {
    std::vector<int> idx;
    for (int i = 0; i < nc; ++i)
      if (passive[i]) idx.push_back(i);
    zsol = VectorXd::Zero(nc);
    if (idx.empty()) return;
    MatrixXd Mp(M.rows(), idx.size());
    for (size_t c = 0; c < idx.size(); ++c) Mp.col(c) = M.col(idx[c]);
    auto qr = Mp.colPivHouseholderQr();
    VectorXd sol = qr.solve(b);
    for (int ref = 0; ref < 2; ++ref) sol += qr.solve(b - Mp * sol);
    for (size_t c = 0; c < idx.size(); ++c) zsol(idx[c]) = sol(c);
  };

  // fast path: the unconstrained least-squares solution may already obey the
  // sign constraints
  VectorXd ztrial;
  std::fill(passive.begin(), passive.end(), true);
  solve_passive(ztrial);
  bool sign_ok = true;
  for (int i = 0; i < nc; ++i)
    if (nonneg[i] && ztrial(i) < 0) sign_ok = false;
  if (sign_ok) return ztrial;

  // Lawson-Hanson from the free-columns solution
  for (int i = 0; i < nc; ++i) passive[i] = !nonneg[i];
  solve_passive(x);

  for (int outer = 0; outer < 4 * nc; ++outer) {
    const VectorXd w = M.transpose() * (b - M * x);
    int best = -1;
    double best_w = 1e-11;
    for (int i = 0; i < nc; ++i)
      if (!passive[i] && w(i) > best_w) {
        best_w = w(i);
        best = i;
      }
    if (best < 0) break;
    passive[best] = true;
    for (int inner = 0; inner < 4 * nc; ++inner) {
      solve_passive(ztrial);
      double alpha = 1.0;
      int blocker = -1;
      for (int i = 0; i < nc; ++i) {
        if (!passive[i] || !nonneg[i] || ztrial(i) > 0) continue;
        const double a = x(i) / (x(i) - ztrial(i));
        if (a < alpha) {
          alpha = a;
          blocker = i;
        }
      }
      if (blocker < 0) {
        x = ztrial;
        break;
      }
      x += alpha * (ztrial - x);
      for (int i = 0; i < nc; ++i)
        if (passive[i] && nonneg[i] && x(i) <= 1e-14) {
          x(i) = 0;
          passive[i] = false;
        }
    }
  }
  return x;
}

struct CertResult {
  bool ok = false;
  VectorXd y;
  double residual = 0.0;
};

double farkas_residual_of(const Stacked& st, const VectorXd& y) {
  const double res_A = (st.A.transpose() * y).cwiseAbs().maxCoeff();
  return std::max(res_A, dual_cone_violation(st.cones, y));
}

// Clean up a candidate Farkas direction by least squares над its support:
// min ||A' y||^2 subject to b' y = -1, with inequality components kept on
// the nonnegative side and each SOC block restricted to the candidate ray.
CertResult refine_certificate(const Stacked& st, const VectorXd& t, double eps_pinf) {
  CertResult out;
  const ConeLayout& c = st.cones;
  const double tau = 1e-5 * std::max(1e-30, t.cwiseAbs().maxCoeff());

  std::vector<VectorXd> dirs;   // support directions in row space
  std::vector<bool> nonneg;
  std::vector<int> row_start, row_len;
  for (int i = 0; i < c.me; ++i) {
    if (std::abs(t(i)) > tau) {
      VectorXd d = VectorXd::Zero(st.cones.total);
      d(i) = (t(i) > 0) ? 1.0 : -1.0;
      dirs.push_back(d);
      nonneg.push_back(false);
    }
  }
  for (int i = c.me; i < c.me + c.mi; ++i) {
    if (t(i) > tau) {
      VectorXd d = VectorXd::Zero(st.cones.total);
      d(i) = 1.0;
      dirs.push_back(d);
      nonneg.push_back(true);
    }
  }
  int row = c.me + c.mi;
  for (int k : c.soc_sizes) {
    const double head = t(row);
    if (head > tau) {
      VectorXd tail = t.segment(row + 1, k - 1);
      const double nt = tail.norm();
      VectorXd d = VectorXd::Zero(st.cones.total);
      d(row) = 1.0;
      if (nt > 1e-14) d.segment(row + 1, k - 1) = tail / std::max(head, nt);
      dirs.push_back(d);
      nonneg.push_back(true);
    }
    row += k;
  }
  const int ns = static_cast<int>(dirs.size());
  if (ns == 0) return out;

  MatrixXd C(st.A.cols(), ns);
  VectorXd beta(ns);
  for (int j = 0; j < ns; ++j) {
    C.col(j) = st.A.transpose() * dirs[j];
    beta(j) = st.b.dot(dirs[j]);
  }
  MatrixXd K = MatrixXd::Zero(ns + 1, ns + 1);
  K.topLeftCorner(ns, ns) = C.transpose() * C + 1e-12 * MatrixXd::Identity(ns, ns);
  K.topRightCorner(ns, 1) = beta;
  K.bottomLeftCorner(1, ns) = beta.transpose();
  VectorXd rhs = VectorXd::Zero(ns + 1);
  rhs(ns) = -1.0;
  VectorXd w = Eigen::PartialPivLU<MatrixXd>(K).solve(rhs).head(ns);
  for (int j = 0; j < ns; ++j)
    if (nonneg[j] && w(j) < 0) w(j) = 0.0;

  VectorXd y = VectorXd::Zero(st.cones.total);
  for (int j = 0; j < ns; ++j) y += w(j) * dirs[j];
  const double bty = st.b.dot(y);
  if (bty >= -1e-12) return out;
  y /= -bty;
  const double res = farkas_residual_of(st, y);
  if (res <= eps_pinf * std::max(1.0, y.cwiseAbs().maxCoeff())) {
    out.ok = true;
    out.y = std::move(y);
    out.residual = res;
  }
  return out;
}
// Active-set refinement: solve the equality-constrained KKT system on the
// detected active set with tiny regularization and iterative refinement,
// recover cone/inequality multipliers by nonnegative least squares, and
// accept only after verifying KKT residuals on the original data. Active SOC
// constraints are handled by Newton steps on their smooth form
// g(z) = ||Fz+d|| - r'z - s = 0 with the Lagrangian curvature term.
PolishResult polish(const ConicProgram& p, const Stacked& st, const VectorXd& z0,
                    const VectorXd& y0) {
  PolishResult out;
  const int n = p.nvar;
  const int me = p.eq_rows();
  const int mi = p.in_rows();
  const double delta = 1e-9;

  std::vector<int> act_detected;  // active inequality rows
  if (mi > 0) {
    const VectorXd slack = p.b_in - p.A_in * z0;
    for (int i = 0; i < mi; ++i) {
      // compare dual against slack magnitude; robust to loose iterates
      if (y0(me + i) > std::max(slack(i), 0.0)) act_detected.push_back(i);
    }
  }

  std::vector<int> act_soc_detected;
  int soc_row = me + mi;
  std::vector<int> soc_row_of(p.soc.size());
  for (size_t k = 0; k < p.soc.size(); ++k) {
    soc_row_of[k] = soc_row;
    const auto& blk = p.soc[k];
    const VectorXd w = blk.F * z0 + blk.d;
    const double margin = blk.r.dot(z0) + blk.s - w.norm();
    if (y0(soc_row) > std::max(margin, 0.0)) {
      if (w.norm() <= 1e-9) return out;  // cone vertex, not differentiable
      act_soc_detected.push_back(static_cast<int>(k));
    }
    soc_row += 1 + static_cast<int>(blk.F.rows());
  }

  auto attempt = [&](std::vector<int> act, std::vector<int> act_soc) -> PolishResult {
    PolishResult res;
    VectorXd z = z0;

    // Primal: Newton on the working-set equality system (one solve when no
    // SOC row is active); rows the iterate violates are added. Nothing is
    // dropped: redundant rows of a degenerate vertex stay consistent, and
    // the NNLS below assigns their multipliers.
    bool settled = false;
    for (int round = 0; round < 15 && !settled; ++round) {
      const int mj =
          me + static_cast<int>(act.size()) + static_cast<int>(act_soc.size());
      const int dim = n + mj;
      z = z0;
      VectorXd mu_soc = VectorXd::Zero(act_soc.size());  // curvature weights
      const int newton_iters = act_soc.empty() ? 1 : 10;
      for (int it = 0; it < newton_iters; ++it) {
        MatrixXd J(mj, n);
        VectorXd cj(mj);
        MatrixXd H = MatrixXd::Zero(n, n);
        if (p.has_quadratic()) H = p.Q;
        int r = 0;
        if (me > 0) {
          J.topRows(me) = p.A_eq;
          cj.head(me) = p.b_eq;
          r += me;
        }
        for (int i : act) {
          J.row(r) = p.A_in.row(i);
          cj(r) = p.b_in(i);
          ++r;
        }
        for (size_t kk = 0; kk < act_soc.size(); ++kk) {
          const auto& blk = p.soc[act_soc[kk]];
          const VectorXd w = blk.F * z + blk.d;
          const double nw = w.norm();
          if (nw <= 1e-12) return res;
          const VectorXd wh = w / nw;
          const VectorXd grad = blk.F.transpose() * wh - blk.r;
          const double g = nw - blk.r.dot(z) - blk.s;
          J.row(r) = grad.transpose();
          cj(r) = grad.dot(z) - g;
          // Lagrangian curvature mu * F'(I - wh wh')F / ||w||
          if (mu_soc(kk) > 0) {
            MatrixXd Fproj = blk.F - wh * (wh.transpose() * blk.F);
            H.noalias() += (mu_soc(kk) / nw) * blk.F.transpose() * Fproj;
          }
          ++r;
        }

        // step form: [H J'; J 0][dz; lam] = [-(Qz+q); c - Jz]
        MatrixXd K = MatrixXd::Zero(dim, dim);
        K.topLeftCorner(n, n) = H;
        K.topRightCorner(n, mj) = J.transpose();
        K.bottomLeftCorner(mj, n) = J;
        MatrixXd Kreg = K;
        Kreg.topLeftCorner(n, n) += delta * MatrixXd::Identity(n, n);
        Kreg.bottomRightCorner(mj, mj) -= delta * MatrixXd::Identity(mj, mj);

        VectorXd rhs(dim);
        rhs.head(n) = -p.q;
        if (p.has_quadratic()) rhs.head(n) -= p.Q * z;
        rhs.tail(mj) = cj - J * z;

        Eigen::PartialPivLU<MatrixXd> lu(Kreg);
        VectorXd u = lu.solve(rhs);
        for (int ref = 0; ref < 2; ++ref) u += lu.solve(rhs - K * u);
        const VectorXd dz_step = u.head(n);
        for (size_t kk = 0; kk < act_soc.size(); ++kk)
          mu_soc(kk) = std::max(
              0.0, u(n + me + static_cast<int>(act.size()) + static_cast<int>(kk)));
        z += dz_step;
        if (it > 0 && dz_step.lpNorm<Eigen::Infinity>() <= 1e-14) break;
      }

      // add the most violated excluded row, if any
      int add_in = -1, add_soc = -1;
      double worst_viol = 1e-10;
      if (mi > 0) {
        const VectorXd resid = p.A_in * z - p.b_in;
        for (int i = 0; i < mi; ++i) {
          if (std::find(act.begin(), act.end(), i) != act.end()) continue;
          if (resid(i) > worst_viol) {
            worst_viol = resid(i);
            add_in = i;
          }
        }
      }
      for (size_t k = 0; k < p.soc.size(); ++k) {
        if (std::find(act_soc.begin(), act_soc.end(), static_cast<int>(k)) !=
            act_soc.end())
          continue;
        const auto& blk = p.soc[k];
        const double viol = (blk.F * z + blk.d).norm() - blk.r.dot(z) - blk.s;
        if (viol > worst_viol) {
          worst_viol = viol;
          add_in = -1;
          add_soc = static_cast<int>(k);
        }
      }
      if (add_soc >= 0)
        act_soc.push_back(add_soc);
      else if (add_in >= 0)
        act.push_back(add_in);
      else
        settled = true;
    }
    if (!settled) return res;

    // dual recovery: nonnegative least squares on the stationarity
    // condition, equality multipliers free
    const int mj = me + static_cast<int>(act.size()) + static_cast<int>(act_soc.size());
    MatrixXd Jt(n, mj);
    std::vector<bool> sign(mj, true);
    {
      int c = 0;
      for (int i = 0; i < me; ++i, ++c) {
        Jt.col(c) = p.A_eq.row(i).transpose();
        sign[c] = false;
      }
      for (int i : act) Jt.col(c++) = p.A_in.row(i).transpose();
      for (int k : act_soc) {
        const auto& blk = p.soc[k];
        const VectorXd w = blk.F * z + blk.d;
        const double nw = w.norm();
        if (nw <= 1e-12) return res;
        Jt.col(c++) = blk.F.transpose() * (w / nw) - blk.r;
      }
    }
    VectorXd stat_rhs = -p.q;
    if (p.has_quadratic()) stat_rhs -= p.Q * z;
    const VectorXd lam = nnls(Jt, stat_rhs, sign);

    // assemble the full dual vector
    VectorXd y = VectorXd::Zero(st.cones.total);
    y.head(me) = lam.head(me);
    for (size_t i = 0; i < act.size(); ++i)
      y(me + act[i]) = lam(me + static_cast<int>(i));
    for (size_t i = 0; i < act_soc.size(); ++i) {
      const int k = act_soc[i];
      const auto& blk = p.soc[k];
      const double mu = lam(me + static_cast<int>(act.size()) + static_cast<int>(i));
      const VectorXd w = blk.F * z + blk.d;
      const double nw = w.norm();
      if (nw <= 1e-12 || mu < 0) return res;
      y(soc_row_of[k]) = mu;
      y.segment(soc_row_of[k] + 1, blk.F.rows()) = -mu * (w / nw);
    }

    // verify
    const double rp = primal_violation(p, z);
    VectorXd stat = p.q + st.A.transpose() * y;
    if (p.has_quadratic()) stat += p.Q * z;
    const double rd = stat.cwiseAbs().maxCoeff();
    if (rp > 1e-9 || rd > 1e-9) return res;

    res.ok = true;
    res.z = std::move(z);
    res.y = std::move(y);
    return res;
  };

  // cone-activity guesses from a loose dual can be wrong both ways: fall
  // back to the remaining combinations (few cone blocks by construction)
  std::vector<std::vector<int>> soc_variants{act_soc_detected};
  if (!p.soc.empty()) {
    std::vector<int> none, all;
    for (size_t k = 0; k < p.soc.size(); ++k) all.push_back(static_cast<int>(k));
    if (act_soc_detected != none) soc_variants.push_back(none);
    if (act_soc_detected != all) soc_variants.push_back(all);
  }
  for (const auto& variant : soc_variants) {
    PolishResult res = attempt(act_detected, variant);
    if (res.ok) return res;
  }
  return out;
}

}  // namespace

void ConicProgram::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("ConicProgram: " + m); };
  if (nvar <= 0) fail("nvar must be positive");
  if (q.size() != nvar) fail("q size mismatch");
  if (Q.size() > 0) {
    if (Q.rows() != nvar || Q.cols() != nvar) fail("Q dimension mismatch");
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-9) fail("Q must be symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Q);
    if (es.eigenvalues().minCoeff() < -1e-9) fail("Q must be PSD");
  }
  if (A_eq.rows() != b_eq.size()) fail("A_eq/b_eq row mismatch");
  if (A_eq.rows() > 0 && A_eq.cols() != nvar) fail("A_eq column mismatch");
  if (A_in.rows() != b_in.size()) fail("A_in/b_in row mismatch");
  if (A_in.rows() > 0 && A_in.cols() != nvar) fail("A_in column mismatch");
  for (const auto& blk : soc) {
    if (blk.F.cols() != nvar || blk.r.size() != nvar || blk.d.size() != blk.F.rows())
      fail("SOC block dimension mismatch");
  }
}

double ConicProgram::objective(const VectorXd& z) const {
  double obj = q.dot(z);
  if (has_quadratic()) obj += 0.5 * z.dot(Q * z);
  return obj;
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::MaxIter: return "max-iter";
  }
  return "?";
}

ConicSolution solve(const ConicProgram& p, const SolveSettings& settings,
                    const std::optional<VectorXd>& warm_z,
                    const std::optional<VectorXd>& warm_y) {
  p.validate();
  const int n = p.nvar;
  Stacked st = stack_constraints(p);
  const int m = st.cones.total;
  const ConeLayout& cones = st.cones;

  // ---- Ruiz equilibration of [P A'; A 0] plus cost scaling ----
  VectorXd D = VectorXd::Ones(n);
  VectorXd E = VectorXd::Ones(m);
  MatrixXd P0 = p.has_quadratic() ? p.Q : MatrixXd::Zero(n, n);
  MatrixXd Ps = P0;
  MatrixXd As = st.A;
  for (int iter = 0; iter < settings.ruiz_iters; ++iter) {
    for (int j = 0; j < n; ++j) {
      double nj = std::max(Ps.col(j).cwiseAbs().maxCoeff(),
                           m > 0 ? As.col(j).cwiseAbs().maxCoeff() : 0.0);
      double d = (nj > 1e-12) ? 1.0 / std::sqrt(nj) : 1.0;
      D(j) *= d;
    }
    int row = 0;
    auto scale_rows = [&](int count, bool uniform) {
      if (count == 0) return;
      double blockmax = 0.0;
      for (int i = row; i < row + count; ++i) {
        double ri = n > 0 ? As.row(i).cwiseAbs().maxCoeff() : 0.0;
        if (uniform) {
          blockmax = std::max(blockmax, ri);
        } else {
          double e = (ri > 1e-12) ? 1.0 / std::sqrt(ri) : 1.0;
          E(i) *= e;
        }
      }
      if (uniform) {
        double e = (blockmax > 1e-12) ? 1.0 / std::sqrt(blockmax) : 1.0;
        for (int i = row; i < row + count; ++i) E(i) *= e;
      }
      row += count;
    };
    scale_rows(cones.me, false);
    scale_rows(cones.mi, false);
    for (int k : cones.soc_sizes) scale_rows(k, true);  // cone rows share a scale

    Ps = D.asDiagonal() * P0 * D.asDiagonal();
    As = E.asDiagonal() * st.A * D.asDiagonal();
  }
  double cost_norm = 0.0;
  {
    const VectorXd qs = D.asDiagonal() * p.q;
    double pcol = 0.0;
    for (int j = 0; j < n; ++j) pcol += Ps.col(j).cwiseAbs().maxCoeff();
    pcol /= n;
    cost_norm = std::max(pcol, qs.cwiseAbs().maxCoeff());
  }
  double c = (cost_norm > 1e-10) ? 1.0 / cost_norm : 1.0;
  c = std::clamp(c, 1e-6, 1e6);

  const MatrixXd Ph = c * Ps;
  const VectorXd qh = c * (D.asDiagonal() * p.q);
  const MatrixXd& Ah = As;
  const VectorXd bh = E.asDiagonal() * st.b;

  // ---- per-row rho: equalities get a stiffer value; SOC blocks uniform ----
  double rho_scalar = settings.rho0;
  auto build_rho = [&](VectorXd& rho) {
    rho.resize(m);
    for (int i = 0; i < m; ++i) rho(i) = (i < cones.me) ? rho_scalar * 1e3 : rho_scalar;
  };
  VectorXd rho;
  build_rho(rho);

  Eigen::LLT<MatrixXd> llt;
  auto factorize = [&]() {
    MatrixXd M = Ph + settings.sigma * MatrixXd::Identity(n, n);
    if (m > 0) M.noalias() += Ah.transpose() * rho.asDiagonal() * Ah;
    llt.compute(M);
  };
  factorize();

  VectorXd x = VectorXd::Zero(n);
  VectorXd zc = VectorXd::Zero(m);
  VectorXd y = VectorXd::Zero(m);
  if (warm_z && warm_z->size() == n) {
    x = D.cwiseInverse().asDiagonal() * (*warm_z);
    zc = Ah * x;
  }
  if (warm_y && warm_y->size() == m) y = c * (E.cwiseInverse().asDiagonal() * (*warm_y));

  ConicSolution sol;
  sol.z = VectorXd::Zero(n);

  VectorXd y_prev_check = y;
  const double alpha = settings.alpha;
  double best_res = kInf;
  VectorXd best_x = x, best_y = y;
  double last_polish_res = kInf;

  VectorXd xt(n), zt(m), w(m), ydelta(m), rhs(n), v(m), zc_new(m);

  int k = 0;
  for (k = 1; k <= settings.max_iter; ++k) {
    // x-update via the SPD normal equations of the KKT step
    rhs = settings.sigma * x - qh;
    if (m > 0) rhs.noalias() += Ah.transpose() * (rho.cwiseProduct(zc) - y);
    xt = llt.solve(rhs);
    zt.noalias() = Ah * xt;

    x = alpha * xt + (1.0 - alpha) * x;
    w = alpha * zt + (1.0 - alpha) * zc + y.cwiseQuotient(rho);
    // project onto C = b - K
    v = bh - w;
    project_cone(cones, v);
    zc_new = bh - v;
    y += rho.cwiseProduct(alpha * zt + (1.0 - alpha) * zc - zc_new);
    zc = zc_new;

    if (k % settings.check_every != 0 && k != settings.max_iter) continue;

    // unscaled iterates and residuals
    const VectorXd zu = D.asDiagonal() * x;
    const VectorXd yu = (1.0 / c) * (E.asDiagonal() * y);
    const VectorXd rp_vec = E.cwiseInverse().asDiagonal() * (Ah * x - zc);
    double rp = m > 0 ? rp_vec.cwiseAbs().maxCoeff() : 0.0;
    VectorXd rd_vec = Ph * x + qh;
    if (m > 0) rd_vec.noalias() += Ah.transpose() * y;
    rd_vec = (1.0 / c) * (D.cwiseInverse().asDiagonal() * rd_vec);
    double rd = rd_vec.cwiseAbs().maxCoeff();

    double obj = p.objective(zu);
    double gap = std::abs(2.0 * obj - p.q.dot(zu) + st.b.dot(yu));
    // gap = |z'Qz + q'z + b'y| (complementarity form)

    const double res = std::max(rp, rd);
    if (res < best_res) {
      best_res = res;
      best_x = x;
      best_y = y;
    }

    // scaled residuals for the convergence test
    double rp_s = m > 0 ? (Ah * x - zc).cwiseAbs().maxCoeff() : 0.0;
    VectorXd rds = Ph * x + qh;
    if (m > 0) rds.noalias() += Ah.transpose() * y;
    double rd_s = rds.cwiseAbs().maxCoeff();

    const bool gap_ok = gap <= 1e-6 * std::max(1.0, std::abs(obj));
    const bool tight = std::max(rp_s, rd_s) <= settings.eps_abs && gap_ok;
    const double res_s = std::max(rp_s, rd_s);

    // Polish once the active set is plausibly identified; its verification
    // against the original data rejects bad guesses, so trying early is safe.
    const bool try_polish =
        tight || (res_s <= 1e-3 && res < 0.2 * last_polish_res) ||
        (res_s <= 1e-2 && k % 1000 == 0);
    if (settings.polish && try_polish) {
      last_polish_res = res;
      PolishResult pr = polish(p, st, zu, yu);
      if (pr.ok) {
        sol.status = SolveStatus::Optimal;
        sol.z = pr.z;
        sol.y = pr.y;
        sol.polished = true;
        sol.iterations = k;
        sol.objective = p.objective(pr.z);
        sol.primal_residual = primal_violation(p, pr.z);
        VectorXd stat = p.q + st.A.transpose() * pr.y;
        if (p.has_quadratic()) stat += p.Q * pr.z;
        sol.dual_residual = stat.cwiseAbs().maxCoeff();
        sol.duality_gap =
            std::abs(2.0 * sol.objective - p.q.dot(pr.z) + st.b.dot(pr.y));
        return sol;
      }
    }

    if (tight) {
      sol.status = SolveStatus::Optimal;
      sol.z = zu;
      sol.y = yu;
      sol.iterations = k;
      sol.objective = obj;
      sol.primal_residual = rp;
      sol.dual_residual = rd;
      sol.duality_gap = gap;
      return sol;
    }

    // primal infeasibility certificate from the dual increment
    if (m > 0) {
      ydelta = (1.0 / c) * (E.asDiagonal() * (y - y_prev_check));
      y_prev_check = y;
      const double nd = ydelta.cwiseAbs().maxCoeff();
      if (nd > 1e-13) {
        VectorXd t = ydelta / nd;
        const double bt = st.b.dot(t);
        if (bt < -1e-10) {
          VectorXd cert = t / (-bt);  // b' cert = -1
          const double farkas = farkas_residual_of(st, cert);
          const double cscale = std::max(1.0, cert.cwiseAbs().maxCoeff());
          if (farkas <= settings.eps_pinf * cscale) {
            sol.status = SolveStatus::Infeasible;
            sol.z = zu;
            sol.iterations = k;
            sol.y_cert = cert;
            sol.farkas_residual = farkas;
            return sol;
          }
          if (farkas <= 1e-2 * cscale) {
            CertResult cr = refine_certificate(st, cert, settings.eps_pinf);
            if (cr.ok) {
              sol.status = SolveStatus::Infeasible;
              sol.z = zu;
              sol.iterations = k;
              sol.y_cert = cr.y;
              sol.farkas_residual = cr.residual;
              return sol;
            }
          }
        }
      }
    }

    // adaptive step-size; left alone near convergence so the tail is clean
    if (settings.adaptive_rho && m > 0 && k % 100 == 0 && res_s > 1e-5) {
      const double pnorm = std::max({(Ah * x).cwiseAbs().maxCoeff(),
                                     zc.cwiseAbs().maxCoeff(), 1e-12});
      VectorXd aty = Ah.transpose() * y;
      const double dnorm = std::max({(Ph * x).cwiseAbs().maxCoeff(),
                                     aty.cwiseAbs().maxCoeff(),
                                     qh.cwiseAbs().maxCoeff(), 1e-12});
      const double ratio = std::sqrt((rp_s / pnorm) / std::max(rd_s / dnorm, 1e-16));
      if (std::isfinite(ratio) && (ratio > 5.0 || ratio < 0.2)) {
        rho_scalar = std::clamp(rho_scalar * ratio, 1e-6, 1e6);
        build_rho(rho);
        factorize();
      }
    }
  }

  // iteration cap: accept at contract tolerance, otherwise report max-iter
  {
    const VectorXd zu = D.asDiagonal() * best_x;
    const VectorXd yu = (1.0 / c) * (E.asDiagonal() * best_y);
    sol.z = zu;
    sol.y = yu;
    sol.iterations = settings.max_iter;
    sol.objective = p.objective(zu);
    sol.primal_residual = primal_violation(p, zu);
    VectorXd stat = p.q + st.A.transpose() * yu;
    if (p.has_quadratic()) stat += p.Q * zu;
    sol.dual_residual = stat.cwiseAbs().maxCoeff();
    sol.duality_gap = std::abs(2.0 * sol.objective - p.q.dot(zu) + st.b.dot(yu));
    const bool gap_ok = sol.duality_gap <= 1e-6 * std::max(1.0, std::abs(sol.objective));
    if (sol.primal_residual <= settings.eps_contract &&
        sol.dual_residual <= settings.eps_contract && gap_ok) {
      sol.status = SolveStatus::Optimal;
    } else {
      sol.status = SolveStatus::MaxIter;
    }
  }
  return sol;
}

Feasibility solve_lp_feasibility(const MatrixXd& A_in, const VectorXd& b_in,
                                 const SolveSettings& settings) {
  if (A_in.rows() != b_in.size()) throw ConfigError("solve_lp_feasibility: row mismatch");
  const int n = static_cast<int>(A_in.cols());
  const int mi = static_cast<int>(A_in.rows());
  // elastic program: min s  s.t.  A x - s 1 <= b,  -s <= 1
  ConicProgram p;
  p.nvar = n + 1;
  p.q = VectorXd::Zero(n + 1);
  p.q(n) = 1.0;
  p.A_in.setZero(mi + 1, n + 1);
  p.A_in.topLeftCorner(mi, n) = A_in;
  p.A_in.col(n).head(mi).setConstant(-1.0);
  p.A_in(mi, n) = -1.0;
  p.b_in.resize(mi + 1);
  p.b_in.head(mi) = b_in;
  p.b_in(mi) = 1.0;

  ConicSolution sol = solve(p, settings);
  if (sol.status != SolveStatus::Optimal)
    throw ConfigError("solve_lp_feasibility: elastic solve failed: " + to_string(sol.status));
  return sol.z(n) <= 1e-7 ? Feasibility::Feasible : Feasibility::Infeasible;
}

void dump_program(const ConicProgram& p, const std::string& path) {
  std::ofstream out(path);
  out.precision(17);
  auto mat = [&](const char* name, const MatrixXd& M) {
    out << "%% " << name << " " << M.rows() << " " << M.cols() << "\n";
    for (int i = 0; i < M.rows(); ++i)
      for (int j = 0; j < M.cols(); ++j)
        if (M(i, j) != 0.0) out << i + 1 << " " << j + 1 << " " << M(i, j) << "\n";
  };
  auto vec = [&](const char* name, const VectorXd& v) {
    out << "%% " << name << " " << v.size() << "\n";
    for (int i = 0; i < v.size(); ++i) out << v(i) << "\n";
  };
  out << "%% conic program, nvar=" << p.nvar << "\n";
  vec("q", p.q);
  if (p.has_quadratic()) mat("Q", p.Q);
  mat("A_eq", p.A_eq);
  vec("b_eq", p.b_eq);
  mat("A_in", p.A_in);
  vec("b_in", p.b_in);
  for (size_t k = 0; k < p.soc.size(); ++k) {
    out << "%% soc block " << k << " s=" << p.soc[k].s << "\n";
    mat("F", p.soc[k].F);
    vec("d", p.soc[k].d);
    vec("r", p.soc[k].r);
  }
}

}  // namespace pcbf

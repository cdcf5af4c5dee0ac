#include "pcbf/safempc.hpp"

#include <Eigen/Cholesky>

#include <cmath>

namespace pcbf {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

// per-stage slack needed at state xs: max(0, max_row(G xs - g) + Delta_i)
double slack_needed(const SafeMpcProblem& pr, const VectorXd& xs, int stage) {
  double viol = pr.preset.X.violation(xs);
  if (pr.variant == MpcVariant::Tightened) viol += pr.delta(stage);
  return std::max(0.0, viol);
}

double terminal_violation(const TerminalSet& Xf, const VectorXd& xN) {
  switch (Xf.variant) {
    case TerminalSet::Variant::Ellipsoid: {
      Eigen::LLT<MatrixXd> llt(Xf.P);
      return std::max(0.0, (llt.matrixU() * xN).norm() - std::sqrt(Xf.alpha));
    }
    case TerminalSet::Variant::Polytope:
      return std::max(0.0, Xf.poly.violation(xN));
    case TerminalSet::Variant::Point:
      return (xN - Xf.xf).lpNorm<Eigen::Infinity>();
  }
  return 0.0;
}

ConicProgram build_with_models(const SafeMpcProblem& pr, const VectorXd& x,
                               const std::vector<AffineModel>& models) {
  const MpcLayout l = layout_of(pr);
  const Polytope& X = pr.preset.X;
  const Polytope& U = pr.preset.U;
  const TerminalSet& Xf = pr.preset.Xf;
  const int kx = X.rows();
  const int ku = U.rows();
  const int n = l.n, m = l.m, N = l.N;

  ConicProgram p;
  p.nvar = l.nvar();
  p.q = VectorXd::Zero(p.nvar);
  p.Q = MatrixXd::Zero(p.nvar, p.nvar);

  // objective
  if (pr.has_slack() && pr.variant != MpcVariant::Filter)
    for (int i = 0; i < N; ++i) p.q(l.xi_off(i)) = 1.0;
  for (int i = 0; i < N; ++i)
    p.Q.block(l.u_off(i), l.u_off(i), m, m) +=
        2.0 * pr.tie_break_weight * MatrixXd::Identity(m, m);
  if (pr.variant == MpcVariant::Filter) {
    p.Q.block(l.u_off(0), l.u_off(0), m, m) += 2.0 * MatrixXd::Identity(m, m);
    p.q.segment(l.u_off(0), m) -= 2.0 * pr.u_desired;
  }

  // equalities: initial state, dynamics, point terminal set
  const int me = n + N * n + (Xf.variant == TerminalSet::Variant::Point ? n : 0);
  p.A_eq = MatrixXd::Zero(me, p.nvar);
  p.b_eq = VectorXd::Zero(me);
  p.A_eq.block(0, l.x_off(0), n, n) = MatrixXd::Identity(n, n);
  p.b_eq.head(n) = x;
  for (int i = 0; i < N; ++i) {
    const int r = n + i * n;
    p.A_eq.block(r, l.x_off(i + 1), n, n) = MatrixXd::Identity(n, n);
    p.A_eq.block(r, l.x_off(i), n, n) = -models[i].Ad;
    p.A_eq.block(r, l.u_off(i), n, m) = -models[i].Bd;
    p.b_eq.segment(r, n) = models[i].cd;
  }
  if (Xf.variant == TerminalSet::Variant::Point) {
    const int r = n + N * n;
    p.A_eq.block(r, l.x_off(N), n, n) = MatrixXd::Identity(n, n);
    p.b_eq.segment(r, n) = Xf.xf;
  }

  // inequalities: state rows per stage, slack nonnegativity, input rows,
  // polytopic terminal rows, filter budget
  int mi = N * kx + N * ku;
  if (pr.has_slack()) mi += N;
  if (Xf.variant == TerminalSet::Variant::Polytope) mi += Xf.poly.rows();
  if (pr.variant == MpcVariant::Filter) mi += 1;
  p.A_in = MatrixXd::Zero(mi, p.nvar);
  p.b_in = VectorXd::Zero(mi);
  int r = 0;
  for (int i = 0; i < N; ++i) {
    p.A_in.block(r, l.x_off(i), kx, n) = X.G;
    p.b_in.segment(r, kx) = X.g;
    if (pr.has_slack())
      p.A_in.block(r, l.xi_off(i), kx, 1).setConstant(-1.0);
    if (pr.variant == MpcVariant::Tightened)
      p.b_in.segment(r, kx).array() -= pr.delta(i);
    r += kx;
  }
  if (pr.has_slack()) {
    for (int i = 0; i < N; ++i) {
      p.A_in(r, l.xi_off(i)) = -1.0;
      ++r;
    }
  }
  for (int i = 0; i < N; ++i) {
    p.A_in.block(r, l.u_off(i), ku, m) = U.G;
    p.b_in.segment(r, ku) = U.g;
    r += ku;
  }
  if (Xf.variant == TerminalSet::Variant::Polytope) {
    p.A_in.block(r, l.x_off(N), Xf.poly.rows(), n) = Xf.poly.G;
    p.b_in.segment(r, Xf.poly.rows()) = Xf.poly.g;
    r += Xf.poly.rows();
  }
  if (pr.variant == MpcVariant::Filter) {
    for (int i = 0; i < N; ++i) p.A_in(r, l.xi_off(i)) = 1.0;
    p.b_in(r) = pr.slack_budget;
    ++r;
  }

  // ellipsoidal terminal set as one SOC row: ||L' x_N|| <= sqrt(alpha)
  if (Xf.variant == TerminalSet::Variant::Ellipsoid) {
    Eigen::LLT<MatrixXd> llt(Xf.P);
    SocBlock blk;
    blk.F = MatrixXd::Zero(n, p.nvar);
    blk.F.block(0, l.x_off(N), n, n) = MatrixXd(llt.matrixU());
    blk.d = VectorXd::Zero(n);
    blk.r = VectorXd::Zero(p.nvar);
    blk.s = std::sqrt(Xf.alpha);
    p.soc.push_back(blk);
  }
  return p;
}

std::vector<AffineModel> models_along(const SystemModel& sys, const MatrixXd& xs,
                                      const MatrixXd& us) {
  std::vector<AffineModel> models;
  const int N = static_cast<int>(us.cols());
  models.reserve(N);
  for (int i = 0; i < N; ++i) models.push_back(linearize(sys, xs.col(i), us.col(i)));
  return models;
}

InitialTrajectory default_init(const SafeMpcProblem& pr, const VectorXd& x) {
  InitialTrajectory t;
  const int N = pr.preset.N;
  t.x = x.replicate(1, N + 1);
  t.u = MatrixXd::Zero(pr.preset.system.m, N);
  return t;
}

SafeMpcSolution extract(const SafeMpcProblem& pr, const VectorXd& x, ConicSolution cs) {
  const MpcLayout l = layout_of(pr);
  SafeMpcSolution s;
  s.status = cs.status;
  s.x.resize(l.n, l.N + 1);
  s.u.resize(l.m, l.N);
  s.xi = VectorXd::Zero(l.N);
  for (int i = 0; i <= l.N; ++i) s.x.col(i) = cs.z.segment(l.x_off(i), l.n);
  for (int i = 0; i < l.N; ++i) s.u.col(i) = cs.z.segment(l.u_off(i), l.m);
  if (l.slack)
    for (int i = 0; i < l.N; ++i) s.xi(i) = std::max(0.0, cs.z(l.xi_off(i)));
  s.x.col(0) = x;  // the transcription pins x_0; store the queried state exactly
  s.value = s.xi.sum();
  s.conic = std::move(cs);
  return s;
}

// warm-start vector from a candidate trajectory, with minimal slacks
VectorXd stack_trajectory(const SafeMpcProblem& pr, const InitialTrajectory& t) {
  const MpcLayout l = layout_of(pr);
  VectorXd z = VectorXd::Zero(l.nvar());
  for (int i = 0; i <= l.N; ++i) z.segment(l.x_off(i), l.n) = t.x.col(i);
  for (int i = 0; i < l.N; ++i) z.segment(l.u_off(i), l.m) = t.u.col(i);
  if (l.slack)
    for (int i = 0; i < l.N; ++i) z(l.xi_off(i)) = slack_needed(pr, t.x.col(i), i);
  return z;
}

SafeMpcSolution solve_linear(const SafeMpcProblem& pr, const VectorXd& x,
                             const std::optional<InitialTrajectory>& warm) {
  ConicProgram p = build(pr, x);
  std::optional<VectorXd> z0;
  if (warm) z0 = stack_trajectory(pr, *warm);
  return extract(pr, x, solve(p, {}, z0));
}

// l1 merit: variant objective at minimal slacks plus mu * (dynamics and
// terminal violations)
double merit(const SafeMpcProblem& pr, const MatrixXd& xs, const MatrixXd& us,
             double mu) {
  const int N = pr.preset.N;
  double obj = 0.0;
  double budget_used = 0.0;
  for (int i = 0; i < N; ++i) {
    const double xi = slack_needed(pr, xs.col(i), i);
    if (pr.variant == MpcVariant::Filter)
      budget_used += xi;
    else if (pr.variant == MpcVariant::Hard)
      obj += mu * xi;
    else
      obj += xi;
  }
  obj += pr.tie_break_weight * us.squaredNorm();
  if (pr.variant == MpcVariant::Filter) {
    obj += (us.col(0) - pr.u_desired).squaredNorm();
    obj += mu * std::max(0.0, budget_used - pr.slack_budget);
  }
  double viol = 0.0;
  for (int i = 0; i < N; ++i)
    viol += (xs.col(i + 1) - step(pr.preset.system, xs.col(i), us.col(i)))
                .lpNorm<1>();
  viol += terminal_violation(pr.preset.Xf, xs.col(N));
  return obj + mu * viol;
}

double qp_model_merit(const SafeMpcProblem& pr, const SafeMpcSolution& s) {
  double obj = pr.tie_break_weight * s.u.squaredNorm();
  if (pr.variant == MpcVariant::Filter)
    obj += (s.u.col(0) - pr.u_desired).squaredNorm();
  else if (pr.variant != MpcVariant::Hard)
    obj += s.xi.sum();
  return obj;
}

}  // namespace

std::string to_string(MpcVariant v) {
  switch (v) {
    case MpcVariant::Soft: return "soft";
    case MpcVariant::Hard: return "hard";
    case MpcVariant::Tightened: return "tightened";
    case MpcVariant::Filter: return "filter";
  }
  return "?";
}

SafeMpcProblem SafeMpcProblem::soft(ProblemPreset p) {
  SafeMpcProblem pr;
  pr.preset = std::move(p);
  pr.variant = MpcVariant::Soft;
  pr.validate();
  return pr;
}

SafeMpcProblem SafeMpcProblem::hard(ProblemPreset p) {
  SafeMpcProblem pr;
  pr.preset = std::move(p);
  pr.variant = MpcVariant::Hard;
  pr.validate();
  return pr;
}

SafeMpcProblem SafeMpcProblem::tightened(ProblemPreset p, double delta_step) {
  SafeMpcProblem pr;
  pr.preset = std::move(p);
  pr.variant = MpcVariant::Tightened;
  pr.delta.resize(pr.preset.N);
  for (int i = 0; i < pr.preset.N; ++i) pr.delta(i) = i * delta_step;
  pr.validate();
  return pr;
}

SafeMpcProblem SafeMpcProblem::filter(ProblemPreset p, VectorXd u_desired, double budget) {
  SafeMpcProblem pr;
  pr.preset = std::move(p);
  pr.variant = MpcVariant::Filter;
  pr.u_desired = std::move(u_desired);
  pr.slack_budget = budget;
  pr.validate();
  return pr;
}

void SafeMpcProblem::validate() const {
  preset.validate();
  if (variant == MpcVariant::Tightened) {
    require(delta.size() == preset.N, "tightened: delta must have N entries");
    require(delta(0) == 0.0, "tightened: delta_0 must be zero");
    for (int i = 1; i < delta.size(); ++i) {
      require(delta(i) >= delta(i - 1), "tightened: delta must be nondecreasing");
    }
  }
  if (variant == MpcVariant::Filter) {
    require(u_desired.size() == preset.system.m, "filter: u_desired dimension mismatch");
    require(slack_budget >= 0.0, "filter: slack budget must be nonnegative");
  }
}

MpcLayout layout_of(const SafeMpcProblem& problem) {
  MpcLayout l;
  l.n = problem.preset.system.n;
  l.m = problem.preset.system.m;
  l.N = problem.preset.N;
  l.slack = problem.has_slack();
  return l;
}

VectorXd SafeMpcSolution::stacked(const MpcLayout& l) const {
  VectorXd z = VectorXd::Zero(l.nvar());
  for (int i = 0; i <= l.N; ++i) z.segment(l.x_off(i), l.n) = x.col(i);
  for (int i = 0; i < l.N; ++i) z.segment(l.u_off(i), l.m) = u.col(i);
  if (l.slack)
    for (int i = 0; i < l.N; ++i) z(l.xi_off(i)) = xi(i);
  return z;
}

double SolutionCheck::max() const {
  return std::max({dynamics_residual, state_residual, input_residual, terminal_residual});
}

SolutionCheck check_solution(const SafeMpcProblem& problem, const SafeMpcSolution& sol) {
  SolutionCheck c;
  const int N = problem.preset.N;
  for (int i = 0; i < N; ++i) {
    const VectorXd next = step(problem.preset.system, sol.x.col(i), sol.u.col(i));
    c.dynamics_residual = std::max(
        c.dynamics_residual, (sol.x.col(i + 1) - next).lpNorm<Eigen::Infinity>());
    double viol = problem.preset.X.violation(sol.x.col(i));
    if (problem.variant == MpcVariant::Tightened) viol += problem.delta(i);
    if (problem.has_slack()) viol -= sol.xi(i);
    c.state_residual = std::max(c.state_residual, viol);
    c.input_residual =
        std::max(c.input_residual, problem.preset.U.violation(sol.u.col(i)));
  }
  c.terminal_residual = terminal_violation(problem.preset.Xf, sol.x.col(N));
  return c;
}

ConicProgram build(const SafeMpcProblem& problem, const VectorXd& x) {
  require(x.size() == problem.preset.system.n, "build: state dimension mismatch");
  const InitialTrajectory t = default_init(problem, x);
  return build_with_models(problem, x,
                           models_along(problem.preset.system, t.x, t.u));
}

SafeMpcSolution solve_soft(const SafeMpcProblem& problem, const VectorXd& x,
                           const std::optional<InitialTrajectory>& warm) {
  require(problem.variant == MpcVariant::Soft || problem.variant == MpcVariant::Tightened,
          "solve_soft: variant must be soft or tightened");
  return solve_variant(problem, x, warm);
}

SafeMpcSolution solve_hard(const SafeMpcProblem& problem, const VectorXd& x,
                           const std::optional<InitialTrajectory>& warm) {
  require(problem.variant == MpcVariant::Hard, "solve_hard: variant must be hard");
  return solve_variant(problem, x, warm);
}

SafeMpcSolution solve_variant(const SafeMpcProblem& problem, const VectorXd& x,
                              const std::optional<InitialTrajectory>& warm) {
  require(x.size() == problem.preset.system.n, "solve: state dimension mismatch");
  if (problem.preset.system.is_linear()) return solve_linear(problem, x, warm);
  return sqp_solve(problem, x, warm);
}

SafeMpcSolution sqp_solve(const SafeMpcProblem& problem, const VectorXd& x,
                          const std::optional<InitialTrajectory>& init) {
  require(x.size() == problem.preset.system.n, "sqp_solve: state dimension mismatch");
  const SystemModel& sys = problem.preset.system;
  const int N = problem.preset.N;
  constexpr double kMu = 1e3;
  constexpr double kStepTol = 1e-8;
  constexpr double kDynTol = 1e-8;
  constexpr int kMaxIter = 50;

  InitialTrajectory traj = init ? *init : default_init(problem, x);
  traj.x.col(0) = x;

  SafeMpcSolution best;
  best.status = SolveStatus::MaxIter;
  std::optional<VectorXd> warm_z;

  for (int iter = 1; iter <= kMaxIter; ++iter) {
    ConicProgram sub =
        build_with_models(problem, x, models_along(sys, traj.x, traj.u));
    ConicSolution cs = solve(sub, {}, warm_z);
    if (cs.status == SolveStatus::Infeasible) {
      SafeMpcSolution s = extract(problem, x, std::move(cs));
      s.status = SolveStatus::Infeasible;
      s.sqp_iterations = iter;
      return s;
    }
    if (cs.status == SolveStatus::MaxIter) {
      best = extract(problem, x, std::move(cs));
      best.status = SolveStatus::MaxIter;
      best.sqp_iterations = iter;
      return best;
    }
    warm_z = cs.z;
    SafeMpcSolution cand = extract(problem, x, std::move(cs));

    const double step_norm =
        std::max((cand.x - traj.x).cwiseAbs().maxCoeff(),
                 (cand.u - traj.u).cwiseAbs().maxCoeff());

    // l1 merit line search with backtracking (factor 0.5, Armijo 1e-4)
    const double phi0 = merit(problem, traj.x, traj.u, kMu);
    const double pred = phi0 - qp_model_merit(problem, cand);
    double t = 1.0;
    MatrixXd xt, ut;
    for (int ls = 0; ls < 40; ++ls) {
      xt = traj.x + t * (cand.x - traj.x);
      ut = traj.u + t * (cand.u - traj.u);
      const double phi = merit(problem, xt, ut, kMu);
      if (phi <= phi0 - 1e-4 * t * std::max(pred, 0.0) + 1e-14 * std::max(1.0, std::abs(phi0)))
        break;
      t *= 0.5;
    }
    traj.x = xt;
    traj.u = ut;

    double dyn_res = 0.0;
    for (int i = 0; i < N; ++i)
      dyn_res = std::max(dyn_res, (traj.x.col(i + 1) - step(sys, traj.x.col(i), traj.u.col(i)))
                                      .lpNorm<Eigen::Infinity>());
    const double term_res = terminal_violation(problem.preset.Xf, traj.x.col(N));

    // Besides a vanishing step, accept a trajectory that is dynamics- and
    // terminal-feasible once the subproblem offers no slack improvement:
    // only the tie-break term is left, which the merit cannot chase.
    double slack_cur = 0.0;
    for (int i = 0; i < N; ++i) slack_cur += slack_needed(problem, traj.x.col(i), i);
    const double slack_model = problem.has_slack() ? cand.xi.sum() : 0.0;
    const double slack_gap = slack_cur - slack_model;
    bool stationary = slack_gap <= std::max(1e-9, 1e-9 * slack_cur);
    if (problem.variant == MpcVariant::Filter) {
      const double f_cur = (traj.u.col(0) - problem.u_desired).squaredNorm();
      const double f_model = (cand.u.col(0) - problem.u_desired).squaredNorm();
      stationary = stationary && (f_cur - f_model) <= std::max(1e-9, 1e-9 * f_cur) &&
                   slack_cur <= problem.slack_budget + 1e-7;
    }
    const bool stalled = t <= 1e-9 && slack_gap <= 1e-7;

    if (dyn_res <= kDynTol && term_res <= kDynTol &&
        (step_norm <= kStepTol || stationary || stalled)) {
      cand.x = traj.x;
      cand.u = traj.u;
      for (int i = 0; i < N; ++i) cand.xi(i) = slack_needed(problem, traj.x.col(i), i);
      cand.value = cand.xi.sum();
      cand.status = SolveStatus::Optimal;
      cand.sqp_iterations = iter;
      return cand;
    }
    best = cand;
    best.sqp_iterations = iter;
  }
  // iteration cap: best iterate attached
  best.x = traj.x;
  best.u = traj.u;
  for (int i = 0; i < N; ++i) best.xi(i) = slack_needed(problem, traj.x.col(i), i);
  best.value = best.xi.sum();
  best.status = SolveStatus::MaxIter;
  return best;
}

Controller::Controller(SafeMpcProblem problem) : problem_(std::move(problem)) {
  problem_.validate();
}

ControlResult Controller::step(const VectorXd& x) {
  ControlResult r;
  r.solution = solve_variant(problem_, x, warm_);
  r.status = r.solution.status;
  if (r.status != SolveStatus::Optimal) {
    warm_.reset();
    return r;
  }
  const SafeMpcSolution& s = r.solution;
  r.u0 = s.u.col(0);
  r.xi0 = problem_.has_slack() ? s.xi(0) : 0.0;
  r.value = s.value;

  // shifted candidate (next step's warm start): drop the first move, append
  // the terminal controller
  const int N = problem_.preset.N;
  InitialTrajectory cand;
  cand.x.resize(s.x.rows(), N + 1);
  cand.u.resize(s.u.rows(), N);
  cand.x.leftCols(N) = s.x.rightCols(N);
  if (N > 1) cand.u.leftCols(N - 1) = s.u.rightCols(N - 1);
  const VectorXd uf = problem_.preset.kappa_f(s.x.col(N));
  cand.u.col(N - 1) = uf;
  cand.x.col(N) = pcbf::step(problem_.preset.system, s.x.col(N), uf);
  shifted_cost_ = problem_.has_slack() && N > 1 ? s.xi.tail(N - 1).sum() : 0.0;
  warm_ = std::move(cand);
  return r;
}

}  // namespace pcbf

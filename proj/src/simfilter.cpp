#include "pcbf/simfilter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace pcbf {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

constexpr double kConvergedSlack = 1e-4;
constexpr int kConvergedWindow = 5;

Termination classify_termination(const Trajectory& t, bool stopped_infeasible) {
  if (stopped_infeasible) return Termination::Infeasible;
  const int T = t.steps();
  int k0 = T;
  while (k0 > 0 && t.xi0(k0 - 1) <= kConvergedSlack) --k0;
  if (T - k0 >= kConvergedWindow) return Termination::ConvergedToSafe;
  return Termination::HorizonReached;
}

}  // namespace

std::string to_string(Termination t) {
  switch (t) {
    case Termination::HorizonReached: return "horizon-reached";
    case Termination::Infeasible: return "infeasible";
    case Termination::ConvergedToSafe: return "converged-to-safe";
  }
  return "?";
}

double decrease_violation(const Trajectory& t) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < t.steps(); ++k)
    worst = std::max(worst, t.value(k + 1) - (t.value(k) - t.xi0(k)));
  return worst;
}

double replay_error(const SafeMpcProblem& problem, const Trajectory& t) {
  double worst = 0.0;
  for (int k = 0; k < t.steps(); ++k)
    worst = std::max(worst, (t.x.col(k + 1) - step(problem.preset.system, t.x.col(k),
                                                   t.u.col(k)))
                                .lpNorm<Eigen::Infinity>());
  return worst;
}

Trajectory simulate(const SafeMpcProblem& problem, const VectorXd& x0, int T) {
  require(T >= 1, "simulate: T must be >= 1");
  const int n = problem.preset.system.n;
  const int m = problem.preset.system.m;
  Trajectory t;
  t.x.resize(n, T + 1);
  t.u.resize(m, T);
  t.xi0.resize(T);
  t.value.resize(T + 1);

  Controller ctrl(problem);
  VectorXd x = x0;
  bool infeasible = false;
  int k = 0;
  for (; k < T; ++k) {
    t.x.col(k) = x;
    ControlResult r = ctrl.step(x);
    t.statuses.push_back(r.status);
    if (r.status != SolveStatus::Optimal) {
      infeasible = true;
      break;
    }
    t.u.col(k) = r.u0;
    t.xi0(k) = r.xi0;
    t.value(k) = r.value;
    x = step(problem.preset.system, x, r.u0);
  }
  t.x.conservativeResize(n, k + 1);
  t.u.conservativeResize(m, k);
  t.xi0.conservativeResize(k);
  t.value.conservativeResize(k + 1);
  t.x.col(k) = x;
  if (!infeasible) {
    ControlResult fin = ctrl.step(x);
    t.value(k) = fin.status == SolveStatus::Optimal
                     ? fin.value
                     : std::numeric_limits<double>::quiet_NaN();
  }
  t.termination = classify_termination(t, infeasible);
  return t;
}

FilterStep filter_step(const SafeMpcProblem& problem, const VectorXd& x,
                       const VectorXd& u_desired) {
  require(problem.variant == MpcVariant::Soft,
          "filter_step: stage 1 uses the soft problem");
  FilterStep fs;
  fs.x = x;
  fs.u_desired = u_desired;

  SafeMpcSolution s1 = solve_soft(problem, x);
  fs.stage1 = s1.status;
  if (s1.status != SolveStatus::Optimal) return fs;
  fs.budget = s1.value;

  SafeMpcProblem stage2 =
      SafeMpcProblem::filter(problem.preset, u_desired, s1.value + 1e-8);
  stage2.tie_break_weight = problem.tie_break_weight;
  InitialTrajectory warm{s1.x, s1.u};
  SafeMpcSolution s2 = solve_variant(stage2, x, warm);
  fs.stage2 = s2.status;
  if (s2.status != SolveStatus::Optimal) return fs;
  fs.u_applied = s2.u.col(0);
  fs.stage2_slack = s2.value;
  fs.xi0 = s2.xi(0);
  fs.modification = (fs.u_applied - u_desired).norm();
  fs.stage2_solution = std::move(s2);
  return fs;
}

Trajectory simulate_filtered(const SafeMpcProblem& problem, const VectorXd& x0,
                             const Policy& u_desired_policy, int T) {
  require(T >= 1, "simulate_filtered: T must be >= 1");
  const int n = problem.preset.system.n;
  const int m = problem.preset.system.m;
  Trajectory t;
  t.filtered = true;
  t.x.resize(n, T + 1);
  t.u.resize(m, T);
  t.u_desired.resize(m, T);
  t.modification.resize(T);
  t.xi0.resize(T);
  t.value.resize(T + 1);

  VectorXd x = x0;
  bool infeasible = false;
  int k = 0;
  for (; k < T; ++k) {
    t.x.col(k) = x;
    const VectorXd udes = u_desired_policy(x);
    FilterStep fs = filter_step(problem, x, udes);
    t.statuses.push_back(fs.stage2);
    if (fs.stage1 != SolveStatus::Optimal || fs.stage2 != SolveStatus::Optimal) {
      infeasible = true;
      break;
    }
    t.u.col(k) = fs.u_applied;
    t.u_desired.col(k) = udes;
    t.modification(k) = fs.modification;
    t.xi0(k) = fs.xi0;
    t.value(k) = fs.budget;
    x = step(problem.preset.system, x, fs.u_applied);
  }
  t.x.conservativeResize(n, k + 1);
  t.u.conservativeResize(m, k);
  t.u_desired.conservativeResize(m, k);
  t.modification.conservativeResize(k);
  t.xi0.conservativeResize(k);
  t.value.conservativeResize(k + 1);
  t.x.col(k) = x;
  if (!infeasible) {
    SafeMpcSolution fin = solve_soft(problem, x);
    t.value(k) = fin.status == SolveStatus::Optimal
                     ? fin.value
                     : std::numeric_limits<double>::quiet_NaN();
  }
  t.termination = classify_termination(t, infeasible);
  return t;
}

void write_trajectory_csv(const Trajectory& t, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open " + path);
  const int n = static_cast<int>(t.x.rows());
  const int m = static_cast<int>(t.u.rows());
  out << "k";
  for (int i = 1; i <= n; ++i) out << ",x" << i;
  for (int i = 1; i <= m; ++i) out << ",u" << i;
  out << ",xi0,V,status";
  if (t.filtered) {
    for (int i = 1; i <= m; ++i) out << ",u_des_" << i;
    out << ",mod_norm";
  }
  out << "\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (int k = 0; k <= t.steps(); ++k) {
    out << k;
    for (int i = 0; i < n; ++i) {
      out << ",";
      num(t.x(i, k));
    }
    const bool has_input = k < t.steps();
    for (int i = 0; i < m; ++i) {
      out << ",";
      if (has_input) num(t.u(i, k));
    }
    out << ",";
    if (has_input) num(t.xi0(k));
    out << ",";
    if (k < t.value.size()) num(t.value(k));
    out << ",";
    if (k < static_cast<int>(t.statuses.size()))
      out << to_string(t.statuses[k]);
    else
      out << "end";
    if (t.filtered) {
      for (int i = 0; i < m; ++i) {
        out << ",";
        if (has_input) num(t.u_desired(i, k));
      }
      out << ",";
      if (has_input) num(t.modification(k));
    }
    out << "\n";
  }
}

uint64_t Rng::next() {
  // splitmix64
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform(double lo, double hi) {
  const double t = static_cast<double>(next() >> 11) * 0x1.0p-53;
  return lo + t * (hi - lo);
}

std::vector<VectorXd> sample_initial_states(const SafeMpcProblem& problem,
                                            const SampleSpec& spec) {
  const int n = problem.preset.system.n;
  // bounding box of X
  VectorXd lo(n), hi(n);
  for (int j = 0; j < n; ++j) {
    double best_hi = -std::numeric_limits<double>::infinity();
    double best_lo = std::numeric_limits<double>::infinity();
    // axis-aligned bounds from the rows themselves (boxes and reduced sets);
    // fall back to unit range when a row does not pin the axis
    for (int r = 0; r < problem.preset.X.rows(); ++r) {
      const double c = problem.preset.X.G(r, j);
      if (std::abs(c) < 1e-12) continue;
      bool axis_row = true;
      for (int k = 0; k < n; ++k)
        if (k != j && std::abs(problem.preset.X.G(r, k)) > 1e-12) axis_row = false;
      if (!axis_row) continue;
      const double bound = problem.preset.X.g(r) / c;
      if (c > 0) best_hi = std::max(best_hi, bound);
      if (c < 0) best_lo = std::min(best_lo, bound);
    }
    hi(j) = std::isfinite(best_hi) ? best_hi : 1.0;
    lo(j) = std::isfinite(best_lo) ? best_lo : -1.0;
  }
  lo *= spec.inflate;
  hi *= spec.inflate;

  Rng rng(spec.seed);
  std::vector<VectorXd> out;
  int attempts = 0;
  const int budget = spec.max_attempts_per_sample * spec.count;
  while (static_cast<int>(out.size()) < spec.count) {
    require(attempts++ < budget, "sample_initial_states: attempt budget exhausted");
    VectorXd x(n);
    for (int j = 0; j < n; ++j) x(j) = rng.uniform(lo(j), hi(j));
    if (spec.require_unsafe && problem.preset.X.contains(x)) continue;
    SafeMpcSolution sol = solve_variant(problem, x);
    if (sol.status != SolveStatus::Optimal) continue;
    if (spec.require_unsafe && sol.value <= 1e-5) continue;
    out.push_back(x);
  }
  return out;
}

Polytope convex_hull_2d(const std::vector<VectorXd>& pts) {
  require(pts.size() >= 3, "convex_hull_2d: need at least 3 points");
  std::vector<Eigen::Vector2d> p;
  p.reserve(pts.size());
  for (const auto& v : pts) p.emplace_back(v(0), v(1));
  std::sort(p.begin(), p.end(), [](const auto& a, const auto& b) {
    return a(0) < b(0) || (a(0) == b(0) && a(1) < b(1));
  });
  p.erase(std::unique(p.begin(), p.end(),
                      [](const auto& a, const auto& b) { return a == b; }),
          p.end());
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a,
                  const Eigen::Vector2d& b) {
    return (a(0) - o(0)) * (b(1) - o(1)) - (a(1) - o(1)) * (b(0) - o(0));
  };
  std::vector<Eigen::Vector2d> hull(2 * p.size());
  size_t k = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  const size_t lower = k + 1;
  for (size_t i = p.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);  // CCW, last point == first dropped
  require(hull.size() >= 3, "convex_hull_2d: degenerate hull");

  MatrixXd G(hull.size(), 2);
  VectorXd g(hull.size());
  for (size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    // outward normal of a CCW edge
    G(i, 0) = b(1) - a(1);
    G(i, 1) = -(b(0) - a(0));
    const double nn = G.row(i).norm();
    G.row(i) /= nn;
    g(i) = G.row(i).dot(a);
  }
  return Polytope(G, g);
}

double distance_to_polytope(const Polytope& p, const VectorXd& x) {
  if (p.contains(x, 0.0)) return 0.0;
  ConicProgram prog;
  prog.nvar = p.dim();
  prog.Q = 2.0 * MatrixXd::Identity(p.dim(), p.dim());
  prog.q = -2.0 * x;
  prog.A_in = p.G;
  prog.b_in = p.g;
  prog.A_eq.resize(0, p.dim());
  prog.b_eq.resize(0);
  ConicSolution sol = solve(prog);
  require(sol.status == SolveStatus::Optimal, "distance_to_polytope: projection failed");
  return (sol.z - x).norm();
}

}  // namespace pcbf

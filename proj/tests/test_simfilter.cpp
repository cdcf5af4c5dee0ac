#include <doctest.h>

#include "pcbf/invariance.hpp"
#include "pcbf/pcbf.hpp"
#include "pcbf/simfilter.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace pcbf;

namespace {

VectorXd vec2(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("closed loop from the origin stays at zero value") {
  auto pr = SafeMpcProblem::soft(preset("linear-unstable"));
  auto t = simulate(pr, vec2(0, 0), 30);
  REQUIRE(t.steps() == 30);
  CHECK(t.value.maxCoeff() <= 1e-7);
  CHECK(t.termination == Termination::ConvergedToSafe);
  CHECK(replay_error(pr, t) == 0.0);
  CHECK(decrease_violation(t) <= 1e-5);
}

TEST_CASE("unsafe starts recover and stay in the state constraints") {
  auto pr = SafeMpcProblem::soft(preset("linear-unstable"));
  SampleSpec spec;
  spec.count = 3;
  spec.seed = 2027;
  spec.require_unsafe = true;
  auto starts = sample_initial_states(pr, spec);
  REQUIRE(starts.size() == 3);
  for (const auto& x0 : starts) {
    CHECK(x0.lpNorm<Eigen::Infinity>() > 1.0);
    auto t = simulate(pr, x0, 50);
    REQUIRE(t.steps() == 50);
    CHECK(decrease_violation(t) <= 1e-5);
    CHECK(t.termination == Termination::ConvergedToSafe);
    bool converged = false;
    for (int k = 0; k < t.steps(); ++k) {
      if (!converged && k >= 30) CHECK(t.xi0(k) <= 1e-4);
      if (t.xi0(k) <= 1e-4) converged = true;
      if (converged)
        CHECK(pr.preset.X.violation(t.x.col(k)) <= 1e-4);
    }
  }
}

TEST_CASE("pendulum trajectory converges into the viability kernel") {
  auto pend = preset("nonlinear-pendulum");
  auto pr = SafeMpcProblem::soft(pend);
  auto kernel = viability_kernel_grid(pend.system, pend.X, pend.U, {41, 41}, 21);
  auto t = simulate(pr, vec2(0.15, -0.4), 60);
  REQUIRE(t.steps() == 60);
  CHECK(decrease_violation(t) <= 1e-5);
  CHECK(t.termination == Termination::ConvergedToSafe);
  // the tail of the trajectory lives in the kernel cells
  for (int k = 40; k <= 60; ++k) CHECK(kernel.is_member(t.x.col(k)));
}

TEST_CASE("filter leaves a safe desired input untouched") {
  auto lin = preset("linear-unstable");
  auto pr = SafeMpcProblem::soft(lin);
  const VectorXd x = vec2(0.1, 0.1);
  const VectorXd udes = (*lin.Kf) * x;
  auto fs = filter_step(pr, x, udes);
  REQUIRE(fs.stage1 == SolveStatus::Optimal);
  REQUIRE(fs.stage2 == SolveStatus::Optimal);
  CHECK(fs.budget <= 1e-9);
  CHECK(fs.modification <= 1e-5);
  CHECK(fs.stage2_slack <= fs.budget + 1e-6);
}

TEST_CASE("filter recovers an unsafe state with a saturating desired input") {
  auto lin = preset("linear-unstable");
  auto pr = SafeMpcProblem::soft(lin);
  const VectorXd x0 = vec2(1.1, 0.0);
  const VectorXd udes = (*lin.Kf) * x0;
  REQUIRE(std::abs(udes(0)) > 1.5);  // desired input infeasible

  auto fs = filter_step(pr, x0, udes);
  REQUIRE(fs.stage2 == SolveStatus::Optimal);
  CHECK(lin.U.violation(fs.u_applied) <= 1e-7);
  CHECK(fs.stage2_slack <= fs.budget + 1e-6);
  // the budget row binds whenever slack is unavoidable
  CHECK(fs.stage2_slack >= fs.budget - 1e-6);

  Policy kp = [&](const VectorXd& x) { return (*lin.Kf) * x; };
  auto t = simulate_filtered(pr, x0, kp, 40);
  REQUIRE(t.steps() == 40);
  CHECK(t.termination == Termination::ConvergedToSafe);
  for (int k = 30; k <= 40; ++k) CHECK(lin.X.violation(t.x.col(k)) <= 1e-4);
  // monotone value along the filtered run
  for (int k = 0; k + 1 <= t.steps(); ++k)
    CHECK(t.value(k + 1) <= t.value(k) + 1e-5);
  CHECK(decrease_violation(t) <= 1e-5);
}

TEST_CASE("filtered rollout matches the raw policy while it is safe") {
  auto lin = preset("linear-unstable");
  auto pr = SafeMpcProblem::soft(lin);
  Policy kp = [&](const VectorXd& x) { return (*lin.Kf) * x; };
  const VectorXd x0 = vec2(0.15, -0.1);
  auto t = simulate_filtered(pr, x0, kp, 20);
  REQUIRE(t.steps() == 20);
  VectorXd x = x0;
  for (int k = 0; k < t.steps(); ++k) {
    CHECK((t.x.col(k) - x).lpNorm<Eigen::Infinity>() <= 1e-4);
    CHECK(t.modification(k) <= 1e-5);
    x = step(lin.system, x, kp(x));
  }
}

TEST_CASE("a batch of filtered unsafe starts all recover") {
  auto lin = preset("linear-unstable");
  auto pr = SafeMpcProblem::soft(lin);
  SampleSpec spec;
  spec.count = 5;
  spec.seed = 11;
  spec.require_unsafe = true;
  auto starts = sample_initial_states(pr, spec);
  Policy kp = [&](const VectorXd& x) { return (*lin.Kf) * x; };
  int recovered = 0;
  for (const auto& x0 : starts) {
    auto t = simulate_filtered(pr, x0, kp, 50);
    if (t.termination == Termination::ConvergedToSafe) ++recovered;
    CHECK(decrease_violation(t) <= 1e-5);
  }
  CHECK(recovered == 5);
}

TEST_CASE("sampling is deterministic and honors the unsafe band") {
  auto pr = SafeMpcProblem::soft(preset("linear-unstable"));
  SampleSpec spec;
  spec.count = 4;
  spec.seed = 99;
  spec.require_unsafe = true;
  auto a = sample_initial_states(pr, spec);
  auto b = sample_initial_states(pr, spec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    CHECK((a[i] - b[i]).lpNorm<Eigen::Infinity>() == 0.0);
  for (const auto& x : a) {
    CHECK(x.lpNorm<Eigen::Infinity>() > 1.0);
    CHECK(x.lpNorm<Eigen::Infinity>() <= 1.2 + 1e-12);
  }
}

TEST_CASE("set stability surrogate: excursions grow with the start distance") {
  auto lin = preset("linear-unstable");
  auto pr = SafeMpcProblem::soft(lin);
  // grid-approximated zero-set hull
  auto g = eval_grid(pr, vec2(-1.5, -1.5), vec2(1.5, 1.5), {21, 21});
  std::vector<VectorXd> zero_pts;
  for (int i = 0; i < g.points(); ++i)
    if (g.feasible(i) && g.at(i) <= kZeroLevel) zero_pts.push_back(g.point(i));
  REQUIRE(zero_pts.size() >= 3);
  Polytope hull = convex_hull_2d(zero_pts);

  auto batch_excursion = [&](double delta, uint64_t seed, int count) {
    Rng rng(seed);
    double worst = 0;
    int found = 0, guard = 0;
    while (found < count && guard++ < 20000) {
      VectorXd x0 = vec2(rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3));
      const double d0 = distance_to_polytope(hull, x0);
      if (d0 <= 1e-9 || d0 > delta) continue;
      if (solve_soft(pr, x0).status != SolveStatus::Optimal) continue;
      auto t = simulate(pr, x0, 25);
      double exc = 0;
      for (int k = 0; k <= t.steps(); ++k)
        exc = std::max(exc, distance_to_polytope(hull, t.x.col(k)));
      worst = std::max(worst, exc);
      ++found;
    }
    REQUIRE(found == count);
    return worst;
  };
  const double e_small = batch_excursion(0.05, 5, 12);
  const double e_large = batch_excursion(0.10, 6, 12);
  CHECK(e_small <= e_large + 1e-6);
}

TEST_CASE("trajectory CSV layout") {
  auto lin = preset("linear-unstable");
  auto pr = SafeMpcProblem::soft(lin);
  auto t = simulate(pr, vec2(0.2, 0.1), 5);
  write_trajectory_csv(t, "traj_rt.csv");
  std::ifstream in("traj_rt.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "k,x1,x2,u1,xi0,V,status");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == t.steps() + 1);
  in.close();
  std::remove("traj_rt.csv");

  Policy kp = [&](const VectorXd& x) { return (*lin.Kf) * x; };
  auto tf = simulate_filtered(pr, vec2(0.2, 0.1), kp, 3);
  write_trajectory_csv(tf, "traj_f_rt.csv");
  std::ifstream inf("traj_f_rt.csv");
  std::getline(inf, header);
  CHECK(header == "k,x1,x2,u1,xi0,V,status,u_des_1,mod_norm");
  inf.close();
  std::remove("traj_f_rt.csv");
}

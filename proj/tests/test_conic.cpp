#include <doctest.h>

#include "pcbf/conic.hpp"
#include "pcbf/model.hpp"
#include "support/random_programs.hpp"

#include <fstream>
#include <random>

using namespace pcbf;

namespace {

ConicProgram lp_1d(double qcoef) {
  // min qcoef*x  s.t.  x >= 1
  ConicProgram p;
  p.nvar = 1;
  p.q.resize(1);
  p.q << qcoef;
  p.A_in.resize(1, 1);
  p.A_in << -1.0;
  p.b_in.resize(1);
  p.b_in << -1.0;
  p.A_eq.resize(0, 1);
  p.b_eq.resize(0);
  return p;
}

}  // namespace

TEST_CASE("min x subject to x >= 1") {
  auto sol = solve(lp_1d(1.0));
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.z(0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("box-constrained scalar QP projects onto the box") {
  // min (u-2)^2 over [-1.5, 1.5] -> u* = 1.5
  ConicProgram p;
  p.nvar = 1;
  p.Q.resize(1, 1);
  p.Q << 2.0;
  p.q.resize(1);
  p.q << -4.0;
  p.A_in.resize(2, 1);
  p.A_in << 1.0, -1.0;
  p.b_in.resize(2);
  p.b_in << 1.5, 1.5;
  p.A_eq.resize(0, 1);
  p.b_eq.resize(0);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.z(0) == doctest::Approx(1.5).epsilon(1e-7));
}

TEST_CASE("SOC norm bound") {
  // min t s.t. ||(3,4)|| <= t -> t* = 5
  ConicProgram p;
  p.nvar = 1;
  p.q.resize(1);
  p.q << 1.0;
  p.A_eq.resize(0, 1);
  p.b_eq.resize(0);
  p.A_in.resize(0, 1);
  p.b_in.resize(0);
  SocBlock blk;
  blk.F = MatrixXd::Zero(2, 1);
  blk.d.resize(2);
  blk.d << 3.0, 4.0;
  blk.r.resize(1);
  blk.r << 1.0;
  blk.s = 0.0;
  p.soc.push_back(blk);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.z(0) == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("empty feasible set is certified infeasible") {
  // x <= 0 and x >= 1
  ConicProgram p;
  p.nvar = 1;
  p.q = VectorXd::Zero(1);
  p.A_in.resize(2, 1);
  p.A_in << 1.0, -1.0;
  p.b_in.resize(2);
  p.b_in << 0.0, -1.0;
  p.A_eq.resize(0, 1);
  p.b_eq.resize(0);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Infeasible);
  CHECK(sol.farkas_residual <= 1e-7);
  // verify the certificate on the raw data: y >= 0, A'y ~ 0, b'y = -1
  REQUIRE(sol.y_cert.size() == 2);
  CHECK(sol.y_cert.minCoeff() >= -1e-9);
  CHECK((p.A_in.transpose() * sol.y_cert).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(p.b_in.dot(sol.y_cert) == doctest::Approx(-1.0));
}

TEST_CASE("randomized KKT-constructed instances solve to 1e-5") {
  std::mt19937_64 rng(2024);
  using testsupport::InstanceKind;
  int count = 0;
  for (int trial = 0; trial < 150; ++trial) {
    InstanceKind kind = trial % 3 == 0   ? InstanceKind::Lp
                        : trial % 3 == 1 ? InstanceKind::Qp
                                         : InstanceKind::Soc;
    auto inst = testsupport::make_known_instance(kind, rng);
    auto sol = solve(inst.program);
    REQUIRE(sol.status == SolveStatus::Optimal);
    const double err = (sol.z - inst.z_star).lpNorm<Eigen::Infinity>();
    CHECK(err <= 1e-5);
    if (err <= 1e-5) ++count;
  }
  CHECK(count == 150);
}

TEST_CASE("infeasible-by-construction instances are certified") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    auto p = testsupport::make_infeasible_instance(rng);
    auto sol = solve(p);
    REQUIRE(sol.status == SolveStatus::Infeasible);
    CHECK(sol.farkas_residual <= 1e-7);
    CHECK(sol.y_cert.minCoeff() >= -1e-7);
    CHECK(p.b_in.dot(sol.y_cert) == doctest::Approx(-1.0));
    CHECK((p.A_in.transpose() * sol.y_cert).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("warm start does not move the reported optimum") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    auto inst = testsupport::make_known_instance(testsupport::InstanceKind::Qp, rng);
    auto cold = solve(inst.program);
    REQUIRE(cold.status == SolveStatus::Optimal);
    VectorXd zw = cold.z;
    for (int i = 0; i < zw.size(); ++i) zw(i) += 0.01 * ((i % 2) ? 1 : -1);
    auto warm = solve(inst.program, {}, zw);
    REQUIRE(warm.status == SolveStatus::Optimal);
    CHECK(std::abs(warm.objective - cold.objective) <= 1e-6);
  }
}

TEST_CASE("positive scaling of a linear objective keeps the argmin") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = testsupport::make_known_instance(testsupport::InstanceKind::Lp, rng);
    auto base = solve(inst.program);
    ConicProgram scaled = inst.program;
    scaled.q *= 7.25;
    auto s = solve(scaled);
    REQUIRE(base.status == SolveStatus::Optimal);
    REQUIRE(s.status == SolveStatus::Optimal);
    CHECK((base.z - s.z).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
}

TEST_CASE("solves are deterministic") {
  std::mt19937_64 rng(123);
  auto inst = testsupport::make_known_instance(testsupport::InstanceKind::Soc, rng);
  auto a = solve(inst.program);
  auto b = solve(inst.program);
  REQUIRE(a.status == b.status);
  CHECK(a.iterations == b.iterations);
  CHECK((a.z - b.z).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(a.objective == b.objective);
}

TEST_CASE("lp feasibility classification") {
  MatrixXd A(2, 1);
  VectorXd b(2);
  A << 1.0, -1.0;

  b << 1.0, 0.0;  // 0 <= x <= 1
  CHECK(solve_lp_feasibility(A, b) == Feasibility::Feasible);

  b << -1.0, -1.0;  // x <= -1 and x >= 1
  CHECK(solve_lp_feasibility(A, b) == Feasibility::Infeasible);

  // unit box intersected with x1 >= 0.5
  MatrixXd A2(5, 2);
  VectorXd b2(5);
  A2 << 1, 0, -1, 0, 0, 1, 0, -1, -1, 0;
  b2 << 1, 1, 1, 1, -0.5;
  CHECK(solve_lp_feasibility(A2, b2) == Feasibility::Feasible);
}

TEST_CASE("program validation") {
  ConicProgram p = lp_1d(1.0);
  p.Q.resize(1, 1);
  p.Q << -1.0;  // not PSD
  CHECK_THROWS_AS(p.validate(), ConfigError);

  ConicProgram bad = lp_1d(1.0);
  bad.b_in.resize(2);
  bad.b_in << 1.0, 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("max-iter is reported, never silently optimal") {
  // unbounded LP: min -x with x >= 1 only; diverges and must not claim optimal
  auto p = lp_1d(-1.0);
  SolveSettings s;
  s.max_iter = 500;
  auto sol = solve(p, s);
  CHECK(sol.status == SolveStatus::MaxIter);
}

TEST_CASE("program dump writes a readable file") {
  auto p = lp_1d(1.0);
  dump_program(p, "dump_test.txt");
  std::ifstream in("dump_test.txt");
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line.find("conic program") != std::string::npos);
  in.close();
  std::remove("dump_test.txt");
}

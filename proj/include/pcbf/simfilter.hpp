#pragma once

#include "pcbf/safempc.hpp"

#include <functional>
#include <string>
#include <vector>

namespace pcbf {

enum class Termination { HorizonReached, Infeasible, ConvergedToSafe };

std::string to_string(Termination t);

/// Closed-loop record. x has steps()+1 columns; u, xi0 and per-step statuses
/// have steps() entries; value has steps()+1 (the final state is evaluated
/// too). Filtered runs also carry u_desired and the modification norms.
struct Trajectory {
  MatrixXd x;
  MatrixXd u;
  VectorXd xi0;
  VectorXd value;
  std::vector<SolveStatus> statuses;
  Termination termination = Termination::HorizonReached;
  uint64_t seed = 0;  // recorded by the samplers/CLI for reproducibility

  bool filtered = false;
  MatrixXd u_desired;
  VectorXd modification;

  int steps() const { return static_cast<int>(u.cols()); }
};

/// Largest violation of the decrease inequality
/// V(k+1) <= V(k) - xi0(k) + tol along the run (negative when it holds).
double decrease_violation(const Trajectory& t);

/// Largest dynamics replay error ||x(k+1) - f(x(k), u(k))||_inf (zero by
/// construction; nonzero indicates file corruption).
double replay_error(const SafeMpcProblem& problem, const Trajectory& t);

/// Run the receding-horizon controller for T steps (or until infeasible),
/// warm-starting each solve from the shifted candidate. The run is labeled
/// converged-to-safe when xi0 stays below 1e-4 for at least the final five
/// steps.
Trajectory simulate(const SafeMpcProblem& problem, const VectorXd& x0, int T);

struct FilterStep {
  VectorXd x;
  VectorXd u_desired;
  VectorXd u_applied;
  double budget = 0.0;        // stage-1 value V*(x)
  double stage2_slack = 0.0;  // total slack spent by stage 2
  double xi0 = 0.0;           // first-stage slack of the applied solution
  SolveStatus stage1 = SolveStatus::MaxIter;
  SolveStatus stage2 = SolveStatus::MaxIter;
  double modification = 0.0;  // ||u_applied - u_desired||
  SafeMpcSolution stage2_solution;
};

/// Two-stage predictive safety filter: stage 1 certifies the slack budget
/// V*(x); stage 2 returns the input closest to u_desired subject to the
/// budget. Stage-2 infeasibility cannot occur with the stage-1 budget and is
/// reported as a solver-consistency failure in the statuses.
FilterStep filter_step(const SafeMpcProblem& problem, const VectorXd& x,
                       const VectorXd& u_desired);

using Policy = std::function<VectorXd(const VectorXd&)>;

/// Closed loop under the filtered inputs; u_desired_policy maps state to the
/// desired input (the linear preset's default is K_p x).
Trajectory simulate_filtered(const SafeMpcProblem& problem, const VectorXd& x0,
                             const Policy& u_desired_policy, int T);

/// Trajectory CSV: k,x1..xn,u1..um,xi0,V,status per step plus a final row for
/// x(T); filtered runs append u_des_1..m,mod_norm.
void write_trajectory_csv(const Trajectory& t, const std::string& path);

/// Deterministic uniform sampler (the std distributions are not portable).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}
  double uniform(double lo, double hi);
  uint64_t next();

 private:
  uint64_t state_;
};

struct SampleSpec {
  int count = 1;
  uint64_t seed = 0;
  bool require_unsafe = false;  // reject states inside X (V* above the zero level)
  double inflate = 1.2;         // sampling box: X bounding box scaled by this
  int max_attempts_per_sample = 10000;
};

/// Rejection-sample soft-feasible initial conditions; unsafe mode keeps only
/// states outside X (hence V* > 0). Throws ConfigError when the attempt
/// budget runs out.
std::vector<VectorXd> sample_initial_states(const SafeMpcProblem& problem,
                                            const SampleSpec& spec);

/// H-representation of the convex hull of 2-D points (monotone chain).
Polytope convex_hull_2d(const std::vector<VectorXd>& pts);

/// Euclidean distance from x to {y : G y <= g} via the projection QP.
double distance_to_polytope(const Polytope& p, const VectorXd& x);

}  // namespace pcbf

#pragma once

#include "pcbf/conic.hpp"
#include "pcbf/model.hpp"

#include <optional>

namespace pcbf {

/// Constraint handling of the MPC transcription.
///  Soft:      relaxed state rows G x_i - g <= xi_i, objective sum xi
///  Hard:      G x_i <= g, no slack variables (defines the zero-level set)
///  Tightened: G x_i - g <= xi_i - Delta_i, the comparison baseline
///  Filter:    stage-2 of the safety filter, min ||u_0 - u_p||^2 under a
///             total-slack budget
enum class MpcVariant { Soft, Hard, Tightened, Filter };

std::string to_string(MpcVariant v);

struct SafeMpcProblem {
  ProblemPreset preset;
  MpcVariant variant = MpcVariant::Soft;
  VectorXd delta;            // Tightened: stage offsets, delta(0)=0, nondecreasing
  VectorXd u_desired;        // Filter: desired first input u_p
  double slack_budget = 0.0; // Filter: bound on sum of slacks
  double tie_break_weight = 1e-6;

  static SafeMpcProblem soft(ProblemPreset p);
  static SafeMpcProblem hard(ProblemPreset p);
  /// Delta_i = i * delta_step.
  static SafeMpcProblem tightened(ProblemPreset p, double delta_step);
  static SafeMpcProblem filter(ProblemPreset p, VectorXd u_desired, double budget);

  bool has_slack() const { return variant != MpcVariant::Hard; }
  void validate() const;
};

/// Index map of the stacked decision vector z = (x_0..x_N, u_0..u_N-1,
/// xi_0..xi_N-1); the slack block is absent for the hard variant.
struct MpcLayout {
  int n = 0, m = 0, N = 0;
  bool slack = true;
  int x_off(int i) const { return n * i; }
  int u_off(int i) const { return n * (N + 1) + m * i; }
  int xi_off(int i) const { return n * (N + 1) + m * N + i; }
  int nvar() const { return n * (N + 1) + m * N + (slack ? N : 0); }
};

MpcLayout layout_of(const SafeMpcProblem& problem);

struct SafeMpcSolution {
  SolveStatus status = SolveStatus::MaxIter;
  MatrixXd x;        // n x (N+1), x.col(0) equals the queried state exactly
  MatrixXd u;        // m x N
  VectorXd xi;       // N slacks (zero for hard)
  double value = 0;  // V* = sum of slacks
  int sqp_iterations = 0;
  ConicSolution conic;  // last subproblem diagnostics (duals, residuals)

  VectorXd stacked(const MpcLayout& l) const;
};

/// Largest violations of the solution contract, for tests and runtime checks.
struct SolutionCheck {
  double dynamics_residual = 0;   // ||x_{i+1} - f(x_i,u_i)||_inf over stages
  double state_residual = 0;      // relaxed/hard state rows
  double input_residual = 0;      // input rows
  double terminal_residual = 0;   // terminal membership
  double max() const;
};
SolutionCheck check_solution(const SafeMpcProblem& problem, const SafeMpcSolution& sol);

/// Transcribe the problem at state x into a conic program. For nonlinear
/// models the dynamics rows are linearized along the given trajectory
/// (default: constant state, zero input — the first SQP subproblem).
ConicProgram build(const SafeMpcProblem& problem, const VectorXd& x);

struct InitialTrajectory {
  MatrixXd x;  // n x (N+1)
  MatrixXd u;  // m x N
};

/// Solve the relaxed problem (variant Soft or Tightened). Dispatches to a
/// single conic solve for linear models and to sqp_solve otherwise.
SafeMpcSolution solve_soft(const SafeMpcProblem& problem, const VectorXd& x,
                           const std::optional<InitialTrajectory>& warm = std::nullopt);

/// Solve the unrelaxed problem (variant Hard). Infeasible means x is outside
/// the zero-level safe set.
SafeMpcSolution solve_hard(const SafeMpcProblem& problem, const VectorXd& x,
                           const std::optional<InitialTrajectory>& warm = std::nullopt);

/// SQP on the nonlinear transcription: linearize along the trajectory, solve
/// the conic subproblem, globalize with an l1 merit line search.
SafeMpcSolution sqp_solve(const SafeMpcProblem& problem, const VectorXd& x,
                          const std::optional<InitialTrajectory>& init = std::nullopt);

/// Solve the given variant at x (used by the filter's stage 2).
SafeMpcSolution solve_variant(const SafeMpcProblem& problem, const VectorXd& x,
                              const std::optional<InitialTrajectory>& warm = std::nullopt);

struct ControlResult {
  SolveStatus status = SolveStatus::MaxIter;
  VectorXd u0;
  double xi0 = 0;
  double value = 0;
  SafeMpcSolution solution;
};

/// Receding-horizon controller u_0*(x). Holds the shifted previous solution
/// as a warm start; one instance per trajectory, not shared across threads.
class Controller {
 public:
  explicit Controller(SafeMpcProblem problem);

  ControlResult step(const VectorXd& x);

  const SafeMpcProblem& problem() const { return problem_; }
  /// Shifted candidate from the last solution, if any (exposed for tests:
  /// its cost upper-bounds the next value by the decrease inequality).
  std::optional<InitialTrajectory> shifted_candidate() const { return warm_; }
  double shifted_cost() const { return shifted_cost_; }

 private:
  SafeMpcProblem problem_;
  std::optional<InitialTrajectory> warm_;
  double shifted_cost_ = 0;
};

}  // namespace pcbf

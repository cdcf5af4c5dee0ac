#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace pcbf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Second-order-cone constraint ||F z + d||_2 <= r' z + s.
struct SocBlock {
  MatrixXd F;
  VectorXd d;
  VectorXd r;
  double s = 0.0;
};

/// Small dense convex program
///   minimize    1/2 z' Q z + q' z
///   subject to  A_eq z = b_eq
///               A_in z <= b_in
///               ||F_k z + d_k|| <= r_k' z + s_k   for each SOC block k
/// Q is optional (empty means linear objective) and must be PSD.
struct ConicProgram {
  int nvar = 0;
  VectorXd q;
  MatrixXd Q;  // empty (0x0) when the objective is linear
  MatrixXd A_eq;
  VectorXd b_eq;
  MatrixXd A_in;
  VectorXd b_in;
  std::vector<SocBlock> soc;

  bool has_quadratic() const { return Q.size() > 0; }
  int eq_rows() const { return static_cast<int>(b_eq.size()); }
  int in_rows() const { return static_cast<int>(b_in.size()); }

  /// Throws ConfigError on inconsistent block dimensions or non-PSD Q
  /// (minimum eigenvalue below -1e-9).
  void validate() const;

  double objective(const VectorXd& z) const;
};

enum class SolveStatus { Optimal, Infeasible, MaxIter };

std::string to_string(SolveStatus s);

struct ConicSolution {
  SolveStatus status = SolveStatus::MaxIter;
  VectorXd z;            // primal iterate (optimal point when status == Optimal)
  VectorXd y;            // stacked dual (eq rows, then in rows, then soc rows)
  double objective = 0.0;
  double primal_residual = 0.0;  // unscaled, inf-norm
  double dual_residual = 0.0;    // unscaled, inf-norm
  double duality_gap = 0.0;
  int iterations = 0;
  bool polished = false;

  // populated when status == Infeasible: y_cert is dual-cone feasible with
  // b' y_cert = -1; farkas_residual = max(||A' y_cert||_inf, cone violation).
  VectorXd y_cert;
  double farkas_residual = 0.0;
};

struct SolveSettings {
  int max_iter = 20000;
  double eps_abs = 1e-9;        // scaled residual target
  double eps_contract = 1e-6;   // contract tolerance accepted at iteration cap
  double eps_pinf = 1e-7;       // Farkas residual threshold
  double alpha = 1.6;           // over-relaxation
  double sigma = 1e-6;
  double rho0 = 0.1;
  int check_every = 25;
  int ruiz_iters = 10;
  bool polish = true;
  bool adaptive_rho = true;
};

/// Solve the program. Deterministic for identical inputs and warm start.
ConicSolution solve(const ConicProgram& p, const SolveSettings& settings = {},
                    const std::optional<VectorXd>& warm_z = std::nullopt,
                    const std::optional<VectorXd>& warm_y = std::nullopt);

enum class Feasibility { Feasible, Infeasible };

/// Classify {x : A_in x <= b_in} by solving the elastic program
/// min s s.t. A_in x <= b_in + s, s >= -1. Feasible iff s* below tolerance.
Feasibility solve_lp_feasibility(const MatrixXd& A_in, const VectorXd& b_in,
                                 const SolveSettings& settings = {});

/// Plain-text dump of a program (matrix-market style) for offline inspection.
void dump_program(const ConicProgram& p, const std::string& path);

}  // namespace pcbf

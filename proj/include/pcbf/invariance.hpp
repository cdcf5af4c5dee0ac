#pragma once

#include "pcbf/conic.hpp"
#include "pcbf/model.hpp"

#include <string>
#include <vector>

namespace pcbf {

/// LQR synthesis result: u = K x and the DARE solution P.
struct LqrResult {
  MatrixXd K;
  MatrixXd P;
  int iterations = 0;
};

/// Fixed-point iteration on the discrete algebraic Riccati equation.
/// Throws ConfigError when the iteration does not converge (not
/// stabilizable / detectable data).
LqrResult dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R);

/// Largest alpha such that {x : x'Px <= alpha} satisfies every state row and,
/// through u = Kx, every input row: alpha = min_rows b^2 / (a' P^-1 a).
/// Throws ConfigError when some offset b is negative (empty interior).
double max_alpha(const MatrixXd& P, const MatrixXd& K, const Polytope& X, const Polytope& U);

/// max of c'x over {x : G x <= g}, solved as an LP. The polytope (minus any
/// single row during reduce) is assumed to fit in ||x||_inf <= 1e3; a box of
/// that size bounds the LP so redundancy classification stays exact for the
/// sets this artifact builds.
struct SupportResult {
  bool bounded_feasible = false;
  double value = 0.0;
  VectorXd argmax;
};
SupportResult polytope_support(const VectorXd& c, const Polytope& poly,
                               double cap = std::numeric_limits<double>::infinity());

/// Drop every redundant row (max of the row over the others <= offset + 1e-9).
Polytope reduce(const Polytope& poly);

/// inner subset-of outer, via row-wise support LPs with tolerance 1e-9.
bool contains(const Polytope& outer, const Polytope& inner, double tol = 1e-9);

struct InvariantSetResult {
  Polytope set;
  int iterations = 0;
  bool converged = false;
};

/// Maximal positively invariant set of x+ = Acl x inside C by the standard
/// preimage fixed point: Omega_{k+1} = reduce(Omega_k intersect
/// {x : G_k Acl x <= g_k}).
InvariantSetResult max_invariant_polytope(const MatrixXd& Acl, const Polytope& C,
                                          int max_iter = 100);

/// Rectangular grid membership array (row-major over axis 0 then axis 1).
struct GridKernel {
  VectorXd lo;                    // per-axis lower bounds
  VectorXd hi;                    // per-axis upper bounds
  std::vector<int> resolution;    // cells per axis
  std::vector<uint8_t> member;
  std::vector<VectorXd> input_samples;
  int sweeps = 0;

  int cells() const;
  int index_of(const VectorXd& x) const;  // containing cell, -1 outside
  VectorXd center(int idx) const;
  bool is_member(const VectorXd& x) const;
  int count() const;
};

/// Inner-approximate viability kernel on a grid: a cell survives a sweep when
/// some sampled input maps its center into a surviving cell. Iterated to a
/// fixed point.
GridKernel viability_kernel_grid(const SystemModel& model, const Polytope& X,
                                 const Polytope& U, const std::vector<int>& resolution,
                                 int input_samples_per_dim = 61);

/// Full preset validation including the LP-backed polytope terminal check.
void validate_preset(const ProblemPreset& preset);

/// CSV export "x1,x2,member" (2-D kernels), one row per cell center.
void write_kernel_csv(const GridKernel& k, const std::string& path);
GridKernel read_kernel_csv(const std::string& path);

/// JSON export {"G": [...], "g": [...]} (row-major).
void write_polytope_json(const Polytope& p, const std::string& path);

}  // namespace pcbf

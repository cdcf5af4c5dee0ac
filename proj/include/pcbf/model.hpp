#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcbf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Thrown on inconsistent problem data (dimension mismatches, bad presets,
/// malformed spec files). The CLI maps this to a usage error.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Discrete-time system x(k+1) = f(x(k), u(k)).
///
/// Linear systems store (A, B) directly. Nonlinear systems store a
/// continuous-time vector field with analytic Jacobians and are discretized
/// with the Euler forward map x + dt*fc(x,u).
struct SystemModel {
  enum class Kind { Linear, Nonlinear };

  Kind kind = Kind::Linear;
  int n = 0;  // state dimension
  int m = 0;  // input dimension

  // linear
  MatrixXd A;
  MatrixXd B;

  // nonlinear (continuous-time field and Jacobians), Euler forward with dt
  std::function<VectorXd(const VectorXd&, const VectorXd&)> fc;
  std::function<MatrixXd(const VectorXd&, const VectorXd&)> fc_jac_x;
  std::function<MatrixXd(const VectorXd&, const VectorXd&)> fc_jac_u;
  double dt = 0.0;

  static SystemModel linear(const MatrixXd& A, const MatrixXd& B);
  static SystemModel pendulum(double dt);  // the built-in nonlinear plant

  bool is_linear() const { return kind == Kind::Linear; }
};

/// One step of the discrete dynamics.
VectorXd step(const SystemModel& model, const VectorXd& x, const VectorXd& u);

/// Affine discrete-time model exact at the linearization point:
///   x+ ~ Ad*x + Bd*u + cd,  with  Ad*x0 + Bd*u0 + cd == step(x0, u0).
/// Linear models return (A, B, 0).
struct AffineModel {
  MatrixXd Ad;
  MatrixXd Bd;
  VectorXd cd;
};
AffineModel linearize(const SystemModel& model, const VectorXd& x, const VectorXd& u);

/// H-representation polytope {x : G x <= g}.
struct Polytope {
  MatrixXd G;
  VectorXd g;

  Polytope() = default;
  Polytope(MatrixXd G_, VectorXd g_);

  /// ||x||_inf <= r as 2n rows.
  static Polytope box(int dim, double r);
  /// axis-aligned box with per-axis bounds |x_i| <= r_i.
  static Polytope box(const VectorXd& r);

  int dim() const { return static_cast<int>(G.cols()); }
  int rows() const { return static_cast<int>(G.rows()); }

  bool contains(const VectorXd& x, double tol = 1e-9) const;
  /// max_j (G x - g)_j; negative inside.
  double violation(const VectorXd& x) const;
};

/// Terminal region: ellipsoid {x'Px <= alpha}, polytope, or single point.
struct TerminalSet {
  enum class Variant { Ellipsoid, Polytope, Point };

  Variant variant = Variant::Point;
  MatrixXd P;       // ellipsoid
  double alpha = 0;
  Polytope poly;    // polytope
  VectorXd xf;      // point

  static TerminalSet ellipsoid(const MatrixXd& P, double alpha);
  static TerminalSet polytope(Polytope p);
  static TerminalSet point(const VectorXd& xf);

  bool contains(const VectorXd& x, double tol = 1e-9) const;
};

/// A complete safe-MPC problem instance: plant, constraint sets, terminal
/// set, horizon, and the terminal control law (gain K, or none meaning u=0).
struct ProblemPreset {
  SystemModel system;
  Polytope X;
  Polytope U;
  TerminalSet Xf;
  int N = 1;
  std::optional<MatrixXd> Kf;
  std::string name;  // preset name or spec-file path, for reporting

  /// Terminal input for the shifted candidate: Kf*x if a gain is set, else 0.
  VectorXd kappa_f(const VectorXd& x) const;

  /// Throws ConfigError on violated structural invariants (N >= 1, dimension
  /// consistency, Xf inside X for ellipsoid/point terminal sets; polytope
  /// terminal containment needs an LP and lives in invariance).
  void validate() const;
};

/// Built-in problem data. Names: "linear-unstable", "nonlinear-pendulum".
ProblemPreset preset(const std::string& name);
std::vector<std::string> preset_names();

/// Parse the JSON problem-spec format (see README) into a preset.
ProblemPreset load_problem_json(const std::string& path);

}  // namespace pcbf

#pragma once

#include "pcbf/safempc.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pcbf {

enum class CellStatus : uint8_t { Feasible = 0, Infeasible = 1, Unresolved = 2 };

/// Rectangular sampling of V*(x): a res1 x res2 lattice of evaluation points
/// (the marching-squares corners). Values are finite only on feasible cells.
struct ValueGrid {
  VectorXd lo, hi;           // axis ranges
  std::vector<int> res;      // points per axis
  std::vector<double> value; // row-major, axis 0 outer
  std::vector<CellStatus> status;
  uint64_t fingerprint = 0;       // preset + variant
  uint64_t base_fingerprint = 0;  // preset + grid geometry, variant-free

  int points() const;
  int index(int i, int j) const { return i * res[1] + j; }
  VectorXd point(int idx) const;
  bool feasible(int idx) const { return status[idx] == CellStatus::Feasible; }
  double at(int idx) const { return value[idx]; }

  int count_unresolved() const;
  /// cells with finite value <= level
  int count_at_most(double level) const;
};

uint64_t problem_fingerprint(const SafeMpcProblem& problem);
uint64_t grid_base_fingerprint(const SafeMpcProblem& problem, const VectorXd& lo,
                               const VectorXd& hi, const std::vector<int>& res);

/// Evaluate V* over the grid; cells are independent solves (deterministic,
/// parallel over jobs workers). Solver iteration caps mark cells Unresolved.
ValueGrid eval_grid(const SafeMpcProblem& problem, const VectorXd& lo, const VectorXd& hi,
                    const std::vector<int>& res, int jobs = 0);

/// Sample an arbitrary scalar field on a grid (marked all-feasible).
ValueGrid make_scalar_grid(const std::function<double(const VectorXd&)>& f,
                           const VectorXd& lo, const VectorXd& hi,
                           const std::vector<int>& res);

/// CSV "x1,x2,V,feasible": V is `inf` on infeasible and `nan` on unresolved
/// cells. Fingerprints travel in the run manifest, not the CSV.
void write_grid_csv(const ValueGrid& grid, const std::string& path);
ValueGrid read_grid_csv(const std::string& path);

struct ContourSet {
  double level = 0.0;
  std::vector<std::vector<Eigen::Vector2d>> polylines;
  std::vector<bool> closed;
};

/// Marching squares with linear interpolation over the grid points; the
/// sublevel region lies on the left of each polyline, so closed loops around
/// sublevel islands run counterclockwise. Saddles resolved by the cell-center
/// average. Infeasible and unresolved cells count as a large value (1e6) so
/// the feasible region's boundary closes. For level 0 use the zero-set
/// threshold (1e-5) explicitly at the call site.
ContourSet extract_contour(const ValueGrid& grid, double level);

void write_contours_json(const std::vector<ContourSet>& contours, const std::string& path);

/// the zero-set classification threshold for V* (an order above solver noise)
constexpr double kZeroLevel = 1e-5;

struct CbfPointCheck {
  VectorXd x;
  bool in_domain = false;
  double value = 0.0;
  double xi0 = 0.0;
  double next_value = 0.0;
  double decrease = 0.0;  // V*(f(x,u0*)) - V*(x), <= tol when the CBF condition holds
};

struct CbfReport {
  std::vector<CbfPointCheck> points;
  double max_violation = -std::numeric_limits<double>::infinity();
  int witness = -1;  // index of the worst point
  int out_of_domain = 0;
  double tol = kZeroLevel;
  bool all_satisfied() const { return max_violation <= tol; }
};

/// Evaluate the discrete-time CBF decrease condition at each point:
/// V*(f(x, u0*(x))) - V*(x) <= tol. Violations are data, not errors.
CbfReport check_cbf(const SafeMpcProblem& problem, const std::vector<VectorXd>& points,
                    double tol = kZeroLevel);

}  // namespace pcbf

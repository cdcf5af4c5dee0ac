#include "pcbf/invariance.hpp"

#include "pcbf/parallel.hpp"

#include <Eigen/Cholesky>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace pcbf {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

constexpr double kBoxBound = 1e3;  // support LPs are solved inside this box

}  // namespace

LqrResult dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R) {
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(B.cols());
  require(A.cols() == n && B.rows() == n, "dare: A/B dimension mismatch");
  require(Q.rows() == n && Q.cols() == n, "dare: Q dimension mismatch");
  require(R.rows() == m && R.cols() == m, "dare: R dimension mismatch");

  MatrixXd P = Q;
  constexpr int kMaxIter = 100000;
  for (int it = 1; it <= kMaxIter; ++it) {
    const MatrixXd BtP = B.transpose() * P;
    const MatrixXd gain = (R + BtP * B).ldlt().solve(BtP * A);
    const MatrixXd Pn = Q + A.transpose() * P * A - A.transpose() * P * B * gain;
    const double diff = (Pn - P).cwiseAbs().maxCoeff();
    P = Pn;
    if (diff <= 1e-12) {
      LqrResult res;
      res.P = P;
      res.K = -(R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
      res.iterations = it;
      return res;
    }
    if (!P.allFinite()) break;
  }
  throw ConfigError("dare: fixed-point iteration did not converge (is (A,B) stabilizable?)");
}

double max_alpha(const MatrixXd& P, const MatrixXd& K, const Polytope& X, const Polytope& U) {
  Eigen::LLT<MatrixXd> llt(P);
  require(llt.info() == Eigen::Success, "max_alpha: P must be positive definite");

  double alpha = std::numeric_limits<double>::infinity();
  auto add_row = [&](const VectorXd& a, double b) {
    require(b >= 0, "max_alpha: constraint set has empty interior (negative offset)");
    const double quad = a.dot(llt.solve(a));  // a' P^-1 a
    if (quad <= 1e-16) return;                // zero row constrains nothing
    alpha = std::min(alpha, b * b / quad);
  };
  for (int i = 0; i < X.rows(); ++i) add_row(X.G.row(i).transpose(), X.g(i));
  for (int i = 0; i < U.rows(); ++i)
    add_row((U.G.row(i) * K).transpose(), U.g(i));
  return alpha;
}

SupportResult polytope_support(const VectorXd& c, const Polytope& poly, double cap) {
  const int n = static_cast<int>(c.size());
  ConicProgram p;
  p.nvar = n;
  p.q = -c;
  const bool capped = std::isfinite(cap);
  const int rows = poly.rows() + 2 * n + (capped ? 1 : 0);
  p.A_in.setZero(rows, n);
  p.b_in.resize(rows);
  p.A_in.topRows(poly.rows()) = poly.G;
  p.b_in.head(poly.rows()) = poly.g;
  for (int j = 0; j < n; ++j) {
    p.A_in(poly.rows() + 2 * j, j) = 1.0;
    p.b_in(poly.rows() + 2 * j) = kBoxBound;
    p.A_in(poly.rows() + 2 * j + 1, j) = -1.0;
    p.b_in(poly.rows() + 2 * j + 1) = kBoxBound;
  }
  if (capped) {
    p.A_in.row(rows - 1) = c.transpose();
    p.b_in(rows - 1) = cap;
  }
  p.A_eq.resize(0, n);
  p.b_eq.resize(0);

  SupportResult r;
  ConicSolution sol = solve(p);
  if (sol.status != SolveStatus::Optimal) return r;
  r.bounded_feasible = true;
  r.value = c.dot(sol.z);
  r.argmax = sol.z;
  return r;
}

Polytope reduce(const Polytope& poly) {
  const int rows = poly.rows();
  std::vector<bool> keep(rows, true);
  for (int i = 0; i < rows; ++i) {
    int others = 0;
    for (int j = 0; j < rows; ++j) others += (j != i && keep[j]) ? 1 : 0;
    if (others == 0) continue;
    MatrixXd G(others, poly.dim());
    VectorXd g(others);
    int r = 0;
    for (int j = 0; j < rows; ++j) {
      if (j == i || !keep[j]) continue;
      G.row(r) = poly.G.row(j);
      g(r) = poly.g(j);
      ++r;
    }
    // relax the candidate row by 1 to keep the LP objective bounded
    auto sup = polytope_support(poly.G.row(i).transpose(), Polytope(G, g), poly.g(i) + 1.0);
    if (sup.bounded_feasible && sup.value <= poly.g(i) + 1e-9) keep[i] = false;
  }
  int kept = 0;
  for (bool k : keep) kept += k ? 1 : 0;
  MatrixXd G(kept, poly.dim());
  VectorXd g(kept);
  int r = 0;
  for (int i = 0; i < rows; ++i) {
    if (!keep[i]) continue;
    G.row(r) = poly.G.row(i);
    g(r) = poly.g(i);
    ++r;
  }
  return Polytope(G, g);
}

bool contains(const Polytope& outer, const Polytope& inner, double tol) {
  for (int i = 0; i < outer.rows(); ++i) {
    auto sup = polytope_support(outer.G.row(i).transpose(), inner, outer.g(i) + 1.0);
    if (!sup.bounded_feasible) return false;  // inner empty counts as not contained
    if (sup.value > outer.g(i) + tol) return false;
  }
  return true;
}

InvariantSetResult max_invariant_polytope(const MatrixXd& Acl, const Polytope& C, int max_iter) {
  require(Acl.rows() == Acl.cols() && Acl.rows() == C.dim(),
          "max_invariant_polytope: dimension mismatch");
  InvariantSetResult res;
  res.set = reduce(C);
  for (int it = 1; it <= max_iter; ++it) {
    const Polytope& cur = res.set;
    MatrixXd G(2 * cur.rows(), cur.dim());
    VectorXd g(2 * cur.rows());
    G.topRows(cur.rows()) = cur.G;
    g.head(cur.rows()) = cur.g;
    G.bottomRows(cur.rows()) = cur.G * Acl;  // preimage rows
    g.tail(cur.rows()) = cur.g;
    Polytope next = reduce(Polytope(G, g));
    res.iterations = it;
    if (contains(next, cur, 1e-9) && contains(cur, next, 1e-9)) {
      res.set = next;
      res.converged = true;
      return res;
    }
    res.set = next;
  }
  return res;  // converged stays false; last iterate attached
}

int GridKernel::cells() const {
  int c = 1;
  for (int r : resolution) c *= r;
  return c;
}

int GridKernel::index_of(const VectorXd& x) const {
  int idx = 0;
  for (size_t k = 0; k < resolution.size(); ++k) {
    const double span = hi(k) - lo(k);
    if (x(k) < lo(k) || x(k) > hi(k)) return -1;
    int i = static_cast<int>((x(k) - lo(k)) / span * resolution[k]);
    if (i == resolution[k]) i = resolution[k] - 1;  // right edge
    idx = idx * resolution[k] + i;
  }
  return idx;
}

VectorXd GridKernel::center(int idx) const {
  const int nd = static_cast<int>(resolution.size());
  VectorXd c(nd);
  for (int k = nd - 1; k >= 0; --k) {
    const int i = idx % resolution[k];
    idx /= resolution[k];
    c(k) = lo(k) + (i + 0.5) * (hi(k) - lo(k)) / resolution[k];
  }
  return c;
}

bool GridKernel::is_member(const VectorXd& x) const {
  const int idx = index_of(x);
  return idx >= 0 && member[idx] != 0;
}

int GridKernel::count() const {
  int c = 0;
  for (uint8_t m : member) c += m ? 1 : 0;
  return c;
}

namespace {

std::vector<VectorXd> sample_inputs(const Polytope& U, int per_dim) {
  const int m = U.dim();
  VectorXd lo(m), hi(m);
  for (int j = 0; j < m; ++j) {
    VectorXd e = VectorXd::Zero(m);
    e(j) = 1.0;
    auto up = polytope_support(e, U);
    auto dn = polytope_support(-e, U);
    require(up.bounded_feasible && dn.bounded_feasible, "kernel: U must be bounded");
    hi(j) = up.value;
    lo(j) = -dn.value;
  }
  std::vector<VectorXd> samples;
  std::vector<int> idx(m, 0);
  for (;;) {
    VectorXd u(m);
    for (int j = 0; j < m; ++j)
      u(j) = per_dim > 1 ? lo(j) + idx[j] * (hi(j) - lo(j)) / (per_dim - 1)
                         : 0.5 * (lo(j) + hi(j));
    if (U.contains(u, 1e-9)) samples.push_back(u);
    int k = m - 1;
    while (k >= 0 && ++idx[k] == per_dim) idx[k--] = 0;
    if (k < 0) break;
  }
  require(!samples.empty(), "kernel: no input samples inside U");
  return samples;
}

}  // namespace

GridKernel viability_kernel_grid(const SystemModel& model, const Polytope& X,
                                 const Polytope& U, const std::vector<int>& resolution,
                                 int input_samples_per_dim) {
  const int n = model.n;
  require(static_cast<int>(resolution.size()) == n, "kernel: resolution rank mismatch");

  GridKernel k;
  k.resolution = resolution;
  k.lo.resize(n);
  k.hi.resize(n);
  for (int j = 0; j < n; ++j) {
    VectorXd e = VectorXd::Zero(n);
    e(j) = 1.0;
    auto up = polytope_support(e, X);
    auto dn = polytope_support(-e, X);
    require(up.bounded_feasible && dn.bounded_feasible, "kernel: X must be bounded");
    k.hi(j) = up.value;
    k.lo(j) = -dn.value;
  }
  k.input_samples = sample_inputs(U, input_samples_per_dim);

  const int cells = k.cells();
  k.member.assign(cells, 0);
  for (int c = 0; c < cells; ++c) k.member[c] = X.contains(k.center(c)) ? 1 : 0;

  std::vector<uint8_t> next(cells, 0);
  const int jobs = default_jobs();
  for (;;) {
    ++k.sweeps;
    std::atomic<bool> changed{false};
    parallel_for(cells, jobs, [&](int c) {
      if (!k.member[c]) {
        next[c] = 0;
        return;
      }
      const VectorXd xc = k.center(c);
      uint8_t alive = 0;
      for (const auto& u : k.input_samples) {
        if (k.is_member(step(model, xc, u))) {
          alive = 1;
          break;
        }
      }
      next[c] = alive;
      if (!alive) changed.store(true, std::memory_order_relaxed);
    });
    k.member.swap(next);
    if (!changed.load()) break;
  }
  return k;
}

void validate_preset(const ProblemPreset& preset) {
  preset.validate();
  if (preset.Xf.variant == TerminalSet::Variant::Polytope)
    require(contains(preset.X, preset.Xf.poly, 1e-9),
            "preset: terminal polytope not contained in X");
}

void write_kernel_csv(const GridKernel& k, const std::string& path) {
  require(k.resolution.size() == 2, "kernel CSV export is 2-D");
  std::ofstream out(path);
  require(out.good(), "cannot open " + path);
  out << "x1,x2,member\n";
  char buf[96];
  for (int c = 0; c < k.cells(); ++c) {
    const VectorXd xc = k.center(c);
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d\n", xc(0), xc(1), k.member[c] ? 1 : 0);
    out << buf;
  }
}

GridKernel read_kernel_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path);
  std::string line;
  std::getline(in, line);
  require(line.rfind("x1,x2,member", 0) == 0, path + ": not a kernel CSV");
  std::vector<double> x1, x2;
  std::vector<uint8_t> mem;
  std::set<double> u1, u2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double a, b;
    int m;
    require(std::sscanf(line.c_str(), "%lf,%lf,%d", &a, &b, &m) == 3,
            path + ": bad CSV row");
    x1.push_back(a);
    x2.push_back(b);
    mem.push_back(static_cast<uint8_t>(m));
    u1.insert(a);
    u2.insert(b);
  }
  GridKernel k;
  k.resolution = {static_cast<int>(u1.size()), static_cast<int>(u2.size())};
  require(k.cells() == static_cast<int>(mem.size()), path + ": not a full grid");
  const double d1 = u1.size() > 1 ? (*u1.rbegin() - *u1.begin()) / (u1.size() - 1) : 1.0;
  const double d2 = u2.size() > 1 ? (*u2.rbegin() - *u2.begin()) / (u2.size() - 1) : 1.0;
  k.lo.resize(2);
  k.hi.resize(2);
  k.lo << *u1.begin() - d1 / 2, *u2.begin() - d2 / 2;
  k.hi << *u1.rbegin() + d1 / 2, *u2.rbegin() + d2 / 2;
  k.member.assign(k.cells(), 0);
  for (size_t i = 0; i < mem.size(); ++i) {
    VectorXd x(2);
    x << x1[i], x2[i];
    const int idx = k.index_of(x);
    require(idx >= 0, path + ": row outside inferred grid");
    k.member[idx] = mem[i];
  }
  return k;
}

void write_polytope_json(const Polytope& p, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open " + path);
  out.precision(17);
  out << "{\n  \"G\": [";
  for (int i = 0; i < p.rows(); ++i) {
    out << (i ? ", [" : "[");
    for (int j = 0; j < p.dim(); ++j) out << (j ? ", " : "") << p.G(i, j);
    out << "]";
  }
  out << "],\n  \"g\": [";
  for (int i = 0; i < p.rows(); ++i) out << (i ? ", " : "") << p.g(i);
  out << "]\n}\n";
}

}  // namespace pcbf

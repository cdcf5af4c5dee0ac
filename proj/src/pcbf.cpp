#include "pcbf/pcbf.hpp"

#include "pcbf/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace pcbf {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

constexpr double kInfValue = 1e6;  // stand-in for infeasible cells in contours

// FNV-1a over a canonical byte stream
struct Hasher {
  uint64_t h = 1469598103934665603ull;
  void bytes(const void* p, size_t len) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < len; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  }
  void num(double v) { bytes(&v, sizeof(v)); }
  void num(int v) { bytes(&v, sizeof(v)); }
  void mat(const MatrixXd& M) {
    num(static_cast<int>(M.rows()));
    num(static_cast<int>(M.cols()));
    for (int i = 0; i < M.rows(); ++i)
      for (int j = 0; j < M.cols(); ++j) num(M(i, j));
  }
  void vec(const VectorXd& v) {
    num(static_cast<int>(v.size()));
    for (int i = 0; i < v.size(); ++i) num(v(i));
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
};

void hash_preset(Hasher& fnv, const ProblemPreset& p) {
  if (p.system.is_linear()) {
    fnv.str("linear");
    fnv.mat(p.system.A);
    fnv.mat(p.system.B);
  } else {
    fnv.str("nonlinear:pendulum");
    fnv.num(p.system.dt);
  }
  fnv.mat(p.X.G);
  fnv.vec(p.X.g);
  fnv.mat(p.U.G);
  fnv.vec(p.U.g);
  switch (p.Xf.variant) {
    case TerminalSet::Variant::Ellipsoid:
      fnv.str("ell");
      fnv.mat(p.Xf.P);
      fnv.num(p.Xf.alpha);
      break;
    case TerminalSet::Variant::Polytope:
      fnv.str("poly");
      fnv.mat(p.Xf.poly.G);
      fnv.vec(p.Xf.poly.g);
      break;
    case TerminalSet::Variant::Point:
      fnv.str("pt");
      fnv.vec(p.Xf.xf);
      break;
  }
  fnv.num(p.N);
  if (p.Kf) fnv.mat(*p.Kf);
}

}  // namespace

int ValueGrid::points() const {
  int c = 1;
  for (int r : res) c *= r;
  return c;
}

VectorXd ValueGrid::point(int idx) const {
  const int nd = static_cast<int>(res.size());
  VectorXd p(nd);
  for (int k = nd - 1; k >= 0; --k) {
    const int i = idx % res[k];
    idx /= res[k];
    p(k) = res[k] > 1 ? lo(k) + i * (hi(k) - lo(k)) / (res[k] - 1)
                      : 0.5 * (lo(k) + hi(k));
  }
  return p;
}

int ValueGrid::count_unresolved() const {
  int c = 0;
  for (auto s : status) c += s == CellStatus::Unresolved ? 1 : 0;
  return c;
}

int ValueGrid::count_at_most(double level) const {
  int c = 0;
  for (int i = 0; i < points(); ++i)
    if (feasible(i) && value[i] <= level) ++c;
  return c;
}

uint64_t problem_fingerprint(const SafeMpcProblem& problem) {
  Hasher fnv;
  hash_preset(fnv, problem.preset);
  fnv.str(to_string(problem.variant));
  if (problem.variant == MpcVariant::Tightened) fnv.vec(problem.delta);
  if (problem.variant == MpcVariant::Filter) {
    fnv.vec(problem.u_desired);
    fnv.num(problem.slack_budget);
  }
  fnv.num(problem.tie_break_weight);
  return fnv.h;
}

uint64_t grid_base_fingerprint(const SafeMpcProblem& problem, const VectorXd& lo,
                               const VectorXd& hi, const std::vector<int>& res) {
  Hasher fnv;
  hash_preset(fnv, problem.preset);
  fnv.vec(lo);
  fnv.vec(hi);
  for (int r : res) fnv.num(r);
  return fnv.h;
}

ValueGrid eval_grid(const SafeMpcProblem& problem, const VectorXd& lo, const VectorXd& hi,
                    const std::vector<int>& res, int jobs) {
  require(static_cast<int>(res.size()) == problem.preset.system.n,
          "eval_grid: resolution rank mismatch");
  for (int r : res) require(r >= 1, "eval_grid: resolution must be positive");
  ValueGrid g;
  g.lo = lo;
  g.hi = hi;
  g.res = res;
  g.fingerprint = problem_fingerprint(problem);
  g.base_fingerprint = grid_base_fingerprint(problem, lo, hi, res);
  const int count = g.points();
  g.value.assign(count, std::numeric_limits<double>::quiet_NaN());
  g.status.assign(count, CellStatus::Unresolved);

  const int njobs = jobs > 0 ? jobs : default_jobs();
  parallel_for(count, njobs, [&](int idx) {
    const VectorXd x = g.point(idx);
    SafeMpcSolution sol = solve_variant(problem, x);
    switch (sol.status) {
      case SolveStatus::Optimal:
        g.status[idx] = CellStatus::Feasible;
        g.value[idx] = sol.value;
        break;
      case SolveStatus::Infeasible:
        g.status[idx] = CellStatus::Infeasible;
        g.value[idx] = std::numeric_limits<double>::infinity();
        break;
      case SolveStatus::MaxIter:
        g.status[idx] = CellStatus::Unresolved;
        break;
    }
  });
  return g;
}

ValueGrid make_scalar_grid(const std::function<double(const VectorXd&)>& f,
                           const VectorXd& lo, const VectorXd& hi,
                           const std::vector<int>& res) {
  ValueGrid g;
  g.lo = lo;
  g.hi = hi;
  g.res = res;
  const int count = g.points();
  g.value.resize(count);
  g.status.assign(count, CellStatus::Feasible);
  for (int i = 0; i < count; ++i) g.value[i] = f(g.point(i));
  return g;
}

void write_grid_csv(const ValueGrid& grid, const std::string& path) {
  require(grid.res.size() == 2, "grid CSV export is 2-D");
  std::ofstream out(path);
  require(out.good(), "cannot open " + path);
  out << "x1,x2,V,feasible\n";
  char buf[128];
  for (int idx = 0; idx < grid.points(); ++idx) {
    const VectorXd p = grid.point(idx);
    const char* vtxt = nullptr;
    if (grid.status[idx] == CellStatus::Infeasible) vtxt = "inf";
    if (grid.status[idx] == CellStatus::Unresolved) vtxt = "nan";
    if (vtxt)
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%s,0\n", p(0), p(1), vtxt);
    else
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,1\n", p(0), p(1),
                    grid.value[idx]);
    out << buf;
  }
}

ValueGrid read_grid_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path);
  std::string line;
  std::getline(in, line);
  require(line.rfind("x1,x2,V,feasible", 0) == 0, path + ": not a grid CSV");
  std::vector<double> x1, x2, val;
  std::vector<int> feas;
  std::set<double> u1, u2;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double a, b, v;
    int f;
    require(std::sscanf(line.c_str(), "%lf,%lf,%lf,%d", &a, &b, &v, &f) == 4,
            path + ": bad CSV row");
    x1.push_back(a);
    x2.push_back(b);
    val.push_back(v);
    feas.push_back(f);
    u1.insert(a);
    u2.insert(b);
  }
  ValueGrid g;
  g.res = {static_cast<int>(u1.size()), static_cast<int>(u2.size())};
  require(g.points() == static_cast<int>(val.size()), path + ": not a full grid");
  g.lo.resize(2);
  g.hi.resize(2);
  g.lo << *u1.begin(), *u2.begin();
  g.hi << *u1.rbegin(), *u2.rbegin();
  g.value.assign(g.points(), 0.0);
  g.status.assign(g.points(), CellStatus::Unresolved);
  const double d1 = g.res[0] > 1 ? (g.hi(0) - g.lo(0)) / (g.res[0] - 1) : 1.0;
  const double d2 = g.res[1] > 1 ? (g.hi(1) - g.lo(1)) / (g.res[1] - 1) : 1.0;
  for (size_t r = 0; r < val.size(); ++r) {
    const int i = static_cast<int>(std::lround((x1[r] - g.lo(0)) / d1));
    const int j = static_cast<int>(std::lround((x2[r] - g.lo(1)) / d2));
    const int idx = g.index(i, j);
    g.value[idx] = val[r];
    if (feas[r])
      g.status[idx] = CellStatus::Feasible;
    else if (std::isinf(val[r]))
      g.status[idx] = CellStatus::Infeasible;
    else
      g.status[idx] = CellStatus::Unresolved;
  }
  return g;
}

namespace {

struct Segment {
  int from_edge;
  int to_edge;
};

}  // namespace

ContourSet extract_contour(const ValueGrid& grid, double level) {
  require(grid.res.size() == 2, "extract_contour: grid must be 2-D");
  require(std::isfinite(level), "extract_contour: level must be finite");
  const int r1 = grid.res[0], r2 = grid.res[1];
  ContourSet out;
  out.level = level;
  if (r1 < 2 || r2 < 2) return out;

  auto fval = [&](int i, int j) {
    const int idx = grid.index(i, j);
    return grid.feasible(idx) ? grid.value[idx] : kInfValue;
  };
  auto coord = [&](int i, int j) {
    Eigen::Vector2d p;
    p(0) = grid.lo(0) + i * (grid.hi(0) - grid.lo(0)) / (r1 - 1);
    p(1) = grid.lo(1) + j * (grid.hi(1) - grid.lo(1)) / (r2 - 1);
    return p;
  };

  // edge ids: horizontal (i,j)-(i+1,j), then vertical (i,j)-(i,j+1)
  const int nh = (r1 - 1) * r2;
  auto hedge = [&](int i, int j) { return j * (r1 - 1) + i; };
  auto vedge = [&](int i, int j) { return nh + j * r1 + i; };

  std::map<int, Eigen::Vector2d> edge_point;
  auto crossing = [&](int i0, int j0, int i1, int j1, int edge) {
    if (edge_point.count(edge)) return;
    const double f0 = fval(i0, j0), f1 = fval(i1, j1);
    const double t = (level - f0) / (f1 - f0);
    edge_point[edge] = coord(i0, j0) + t * (coord(i1, j1) - coord(i0, j0));
  };

  std::vector<Segment> segs;
  auto emit = [&](int e_from, int e_to) { segs.push_back({e_from, e_to}); };

  for (int i = 0; i + 1 < r1; ++i) {
    for (int j = 0; j + 1 < r2; ++j) {
      const double f00 = fval(i, j), f10 = fval(i + 1, j);
      const double f11 = fval(i + 1, j + 1), f01 = fval(i, j + 1);
      const int mask = (f00 < level ? 1 : 0) | (f10 < level ? 2 : 0) |
                       (f11 < level ? 4 : 0) | (f01 < level ? 8 : 0);
      if (mask == 0 || mask == 15) continue;

      const int B = hedge(i, j), T = hedge(i, j + 1);
      const int L = vedge(i, j), R = vedge(i + 1, j);
      auto cB = [&] { crossing(i, j, i + 1, j, B); };
      auto cT = [&] { crossing(i, j + 1, i + 1, j + 1, T); };
      auto cL = [&] { crossing(i, j, i, j + 1, L); };
      auto cR = [&] { crossing(i + 1, j, i + 1, j + 1, R); };

      // directed so the sublevel region stays on the left
      switch (mask) {
        case 1: cB(); cL(); emit(B, L); break;
        case 2: cR(); cB(); emit(R, B); break;
        case 4: cT(); cR(); emit(T, R); break;
        case 8: cL(); cT(); emit(L, T); break;
        case 14: cB(); cL(); emit(L, B); break;
        case 13: cR(); cB(); emit(B, R); break;
        case 11: cT(); cR(); emit(R, T); break;
        case 7: cL(); cT(); emit(T, L); break;
        case 3: cR(); cL(); emit(R, L); break;
        case 12: cR(); cL(); emit(L, R); break;
        case 6: cT(); cB(); emit(T, B); break;
        case 9: cT(); cB(); emit(B, T); break;
        case 5: {  // saddle: resolve by the cell-center average
          cB(); cT(); cL(); cR();
          const double fc = 0.25 * (f00 + f10 + f11 + f01);
          if (fc < level) {
            emit(T, L);
            emit(B, R);
          } else {
            emit(B, L);
            emit(T, R);
          }
          break;
        }
        case 10: {
          cB(); cT(); cL(); cR();
          const double fc = 0.25 * (f00 + f10 + f11 + f01);
          if (fc < level) {
            emit(L, B);
            emit(R, T);
          } else {
            emit(R, B);
            emit(L, T);
          }
          break;
        }
      }
    }
  }

  // chain segments into polylines by shared edge ids
  std::map<int, int> seg_at_start;
  for (size_t s = 0; s < segs.size(); ++s)
    seg_at_start[segs[s].from_edge] = static_cast<int>(s);
  std::map<int, int> seg_at_end;
  for (size_t s = 0; s < segs.size(); ++s)
    seg_at_end[segs[s].to_edge] = static_cast<int>(s);

  std::vector<bool> used(segs.size(), false);
  for (size_t s0 = 0; s0 < segs.size(); ++s0) {
    if (used[s0]) continue;
    // walk backward to the chain head (stops on open ends and loops)
    int head = static_cast<int>(s0);
    for (size_t guard = 0; guard <= segs.size(); ++guard) {
      auto it = seg_at_end.find(segs[head].from_edge);
      if (it == seg_at_end.end() || it->second == static_cast<int>(s0)) break;
      head = it->second;
    }
    std::vector<Eigen::Vector2d> line;
    line.push_back(edge_point.at(segs[head].from_edge));
    int cur = head;
    bool closed = false;
    for (;;) {
      used[cur] = true;
      line.push_back(edge_point.at(segs[cur].to_edge));
      if (segs[cur].to_edge == segs[head].from_edge) {
        closed = true;
        break;
      }
      auto it = seg_at_start.find(segs[cur].to_edge);
      if (it == seg_at_start.end() || used[it->second]) break;
      cur = it->second;
    }
    out.polylines.push_back(std::move(line));
    out.closed.push_back(closed);
  }
  return out;
}

void write_contours_json(const std::vector<ContourSet>& contours, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open " + path);
  out.precision(17);
  out << "[\n";
  for (size_t c = 0; c < contours.size(); ++c) {
    const auto& ct = contours[c];
    out << "  {\"level\": " << ct.level << ", \"polylines\": [";
    for (size_t p = 0; p < ct.polylines.size(); ++p) {
      out << (p ? ", [" : "[");
      for (size_t k = 0; k < ct.polylines[p].size(); ++k) {
        const auto& pt = ct.polylines[p][k];
        out << (k ? ", [" : "[") << pt(0) << ", " << pt(1) << "]";
      }
      out << "]";
    }
    out << "], \"closed\": [";
    for (size_t p = 0; p < ct.closed.size(); ++p)
      out << (p ? ", " : "") << (ct.closed[p] ? "true" : "false");
    out << "]}" << (c + 1 < contours.size() ? "," : "") << "\n";
  }
  out << "]\n";
}

CbfReport check_cbf(const SafeMpcProblem& problem, const std::vector<VectorXd>& points,
                    double tol) {
  CbfReport rep;
  rep.tol = tol;
  rep.points.resize(points.size());
  const int jobs = default_jobs();
  parallel_for(static_cast<int>(points.size()), jobs, [&](int i) {
    CbfPointCheck& c = rep.points[i];
    c.x = points[i];
    SafeMpcSolution sol = solve_variant(problem, points[i]);
    if (sol.status != SolveStatus::Optimal) return;  // out of domain
    c.in_domain = true;
    c.value = sol.value;
    c.xi0 = problem.has_slack() ? sol.xi(0) : 0.0;
    const VectorXd next = step(problem.preset.system, points[i], sol.u.col(0));
    SafeMpcSolution nsol = solve_variant(problem, next);
    if (nsol.status != SolveStatus::Optimal) {
      // a recursive-feasibility failure counts as an unbounded violation
      c.next_value = std::numeric_limits<double>::infinity();
      c.decrease = std::numeric_limits<double>::infinity();
      return;
    }
    c.next_value = nsol.value;
    c.decrease = nsol.value - sol.value;
  });
  for (size_t i = 0; i < rep.points.size(); ++i) {
    const auto& c = rep.points[i];
    if (!c.in_domain) {
      ++rep.out_of_domain;
      continue;
    }
    if (c.decrease > rep.max_violation) {
      rep.max_violation = c.decrease;
      rep.witness = static_cast<int>(i);
    }
  }
  return rep;
}

}  // namespace pcbf

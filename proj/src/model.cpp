#include "pcbf/model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pcbf {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

MatrixXd json_matrix(const nlohmann::json& j, int rows, int cols, const std::string& what) {
  require(j.is_array(), what + ": expected a row-major array");
  MatrixXd M(rows, cols);
  if (!j.empty() && j[0].is_array()) {
    require(static_cast<int>(j.size()) == rows, what + ": wrong row count");
    for (int i = 0; i < rows; ++i) {
      require(static_cast<int>(j[i].size()) == cols, what + ": wrong column count");
      for (int k = 0; k < cols; ++k) M(i, k) = j[i][k].get<double>();
    }
  } else {
    require(static_cast<int>(j.size()) == rows * cols, what + ": wrong element count");
    for (int i = 0; i < rows; ++i)
      for (int k = 0; k < cols; ++k) M(i, k) = j[i * cols + k].get<double>();
  }
  return M;
}

VectorXd json_vector(const nlohmann::json& j, const std::string& what) {
  require(j.is_array(), what + ": expected an array");
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

}  // namespace

SystemModel SystemModel::linear(const MatrixXd& A, const MatrixXd& B) {
  require(A.rows() == A.cols(), "SystemModel: A must be square");
  require(B.rows() == A.rows(), "SystemModel: B row count must match A");
  SystemModel s;
  s.kind = Kind::Linear;
  s.n = static_cast<int>(A.rows());
  s.m = static_cast<int>(B.cols());
  s.A = A;
  s.B = B;
  return s;
}

SystemModel SystemModel::pendulum(double dt) {
  require(dt > 0, "SystemModel: dt must be positive");
  SystemModel s;
  s.kind = Kind::Nonlinear;
  s.n = 2;
  s.m = 1;
  s.dt = dt;
  s.fc = [](const VectorXd& x, const VectorXd& u) {
    VectorXd f(2);
    f(0) = x(1);
    f(1) = 10.0 * std::sin(2.0 * x(0)) + 0.5 * u(0);
    return f;
  };
  s.fc_jac_x = [](const VectorXd& x, const VectorXd&) {
    MatrixXd J(2, 2);
    J << 0.0, 1.0, 20.0 * std::cos(2.0 * x(0)), 0.0;
    return J;
  };
  s.fc_jac_u = [](const VectorXd&, const VectorXd&) {
    MatrixXd J(2, 1);
    J << 0.0, 0.5;
    return J;
  };
  return s;
}

VectorXd step(const SystemModel& model, const VectorXd& x, const VectorXd& u) {
  require(x.size() == model.n, "step: state dimension mismatch");
  require(u.size() == model.m, "step: input dimension mismatch");
  if (model.is_linear()) return model.A * x + model.B * u;
  return x + model.dt * model.fc(x, u);
}

AffineModel linearize(const SystemModel& model, const VectorXd& x, const VectorXd& u) {
  require(x.size() == model.n, "linearize: state dimension mismatch");
  require(u.size() == model.m, "linearize: input dimension mismatch");
  AffineModel a;
  if (model.is_linear()) {
    a.Ad = model.A;
    a.Bd = model.B;
    a.cd = VectorXd::Zero(model.n);
    return a;
  }
  a.Ad = MatrixXd::Identity(model.n, model.n) + model.dt * model.fc_jac_x(x, u);
  a.Bd = model.dt * model.fc_jac_u(x, u);
  a.cd = step(model, x, u) - a.Ad * x - a.Bd * u;
  return a;
}

Polytope::Polytope(MatrixXd G_, VectorXd g_) : G(std::move(G_)), g(std::move(g_)) {
  require(G.rows() == g.size(), "Polytope: row count of G must equal length of g");
}

Polytope Polytope::box(int dim, double r) {
  return box(VectorXd::Constant(dim, r));
}

Polytope Polytope::box(const VectorXd& r) {
  const int n = static_cast<int>(r.size());
  MatrixXd G = MatrixXd::Zero(2 * n, n);
  VectorXd g(2 * n);
  for (int i = 0; i < n; ++i) {
    G(2 * i, i) = 1.0;
    G(2 * i + 1, i) = -1.0;
    g(2 * i) = r(i);
    g(2 * i + 1) = r(i);
  }
  return Polytope(G, g);
}

bool Polytope::contains(const VectorXd& x, double tol) const {
  return violation(x) <= tol;
}

double Polytope::violation(const VectorXd& x) const {
  if (rows() == 0) return -std::numeric_limits<double>::infinity();
  return (G * x - g).maxCoeff();
}

TerminalSet TerminalSet::ellipsoid(const MatrixXd& P, double alpha) {
  require(P.rows() == P.cols(), "TerminalSet: P must be square");
  require((P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
          "TerminalSet: P must be symmetric");
  require(alpha >= 0, "TerminalSet: alpha must be nonnegative");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
  require(es.eigenvalues().minCoeff() > 0, "TerminalSet: P must be positive definite");
  TerminalSet t;
  t.variant = Variant::Ellipsoid;
  t.P = P;
  t.alpha = alpha;
  return t;
}

TerminalSet TerminalSet::polytope(Polytope p) {
  TerminalSet t;
  t.variant = Variant::Polytope;
  t.poly = std::move(p);
  return t;
}

TerminalSet TerminalSet::point(const VectorXd& xf) {
  TerminalSet t;
  t.variant = Variant::Point;
  t.xf = xf;
  return t;
}

bool TerminalSet::contains(const VectorXd& x, double tol) const {
  switch (variant) {
    case Variant::Ellipsoid:
      return x.dot(P * x) <= alpha + tol;
    case Variant::Polytope:
      return poly.contains(x, tol);
    case Variant::Point:
      return (x - xf).lpNorm<Eigen::Infinity>() <= tol;
  }
  return false;
}

VectorXd ProblemPreset::kappa_f(const VectorXd& x) const {
  if (Kf) return (*Kf) * x;
  return VectorXd::Zero(system.m);
}

void ProblemPreset::validate() const {
  const int n = system.n;
  const int m = system.m;
  require(N >= 1, "preset: horizon N must be >= 1");
  require(X.dim() == n, "preset: X dimension mismatch");
  require(U.dim() == m, "preset: U dimension mismatch");
  if (Kf) require(Kf->rows() == m && Kf->cols() == n, "preset: Kf must be m x n");

  // Xf inside X. Ellipsoid containment is exact via the support function:
  // max of a'x over {x'Px <= alpha} equals sqrt(alpha * a' P^-1 a).
  switch (Xf.variant) {
    case TerminalSet::Variant::Ellipsoid: {
      require(Xf.P.rows() == n, "preset: Xf ellipsoid dimension mismatch");
      const MatrixXd Pinv = Xf.P.inverse();
      for (int i = 0; i < X.rows(); ++i) {
        const VectorXd a = X.G.row(i).transpose();
        const double support = std::sqrt(Xf.alpha * a.dot(Pinv * a));
        require(support <= X.g(i) + 1e-9, "preset: terminal ellipsoid not contained in X");
      }
      break;
    }
    case TerminalSet::Variant::Point:
      require(Xf.xf.size() == n, "preset: Xf point dimension mismatch");
      require(X.contains(Xf.xf), "preset: terminal point not contained in X");
      break;
    case TerminalSet::Variant::Polytope:
      require(Xf.poly.dim() == n, "preset: Xf polytope dimension mismatch");
      // row-wise LP containment check lives in invariance::validate_preset
      break;
  }
}

ProblemPreset preset(const std::string& name) {
  if (name == "linear-unstable") {
    MatrixXd A(2, 2), B(2, 1), P(2, 2), Kp(1, 2);
    A << 1.5, 1.0, 0.0, 1.0;
    B << 0.5, 0.5;
    P << 3.3729, 0.3776, 0.3776, 1.1956;
    Kp << -1.3735, -1.6166;
    ProblemPreset p;
    p.system = SystemModel::linear(A, B);
    p.X = Polytope::box(2, 1.0);
    p.U = Polytope::box(1, 1.5);
    p.Xf = TerminalSet::ellipsoid(P, 0.6);
    p.N = 10;
    p.Kf = Kp;
    p.name = "linear-unstable";
    p.validate();
    return p;
  }
  if (name == "nonlinear-pendulum") {
    ProblemPreset p;
    p.system = SystemModel::pendulum(0.5);
    VectorXd rx(2);
    rx << 0.3, 0.6;
    p.X = Polytope::box(rx);
    p.U = Polytope::box(1, 3.0);
    p.Xf = TerminalSet::point(VectorXd::Zero(2));
    p.N = 10;
    p.name = "nonlinear-pendulum";
    p.validate();
    return p;
  }
  std::ostringstream os;
  os << "unknown preset '" << name << "'; valid names:";
  for (const auto& s : preset_names()) os << " " << s;
  throw ConfigError(os.str());
}

std::vector<std::string> preset_names() {
  return {"linear-unstable", "nonlinear-pendulum"};
}

ProblemPreset load_problem_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open problem spec: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }

  ProblemPreset p;
  p.name = path;

  require(j.contains("system"), path + ": missing 'system'");
  const auto& sys = j["system"];
  if (sys.contains("linear")) {
    const auto& lin = sys["linear"];
    require(lin.contains("A") && lin.contains("B"), path + ": linear system needs A and B");
    // infer n from A (must be square), m from B
    const auto& Aj = lin["A"];
    int n = Aj.is_array() && !Aj.empty() && Aj[0].is_array()
                ? static_cast<int>(Aj.size())
                : static_cast<int>(std::sqrt(static_cast<double>(Aj.size())));
    MatrixXd A = json_matrix(Aj, n, n, "A");
    const auto& Bj = lin["B"];
    int m = Bj.is_array() && !Bj.empty() && Bj[0].is_array()
                ? static_cast<int>(Bj[0].size())
                : static_cast<int>(Bj.size()) / n;
    MatrixXd B = json_matrix(Bj, n, m, "B");
    p.system = SystemModel::linear(A, B);
  } else if (sys.contains("nonlinear")) {
    const auto& nl = sys["nonlinear"];
    require(nl.contains("name"), path + ": nonlinear system needs a name");
    const std::string name = nl["name"].get<std::string>();
    require(name == "pendulum", path + ": unknown nonlinear system '" + name + "'");
    const double dt = nl.value("dt", 0.5);
    p.system = SystemModel::pendulum(dt);
  } else {
    throw ConfigError(path + ": system must be linear or nonlinear");
  }

  auto parse_polytope = [&](const nlohmann::json& pj, int dim, const std::string& what) {
    if (pj.contains("box")) {
      if (pj["box"].is_array()) return Polytope::box(json_vector(pj["box"], what + ".box"));
      return Polytope::box(dim, pj["box"].get<double>());
    }
    require(pj.contains("G") && pj.contains("g"), what + ": need G,g or box");
    VectorXd g = json_vector(pj["g"], what + ".g");
    MatrixXd G = json_matrix(pj["G"], static_cast<int>(g.size()), dim, what + ".G");
    return Polytope(G, g);
  };

  require(j.contains("X") && j.contains("U"), path + ": missing X or U");
  p.X = parse_polytope(j["X"], p.system.n, "X");
  p.U = parse_polytope(j["U"], p.system.m, "U");

  require(j.contains("Xf"), path + ": missing Xf");
  const auto& xf = j["Xf"];
  if (xf.contains("ellipsoid")) {
    const auto& e = xf["ellipsoid"];
    MatrixXd P = json_matrix(e["P"], p.system.n, p.system.n, "Xf.P");
    p.Xf = TerminalSet::ellipsoid(P, e["alpha"].get<double>());
  } else if (xf.contains("polytope")) {
    p.Xf = TerminalSet::polytope(parse_polytope(xf["polytope"], p.system.n, "Xf"));
  } else if (xf.contains("point")) {
    p.Xf = TerminalSet::point(json_vector(xf["point"], "Xf.point"));
  } else {
    throw ConfigError(path + ": Xf must be ellipsoid, polytope, or point");
  }

  require(j.contains("N"), path + ": missing N");
  p.N = j["N"].get<int>();
  if (j.contains("Kf")) p.Kf = json_matrix(j["Kf"], p.system.m, p.system.n, "Kf");

  p.validate();
  return p;
}

}  // namespace pcbf

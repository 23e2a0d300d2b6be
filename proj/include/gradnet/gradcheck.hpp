#pragma once

// Sampled audits of the gradient-network properties: Jacobian symmetry,
// PSD Jacobians, monotone pairings, strong monotonicity, and consistency of
// analytic Jacobians and potentials with finite differences.

#include "gradnet/builders.hpp"
#include "gradnet/networks.hpp"
#include "gradnet/numerics.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gradnet {

/// Batched vector field: maps a d x B matrix of inputs to d x B outputs.
using BatchField = std::function<Matrix(const Matrix&)>;

inline BatchField batched(const VectorField& f) {
  return [f](const Matrix& x) {
    Matrix out;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Vector y = f(x.col(j));
      if (j == 0) out.resize(y.size(), x.cols());
      out.col(j) = y;
    }
    return out;
  };
}

inline BatchField batched(const Network& net) {
  return [&net](const Matrix& x) { return net.forward(x); };
}

/// Central-difference Jacobian evaluated with a single batched call.
inline Matrix fd_jacobian_batched(const BatchField& f, const Vector& x, double h = 0.0) {
  const Eigen::Index d = x.size();
  Matrix pts(d, 2 * d);
  Vector steps(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double step = h > 0.0 ? h : default_fd_step(x[j]);
    pts.col(2 * j) = x;
    pts.col(2 * j + 1) = x;
    pts(j, 2 * j) += step;
    pts(j, 2 * j + 1) -= step;
    steps[j] = pts(j, 2 * j) - pts(j, 2 * j + 1);
  }
  Matrix y = f(pts);
  if (!y.allFinite()) throw NumericError("fd_jacobian: non-finite function value");
  Matrix jac(y.rows(), d);
  for (Eigen::Index j = 0; j < d; ++j) jac.col(j) = (y.col(2 * j) - y.col(2 * j + 1)) / steps[j];
  return jac;
}

/// Axis-aligned sampling box.
struct Box {
  Vector lo;
  Vector hi;

  static Box unit(Eigen::Index d) { return {Vector::Zero(d), Vector::Ones(d)}; }
  Eigen::Index dim() const { return lo.size(); }

  Matrix sample(Eigen::Index n, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix out(dim(), n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < dim(); ++i) out(i, j) = lo[i] + (hi[i] - lo[i]) * u(rng);
    return out;
  }
};

struct AuditCheck {
  std::string name;
  std::size_t points_sampled = 0;
  double worst_violation = 0.0;
  double tolerance = 0.0;
  bool pass = true;
  std::optional<Vector> location;  // where the worst violation occurred
  std::string note;

  void finalize() { pass = std::isfinite(worst_violation) && worst_violation <= tolerance; }
};

struct AuditReport {
  std::vector<AuditCheck> checks;
  std::uint64_t seed = 0;

  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& c : checks) {
      json j{{"name", c.name},
             {"points_sampled", c.points_sampled},
             {"worst_violation", c.worst_violation},
             {"tolerance", c.tolerance},
             {"pass", c.pass}};
      if (c.location) j["location"] = std::vector<double>(c.location->data(), c.location->data() + c.location->size());
      if (!c.note.empty()) j["note"] = c.note;
      arr.push_back(std::move(j));
    }
    return {{"seed", seed}, {"pass", all_pass()}, {"checks", arr}};
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(6);
    os << "seed: " << seed << '\n';
    for (const auto& c : checks) {
      os << (c.pass ? "PASS " : "FAIL ") << c.name << ": worst=" << c.worst_violation << " tol=" << c.tolerance
         << " n=" << c.points_sampled;
      if (!c.note.empty()) os << " (" << c.note << ")";
      os << '\n';
    }
    os << "overall: " << (all_pass() ? "PASS" : "FAIL") << '\n';
    return os.str();
  }
};

namespace detail {

inline const double kHuge = std::numeric_limits<double>::max();

/// Run `measure` at each column of `pts`, tracking the worst (largest) value.
/// Numeric failures are recorded as a failing violation at that location.
template <typename Measure>
AuditCheck worst_over(std::string name, const Matrix& pts, double tol, Measure measure) {
  AuditCheck c;
  c.name = std::move(name);
  c.tolerance = tol;
  c.worst_violation = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    double v;
    try {
      v = measure(Vector(pts.col(j)));
      if (!std::isfinite(v)) throw NumericError("non-finite audit value");
    } catch (const NumericError& e) {
      c.worst_violation = kHuge;
      c.location = pts.col(j);
      c.note = e.what();
      c.points_sampled = static_cast<std::size_t>(j + 1);
      c.pass = false;
      return c;
    }
    if (v > c.worst_violation) {
      c.worst_violation = v;
      c.location = pts.col(j);
    }
    ++c.points_sampled;
  }
  if (pts.cols() == 0) c.worst_violation = 0.0;
  c.finalize();
  return c;
}

}  // namespace detail

/// Worst ||J - J^T||_F / (1 + ||J||_F) of the FD Jacobian.
inline AuditCheck audit_symmetry(const BatchField& f, const Box& box, std::size_t n_points, double tol,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix pts = box.sample(static_cast<Eigen::Index>(n_points), rng);
  return detail::worst_over("symmetry", pts, tol, [&](const Vector& x) {
    Matrix j = fd_jacobian_batched(f, x);
    return frobenius_asymmetry(j) / (1.0 + j.norm());
  });
}

/// Worst negated minimum eigenvalue of the symmetrized FD Jacobian.
inline AuditCheck audit_psd(const BatchField& f, const Box& box, std::size_t n_points, double tol,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix pts = box.sample(static_cast<Eigen::Index>(n_points), rng);
  return detail::worst_over("psd", pts, tol,
                            [&](const Vector& x) { return -min_symmetric_eigenvalue(fd_jacobian_batched(f, x)); });
}

namespace detail {

inline AuditCheck pairing_audit(std::string name, const BatchField& f, const Box& box, std::size_t n_pairs, double mu,
                                double tol, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto n = static_cast<Eigen::Index>(n_pairs);
  Matrix x = box.sample(n, rng);
  Matrix y = box.sample(n, rng);
  AuditCheck c;
  c.name = std::move(name);
  c.tolerance = tol;
  c.points_sampled = n_pairs;
  if (n == 0) return c;
  Matrix fx = f(x);
  Matrix fy = f(y);
  if (!fx.allFinite() || !fy.allFinite()) {
    c.worst_violation = kHuge;
    c.note = "non-finite evaluation";
    c.pass = false;
    return c;
  }
  Matrix dx = x - y;
  RowVector pairing = (fx - fy).cwiseProduct(dx).colwise().sum();
  RowVector deficit = mu * dx.colwise().squaredNorm() - pairing;
  Eigen::Index arg = 0;
  c.worst_violation = deficit.maxCoeff(&arg);
  Vector loc(2 * box.dim());
  loc << x.col(arg), y.col(arg);
  c.location = loc;
  c.finalize();
  return c;
}

}  // namespace detail

/// Worst -(f(x) - f(y))^T (x - y) over random pairs.
inline AuditCheck audit_monotone_pairs(const BatchField& f, const Box& box, std::size_t n_pairs, double tol,
                                       std::uint64_t seed) {
  return detail::pairing_audit("monotone_pairs", f, box, n_pairs, 0.0, tol, seed);
}

/// Worst mu ||x - y||^2 - (f(x) - f(y))^T (x - y) over random pairs.
inline AuditCheck audit_strong_monotone(const BatchField& f, double mu, const Box& box, std::size_t n_pairs, double tol,
                                        std::uint64_t seed) {
  if (!(mu > 0.0)) throw std::invalid_argument("audit_strong_monotone: mu must be positive");
  return detail::pairing_audit("strong_monotone", f, box, n_pairs, mu, tol, seed);
}

/// Worst relative Frobenius gap between the analytic and FD Jacobians.
inline AuditCheck audit_analytic_jacobian(const Network& net, const Box& box, std::size_t n_points, double tol,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix pts = box.sample(static_cast<Eigen::Index>(n_points), rng);
  BatchField f = batched(net);
  return detail::worst_over("analytic_jacobian", pts, tol, [&](const Vector& x) {
    Matrix fd = fd_jacobian_batched(f, x);
    return (net.jacobian(x) - fd).norm() / (1.0 + fd.norm());
  });
}

/// Worst relative gap between the FD gradient of the potential and the forward map.
inline AuditCheck audit_potential(const Network& net, const Box& box, std::size_t n_points, double tol,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix pts = box.sample(static_cast<Eigen::Index>(n_points), rng);
  BatchField pot = [&net](const Matrix& x) { return Matrix(net.potential(x)); };
  return detail::worst_over("potential_gradient", pts, tol, [&](const Vector& x) {
    Vector g = fd_jacobian_batched(pot, x).row(0).transpose();
    Vector y = net(x);
    return (g - y).norm() / (1.0 + y.norm());
  });
}

/// Every nonneg-tagged parameter is >= 0; the violation is the most negative entry.
inline AuditCheck audit_constraints(Network& net) {
  AuditCheck c;
  c.name = "parameter_constraints";
  c.tolerance = 0.0;
  ParamView view = net.params();
  c.points_sampled = view.size();
  double worst = 0.0;
  for (const auto& s : view.segments()) {
    if (s.tag != Constraint::nonneg) continue;
    for (double v : s.values)
      if (-v > worst) {
        worst = -v;
        c.note = "segment " + s.name;
      }
  }
  c.worst_violation = worst;
  c.finalize();
  return c;
}

struct LipschitzEstimate {
  double max_spectral_norm = 0.0;
  Vector argmax;
  std::size_t points_sampled = 0;
};

/// Sampled lower estimate of sup ||J_f||_2 over the box, from analytic Jacobians.
inline LipschitzEstimate estimate_lipschitz(const Network& net, const Box& box, std::size_t n_points,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix pts = box.sample(static_cast<Eigen::Index>(n_points), rng);
  LipschitzEstimate est;
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const double s = spectral_norm(net.jacobian(pts.col(j)));
    if (j == 0 || s > est.max_spectral_norm) {
      est.max_spectral_norm = s;
      est.argmax = pts.col(j);
    }
    ++est.points_sampled;
  }
  return est;
}

struct AuditOptions {
  std::size_t jacobian_points = 100;
  std::size_t pairs = 10000;
  double symmetry_tol = 1e-5;
  double psd_tol = 1e-6;
  double pairs_tol = 1e-8;
  double jacobian_tol = 1e-5;
  double potential_tol = 1e-6;
  std::uint64_t seed = 0;
  std::optional<Box> box;
};

/// Audit suite matched to the network's constraint mode.
inline AuditReport audit_network(Network& net, const AuditOptions& opt = {}) {
  AuditReport rep;
  rep.seed = opt.seed;
  const Box box = opt.box ? *opt.box : Box::unit(net.dim());
  BatchField f = batched(net);
  rep.checks.push_back(audit_symmetry(f, box, opt.jacobian_points, opt.symmetry_tol, opt.seed));
  rep.checks.push_back(audit_analytic_jacobian(net, box, opt.jacobian_points, opt.jacobian_tol, opt.seed + 1));
  if (net.has_potential())
    rep.checks.push_back(audit_potential(net, box, opt.jacobian_points, opt.potential_tol, opt.seed + 2));
  if (net.mode() == ConstraintMode::monotone) {
    rep.checks.push_back(audit_constraints(net));
    rep.checks.push_back(audit_psd(f, box, opt.jacobian_points, opt.psd_tol, opt.seed + 3));
    rep.checks.push_back(audit_monotone_pairs(f, box, opt.pairs, opt.pairs_tol, opt.seed + 4));
    if (net.kind() == NetworkKind::strongly_convex_wrap) {
      const double mu = static_cast<const StronglyConvexWrap&>(net).mu();
      rep.checks.push_back(audit_strong_monotone(f, mu, box, opt.pairs, opt.pairs_tol, opt.seed + 5));
    }
  }
  return rep;
}

}  // namespace gradnet

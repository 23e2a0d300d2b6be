#pragma once

// Constructive approximants. A convex F on [0,1]^d is approximated by the
// log-sum-exp of its supporting hyperplanes at an interior dyadic grid,
// which is itself a softmax single-layer monotone gradient network. A
// nondecreasing scalar f on [0,1] is approximated by a sigmoid staircase.

#include "gradnet/activations.hpp"
#include "gradnet/networks.hpp"
#include "gradnet/numerics.hpp"
#include "gradnet/tasks.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

namespace gradnet {

/// Raised when a grid would contain more hyperplanes than the configured cap.
class GridCapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LseApproxConfig {
  int m = 5;              // grid step 2^-m
  double t = 500.0;       // softmax temperature
  Eigen::Index d = 1;     // input dimension
  std::uint64_t cap = 1'000'000;

  /// Number of interior grid points, (2^m - 1)^d, or nullopt on overflow.
  std::optional<std::uint64_t> hyperplane_count() const {
    if (m < 1 || m > 62 || d < 1) return std::nullopt;
    const std::uint64_t per_axis = (std::uint64_t{1} << m) - 1;
    std::uint64_t n = 1;
    for (Eigen::Index k = 0; k < d; ++k) {
      if (n > std::numeric_limits<std::uint64_t>::max() / per_axis) return std::nullopt;
      n *= per_axis;
    }
    return n;
  }

  void validate() const {
    if (m < 1) throw std::invalid_argument("grid level m must be >= 1");
    if (d < 1) throw std::invalid_argument("dimension must be >= 1");
    if (!(t > 0.0)) throw std::invalid_argument("temperature t must be positive");
    const auto n = hyperplane_count();
    if (!n || *n > cap)
      throw GridCapError("grid with m=" + std::to_string(m) + ", d=" + std::to_string(d) +
                         " exceeds the hyperplane cap of " + std::to_string(cap));
  }
};

using SubgradientFn = std::function<Vector(const Vector&)>;

namespace detail {

/// Points of the grid {k * step : k = first..last}^d, enumerated with the
/// first coordinate varying fastest.
inline Matrix tensor_grid(Eigen::Index d, long first, long last, double step) {
  const long per_axis = last - first + 1;
  Eigen::Index n = 1;
  for (Eigen::Index k = 0; k < d; ++k) n *= per_axis;
  Matrix pts(d, n);
  std::vector<long> idx(static_cast<std::size_t>(d), first);
  for (Eigen::Index col = 0; col < n; ++col) {
    for (Eigen::Index k = 0; k < d; ++k) pts(k, col) = static_cast<double>(idx[static_cast<std::size_t>(k)]) * step;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (++idx[k] <= last) break;
      idx[k] = first;
    }
  }
  return pts;
}

}  // namespace detail

/// Softmax single-layer network whose potential is LSE_t(W x + a), with row
/// i of W the (sub)gradient of F at grid point y_i and a_i = F(y_i) - w_i^T y_i.
/// Gradients come from central differences unless `subgradient` is given.
inline std::unique_ptr<SingleLayer> build_lse_approximant(const ScalarField& F, const LseApproxConfig& cfg,
                                                          const SubgradientFn& subgradient = nullptr) {
  cfg.validate();
  const long last = (1L << cfg.m) - 1;
  Matrix grid = detail::tensor_grid(cfg.d, 1, last, std::ldexp(1.0, -cfg.m));
  const Eigen::Index n = grid.cols();
  Matrix w(n, cfg.d);
  Vector a(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector y = grid.col(i);
    const double fy = F(y);
    if (!std::isfinite(fy)) throw NumericError("build_lse_approximant: F is not finite at a grid point");
    Vector g = subgradient ? subgradient(y) : fd_gradient(F, y);
    require_dims(g.size() == cfg.d, "build_lse_approximant: subgradient has the wrong dimension");
    if (!g.allFinite()) throw NumericError("build_lse_approximant: non-finite subgradient");
    w.row(i) = g.transpose();
    a[i] = fy - g.dot(y);
  }
  return std::make_unique<SingleLayer>(std::move(w), std::move(a), Vector::Zero(cfg.d), make_softmax(cfg.t),
                                       ConstraintMode::monotone);
}

struct CertificationReport {
  double sup_error = 0.0;
  double bound = 0.0;
  double eps = 0.0;
  std::uint64_t n = 0;
  double t = 0.0;
  int m = 0;
  Eigen::Index d = 0;
  std::size_t points_evaluated = 0;
  bool pass = false;

  json to_json() const {
    return {{"sup_error", sup_error}, {"bound", bound}, {"eps", eps}, {"n", n},     {"t", t},
            {"m", m},                 {"d", d},         {"points", points_evaluated}, {"pass", pass}};
  }
};

/// Bound (d + 1) eps + log(n) / t on sup |F - G| over [0,1]^d.
inline double lse_error_bound(const LseApproxConfig& cfg, double eps) {
  const auto n = cfg.hyperplane_count();
  if (!n) throw GridCapError("hyperplane count overflows");
  return static_cast<double>(cfg.d + 1) * eps + std::log(static_cast<double>(*n)) / cfg.t;
}

/// Modulus-of-continuity term for an L-Lipschitz F: L sqrt(d) 2^-m.
inline double lipschitz_eps(double lipschitz, const LseApproxConfig& cfg) {
  return lipschitz * std::sqrt(static_cast<double>(cfg.d)) * std::ldexp(1.0, -cfg.m);
}

/// Sup of |F - potential(net)| over the grid of step 2^-(m+2) on [0,1]^d,
/// boundary included.
inline CertificationReport certify_bound(const ScalarField& F, const Network& net, const LseApproxConfig& cfg,
                                         double eps) {
  CertificationReport rep;
  rep.eps = eps;
  rep.t = cfg.t;
  rep.m = cfg.m;
  rep.d = cfg.d;
  rep.n = cfg.hyperplane_count().value_or(0);
  rep.bound = lse_error_bound(cfg, eps);
  const long last = 1L << (cfg.m + 2);
  Matrix pts = detail::tensor_grid(cfg.d, 0, last, std::ldexp(1.0, -(cfg.m + 2)));
  RowVector g = net.potential(pts);
  double sup = 0.0;
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const double err = std::abs(F(pts.col(j)) - g[j]);
    if (!std::isfinite(err)) {
      sup = std::numeric_limits<double>::infinity();
      break;
    }
    sup = std::max(sup, err);
  }
  rep.sup_error = sup;
  rep.points_evaluated = static_cast<std::size_t>(pts.cols());
  rep.pass = std::isfinite(sup) && sup <= rep.bound;
  return rep;
}

/// Sigmoid staircase g(x) = f(0) + sum_k D_k sigmoid(2^(n+1) t (x - (2k-1)/2^(n+1)))
/// with D_k = f(k/2^n) - f((k-1)/2^n), k = 1..2^n. Requires every D_k >= 0.
inline std::unique_ptr<NeuralScalar> build_staircase_monotone(const std::function<double(double)>& f, int n_level,
                                                              double t) {
  if (n_level < 0 || n_level > 24) throw std::invalid_argument("staircase level must be in [0, 24]");
  if (!(t > 0.0)) throw std::invalid_argument("staircase sharpness t must be positive");
  const long steps = 1L << n_level;
  const double scale = std::ldexp(t, n_level + 1);
  NeuralScalarParams p;
  p.u.resize(steps);
  p.v = Vector::Constant(steps, scale);
  p.beta.resize(steps);
  p.offset = f(0.0);
  p.base = ActivationKind::sigmoid;
  p.monotone = true;
  double prev = p.offset;
  for (long k = 1; k <= steps; ++k) {
    const double cur = f(static_cast<double>(k) / static_cast<double>(steps));
    const double delta = cur - prev;
    if (!std::isfinite(delta)) throw NumericError("build_staircase_monotone: f is not finite on the grid");
    if (delta < 0.0)
      throw std::invalid_argument("build_staircase_monotone: f decreases on step " + std::to_string(k));
    p.u[k - 1] = delta;
    p.beta[k - 1] = -t * static_cast<double>(2 * k - 1);
    prev = cur;
  }
  return std::make_unique<NeuralScalar>(std::move(p));
}

/// A convex test function on [0,1]^d with its gradient and a Lipschitz
/// constant valid on the unit cube.
struct ConvexTestFunction {
  std::string name;
  Eigen::Index d = 1;
  ScalarField f;
  SubgradientFn grad;
  double lipschitz = 0.0;
};

/// F(x) = c^T x + c0 with c, c0 ~ U(-1, 1).
inline ConvexTestFunction random_affine(Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector c(d);
  for (Eigen::Index i = 0; i < d; ++i) c[i] = u(rng);
  const double c0 = u(rng);
  return {"affine", d, [c, c0](const Vector& x) { return c.dot(x) + c0; }, [c](const Vector&) { return c; },
          c.norm()};
}

/// F(x) = x^T A x / 2 + b^T x with A = B B^T / d + 0.1 I, entries of B and b ~ U(-1, 1).
inline ConvexTestFunction random_convex_quadratic(Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix B(d, d);
  Vector b(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) B(i, j) = u(rng);
    b[i] = u(rng);
  }
  Matrix A = B * B.transpose() / static_cast<double>(d) + 0.1 * Matrix::Identity(d, d);
  const double lip = spectral_norm(A) * std::sqrt(static_cast<double>(d)) + b.norm();
  return {"quadratic", d, [A, b](const Vector& x) { return 0.5 * x.dot(A * x) + b.dot(x); },
          [A, b](const Vector& x) { return Vector(A * x + b); }, lip};
}

/// x1^4 + x1^2/2 + x1 x2/2 + 3 x2^2/2 - x2^3/3; on the unit square |dF/dx1| <= 5.5, |dF/dx2| <= 2.5.
inline ConvexTestFunction convex2d_test_function() {
  return {"convex2d", 2, potential_convex2d, grad_convex2d, std::hypot(5.5, 2.5)};
}

/// Build and certify the LSE approximant of a test function in one call.
inline CertificationReport certify_test_function(const ConvexTestFunction& fn, int m, double t,
                                                 std::uint64_t cap = 1'000'000) {
  LseApproxConfig cfg{m, t, fn.d, cap};
  auto net = build_lse_approximant(fn.f, cfg, fn.grad);
  return certify_bound(fn.f, *net, cfg, lipschitz_eps(fn.lipschitz, cfg));
}

}  // namespace gradnet

#pragma once

// Benchmark gradient fields with analytic oracles on [0,1]^d.

#include "gradnet/numerics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace gradnet {

enum class TaskKind { convex2d, nonconvex2d, piecewise_quadratic, gmm_score };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::convex2d: return "convex2d";
    case TaskKind::nonconvex2d: return "nonconvex2d";
    case TaskKind::piecewise_quadratic: return "piecewise_quadratic";
    case TaskKind::gmm_score: return "gmm_score";
  }
  return "unknown";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "convex2d") return TaskKind::convex2d;
  if (s == "nonconvex2d") return TaskKind::nonconvex2d;
  if (s == "piecewise_quadratic") return TaskKind::piecewise_quadratic;
  if (s == "gmm_score") return TaskKind::gmm_score;
  throw std::invalid_argument("unknown task kind: " + s);
}

/// x1^4 + x1^2/2 + x1 x2/2 + 3 x2^2/2 - x2^3/3
inline double potential_convex2d(const Vector& x) {
  const double a = x[0], b = x[1];
  return a * a * a * a + a * a / 2.0 + a * b / 2.0 + 1.5 * b * b - b * b * b / 3.0;
}

inline Vector grad_convex2d(const Vector& x) {
  require_dims(x.size() == 2, "grad_convex2d expects a 2-vector");
  const double a = x[0], b = x[1];
  return Vector{{4.0 * a * a * a + a + b / 2.0, a / 2.0 + 3.0 * b - b * b}};
}

/// sin(2 pi x1) cos(pi x2) / 4 + x1 x2 / 2 - x2^2 / 2
inline double potential_nonconvex2d(const Vector& x) {
  using std::numbers::pi;
  return 0.25 * std::sin(2.0 * pi * x[0]) * std::cos(pi * x[1]) + x[0] * x[1] / 2.0 - x[1] * x[1] / 2.0;
}

inline Vector grad_nonconvex2d(const Vector& x) {
  require_dims(x.size() == 2, "grad_nonconvex2d expects a 2-vector");
  using std::numbers::pi;
  const double a = x[0], b = x[1];
  return Vector{{(pi / 2.0) * std::cos(2.0 * pi * a) * std::cos(pi * b) + b / 2.0,
                 -(pi / 4.0) * std::sin(2.0 * pi * a) * std::sin(pi * b) + a / 2.0 - b}};
}

struct SpqMatrices {
  Matrix S;
  Matrix P;
  Matrix Q;
};

/// S, P, Q with entries (f(alpha_ij)) / (1 + |i - j| ln d), alpha_ij = (i + j - 2) / (2d - 2).
inline SpqMatrices build_spq_matrices(Eigen::Index d) {
  if (d < 2) throw std::invalid_argument("build_spq_matrices requires d >= 2");
  SpqMatrices m{Matrix(d, d), Matrix(d, d), Matrix(d, d)};
  const double ln_d = std::log(static_cast<double>(d));
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      // zero-based i, j: alpha = (i + j) / (2d - 2)
      const double alpha = static_cast<double>(i + j) / static_cast<double>(2 * d - 2);
      const double denom = 1.0 + static_cast<double>(std::abs(i - j)) * ln_d;
      m.S(i, j) = (2.0 + std::sin(4.0 * std::numbers::pi * alpha)) / denom;
      m.P(i, j) = (1.0 + 2.0 * alpha) / denom;
      m.Q(i, j) = (3.0 - 2.0 * alpha) / denom;
    }
  }
  return m;
}

/// A benchmark target: scalar potential plus its analytic gradient oracle.
class Task {
 public:
  static constexpr double kTieTolerance = 1e-12;

  static Task convex2d() { return Task(TaskKind::convex2d, 2, 0); }
  static Task nonconvex2d() { return Task(TaskKind::nonconvex2d, 2, 0); }

  static Task piecewise_quadratic(Eigen::Index d) {
    Task t(TaskKind::piecewise_quadratic, d, 0);
    t.spq_ = build_spq_matrices(d);
    return t;
  }

  /// Equal-weight mixture with shared covariance sigma2 I (default 2 sqrt(d))
  /// and means drawn from U[0.3, 0.7]^d.
  static Task gmm_score(Eigen::Index d, int components = 5, std::uint64_t seed = 0, double sigma2 = 0.0) {
    if (d < 1) throw std::invalid_argument("gmm_score requires d >= 1");
    if (components < 1) throw std::invalid_argument("gmm_score requires at least one component");
    Task t(TaskKind::gmm_score, d, seed);
    t.sigma2_ = sigma2 > 0.0 ? sigma2 : 2.0 * std::sqrt(static_cast<double>(d));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.3, 0.7);
    t.means_.resize(d, components);
    for (int c = 0; c < components; ++c)
      for (Eigen::Index i = 0; i < d; ++i) t.means_(i, c) = u(rng);
    return t;
  }

  /// Mixture with explicitly given means (columns) and shared variance.
  static Task gmm_with_means(Matrix means, double sigma2) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("gmm variance must be positive");
    Task t(TaskKind::gmm_score, means.rows(), 0);
    t.means_ = std::move(means);
    t.sigma2_ = sigma2;
    return t;
  }

  static Task from_json(const json& j) {
    const TaskKind k = task_kind_from_string(j.at("kind").get<std::string>());
    switch (k) {
      case TaskKind::convex2d: return convex2d();
      case TaskKind::nonconvex2d: return nonconvex2d();
      case TaskKind::piecewise_quadratic: return piecewise_quadratic(j.at("d").get<Eigen::Index>());
      case TaskKind::gmm_score:
        return gmm_score(j.at("d").get<Eigen::Index>(), j.value("components", 5), j.value("seed", std::uint64_t{0}),
                         j.value("sigma2", 0.0));
    }
    throw std::invalid_argument("unknown task kind");
  }

  json to_json() const {
    json j{{"kind", to_string(kind_)}, {"d", d_}};
    if (kind_ == TaskKind::gmm_score) {
      j["components"] = means_.cols();
      j["seed"] = seed_;
      j["sigma2"] = sigma2_;
    }
    return j;
  }

  TaskKind kind() const { return kind_; }
  Eigen::Index dim() const { return d_; }
  std::uint64_t seed() const { return seed_; }
  const SpqMatrices& spq() const { return spq_; }
  const Matrix& means() const { return means_; }
  double variance() const { return sigma2_; }
  bool convex() const { return kind_ == TaskKind::convex2d || kind_ == TaskKind::piecewise_quadratic; }

  double potential(const Vector& x) const {
    require_dims(x.size() == d_, "task potential: wrong input dimension");
    switch (kind_) {
      case TaskKind::convex2d: return potential_convex2d(x);
      case TaskKind::nonconvex2d: return potential_nonconvex2d(x);
      case TaskKind::piecewise_quadratic: {
        const Vector z = x.array() - 0.5;
        return std::max({z.dot(spq_.S * z), z.dot(spq_.P * z), z.dot(spq_.Q * z)});
      }
      case TaskKind::gmm_score: return gmm_log_density(x);
    }
    return 0.0;
  }

  Vector gradient(const Vector& x) const {
    require_dims(x.size() == d_, "task gradient: wrong input dimension");
    switch (kind_) {
      case TaskKind::convex2d: return grad_convex2d(x);
      case TaskKind::nonconvex2d: return grad_nonconvex2d(x);
      case TaskKind::piecewise_quadratic: return grad_piecewise_quadratic(x);
      case TaskKind::gmm_score: return gmm_score_at(x);
    }
    return Vector();
  }

  Matrix gradient_batch(const Matrix& x) const {
    require_dims(x.rows() == d_, "task gradient: wrong input dimension");
    if (kind_ == TaskKind::gmm_score) return gmm_score_batch(x);
    Matrix out(d_, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = gradient(x.col(j));
    return out;
  }

  /// 2 M* z with M* the first of (S, P, Q) attaining the max within kTieTolerance.
  Vector grad_piecewise_quadratic(const Vector& x) const {
    const Vector z = x.array() - 0.5;
    const Vector sz = spq_.S * z, pz = spq_.P * z, qz = spq_.Q * z;
    const double vs = z.dot(sz), vp = z.dot(pz), vq = z.dot(qz);
    const double top = std::max({vs, vp, vq});
    if (vs >= top - kTieTolerance) return 2.0 * sz;
    if (vp >= top - kTieTolerance) return 2.0 * pz;
    return 2.0 * qz;
  }

  /// Posterior component weights r_i(x), computed in the log domain.
  Vector gmm_responsibilities(const Vector& x) const {
    return softmax_t(-(means_.colwise() - x).colwise().squaredNorm().transpose() / (2.0 * sigma2_));
  }

  double gmm_log_density(const Vector& x) const {
    const double n = static_cast<double>(means_.cols());
    const Vector logits = -(means_.colwise() - x).colwise().squaredNorm().transpose() / (2.0 * sigma2_);
    return logsumexp_t(logits) - std::log(n) -
           0.5 * static_cast<double>(d_) * std::log(2.0 * std::numbers::pi * sigma2_);
  }

  Vector gmm_score_at(const Vector& x) const {
    const Vector r = gmm_responsibilities(x);
    return (means_ * r - x) / sigma2_;
  }

  Matrix gmm_score_batch(const Matrix& x) const {
    // squared distances: N x B
    Matrix logits = (-0.5 / sigma2_) * ((means_.colwise().squaredNorm().transpose().replicate(1, x.cols())) -
                                        2.0 * means_.transpose() * x +
                                        x.colwise().squaredNorm().replicate(means_.cols(), 1));
    Matrix r = softmax_cols(logits);
    return (means_ * r - x) / sigma2_;
  }

 private:
  Task(TaskKind k, Eigen::Index d, std::uint64_t seed) : kind_(k), d_(d), seed_(seed) {}

  TaskKind kind_;
  Eigen::Index d_;
  std::uint64_t seed_;
  SpqMatrices spq_;
  Matrix means_;
  double sigma2_ = 1.0;
};

/// n points uniform on [0,1]^d, one per column, drawn in column order.
inline Matrix sample_unit_cube(Eigen::Index d, Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix out(d, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < d; ++i) out(i, j) = u(rng);
  return out;
}

inline Matrix sample_domain(const Task& task, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_unit_cube(task.dim(), n, rng);
}

}  // namespace gradnet

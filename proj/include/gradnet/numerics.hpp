#pragma once

// Dense linear algebra aliases and numerically stable scalar reductions.
// Batches are stored column-wise: a d x B matrix holds B samples of R^d.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace gradnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

using VectorField = std::function<Vector(const Vector&)>;
using ScalarField = std::function<double(const Vector&)>;

/// Raised when operand shapes disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN/Inf or receives out-of-domain input.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline Vector matvec(const Matrix& m, const Vector& x) {
  require_dims(m.cols() == x.size(),
               "matvec: matrix has " + std::to_string(m.cols()) + " columns, vector has " +
                   std::to_string(x.size()) + " entries");
  return m * x;
}

/// (1/t) log sum exp(t u), evaluated with a max shift.
inline double logsumexp_t(const Vector& u, double t = 1.0) {
  if (u.size() == 0) throw DimensionError("logsumexp_t: empty input");
  if (!(t > 0.0)) throw std::invalid_argument("logsumexp_t: temperature must be positive");
  const double top = u.maxCoeff();
  const double s = (t * (u.array() - top)).exp().sum();
  return top + std::log(s) / t;
}

inline Vector softmax_t(const Vector& u, double t = 1.0) {
  if (u.size() == 0) throw DimensionError("softmax_t: empty input");
  if (!(t > 0.0)) throw std::invalid_argument("softmax_t: temperature must be positive");
  const double top = u.maxCoeff();
  Vector e = (t * (u.array() - top)).exp().matrix();
  return e / e.sum();
}

/// Column-wise LSE_t of a batch.
inline RowVector logsumexp_cols(const Matrix& z, double t = 1.0) {
  if (z.rows() == 0) throw DimensionError("logsumexp_cols: empty input");
  RowVector out(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double top = z.col(j).maxCoeff();
    out[j] = top + std::log((t * (z.col(j).array() - top)).exp().sum()) / t;
  }
  return out;
}

/// Column-wise softmax_t of a batch.
inline Matrix softmax_cols(const Matrix& z, double t = 1.0) {
  if (z.rows() == 0) throw DimensionError("softmax_cols: empty input");
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double top = z.col(j).maxCoeff();
    out.col(j) = (t * (z.col(j).array() - top)).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

/// Elementwise tanh as 1 - 2 / (exp(2x) + 1), which Eigen vectorizes for
/// doubles. Absolute error stays within a few ulps of 1; exp overflow
/// saturates to +-1 correctly.
template <typename Derived>
Eigen::ArrayXXd tanh_fast(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

/// Default central-difference step for coordinate value `xj`.
inline double default_fd_step(double xj) {
  static const double base = std::cbrt(std::numeric_limits<double>::epsilon());
  return base * std::max(1.0, std::abs(xj));
}

/// Central-difference Jacobian; column j is (f(x+h e_j) - f(x-h e_j)) / 2h.
/// A non-positive `h` selects the per-coordinate default step.
inline Matrix fd_jacobian(const VectorField& f, const Vector& x, double h = 0.0) {
  const Eigen::Index d = x.size();
  Matrix jac;
  Vector xp = x;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double step = h > 0.0 ? h : default_fd_step(x[j]);
    xp[j] = x[j] + step;
    const Vector fp = f(xp);
    xp[j] = x[j] - step;
    const Vector fm = f(xp);
    xp[j] = x[j];
    if (!fp.allFinite() || !fm.allFinite())
      throw NumericError("fd_jacobian: non-finite function value near coordinate " + std::to_string(j));
    if (j == 0) jac.resize(fp.size(), d);
    require_dims(fp.size() == jac.rows(), "fd_jacobian: output size changed between evaluations");
    // Divide by the realized step so that rounding in x +/- h cancels.
    jac.col(j) = (fp - fm) / ((x[j] + step) - (x[j] - step));
  }
  return jac;
}

/// Central-difference gradient of a scalar function.
inline Vector fd_gradient(const ScalarField& f, const Vector& x, double h = 0.0) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = h > 0.0 ? h : default_fd_step(x[j]);
    xp[j] = x[j] + step;
    const double fp = f(xp);
    xp[j] = x[j] - step;
    const double fm = f(xp);
    xp[j] = x[j];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("fd_gradient: non-finite function value near coordinate " + std::to_string(j));
    g[j] = (fp - fm) / ((x[j] + step) - (x[j] - step));
  }
  return g;
}

/// Eigenvalues of the symmetric part (m + m^T)/2, ascending.
inline Vector symmetric_eigenvalues(const Matrix& m) {
  require_dims(m.rows() == m.cols(), "symmetric_eigenvalues: matrix must be square");
  const Matrix s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(s, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericError("symmetric_eigenvalues: solver failed");
  return solver.eigenvalues();
}

inline double min_symmetric_eigenvalue(const Matrix& m) { return symmetric_eigenvalues(m)[0]; }

/// Largest singular value.
inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()[0];
}

inline double frobenius_asymmetry(const Matrix& m) { return (m - m.transpose()).norm(); }

/// 10 log10(mse); the power-quantity decibel convention.
inline double to_db(double mse) { return 10.0 * std::log10(mse); }

inline double softplus(double x, double beta = 1.0) {
  const double bx = beta * x;
  // log(1 + e^bx) = max(bx, 0) + log1p(e^-|bx|)
  return (std::max(bx, 0.0) + std::log1p(std::exp(-std::abs(bx)))) / beta;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log cosh(x) without overflow.
inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

}  // namespace gradnet

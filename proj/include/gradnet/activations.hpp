#pragma once

// Activation functions packaged with their Jacobian and, where available,
// their scalar antiderivative psi (sigma = grad psi). A network built on an
// activation with a known antiderivative can report its own potential.

#include "gradnet/numerics.hpp"
#include "gradnet/params.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gradnet {

using json = nlohmann::json;

enum class ActivationKind {
  identity,
  tanh,
  sigmoid,
  softplus,
  relu_smooth,
  scaled_tanh_mix,
  softmax_softmin_mix,
  softmax,
  neural_scalar,
};

enum class Arity { elementwise, group };

inline const char* to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::identity: return "identity";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::softplus: return "softplus";
    case ActivationKind::relu_smooth: return "relu_smooth";
    case ActivationKind::scaled_tanh_mix: return "scaled_tanh_mix";
    case ActivationKind::softmax_softmin_mix: return "softmax_softmin_mix";
    case ActivationKind::softmax: return "softmax";
    case ActivationKind::neural_scalar: return "neural_scalar";
  }
  return "unknown";
}

/// Activation value plus intermediates a later backward pass can reuse.
struct ActivationCache {
  Matrix value;
  Matrix aux1;
  Matrix aux2;
};

/// Base interface. Batch arguments are m x B with one sample per column.
class Activation {
 public:
  virtual ~Activation() = default;

  virtual ActivationKind kind() const = 0;
  virtual Arity arity() const = 0;
  /// Nondecreasing (elementwise) or PSD-Jacobian (group) at the current parameters.
  virtual bool monotone() const = 0;
  virtual bool antiderivative_known() const = 0;

  virtual Matrix eval(const Matrix& z) const = 0;
  /// Column b of the result is J_sigma(z_b) v_b. Every activation here has a
  /// symmetric Jacobian, so this is also the vector-Jacobian product.
  virtual Matrix jvp(const Matrix& z, const Matrix& v) const = 0;
  virtual Matrix jacobian(const Vector& z) const {
    Matrix eye = Matrix::Identity(z.size(), z.size());
    Matrix zz = z.replicate(1, z.size());
    return jvp(zz, eye);
  }
  /// jvp(z, v), also accumulating eval_param_vjp(z, v) into grad.
  virtual Matrix backward(const Matrix& z, const Matrix& v, std::span<double> grad) const {
    eval_param_vjp(z, v, grad);
    return jvp(z, v);
  }
  virtual ActivationCache evaluate(const Matrix& z) const { return {eval(z), {}, {}}; }
  /// backward(z, v, grad) given the cache evaluate(z) returned.
  virtual Matrix backward_cached(const Matrix& z, const ActivationCache& c, const Matrix& v,
                                 std::span<double> grad) const {
    (void)c;
    return backward(z, v, grad);
  }
  /// Row vector of psi(z_b).
  virtual RowVector antiderivative(const Matrix& z) const {
    (void)z;
    throw std::logic_error(std::string("antiderivative not known for activation ") + to_string(kind()));
  }

  virtual std::size_t num_params() const { return 0; }
  virtual void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) {
    (void)out;
    (void)prefix;
  }
  /// grad += d/dtheta sum_b v_b . sigma(z_b; theta)
  virtual void eval_param_vjp(const Matrix& z, const Matrix& v, std::span<double> grad) const {
    (void)z;
    (void)v;
    (void)grad;
  }
  /// grad += d/dtheta sum_b w_b psi(z_b; theta)
  virtual void antiderivative_param_vjp(const Matrix& z, const RowVector& w, std::span<double> grad) const {
    (void)z;
    (void)w;
    (void)grad;
  }
  /// Tag learnable parameters nonneg so that projection keeps the activation monotone.
  virtual void set_constrained(bool on) { (void)on; }

  virtual json spec() const = 0;
  virtual std::unique_ptr<Activation> clone() const = 0;

  Vector value(const Vector& z) const { return eval(Matrix(z)).col(0); }
  double potential(const Vector& z) const { return antiderivative(Matrix(z))[0]; }
};

using ActivationPtr = std::unique_ptr<Activation>;

// ---------------------------------------------------------------------------

/// Parameter-free elementwise activations.
class FixedElementwise final : public Activation {
 public:
  /// `hyper` is beta for softplus and the smoothing constant b for relu_smooth.
  explicit FixedElementwise(ActivationKind kind, double hyper = 1.0) : kind_(kind), hyper_(hyper) {
    switch (kind) {
      case ActivationKind::identity:
      case ActivationKind::tanh:
      case ActivationKind::sigmoid:
        break;
      case ActivationKind::softplus:
      case ActivationKind::relu_smooth:
        if (!(hyper > 0.0)) throw std::invalid_argument("activation hyperparameter must be positive");
        break;
      default:
        throw std::invalid_argument(std::string("not a fixed elementwise kind: ") + to_string(kind));
    }
  }

  ActivationKind kind() const override { return kind_; }
  Arity arity() const override { return Arity::elementwise; }
  bool monotone() const override { return true; }
  bool antiderivative_known() const override { return kind_ != ActivationKind::softplus; }
  double hyper() const { return hyper_; }

  Matrix eval(const Matrix& z) const override {
    switch (kind_) {
      case ActivationKind::identity: return z;
      case ActivationKind::tanh: return tanh_fast(z.array()).matrix();
      case ActivationKind::sigmoid: return (0.5 * (1.0 + tanh_fast(0.5 * z.array()))).matrix();
      case ActivationKind::softplus: {
        const double b = hyper_;
        return z.unaryExpr([b](double x) { return gradnet::softplus(x, b); });
      }
      case ActivationKind::relu_smooth: {
        const double b = hyper_;
        return (0.5 * (z.array() + (z.array().square() + b).sqrt())).matrix();
      }
      default: break;
    }
    throw std::logic_error("unreachable");
  }

  Matrix derivative(const Matrix& z) const {
    switch (kind_) {
      case ActivationKind::identity: return Matrix::Ones(z.rows(), z.cols());
      case ActivationKind::tanh: return (1.0 - tanh_fast(z.array()).square()).matrix();
      case ActivationKind::sigmoid: {
        Eigen::ArrayXXd s = 0.5 * (1.0 + tanh_fast(0.5 * z.array()));
        return (s * (1.0 - s)).matrix();
      }
      case ActivationKind::softplus: {
        const double b = hyper_;
        return z.unaryExpr([b](double x) { return gradnet::sigmoid(b * x); });
      }
      case ActivationKind::relu_smooth: {
        const double b = hyper_;
        return (0.5 * (1.0 + z.array() / (z.array().square() + b).sqrt())).matrix();
      }
      default: break;
    }
    throw std::logic_error("unreachable");
  }

  Matrix jvp(const Matrix& z, const Matrix& v) const override { return derivative(z).cwiseProduct(v); }

  Matrix jacobian(const Vector& z) const override { return derivative(Matrix(z)).col(0).asDiagonal(); }

  RowVector antiderivative(const Matrix& z) const override {
    switch (kind_) {
      case ActivationKind::identity: return 0.5 * z.array().square().colwise().sum().matrix();
      case ActivationKind::tanh: return z.unaryExpr([](double x) { return log_cosh(x); }).colwise().sum();
      case ActivationKind::sigmoid:
        return z.unaryExpr([](double x) { return gradnet::softplus(x); }).colwise().sum();
      case ActivationKind::relu_smooth: {
        const double b = hyper_;
        const double rb = std::sqrt(b);
        return z.unaryExpr([b, rb](double x) {
                  const double r = std::sqrt(x * x + b);
                  return 0.25 * x * x + 0.25 * (x * r + b * std::asinh(x / rb));
                })
            .colwise()
            .sum();
      }
      default: break;
    }
    return Activation::antiderivative(z);
  }

  json spec() const override {
    json j{{"kind", to_string(kind_)}};
    if (kind_ == ActivationKind::softplus) j["beta"] = hyper_;
    if (kind_ == ActivationKind::relu_smooth) j["b"] = hyper_;
    return j;
  }
  std::unique_ptr<Activation> clone() const override { return std::make_unique<FixedElementwise>(*this); }

 private:
  ActivationKind kind_;
  double hyper_;
};

// ---------------------------------------------------------------------------

/// alpha tanh(x) + beta (x - tanh(x)), elementwise, with learnable scalars.
/// Nondecreasing whenever alpha, beta >= 0.
class ScaledTanhMix final : public Activation {
 public:
  explicit ScaledTanhMix(double alpha = 1.0, double beta = 0.5, bool constrained = false)
      : alpha_(alpha), beta_(beta), constrained_(constrained) {}

  ActivationKind kind() const override { return ActivationKind::scaled_tanh_mix; }
  Arity arity() const override { return Arity::elementwise; }
  bool monotone() const override { return alpha_ >= 0.0 && beta_ >= 0.0; }
  bool antiderivative_known() const override { return true; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  Matrix eval(const Matrix& z) const override {
    Eigen::ArrayXXd th = tanh_fast(z.array());
    return (alpha_ * th + beta_ * (z.array() - th)).matrix();
  }
  Matrix derivative(const Matrix& z) const {
    Eigen::ArrayXXd th2 = tanh_fast(z.array()).square();
    return (alpha_ * (1.0 - th2) + beta_ * th2).matrix();
  }
  Matrix jvp(const Matrix& z, const Matrix& v) const override { return derivative(z).cwiseProduct(v); }
  Matrix jacobian(const Vector& z) const override { return derivative(Matrix(z)).col(0).asDiagonal(); }

  RowVector antiderivative(const Matrix& z) const override {
    Eigen::ArrayXXd lc = z.unaryExpr([](double x) { return log_cosh(x); }).array();
    return (alpha_ * lc + beta_ * (0.5 * z.array().square() - lc)).colwise().sum().matrix();
  }

  std::size_t num_params() const override { return 2; }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    const Constraint tag = constrained_ ? Constraint::nonneg : Constraint::free;
    out.push_back({prefix + "alpha", as_span(alpha_), tag});
    out.push_back({prefix + "beta", as_span(beta_), tag});
  }
  void eval_param_vjp(const Matrix& z, const Matrix& v, std::span<double> grad) const override {
    Eigen::ArrayXXd th = tanh_fast(z.array());
    grad[0] += (th * v.array()).sum();
    grad[1] += ((z.array() - th) * v.array()).sum();
  }
  Matrix backward(const Matrix& z, const Matrix& v, std::span<double> grad) const override {
    return backward_cached(z, evaluate(z), v, grad);
  }
  ActivationCache evaluate(const Matrix& z) const override {
    ActivationCache c;
    c.aux1 = tanh_fast(z.array()).matrix();
    c.value = (alpha_ * c.aux1.array() + beta_ * (z.array() - c.aux1.array())).matrix();
    return c;
  }
  Matrix backward_cached(const Matrix& z, const ActivationCache& c, const Matrix& v,
                         std::span<double> grad) const override {
    const auto th = c.aux1.array();
    grad[0] += (th * v.array()).sum();
    grad[1] += ((z.array() - th) * v.array()).sum();
    return ((alpha_ * (1.0 - th.square()) + beta_ * th.square()) * v.array()).matrix();
  }
  void antiderivative_param_vjp(const Matrix& z, const RowVector& w, std::span<double> grad) const override {
    Matrix lc = z.unaryExpr([](double x) { return log_cosh(x); });
    grad[0] += lc.colwise().sum().dot(w);
    grad[1] += (0.5 * z.array().square() - lc.array()).matrix().colwise().sum().dot(w);
  }
  void set_constrained(bool on) override { constrained_ = on; }

  json spec() const override { return {{"kind", "scaled_tanh_mix"}}; }
  std::unique_ptr<Activation> clone() const override { return std::make_unique<ScaledTanhMix>(*this); }

 private:
  double alpha_;
  double beta_;
  bool constrained_;
};

// ---------------------------------------------------------------------------

namespace detail {

inline Matrix softmax_jvp(const Matrix& s, const Matrix& v, double t) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const double sv = s.col(j).dot(v.col(j));
    out.col(j) = t * (s.col(j).array() * (v.col(j).array() - sv)).matrix();
  }
  return out;
}

inline Matrix softmax_jacobian(const Vector& s, double t) {
  Matrix j = -s * s.transpose();
  j.diagonal() += s;
  return t * j;
}

}  // namespace detail

/// softmax(t z) over the whole vector; gradient of LSE_t.
class Softmax final : public Activation {
 public:
  explicit Softmax(double t = 1.0) : t_(t) {
    if (!(t > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
  }

  ActivationKind kind() const override { return ActivationKind::softmax; }
  Arity arity() const override { return Arity::group; }
  bool monotone() const override { return true; }
  bool antiderivative_known() const override { return true; }
  double temperature() const { return t_; }

  Matrix eval(const Matrix& z) const override { return softmax_cols(z, t_); }
  Matrix jvp(const Matrix& z, const Matrix& v) const override {
    return detail::softmax_jvp(softmax_cols(z, t_), v, t_);
  }
  Matrix backward_cached(const Matrix& z, const ActivationCache& c, const Matrix& v,
                         std::span<double> grad) const override {
    (void)z;
    (void)grad;
    return detail::softmax_jvp(c.value, v, t_);
  }
  Matrix jacobian(const Vector& z) const override { return detail::softmax_jacobian(softmax_t(z, t_), t_); }
  RowVector antiderivative(const Matrix& z) const override { return logsumexp_cols(z, t_); }

  json spec() const override { return {{"kind", "softmax"}, {"t", t_}}; }
  std::unique_ptr<Activation> clone() const override { return std::make_unique<Softmax>(*this); }

 private:
  double t_;
};

/// alpha softmax_t(z) - beta softmin_t(z) with softmin_t(z) = softmax_t(-z).
/// Gradient of alpha LSE_t(z) + beta LSE_t(-z); PSD Jacobian when alpha, beta >= 0.
class SoftmaxSoftminMix final : public Activation {
 public:
  explicit SoftmaxSoftminMix(double alpha = 1.0, double beta = 1.0, double t = 1.0, bool constrained = false)
      : alpha_(alpha), beta_(beta), t_(t), constrained_(constrained) {
    if (!(t > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
  }

  ActivationKind kind() const override { return ActivationKind::softmax_softmin_mix; }
  Arity arity() const override { return Arity::group; }
  bool monotone() const override { return alpha_ >= 0.0 && beta_ >= 0.0; }
  bool antiderivative_known() const override { return true; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double temperature() const { return t_; }

  Matrix eval(const Matrix& z) const override {
    return alpha_ * softmax_cols(z, t_) - beta_ * softmax_cols(-z, t_);
  }
  Matrix jvp(const Matrix& z, const Matrix& v) const override {
    return alpha_ * detail::softmax_jvp(softmax_cols(z, t_), v, t_) +
           beta_ * detail::softmax_jvp(softmax_cols(-z, t_), v, t_);
  }
  Matrix jacobian(const Vector& z) const override {
    return alpha_ * detail::softmax_jacobian(softmax_t(z, t_), t_) +
           beta_ * detail::softmax_jacobian(softmax_t(-z, t_), t_);
  }
  RowVector antiderivative(const Matrix& z) const override {
    return alpha_ * logsumexp_cols(z, t_) + beta_ * logsumexp_cols(-z, t_);
  }

  std::size_t num_params() const override { return 2; }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    const Constraint tag = constrained_ ? Constraint::nonneg : Constraint::free;
    out.push_back({prefix + "alpha", as_span(alpha_), tag});
    out.push_back({prefix + "beta", as_span(beta_), tag});
  }
  void eval_param_vjp(const Matrix& z, const Matrix& v, std::span<double> grad) const override {
    grad[0] += softmax_cols(z, t_).cwiseProduct(v).sum();
    grad[1] -= softmax_cols(-z, t_).cwiseProduct(v).sum();
  }
  Matrix backward(const Matrix& z, const Matrix& v, std::span<double> grad) const override {
    return backward_cached(z, evaluate(z), v, grad);
  }
  ActivationCache evaluate(const Matrix& z) const override {
    if (z.rows() == 0) throw DimensionError("softmax_softmin_mix: empty input");
    ActivationCache c{Matrix(z.rows(), z.cols()), Matrix(z.rows(), z.cols()), Matrix(z.rows(), z.cols())};
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const auto col = z.col(j).array();
      const double hi = col.maxCoeff();
      const double lo = col.minCoeff();
      auto sp = c.aux1.col(j).array();
      auto sm = c.aux2.col(j).array();
      sp = (t_ * (col - hi)).exp();
      // exp(t (lo - z)) = exp(t (lo - hi)) / exp(t (z - hi)); exact up to
      // rounding while the column range keeps exp(t (z - hi)) normal.
      if (t_ * (hi - lo) < 600.0) sm = std::exp(t_ * (lo - hi)) / sp;
      else sm = (t_ * (lo - col)).exp();
      sp *= 1.0 / sp.sum();
      sm *= 1.0 / sm.sum();
      c.value.col(j).array() = alpha_ * sp - beta_ * sm;
    }
    return c;
  }
  Matrix backward_cached(const Matrix& z, const ActivationCache& c, const Matrix& v,
                         std::span<double> grad) const override {
    (void)z;
    Matrix out(v.rows(), v.cols());
    double ga = 0.0, gb = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const auto sp = c.aux1.col(j).array();
      const auto sm = c.aux2.col(j).array();
      const auto vj = v.col(j).array();
      const double a = (sp * vj).sum();
      const double b = (sm * vj).sum();
      ga += a;
      gb += b;
      out.col(j).array() = t_ * (alpha_ * sp * (vj - a) + beta_ * sm * (vj - b));
    }
    grad[0] += ga;
    grad[1] -= gb;
    return out;
  }
  void antiderivative_param_vjp(const Matrix& z, const RowVector& w, std::span<double> grad) const override {
    grad[0] += logsumexp_cols(z, t_).dot(w);
    grad[1] += logsumexp_cols(-z, t_).dot(w);
  }
  void set_constrained(bool on) override { constrained_ = on; }

  json spec() const override { return {{"kind", "softmax_softmin_mix"}, {"t", t_}}; }
  std::unique_ptr<Activation> clone() const override { return std::make_unique<SoftmaxSoftminMix>(*this); }

 private:
  double alpha_;
  double beta_;
  double t_;
  bool constrained_;
};

// ---------------------------------------------------------------------------

/// Parameters of a one-hidden-layer scalar network c + u^T s(v x + beta).
struct NeuralScalarParams {
  Vector u;
  Vector v;
  Vector beta;
  double offset = 0.0;
  ActivationKind base = ActivationKind::sigmoid;  // sigmoid or tanh
  bool monotone = false;
};

/// Scalar-to-scalar network applied coordinatewise: c + sum_k u_k s(v_k x + beta_k).
///
/// The antiderivative is c x + sum_k u_k (S(v_k x + beta_k) - S(beta_k)) / v_k
/// where S' = s; the S(beta_k) shift keeps it smooth as v_k -> 0.
class NeuralScalar final : public Activation {
 public:
  explicit NeuralScalar(NeuralScalarParams p) : p_(std::move(p)) {
    if (p_.u.size() != p_.v.size() || p_.u.size() != p_.beta.size())
      throw DimensionError("neural scalar activation: u, v, beta must have equal length");
    if (p_.base != ActivationKind::sigmoid && p_.base != ActivationKind::tanh)
      throw std::invalid_argument("neural scalar activation: base must be sigmoid or tanh");
    if (p_.monotone) {
      for (Eigen::Index k = 0; k < p_.u.size(); ++k)
        if (p_.u[k] * p_.v[k] < 0.0)
          throw std::invalid_argument("neural scalar activation: monotone mode requires u_k * v_k >= 0 (unit " +
                                      std::to_string(k) + ")");
    }
  }

  ActivationKind kind() const override { return ActivationKind::neural_scalar; }
  Arity arity() const override { return Arity::elementwise; }
  bool monotone() const override { return (p_.u.array() * p_.v.array() >= 0.0).all(); }
  bool antiderivative_known() const override { return true; }
  const NeuralScalarParams& params() const { return p_; }
  Eigen::Index width() const { return p_.u.size(); }

  double operator()(double x) const { return eval(Matrix::Constant(1, 1, x))(0, 0); }

  Matrix eval(const Matrix& z) const override {
    Matrix out = Matrix::Constant(z.rows(), z.cols(), p_.offset);
    for (Eigen::Index k = 0; k < width(); ++k) out.array() += p_.u[k] * base((p_.v[k] * z.array() + p_.beta[k]));
    return out;
  }
  Matrix derivative(const Matrix& z) const {
    Matrix out = Matrix::Zero(z.rows(), z.cols());
    for (Eigen::Index k = 0; k < width(); ++k)
      out.array() += p_.u[k] * p_.v[k] * base_d1(p_.v[k] * z.array() + p_.beta[k]);
    return out;
  }
  Matrix jvp(const Matrix& z, const Matrix& v) const override { return derivative(z).cwiseProduct(v); }
  Matrix jacobian(const Vector& z) const override { return derivative(Matrix(z)).col(0).asDiagonal(); }

  RowVector antiderivative(const Matrix& z) const override {
    Eigen::ArrayXXd acc = p_.offset * z.array();
    for (Eigen::Index k = 0; k < width(); ++k) acc += p_.u[k] * shifted_integral(z.array(), k);
    return acc.colwise().sum().matrix();
  }

  std::size_t num_params() const override { return 3 * static_cast<std::size_t>(width()) + 1; }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    const Constraint tag = p_.monotone ? Constraint::nonneg : Constraint::free;
    out.push_back({prefix + "u", as_span(p_.u), tag});
    out.push_back({prefix + "v", as_span(p_.v), tag});
    out.push_back({prefix + "beta", as_span(p_.beta), Constraint::free});
    out.push_back({prefix + "offset", as_span(p_.offset), Constraint::free});
  }
  void eval_param_vjp(const Matrix& z, const Matrix& v, std::span<double> grad) const override {
    const auto n = static_cast<std::size_t>(width());
    for (Eigen::Index k = 0; k < width(); ++k) {
      const auto kk = static_cast<std::size_t>(k);
      Eigen::ArrayXXd a = p_.v[k] * z.array() + p_.beta[k];
      Eigen::ArrayXXd d1 = base_d1(a) * v.array();
      grad[kk] += (base(a) * v.array()).sum();
      grad[n + kk] += p_.u[k] * (d1 * z.array()).sum();
      grad[2 * n + kk] += p_.u[k] * d1.sum();
    }
    grad[3 * n] += v.sum();
  }
  void antiderivative_param_vjp(const Matrix& z, const RowVector& w, std::span<double> grad) const override {
    const auto n = static_cast<std::size_t>(width());
    Eigen::ArrayXXd wb = w.replicate(z.rows(), 1).array();
    for (Eigen::Index k = 0; k < width(); ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const double vk = p_.v[k];
      const double bk = p_.beta[k];
      const Eigen::ArrayXXd x = z.array();
      Eigen::ArrayXXd integral = shifted_integral(x, k);
      // d/dv of (S(vx+b) - S(b))/v, with a series where v x is tiny.
      Eigen::ArrayXXd dv(x.rows(), x.cols());
      Eigen::ArrayXXd db(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double xi = x(i);
        const double vx = vk * xi;
        if (std::abs(vx) < 1e-4) {
          const double s1 = base_d1_scalar(bk), s2 = base_d2_scalar(bk), s3 = base_d3_scalar(bk);
          dv(i) = s1 * xi * xi / 2.0 + s2 * vk * xi * xi * xi / 3.0 + s3 * vk * vk * xi * xi * xi * xi / 8.0;
          db(i) = s1 * xi + s2 * vk * xi * xi / 2.0 + s3 * vk * vk * xi * xi * xi / 6.0;
        } else {
          const double a = vx + bk;
          dv(i) = base_scalar(a) * xi / vk - (base_integral_scalar(a) - base_integral_scalar(bk)) / (vk * vk);
          db(i) = (base_scalar(a) - base_scalar(bk)) / vk;
        }
      }
      grad[kk] += (integral * wb).sum();
      grad[n + kk] += p_.u[k] * (dv * wb).sum();
      grad[2 * n + kk] += p_.u[k] * (db * wb).sum();
    }
    grad[3 * n] += (z.array() * wb).sum();
  }
  void set_constrained(bool on) override { p_.monotone = on; }

  json spec() const override {
    return {{"kind", "neural_scalar"}, {"width", width()}, {"base", to_string(p_.base)}};
  }
  std::unique_ptr<Activation> clone() const override { return std::make_unique<NeuralScalar>(*this); }

 private:
  bool is_sigmoid() const { return p_.base == ActivationKind::sigmoid; }

  Eigen::ArrayXXd base(const Eigen::ArrayXXd& a) const {
    return is_sigmoid() ? Eigen::ArrayXXd(0.5 * (1.0 + tanh_fast(0.5 * a))) : Eigen::ArrayXXd(tanh_fast(a));
  }
  Eigen::ArrayXXd base_d1(const Eigen::ArrayXXd& a) const {
    if (is_sigmoid()) {
      Eigen::ArrayXXd s = 0.5 * (1.0 + tanh_fast(0.5 * a));
      return s * (1.0 - s);
    }
    return 1.0 - tanh_fast(a).square();
  }
  double base_scalar(double a) const { return is_sigmoid() ? gradnet::sigmoid(a) : std::tanh(a); }
  double base_d1_scalar(double a) const {
    if (is_sigmoid()) {
      const double s = gradnet::sigmoid(a);
      return s * (1.0 - s);
    }
    const double t = std::tanh(a);
    return 1.0 - t * t;
  }
  double base_d2_scalar(double a) const {
    if (is_sigmoid()) {
      const double s = gradnet::sigmoid(a);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    const double t = std::tanh(a);
    return -2.0 * t * (1.0 - t * t);
  }
  double base_d3_scalar(double a) const {
    if (is_sigmoid()) {
      const double s = gradnet::sigmoid(a);
      return s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s);
    }
    const double t = std::tanh(a);
    return -2.0 * (1.0 - t * t) * (1.0 - 3.0 * t * t);
  }
  double base_integral_scalar(double a) const { return is_sigmoid() ? gradnet::softplus(a) : log_cosh(a); }

  // (S(v_k x + beta_k) - S(beta_k)) / v_k, elementwise.
  Eigen::ArrayXXd shifted_integral(const Eigen::ArrayXXd& x, Eigen::Index k) const {
    const double vk = p_.v[k];
    const double bk = p_.beta[k];
    const double s0 = base_integral_scalar(bk);
    const double s1 = base_scalar(bk), s2 = base_d1_scalar(bk), s3 = base_d2_scalar(bk);
    return x.unaryExpr([&](double xi) {
      const double vx = vk * xi;
      if (std::abs(vx) < 1e-4)
        return s1 * xi + s2 * vk * xi * xi / 2.0 + s3 * vk * vk * xi * xi * xi / 6.0;
      return (base_integral_scalar(vx + bk) - s0) / vk;
    });
  }

  NeuralScalarParams p_;
};

// ---------------------------------------------------------------------------

inline ActivationPtr make_identity() { return std::make_unique<FixedElementwise>(ActivationKind::identity); }
inline ActivationPtr make_tanh() { return std::make_unique<FixedElementwise>(ActivationKind::tanh); }
inline ActivationPtr make_sigmoid() { return std::make_unique<FixedElementwise>(ActivationKind::sigmoid); }
inline ActivationPtr make_softplus(double beta = 1.0) {
  return std::make_unique<FixedElementwise>(ActivationKind::softplus, beta);
}
inline ActivationPtr make_relu_smooth(double b = 0.01) {
  return std::make_unique<FixedElementwise>(ActivationKind::relu_smooth, b);
}
inline ActivationPtr make_softmax(double t = 1.0) { return std::make_unique<Softmax>(t); }

/// Build a scalar network activation; throws in monotone mode if some u_k v_k < 0.
inline ActivationPtr neural_scalar_activation(NeuralScalarParams params) {
  return std::make_unique<NeuralScalar>(std::move(params));
}

/// Construct an activation from its structural spec. Learnable parameters are
/// set to their defaults and are expected to be overwritten from a ParamView.
inline ActivationPtr activation_from_spec(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "identity") return make_identity();
  if (kind == "tanh") return make_tanh();
  if (kind == "sigmoid") return make_sigmoid();
  if (kind == "softplus") return make_softplus(j.value("beta", 1.0));
  if (kind == "relu_smooth") return make_relu_smooth(j.value("b", 0.01));
  if (kind == "softmax") return make_softmax(j.value("t", 1.0));
  if (kind == "scaled_tanh_mix") return std::make_unique<ScaledTanhMix>();
  if (kind == "softmax_softmin_mix") return std::make_unique<SoftmaxSoftminMix>(1.0, 1.0, j.value("t", 1.0));
  if (kind == "neural_scalar") {
    const auto w = j.at("width").get<Eigen::Index>();
    NeuralScalarParams p{Vector::Zero(w), Vector::Zero(w), Vector::Zero(w), 0.0,
                         j.value("base", std::string("sigmoid")) == "tanh" ? ActivationKind::tanh
                                                                            : ActivationKind::sigmoid,
                         false};
    return neural_scalar_activation(std::move(p));
  }
  throw std::invalid_argument("unknown activation kind: " + kind);
}

// Free-function forms of the activation operations.

inline Vector eval(const Activation& a, const Vector& z) { return a.value(z); }
inline Matrix derivative(const Activation& a, const Vector& z) { return a.jacobian(z); }
inline double antiderivative(const Activation& a, const Vector& z) {
  if (!a.antiderivative_known())
    throw std::logic_error(std::string("antiderivative not known for activation ") + to_string(a.kind()));
  return a.potential(z);
}

}  // namespace gradnet

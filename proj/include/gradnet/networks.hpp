#pragma once

// Gradient network architectures. Every network maps R^d -> R^d and has a
// symmetric Jacobian by construction; in monotone mode the Jacobian is also
// PSD. Each node provides a batched forward pass, an analytic input
// Jacobian, reverse-mode parameter gradients, and (where it is defined) the
// scalar potential whose gradient the network computes.

#include "gradnet/activations.hpp"
#include "gradnet/numerics.hpp"
#include "gradnet/params.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gradnet {

enum class NetworkKind {
  single_layer,
  gradnet_m,
  gradnet_c,
  difference,
  strongly_convex_wrap,
  lipschitz_flip,
  transformed,
  linear_combination,
};

enum class ConstraintMode { none, monotone };

inline const char* to_string(NetworkKind k) {
  switch (k) {
    case NetworkKind::single_layer: return "single_layer";
    case NetworkKind::gradnet_m: return "gradnet_m";
    case NetworkKind::gradnet_c: return "gradnet_c";
    case NetworkKind::difference: return "difference";
    case NetworkKind::strongly_convex_wrap: return "strongly_convex_wrap";
    case NetworkKind::lipschitz_flip: return "lipschitz_flip";
    case NetworkKind::transformed: return "transformed";
    case NetworkKind::linear_combination: return "linear_combination";
  }
  return "unknown";
}

inline const char* to_string(ConstraintMode m) { return m == ConstraintMode::monotone ? "monotone" : "none"; }

inline ConstraintMode constraint_mode_from_string(const std::string& s) {
  if (s == "monotone") return ConstraintMode::monotone;
  if (s == "none") return ConstraintMode::none;
  throw std::invalid_argument("unknown constraint mode: " + s);
}

/// Owning pointer that deep-copies through T::clone().
template <typename T>
class Cloned {
 public:
  Cloned() = default;
  Cloned(std::unique_ptr<T> p) : p_(std::move(p)) {}  // NOLINT(google-explicit-constructor)
  Cloned(const Cloned& o) : p_(o.p_ ? o.p_->clone() : nullptr) {}
  Cloned(Cloned&&) noexcept = default;
  Cloned& operator=(const Cloned& o) {
    if (this != &o) p_ = o.p_ ? o.p_->clone() : nullptr;
    return *this;
  }
  Cloned& operator=(Cloned&&) noexcept = default;

  T* operator->() const { return p_.get(); }
  T& operator*() const { return *p_; }
  T* get() const { return p_.get(); }
  explicit operator bool() const { return static_cast<bool>(p_); }

 private:
  std::unique_ptr<T> p_;
};

class Network {
 public:
  virtual ~Network() = default;

  virtual NetworkKind kind() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual ConstraintMode mode() const = 0;

  /// Batched forward pass; x is d x B.
  virtual Matrix forward(const Matrix& x) const = 0;
  /// Analytic d x d input Jacobian.
  virtual Matrix jacobian(const Vector& x) const = 0;

  virtual bool has_potential() const { return false; }
  virtual RowVector potential(const Matrix& x) const {
    (void)x;
    throw std::logic_error(std::string("potential is not defined for network kind ") + to_string(kind()));
  }

  virtual std::size_t num_params() const = 0;
  virtual void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) = 0;
  /// grad += d/dtheta sum_b gy_b . f(x_b)
  virtual void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const = 0;
  /// Maps the forward output y to the upstream gradient dL/dy.
  using OutputSeed = std::function<Matrix(const Matrix& y)>;
  /// Returns y = forward(x) and runs backward(x, seed(y), grad), sharing the
  /// forward intermediates where the subclass supports it.
  virtual Matrix forward_backward(const Matrix& x, const OutputSeed& seed, std::span<double> grad) const {
    Matrix y = forward(x);
    backward(x, seed(y), grad);
    return y;
  }
  /// grad += d/dtheta sum_b gp_b F(x_b) for the tracked potential F.
  virtual void potential_backward(const Matrix& x, const RowVector& gp, std::span<double> grad) const {
    (void)x;
    (void)gp;
    (void)grad;
    throw std::logic_error(std::string("potential is not defined for network kind ") + to_string(kind()));
  }

  virtual json spec() const = 0;
  virtual std::unique_ptr<Network> clone() const = 0;

  Vector operator()(const Vector& x) const {
    require_dims(x.size() == dim(), "network input has dimension " + std::to_string(x.size()) + ", expected " +
                                        std::to_string(dim()));
    return forward(Matrix(x)).col(0);
  }
  double potential_at(const Vector& x) const { return potential(Matrix(x))[0]; }

  ParamView params() {
    std::vector<ParamSegment> segs;
    collect_params(segs, "");
    return ParamView(std::move(segs));
  }

  VectorField as_field() const {
    return [this](const Vector& x) { return (*this)(x); };
  }
};

using NetworkPtr = std::unique_ptr<Network>;

namespace detail {

inline Eigen::Map<Matrix> grad_matrix(std::span<double> g, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
  return {g.data() + offset, rows, cols};
}
inline Eigen::Map<Vector> grad_vector(std::span<double> g, std::size_t offset, Eigen::Index n) {
  return {g.data() + offset, n};
}
inline std::size_t count(Eigen::Index n) { return static_cast<std::size_t>(n); }

inline void require_input(const Matrix& x, Eigen::Index d) {
  require_dims(x.rows() == d, "network input has dimension " + std::to_string(x.rows()) + ", expected " +
                                  std::to_string(d));
}

inline void require_monotone_activation(const Activation& a, const char* where) {
  if (!a.monotone())
    throw std::invalid_argument(std::string(where) + ": monotone mode requires a monotone activation, got " +
                                to_string(a.kind()));
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// W^T sigma(W x + a) + b
class SingleLayer final : public Network {
 public:
  SingleLayer(Matrix w, Vector a, Vector b, ActivationPtr sigma, ConstraintMode mode = ConstraintMode::none)
      : w_(std::move(w)), a_(std::move(a)), b_(std::move(b)), sigma_(std::move(sigma)), mode_(mode) {
    require_dims(a_.size() == w_.rows(), "single_layer: bias a must have one entry per hidden unit");
    require_dims(b_.size() == w_.cols(), "single_layer: bias b must match the input dimension");
    if (mode_ == ConstraintMode::monotone) {
      detail::require_monotone_activation(*sigma_, "single_layer");
      sigma_->set_constrained(true);
    }
  }

  NetworkKind kind() const override { return NetworkKind::single_layer; }
  Eigen::Index dim() const override { return w_.cols(); }
  Eigen::Index hidden() const { return w_.rows(); }
  ConstraintMode mode() const override { return mode_; }
  const Matrix& weights() const { return w_; }
  Matrix& weights() { return w_; }
  const Vector& inner_bias() const { return a_; }
  const Vector& outer_bias() const { return b_; }
  const Activation& activation() const { return *sigma_; }

  Matrix forward(const Matrix& x) const override {
    detail::require_input(x, dim());
    Matrix z = (w_ * x).colwise() + a_;
    return (w_.transpose() * sigma_->eval(z)).colwise() + b_;
  }

  Matrix jacobian(const Vector& x) const override {
    Vector z = w_ * x + a_;
    return w_.transpose() * sigma_->jacobian(z) * w_;
  }

  bool has_potential() const override { return sigma_->antiderivative_known(); }
  RowVector potential(const Matrix& x) const override {
    if (!has_potential()) Network::potential(x);
    detail::require_input(x, dim());
    Matrix z = (w_ * x).colwise() + a_;
    return sigma_->antiderivative(z) + b_.transpose() * x;
  }

  std::size_t num_params() const override {
    return detail::count(w_.size() + a_.size() + b_.size()) + sigma_->num_params();
  }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    out.push_back({prefix + "W", as_span(w_), Constraint::free});
    out.push_back({prefix + "a", as_span(a_), Constraint::free});
    out.push_back({prefix + "b", as_span(b_), Constraint::free});
    sigma_->collect_params(out, prefix + "sigma.");
  }

  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    Matrix z = (w_ * x).colwise() + a_;
    backward_from(x, z, sigma_->evaluate(z), gy, grad);
  }

  Matrix forward_backward(const Matrix& x, const OutputSeed& seed, std::span<double> grad) const override {
    detail::require_input(x, dim());
    Matrix z = (w_ * x).colwise() + a_;
    const ActivationCache c = sigma_->evaluate(z);
    Matrix y = (w_.transpose() * c.value).colwise() + b_;
    backward_from(x, z, c, seed(y), grad);
    return y;
  }

  void potential_backward(const Matrix& x, const RowVector& gp, std::span<double> grad) const override {
    if (!has_potential()) Network::potential_backward(x, gp, grad);
    const auto [ow, oa, ob, os] = offsets();
    Matrix z = (w_ * x).colwise() + a_;
    Matrix gz = sigma_->eval(z).array().rowwise() * gp.array();
    detail::grad_matrix(grad, ow, w_.rows(), w_.cols()) += gz * x.transpose();
    detail::grad_vector(grad, oa, a_.size()) += gz.rowwise().sum();
    detail::grad_vector(grad, ob, b_.size()) += x * gp.transpose();
    sigma_->antiderivative_param_vjp(z, gp, grad.subspan(os));
  }

  json spec() const override {
    return {{"kind", "single_layer"},
            {"d", dim()},
            {"hidden", hidden()},
            {"mode", to_string(mode_)},
            {"activation", sigma_->spec()}};
  }
  std::unique_ptr<Network> clone() const override { return std::make_unique<SingleLayer>(*this); }

 private:
  void backward_from(const Matrix& x, const Matrix& z, const ActivationCache& c, const Matrix& gy,
                     std::span<double> grad) const {
    const auto [ow, oa, ob, os] = offsets();
    Matrix gs = w_ * gy;
    Matrix gz = sigma_->backward_cached(z, c, gs, grad.subspan(os));
    detail::grad_matrix(grad, ow, w_.rows(), w_.cols()) += c.value * gy.transpose() + gz * x.transpose();
    detail::grad_vector(grad, oa, a_.size()) += gz.rowwise().sum();
    detail::grad_vector(grad, ob, b_.size()) += gy.rowwise().sum();
  }

  std::tuple<std::size_t, std::size_t, std::size_t, std::size_t> offsets() const {
    const std::size_t ow = 0;
    const std::size_t oa = ow + detail::count(w_.size());
    const std::size_t ob = oa + detail::count(a_.size());
    const std::size_t os = ob + detail::count(b_.size());
    return {ow, oa, ob, os};
  }

  Matrix w_;
  Vector a_;
  Vector b_;
  Cloned<Activation> sigma_;
  ConstraintMode mode_;
};

// ---------------------------------------------------------------------------

/// Scalar weighting rho applied to a module's potential phi.
enum class RhoKind { one, softplus };

inline const char* to_string(RhoKind r) { return r == RhoKind::one ? "one" : "softplus"; }
inline RhoKind rho_from_string(const std::string& s) {
  if (s == "one") return RhoKind::one;
  if (s == "softplus") return RhoKind::softplus;
  throw std::invalid_argument("unknown rho kind: " + s);
}

/// One module of a GradNet-M: rho(phi(z)) W^T sigma(z) with z = W x + b and
/// sigma = grad phi.
struct GradNetModule {
  Matrix w;
  Vector b;
  Cloned<Activation> sigma;
  RhoKind rho = RhoKind::one;
  double coeff = 1.0;
};

/// a + sum_m c_m rho_m(phi_m(z_m)) W_m^T sigma_m(z_m)
///
/// The coefficients c_m combine modules linearly; in monotone mode they are
/// constrained nonnegative (conical combination).
class GradNetM final : public Network {
 public:
  GradNetM(Eigen::Index d, std::vector<GradNetModule> modules, Vector a, ConstraintMode mode = ConstraintMode::none)
      : d_(d), modules_(std::move(modules)), a_(std::move(a)), mode_(mode) {
    require_dims(a_.size() == d_, "gradnet_m: bias a must match the input dimension");
    for (std::size_t m = 0; m < modules_.size(); ++m) {
      auto& mod = modules_[m];
      require_dims(mod.w.cols() == d_, "gradnet_m: module weight has wrong input dimension");
      require_dims(mod.b.size() == mod.w.rows(), "gradnet_m: module bias must match hidden size");
      if (!mod.sigma->antiderivative_known())
        throw std::invalid_argument("gradnet_m: module " + std::to_string(m) + " activation " +
                                    to_string(mod.sigma->kind()) + " has no known antiderivative phi");
      if (mode_ == ConstraintMode::monotone) {
        detail::require_monotone_activation(*mod.sigma, "gradnet_m");
        mod.sigma->set_constrained(true);
        if (mod.coeff < 0.0) throw std::invalid_argument("gradnet_m: monotone mode requires nonnegative coefficients");
      }
    }
  }

  NetworkKind kind() const override { return NetworkKind::gradnet_m; }
  Eigen::Index dim() const override { return d_; }
  ConstraintMode mode() const override { return mode_; }
  const std::vector<GradNetModule>& modules() const { return modules_; }
  std::vector<GradNetModule>& modules() { return modules_; }
  const Vector& bias() const { return a_; }

  Matrix forward(const Matrix& x) const override {
    detail::require_input(x, d_);
    Matrix y = a_.replicate(1, x.cols());
    for (const auto& mod : modules_) {
      Matrix z = (mod.w * x).colwise() + mod.b;
      Matrix u = mod.w.transpose() * mod.sigma->eval(z);
      if (mod.rho == RhoKind::one) {
        y += mod.coeff * u;
      } else {
        RowVector r = rho_value(mod.sigma->antiderivative(z));
        y += mod.coeff * (u.array().rowwise() * r.array()).matrix();
      }
    }
    return y;
  }

  Matrix jacobian(const Vector& x) const override {
    Matrix j = Matrix::Zero(d_, d_);
    for (const auto& mod : modules_) {
      Vector z = mod.w * x + mod.b;
      Matrix inner = mod.w.transpose() * mod.sigma->jacobian(z) * mod.w;
      if (mod.rho == RhoKind::one) {
        j += mod.coeff * inner;
      } else {
        const double phi = mod.sigma->potential(z);
        Vector u = mod.w.transpose() * mod.sigma->value(z);
        j += mod.coeff * (rho_derivative(phi) * u * u.transpose() + rho_value(phi) * inner);
      }
    }
    return j;
  }

  bool has_potential() const override {
    for (const auto& mod : modules_)
      if (mod.rho != RhoKind::one) return false;
    return true;
  }
  RowVector potential(const Matrix& x) const override {
    if (!has_potential()) Network::potential(x);
    detail::require_input(x, d_);
    RowVector p = a_.transpose() * x;
    for (const auto& mod : modules_) {
      Matrix z = (mod.w * x).colwise() + mod.b;
      p += mod.coeff * mod.sigma->antiderivative(z);
    }
    return p;
  }

  std::size_t num_params() const override {
    std::size_t n = detail::count(a_.size());
    for (const auto& mod : modules_) n += module_size(mod);
    return n;
  }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    out.push_back({prefix + "a", as_span(a_), Constraint::free});
    const Constraint ctag = mode_ == ConstraintMode::monotone ? Constraint::nonneg : Constraint::free;
    for (std::size_t m = 0; m < modules_.size(); ++m) {
      auto& mod = modules_[m];
      const std::string p = prefix + "module" + std::to_string(m) + ".";
      out.push_back({p + "W", as_span(mod.w), Constraint::free});
      out.push_back({p + "b", as_span(mod.b), Constraint::free});
      mod.sigma->collect_params(out, p + "sigma.");
      out.push_back({p + "coeff", as_span(mod.coeff), ctag});
    }
  }

  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    backward_from(x, module_states(x), gy, grad);
  }

  Matrix forward_backward(const Matrix& x, const OutputSeed& seed, std::span<double> grad) const override {
    detail::require_input(x, d_);
    std::vector<ModuleState> st = module_states(x);
    Matrix y = a_.replicate(1, x.cols());
    for (std::size_t m = 0; m < modules_.size(); ++m) {
      if (modules_[m].rho == RhoKind::one) y += modules_[m].coeff * st[m].u;
      else y += modules_[m].coeff * (st[m].u.array().rowwise() * rho_value(st[m].phi).array()).matrix();
    }
    backward_from(x, st, seed(y), grad);
    return y;
  }

  void potential_backward(const Matrix& x, const RowVector& gp, std::span<double> grad) const override {
    if (!has_potential()) Network::potential_backward(x, gp, grad);
    detail::grad_vector(grad, 0, d_) += x * gp.transpose();
    std::size_t off = detail::count(d_);
    for (const auto& mod : modules_) {
      const Eigen::Index h = mod.w.rows();
      const std::size_t ow = off;
      const std::size_t ob = ow + detail::count(mod.w.size());
      const std::size_t os = ob + detail::count(h);
      const std::size_t oc = os + mod.sigma->num_params();
      Matrix z = (mod.w * x).colwise() + mod.b;
      grad[oc] += mod.sigma->antiderivative(z).dot(gp);
      RowVector cgp = mod.coeff * gp;
      Matrix gz = mod.sigma->eval(z).array().rowwise() * cgp.array();
      detail::grad_matrix(grad, ow, h, d_) += gz * x.transpose();
      detail::grad_vector(grad, ob, h) += gz.rowwise().sum();
      mod.sigma->antiderivative_param_vjp(z, cgp, grad.subspan(os, mod.sigma->num_params()));
      off = oc + 1;
    }
  }

  json spec() const override {
    json mods = json::array();
    for (const auto& mod : modules_)
      mods.push_back({{"hidden", mod.w.rows()}, {"activation", mod.sigma->spec()}, {"rho", to_string(mod.rho)}});
    return {{"kind", "gradnet_m"}, {"d", d_}, {"mode", to_string(mode_)}, {"modules", mods}};
  }
  std::unique_ptr<Network> clone() const override { return std::make_unique<GradNetM>(*this); }

 private:
  struct ModuleState {
    Matrix z;
    ActivationCache c;
    Matrix u;       // W^T sigma(z)
    RowVector phi;  // psi(z), only for rho = softplus
  };

  std::vector<ModuleState> module_states(const Matrix& x) const {
    std::vector<ModuleState> st(modules_.size());
    for (std::size_t m = 0; m < modules_.size(); ++m) {
      const auto& mod = modules_[m];
      st[m].z.noalias() = mod.w * x;
      st[m].z.colwise() += mod.b;
      st[m].c = mod.sigma->evaluate(st[m].z);
      st[m].u.noalias() = mod.w.transpose() * st[m].c.value;
      if (mod.rho != RhoKind::one) st[m].phi = mod.sigma->antiderivative(st[m].z);
    }
    return st;
  }

  void backward_from(const Matrix& x, const std::vector<ModuleState>& st, const Matrix& gy,
                     std::span<double> grad) const {
    detail::grad_vector(grad, 0, d_) += gy.rowwise().sum();
    std::size_t off = detail::count(d_);
    for (std::size_t m = 0; m < modules_.size(); ++m) {
      const auto& mod = modules_[m];
      const Matrix& z = st[m].z;
      const Matrix& s = st[m].c.value;
      const Matrix& u = st[m].u;
      const Eigen::Index h = mod.w.rows();
      const std::size_t ow = off;
      const std::size_t ob = ow + detail::count(mod.w.size());
      const std::size_t os = ob + detail::count(h);
      const std::size_t oc = os + mod.sigma->num_params();

      Matrix gz;
      Matrix gu;
      if (mod.rho == RhoKind::one) {
        grad[oc] += gy.cwiseProduct(u).sum();
        gu = mod.coeff * gy;
      } else {
        const RowVector& phi = st[m].phi;
        RowVector r = rho_value(phi);
        RowVector gyu = gy.cwiseProduct(u).colwise().sum();
        grad[oc] += gyu.dot(r);
        gu = mod.coeff * (gy.array().rowwise() * r.array()).matrix();
        RowVector gphi = mod.coeff * gyu.cwiseProduct(rho_derivative(phi));
        gz = s.array().rowwise() * gphi.array();
        mod.sigma->antiderivative_param_vjp(z, gphi, grad.subspan(os, mod.sigma->num_params()));
      }
      Matrix gs;
      gs.noalias() = mod.w * gu;
      Matrix gsz = mod.sigma->backward_cached(z, st[m].c, gs, grad.subspan(os, mod.sigma->num_params()));
      if (gz.size() == 0) gz = std::move(gsz);
      else gz += gsz;
      auto gw = detail::grad_matrix(grad, ow, h, d_);
      gw.noalias() += s * gu.transpose();
      gw.noalias() += gz * x.transpose();
      detail::grad_vector(grad, ob, h) += gz.rowwise().sum();
      off = oc + 1;
    }
  }

  static std::size_t module_size(const GradNetModule& mod) {
    return detail::count(mod.w.size() + mod.b.size()) + mod.sigma->num_params() + 1;
  }
  static RowVector rho_value(const RowVector& phi) {
    return phi.unaryExpr([](double s) { return gradnet::softplus(s); });
  }
  static RowVector rho_derivative(const RowVector& phi) {
    return phi.unaryExpr([](double s) { return gradnet::sigmoid(s); });
  }
  static double rho_value(double phi) { return gradnet::softplus(phi); }
  static double rho_derivative(double phi) { return gradnet::sigmoid(phi); }

  Eigen::Index d_;
  std::vector<GradNetModule> modules_;
  Vector a_;
  ConstraintMode mode_;
};

// ---------------------------------------------------------------------------

/// Cascaded network with a shared weight matrix W (h x d):
///   z_0 = beta_0 . Wx + b_0
///   z_l = beta_l . Wx + alpha_l . sigma_l(z_{l-1}) + b_l     (l = 1..L-1)
///   out = W^T [alpha_L . sigma_L(z_{L-1})] + b_L
/// Storage is zero-based: beta[l], bias[l] hold beta_l, b_l for l < L and
/// alpha[l], sigma[l] hold alpha_{l+1}, sigma_{l+1}.
class GradNetC final : public Network {
 public:
  GradNetC(Matrix w, std::vector<Vector> beta, std::vector<Vector> alpha, std::vector<Vector> bias, Vector b_out,
           std::vector<Cloned<Activation>> sigma, ConstraintMode mode = ConstraintMode::none)
      : w_(std::move(w)),
        beta_(std::move(beta)),
        alpha_(std::move(alpha)),
        bias_(std::move(bias)),
        b_out_(std::move(b_out)),
        sigma_(std::move(sigma)),
        mode_(mode) {
    const std::size_t L = sigma_.size();
    if (L == 0) throw std::invalid_argument("gradnet_c: at least one layer is required");
    require_dims(beta_.size() == L && alpha_.size() == L && bias_.size() == L,
                 "gradnet_c: alpha, beta, bias must have one entry per layer");
    require_dims(b_out_.size() == w_.cols(), "gradnet_c: output bias must match the input dimension");
    for (std::size_t l = 0; l < L; ++l) {
      require_dims(beta_[l].size() == hidden() && alpha_[l].size() == hidden() && bias_[l].size() == hidden(),
                   "gradnet_c: layer vectors must match the hidden size");
      if (sigma_[l]->arity() != Arity::elementwise)
        throw std::invalid_argument("gradnet_c: layer activations must be elementwise, got " +
                                    std::string(to_string(sigma_[l]->kind())));
      if (mode_ == ConstraintMode::monotone) {
        detail::require_monotone_activation(*sigma_[l], "gradnet_c");
        sigma_[l]->set_constrained(true);
        if ((alpha_[l].array() < 0.0).any() || (beta_[l].array() < 0.0).any())
          throw std::invalid_argument("gradnet_c: monotone mode requires nonnegative alpha and beta");
      }
    }
  }

  NetworkKind kind() const override { return NetworkKind::gradnet_c; }
  Eigen::Index dim() const override { return w_.cols(); }
  Eigen::Index hidden() const { return w_.rows(); }
  std::size_t layers() const { return sigma_.size(); }
  ConstraintMode mode() const override { return mode_; }
  const Matrix& weights() const { return w_; }
  std::vector<Vector>& alpha() { return alpha_; }
  std::vector<Vector>& beta() { return beta_; }
  std::vector<Vector>& bias() { return bias_; }
  Vector& output_bias() { return b_out_; }

  Matrix forward(const Matrix& x) const override {
    detail::require_input(x, dim());
    Trace tr = trace(x);
    return (w_.transpose() * tr.top).colwise() + b_out_;
  }

  /// Diagonal of D in J = W^T diag(D) W, accumulated from the output layer down.
  Vector cascade_diagonal(const Vector& x) const {
    Trace tr = trace(Matrix(x));
    const std::size_t L = layers();
    Vector acc = alpha_[L - 1].cwiseProduct(elementwise_derivative(L - 1, tr.z[L - 1]));
    Vector d = acc.cwiseProduct(beta_[L - 1]);
    for (std::size_t l = L - 1; l >= 1; --l) {
      acc = acc.cwiseProduct(alpha_[l - 1]).cwiseProduct(elementwise_derivative(l - 1, tr.z[l - 1]));
      d += acc.cwiseProduct(beta_[l - 1]);
    }
    return d;
  }

  Matrix jacobian(const Vector& x) const override {
    return w_.transpose() * cascade_diagonal(x).asDiagonal() * w_;
  }

  std::size_t num_params() const override {
    std::size_t n = detail::count(w_.size() + b_out_.size()) + 3 * layers() * detail::count(hidden());
    for (const auto& s : sigma_) n += s->num_params();
    return n;
  }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    const Constraint tag = mode_ == ConstraintMode::monotone ? Constraint::nonneg : Constraint::free;
    out.push_back({prefix + "W", as_span(w_), Constraint::free});
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::string p = prefix + "layer" + std::to_string(l) + ".";
      out.push_back({p + "beta", as_span(beta_[l]), tag});
      out.push_back({p + "alpha", as_span(alpha_[l]), tag});
      out.push_back({p + "bias", as_span(bias_[l]), Constraint::free});
      sigma_[l]->collect_params(out, p + "sigma.");
    }
    out.push_back({prefix + "b_out", as_span(b_out_), Constraint::free});
  }

  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    backward_from(x, trace(x), gy, grad);
  }

  Matrix forward_backward(const Matrix& x, const OutputSeed& seed, std::span<double> grad) const override {
    detail::require_input(x, dim());
    Trace tr = trace(x);
    Matrix y = (w_.transpose() * tr.top).colwise() + b_out_;
    backward_from(x, tr, seed(y), grad);
    return y;
  }

  json spec() const override {
    json acts = json::array();
    for (const auto& s : sigma_) acts.push_back(s->spec());
    return {{"kind", "gradnet_c"},
            {"d", dim()},
            {"hidden", hidden()},
            {"layers", layers()},
            {"mode", to_string(mode_)},
            {"activations", acts}};
  }
  std::unique_ptr<Network> clone() const override { return std::make_unique<GradNetC>(*this); }

 private:
  struct Trace {
    Matrix p;               // W x
    std::vector<Matrix> z;  // z_0 .. z_{L-1}
    std::vector<ActivationCache> c;  // sigma_{l+1}(z_l) and intermediates
    Matrix top;
  };

  Trace trace(const Matrix& x) const {
    const std::size_t L = layers();
    Trace tr;
    tr.p = w_ * x;
    tr.z.reserve(L);
    tr.c.reserve(L);
    tr.z.push_back((tr.p.array().colwise() * beta_[0].array()).matrix().colwise() + bias_[0]);
    for (std::size_t l = 1; l < L; ++l) {
      tr.c.push_back(sigma_[l - 1]->evaluate(tr.z[l - 1]));
      Matrix zl = (tr.p.array().colwise() * beta_[l].array() + tr.c[l - 1].value.array().colwise() * alpha_[l - 1].array())
                      .matrix();
      tr.z.push_back(zl.colwise() + bias_[l]);
    }
    tr.c.push_back(sigma_[L - 1]->evaluate(tr.z[L - 1]));
    tr.top = tr.c[L - 1].value.array().colwise() * alpha_[L - 1].array();
    return tr;
  }
  void backward_from(const Matrix& x, const Trace& tr, const Matrix& gy, std::span<double> grad) const {
    const Eigen::Index h = hidden();
    const std::size_t L = layers();
    std::vector<std::size_t> layer_off(L);
    std::size_t off = detail::count(w_.size());
    for (std::size_t l = 0; l < L; ++l) {
      layer_off[l] = off;
      off += 3 * detail::count(h) + sigma_[l]->num_params();
    }
    const std::size_t o_out = off;
    auto beta_g = [&](std::size_t l) { return detail::grad_vector(grad, layer_off[l], h); };
    auto alpha_g = [&](std::size_t l) { return detail::grad_vector(grad, layer_off[l] + detail::count(h), h); };
    auto bias_g = [&](std::size_t l) { return detail::grad_vector(grad, layer_off[l] + 2 * detail::count(h), h); };
    auto sigma_g = [&](std::size_t l) {
      return grad.subspan(layer_off[l] + 3 * detail::count(h), sigma_[l]->num_params());
    };

    detail::grad_vector(grad, o_out, dim()) += gy.rowwise().sum();
    Matrix gw = tr.top * gy.transpose();
    Matrix gtop = w_ * gy;

    // Output layer: top = alpha_L . sigma_L(z_{L-1}).
    alpha_g(L - 1) += gtop.cwiseProduct(tr.c[L - 1].value).rowwise().sum();
    Matrix gs = gtop.array().colwise() * alpha_[L - 1].array();
    Matrix gz = sigma_[L - 1]->backward_cached(tr.z[L - 1], tr.c[L - 1], gs, sigma_g(L - 1));

    Matrix gp = Matrix::Zero(h, x.cols());
    for (std::size_t l = L - 1; l >= 1; --l) {
      beta_g(l) += gz.cwiseProduct(tr.p).rowwise().sum();
      gp += (gz.array().colwise() * beta_[l].array()).matrix();
      bias_g(l) += gz.rowwise().sum();
      alpha_g(l - 1) += gz.cwiseProduct(tr.c[l - 1].value).rowwise().sum();
      gs = gz.array().colwise() * alpha_[l - 1].array();
      gz = sigma_[l - 1]->backward_cached(tr.z[l - 1], tr.c[l - 1], gs, sigma_g(l - 1));
    }
    beta_g(0) += gz.cwiseProduct(tr.p).rowwise().sum();
    gp += (gz.array().colwise() * beta_[0].array()).matrix();
    bias_g(0) += gz.rowwise().sum();

    gw += gp * x.transpose();
    detail::grad_matrix(grad, 0, h, dim()) += gw;
  }


  Vector elementwise_derivative(std::size_t l, const Matrix& z) const {
    return sigma_[l]->jvp(z, Matrix::Ones(z.rows(), z.cols())).col(0);
  }

  Matrix w_;
  std::vector<Vector> beta_;
  std::vector<Vector> alpha_;
  std::vector<Vector> bias_;
  Vector b_out_;
  std::vector<Cloned<Activation>> sigma_;
  ConstraintMode mode_;
};

// ---------------------------------------------------------------------------
// Wrappers and compositions.

/// g1(x) - g2(x): the difference of two (monotone) gradient networks.
class Difference final : public Network {
 public:
  Difference(NetworkPtr g1, NetworkPtr g2) : g1_(std::move(g1)), g2_(std::move(g2)) {
    require_dims(g1_->dim() == g2_->dim(), "compose_difference: networks have different dimensions");
  }
  NetworkKind kind() const override { return NetworkKind::difference; }
  Eigen::Index dim() const override { return g1_->dim(); }
  ConstraintMode mode() const override { return ConstraintMode::none; }
  Matrix forward(const Matrix& x) const override { return g1_->forward(x) - g2_->forward(x); }
  Matrix jacobian(const Vector& x) const override { return g1_->jacobian(x) - g2_->jacobian(x); }
  bool has_potential() const override { return g1_->has_potential() && g2_->has_potential(); }
  RowVector potential(const Matrix& x) const override { return g1_->potential(x) - g2_->potential(x); }
  std::size_t num_params() const override { return g1_->num_params() + g2_->num_params(); }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    g1_->collect_params(out, prefix + "g1.");
    g2_->collect_params(out, prefix + "g2.");
  }
  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    const std::size_t n1 = g1_->num_params();
    g1_->backward(x, gy, grad.subspan(0, n1));
    g2_->backward(x, -gy, grad.subspan(n1));
  }
  void potential_backward(const Matrix& x, const RowVector& gp, std::span<double> grad) const override {
    const std::size_t n1 = g1_->num_params();
    g1_->potential_backward(x, gp, grad.subspan(0, n1));
    g2_->potential_backward(x, -gp, grad.subspan(n1));
  }
  json spec() const override { return {{"kind", "difference"}, {"g1", g1_->spec()}, {"g2", g2_->spec()}}; }
  std::unique_ptr<Network> clone() const override { return std::make_unique<Difference>(*this); }

 private:
  Cloned<Network> g1_;
  Cloned<Network> g2_;
};

/// f(x) + mu x: gradient of a mu-strongly convex potential when f is monotone.
class StronglyConvexWrap final : public Network {
 public:
  StronglyConvexWrap(NetworkPtr f, double mu) : f_(std::move(f)), mu_(mu) {
    if (!(mu > 0.0)) throw std::invalid_argument("wrap_strongly_convex: mu must be positive");
  }
  NetworkKind kind() const override { return NetworkKind::strongly_convex_wrap; }
  Eigen::Index dim() const override { return f_->dim(); }
  ConstraintMode mode() const override { return f_->mode(); }
  double mu() const { return mu_; }
  Matrix forward(const Matrix& x) const override { return f_->forward(x) + mu_ * x; }
  Matrix jacobian(const Vector& x) const override {
    Matrix j = f_->jacobian(x);
    j.diagonal().array() += mu_;
    return j;
  }
  bool has_potential() const override { return f_->has_potential(); }
  RowVector potential(const Matrix& x) const override {
    return f_->potential(x) + 0.5 * mu_ * x.colwise().squaredNorm();
  }
  std::size_t num_params() const override { return f_->num_params(); }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    f_->collect_params(out, prefix + "f.");
  }
  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    f_->backward(x, gy, grad);
  }
  void potential_backward(const Matrix& x, const RowVector& gp, std::span<double> grad) const override {
    f_->potential_backward(x, gp, grad);
  }
  json spec() const override { return {{"kind", "strongly_convex_wrap"}, {"mu", mu_}, {"f", f_->spec()}}; }
  std::unique_ptr<Network> clone() const override { return std::make_unique<StronglyConvexWrap>(*this); }

 private:
  Cloned<Network> f_;
  double mu_;
};

/// L x - f(x): monotone whenever L bounds the spectral norm of J_f. The bound
/// is the caller's contract; gradcheck::estimate_lipschitz can audit it.
class LipschitzFlip final : public Network {
 public:
  LipschitzFlip(NetworkPtr f, double lipschitz) : f_(std::move(f)), l_(lipschitz) {}
  NetworkKind kind() const override { return NetworkKind::lipschitz_flip; }
  Eigen::Index dim() const override { return f_->dim(); }
  ConstraintMode mode() const override { return ConstraintMode::monotone; }
  double lipschitz() const { return l_; }
  Matrix forward(const Matrix& x) const override { return l_ * x - f_->forward(x); }
  Matrix jacobian(const Vector& x) const override {
    Matrix j = -f_->jacobian(x);
    j.diagonal().array() += l_;
    return j;
  }
  bool has_potential() const override { return f_->has_potential(); }
  RowVector potential(const Matrix& x) const override {
    return 0.5 * l_ * x.colwise().squaredNorm() - f_->potential(x);
  }
  std::size_t num_params() const override { return f_->num_params(); }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    f_->collect_params(out, prefix + "f.");
  }
  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    f_->backward(x, -gy, grad);
  }
  void potential_backward(const Matrix& x, const RowVector& gp, std::span<double> grad) const override {
    f_->potential_backward(x, -gp, grad);
  }
  json spec() const override { return {{"kind", "lipschitz_flip"}, {"L", l_}, {"f", f_->spec()}}; }
  std::unique_ptr<Network> clone() const override { return std::make_unique<LipschitzFlip>(*this); }

 private:
  Cloned<Network> f_;
  double l_;
};

/// sum_k c_k f_k(x) with learnable coefficients; conical (c_k >= 0) in monotone mode.
class LinearCombination final : public Network {
 public:
  LinearCombination(std::vector<NetworkPtr> nets, Vector coeffs, ConstraintMode mode = ConstraintMode::none)
      : coeffs_(std::move(coeffs)), mode_(mode) {
    if (nets.empty()) throw std::invalid_argument("linear_combination: at least one network is required");
    require_dims(static_cast<Eigen::Index>(nets.size()) == coeffs_.size(),
                 "linear_combination: one coefficient per network is required");
    const Eigen::Index d = nets.front()->dim();
    for (auto& n : nets) {
      require_dims(n->dim() == d, "linear_combination: networks have different dimensions");
      if (mode_ == ConstraintMode::monotone && n->mode() != ConstraintMode::monotone)
        throw std::invalid_argument("linear_combination: conical combination requires monotone members");
      nets_.emplace_back(std::move(n));
    }
    if (mode_ == ConstraintMode::monotone && (coeffs_.array() < 0.0).any())
      throw std::invalid_argument("linear_combination: conical combination requires nonnegative coefficients");
  }
  NetworkKind kind() const override { return NetworkKind::linear_combination; }
  Eigen::Index dim() const override { return nets_.front()->dim(); }
  ConstraintMode mode() const override { return mode_; }
  const Vector& coefficients() const { return coeffs_; }

  Matrix forward(const Matrix& x) const override {
    Matrix y = Matrix::Zero(dim(), x.cols());
    for (std::size_t k = 0; k < nets_.size(); ++k) y += coeffs_[static_cast<Eigen::Index>(k)] * nets_[k]->forward(x);
    return y;
  }
  Matrix jacobian(const Vector& x) const override {
    Matrix j = Matrix::Zero(dim(), dim());
    for (std::size_t k = 0; k < nets_.size(); ++k)
      j += coeffs_[static_cast<Eigen::Index>(k)] * nets_[k]->jacobian(x);
    return j;
  }
  bool has_potential() const override {
    for (const auto& n : nets_)
      if (!n->has_potential()) return false;
    return true;
  }
  RowVector potential(const Matrix& x) const override {
    RowVector p = RowVector::Zero(x.cols());
    for (std::size_t k = 0; k < nets_.size(); ++k)
      p += coeffs_[static_cast<Eigen::Index>(k)] * nets_[k]->potential(x);
    return p;
  }
  std::size_t num_params() const override {
    std::size_t n = detail::count(coeffs_.size());
    for (const auto& m : nets_) n += m->num_params();
    return n;
  }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    out.push_back({prefix + "coeffs", as_span(coeffs_),
                   mode_ == ConstraintMode::monotone ? Constraint::nonneg : Constraint::free});
    for (std::size_t k = 0; k < nets_.size(); ++k) nets_[k]->collect_params(out, prefix + "net" + std::to_string(k) + ".");
  }
  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    std::size_t off = detail::count(coeffs_.size());
    for (std::size_t k = 0; k < nets_.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      grad[k] += gy.cwiseProduct(nets_[k]->forward(x)).sum();
      const std::size_t n = nets_[k]->num_params();
      nets_[k]->backward(x, coeffs_[kk] * gy, grad.subspan(off, n));
      off += n;
    }
  }
  void potential_backward(const Matrix& x, const RowVector& gp, std::span<double> grad) const override {
    std::size_t off = detail::count(coeffs_.size());
    for (std::size_t k = 0; k < nets_.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      grad[k] += nets_[k]->potential(x).dot(gp);
      const std::size_t n = nets_[k]->num_params();
      nets_[k]->potential_backward(x, coeffs_[kk] * gp, grad.subspan(off, n));
      off += n;
    }
  }
  json spec() const override {
    json members = json::array();
    for (const auto& n : nets_) members.push_back(n->spec());
    return {{"kind", "linear_combination"}, {"mode", to_string(mode_)}, {"members", members}};
  }
  std::unique_ptr<Network> clone() const override { return std::make_unique<LinearCombination>(*this); }

 private:
  std::vector<Cloned<Network>> nets_;
  Vector coeffs_;
  ConstraintMode mode_;
};

/// h(x) = gamma(G(x) + beta) g(x), where G is the tracked potential of g.
///
/// gamma is an elementwise scalar activation, optionally composed with an
/// outer softplus. Monotone mode requires a monotone g and gamma built as
/// softplus(tau) with tau nondecreasing, so gamma is nondecreasing and
/// nonnegative.
class Transformed final : public Network {
 public:
  Transformed(NetworkPtr g, ActivationPtr gamma, double beta, bool outer_softplus,
              ConstraintMode mode = ConstraintMode::none)
      : g_(std::move(g)), gamma_(std::move(gamma)), beta_(beta), outer_softplus_(outer_softplus), mode_(mode) {
    if (!g_->has_potential())
      throw std::invalid_argument("compose_transformed: inner network kind " + std::string(to_string(g_->kind())) +
                                  " has no tracked potential");
    if (gamma_->arity() != Arity::elementwise)
      throw std::invalid_argument("compose_transformed: gamma must be a scalar (elementwise) activation");
    if (mode_ == ConstraintMode::monotone) {
      if (g_->mode() != ConstraintMode::monotone)
        throw std::invalid_argument("compose_transformed: monotone mode requires a monotone inner network");
      if (!outer_softplus_)
        throw std::invalid_argument("compose_transformed: monotone mode requires gamma = softplus(tau)");
      detail::require_monotone_activation(*gamma_, "compose_transformed");
      gamma_->set_constrained(true);
    }
  }

  NetworkKind kind() const override { return NetworkKind::transformed; }
  Eigen::Index dim() const override { return g_->dim(); }
  ConstraintMode mode() const override { return mode_; }

  /// gamma(s) and gamma'(s) for a row of scalars.
  std::pair<RowVector, RowVector> gate(const RowVector& s) const {
    Matrix sm = s;
    RowVector tau = gamma_->eval(sm);
    RowVector dtau = gamma_->jvp(sm, Matrix::Ones(1, s.size()));
    if (!outer_softplus_) return {tau, dtau};
    RowVector val = tau.unaryExpr([](double v) { return gradnet::softplus(v); });
    RowVector sig = tau.unaryExpr([](double v) { return gradnet::sigmoid(v); });
    return {val, sig.cwiseProduct(dtau)};
  }

  Matrix forward(const Matrix& x) const override {
    RowVector s = g_->potential(x).array() + beta_;
    auto [gam, dgam] = gate(s);
    return g_->forward(x).array().rowwise() * gam.array();
  }

  Matrix jacobian(const Vector& x) const override {
    Matrix xm = x;
    RowVector s = g_->potential(xm).array() + beta_;
    auto [gam, dgam] = gate(s);
    Vector gx = g_->forward(xm).col(0);
    return dgam[0] * gx * gx.transpose() + gam[0] * g_->jacobian(x);
  }

  std::size_t num_params() const override { return g_->num_params() + gamma_->num_params() + 1; }
  void collect_params(std::vector<ParamSegment>& out, const std::string& prefix) override {
    g_->collect_params(out, prefix + "g.");
    gamma_->collect_params(out, prefix + "gamma.");
    out.push_back({prefix + "beta", as_span(beta_), Constraint::free});
  }

  void backward(const Matrix& x, const Matrix& gy, std::span<double> grad) const override {
    const std::size_t ng = g_->num_params();
    const std::size_t na = gamma_->num_params();
    RowVector s = g_->potential(x).array() + beta_;
    auto [gam, dgam] = gate(s);
    Matrix gx = g_->forward(x);
    RowVector gyg = gy.cwiseProduct(gx).colwise().sum();
    RowVector gs = gyg.cwiseProduct(dgam);
    g_->backward(x, (gy.array().rowwise() * gam.array()).matrix(), grad.subspan(0, ng));
    g_->potential_backward(x, gs, grad.subspan(0, ng));
    // d gamma / d theta = outer'(tau) d tau / d theta
    RowVector w = gyg;
    if (outer_softplus_) {
      Matrix sm = s;
      RowVector tau = gamma_->eval(sm);
      w = w.cwiseProduct(tau.unaryExpr([](double v) { return gradnet::sigmoid(v); }));
    }
    gamma_->eval_param_vjp(Matrix(s), Matrix(w), grad.subspan(ng, na));
    grad[ng + na] += gs.sum();
  }

  json spec() const override {
    return {{"kind", "transformed"},
            {"mode", to_string(mode_)},
            {"outer_softplus", outer_softplus_},
            {"gamma", gamma_->spec()},
            {"g", g_->spec()}};
  }
  std::unique_ptr<Network> clone() const override { return std::make_unique<Transformed>(*this); }

 private:
  Cloned<Network> g_;
  Cloned<Activation> gamma_;
  double beta_;
  bool outer_softplus_;
  ConstraintMode mode_;
};

// ---------------------------------------------------------------------------
// Composition entry points.

inline NetworkPtr compose_difference(NetworkPtr g1, NetworkPtr g2) {
  return std::make_unique<Difference>(std::move(g1), std::move(g2));
}
inline NetworkPtr wrap_strongly_convex(NetworkPtr f, double mu) {
  return std::make_unique<StronglyConvexWrap>(std::move(f), mu);
}
inline NetworkPtr wrap_lipschitz_flip(NetworkPtr f, double lipschitz) {
  return std::make_unique<LipschitzFlip>(std::move(f), lipschitz);
}
inline NetworkPtr compose_transformed(NetworkPtr g, ActivationPtr gamma, double beta, bool outer_softplus,
                                      ConstraintMode mode = ConstraintMode::none) {
  return std::make_unique<Transformed>(std::move(g), std::move(gamma), beta, outer_softplus, mode);
}
inline NetworkPtr linear_combination(std::vector<NetworkPtr> nets, Vector coeffs,
                                     ConstraintMode mode = ConstraintMode::none) {
  return std::make_unique<LinearCombination>(std::move(nets), std::move(coeffs), mode);
}

inline double potential(const Network& net, const Vector& x) { return net.potential_at(x); }

/// The zero map R^d -> R^d as a single-layer network (W = 0, b = 0).
inline NetworkPtr make_zero_network(Eigen::Index d) {
  return std::make_unique<SingleLayer>(Matrix::Zero(1, d), Vector::Zero(1), Vector::Zero(d), make_identity(),
                                       ConstraintMode::monotone);
}

/// The identity map x -> x with potential |x|^2 / 2.
inline NetworkPtr make_identity_network(Eigen::Index d) {
  return std::make_unique<SingleLayer>(Matrix::Identity(d, d), Vector::Zero(d), Vector::Zero(d), make_identity(),
                                       ConstraintMode::monotone);
}

}  // namespace gradnet

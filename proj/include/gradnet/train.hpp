#pragma once

// MSE regression of network outputs onto target fields: loss, parameter
// gradients via the networks' reverse passes, a finite-difference check of
// those gradients, Adam with projection, and the training loop.

#include "gradnet/networks.hpp"
#include "gradnet/numerics.hpp"
#include "gradnet/params.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace gradnet {

/// Mean over batch and coordinates of the squared error.
inline double loss_mse(const Matrix& pred, const Matrix& target) {
  require_dims(pred.rows() == target.rows() && pred.cols() == target.cols(),
               "loss_mse: prediction is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                   ", target is " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  if (pred.size() == 0) return 0.0;
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

struct LossAndGradient {
  double loss = 0.0;
  Vector grad;
};

/// Loss and its gradient with respect to the flat parameter vector. The batch
/// is processed in column chunks so hidden-layer temporaries stay cache-sized.
inline LossAndGradient param_gradients(Network& net, const Matrix& x, const Matrix& target,
                                       Eigen::Index chunk = 64) {
  require_dims(target.cols() == x.cols() && target.rows() == net.dim(),
               "param_gradients: target is " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()) +
                   ", expected " + std::to_string(net.dim()) + "x" + std::to_string(x.cols()));
  LossAndGradient out;
  out.grad = Vector::Zero(static_cast<Eigen::Index>(net.num_params()));
  if (target.size() == 0) return out;
  const double scale = 2.0 / static_cast<double>(target.size());
  const std::span<double> g(out.grad.data(), static_cast<std::size_t>(out.grad.size()));
  double sse = 0.0;
  chunk = std::max<Eigen::Index>(chunk, 1);
  for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, x.cols() - start);
    const auto t = target.middleCols(start, n);
    auto seed = [&](const Matrix& y) -> Matrix {
      Matrix r = y - t;
      sse += r.squaredNorm();
      return scale * r;
    };
    net.forward_backward(x.middleCols(start, n), seed, g);
  }
  out.loss = sse / static_cast<double>(target.size());
  if (!out.grad.allFinite()) {
    ParamView view = net.params();
    for (Eigen::Index k = 0; k < out.grad.size(); ++k)
      if (!std::isfinite(out.grad[k]))
        throw NumericError("param_gradients: non-finite gradient in segment " +
                           view.segment_of(static_cast<std::size_t>(k)));
  }
  return out;
}

struct GradientCheck {
  double relative_error = 0.0;  // ||g_analytic - g_fd|| / max(||g_fd||, floor)
  double max_abs_error = 0.0;
  std::string worst_segment;
  std::size_t num_params = 0;
};

/// Compare analytic parameter gradients against central differences over the parameters.
inline GradientCheck check_param_gradients(Network& net, const Matrix& x, const Matrix& target, double h = 1e-6) {
  ParamView view = net.params();
  const Vector theta = view.flatten();
  const Vector analytic = param_gradients(net, x, target).grad;
  Vector fd(theta.size());
  Vector probe = theta;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double step = h * std::max(1.0, std::abs(theta[k]));
    probe[k] = theta[k] + step;
    view.unflatten(probe);
    const double lp = loss_mse(net.forward(x), target);
    probe[k] = theta[k] - step;
    view.unflatten(probe);
    const double lm = loss_mse(net.forward(x), target);
    probe[k] = theta[k];
    fd[k] = (lp - lm) / (2.0 * step);
  }
  view.unflatten(theta);
  GradientCheck gc;
  gc.num_params = view.size();
  const Vector diff = analytic - fd;
  gc.relative_error = diff.norm() / std::max(fd.norm(), 1e-8);
  if (diff.size() > 0) {
    Eigen::Index arg = 0;
    gc.max_abs_error = diff.cwiseAbs().maxCoeff(&arg);
    gc.worst_segment = view.segment_of(static_cast<std::size_t>(arg));
  }
  return gc;
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::Index batch_size = 1000;
  std::size_t iterations = 10000;  // used when batches are sampled fresh
  std::size_t epochs = 200;        // used with a fixed training set
  std::uint64_t seed = 0;
  bool projection = true;
  bool check_constraints = true;
  std::size_t eval_interval = 100;
  double divergence_threshold = 1e6;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("learning_rate must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("Adam eps must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("eval_interval must be >= 1");
  }
};

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(Vector::Zero(static_cast<Eigen::Index>(n))), v(m) {}
};

/// One bias-corrected Adam update, followed by projection of nonneg-tagged entries.
inline void adam_step(ParamView& params, const Vector& grad, AdamState& state, const TrainConfig& cfg) {
  require_dims(static_cast<std::size_t>(grad.size()) == params.size() && state.m.size() == grad.size() &&
                   state.v.size() == grad.size(),
               "adam_step: gradient, state and parameter sizes differ");
  ++state.t;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  Vector theta = params.flatten();
  theta.array() -= cfg.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
  params.unflatten(theta);
  if (cfg.projection) params.project();
}

// ---------------------------------------------------------------------------

struct Dataset {
  Matrix x;  // d_in x n
  Matrix y;  // d_out x n

  Eigen::Index size() const { return x.cols(); }
};

/// Draws a fresh batch of n (input, target) pairs.
using BatchSampler = std::function<Dataset(Eigen::Index n, std::mt19937_64& rng)>;

struct CurvePoint {
  std::size_t iteration = 0;
  double train_mse = 0.0;  // mean minibatch loss since the previous point
  double val_mse = 0.0;
};

struct TrainReport {
  std::vector<CurvePoint> curve;
  std::vector<double> losses;  // every minibatch loss
  double final_val_mse = std::numeric_limits<double>::quiet_NaN();
  std::size_t iterations_run = 0;
  bool diverged = false;
  std::string error;
  double wall_time = 0.0;  // seconds; not part of any deterministic output

  /// Median of the last 10% of minibatch losses is below the median of the first 10%.
  bool loss_decreased() const {
    if (losses.size() < 10) return false;
    const std::size_t k = losses.size() / 10;
    auto median = [](std::vector<double> v) {
      std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
      return v[v.size() / 2];
    };
    return median({losses.end() - static_cast<std::ptrdiff_t>(k), losses.end()}) <
           median({losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(k)});
  }
};

/// MSE of net on a dataset, evaluated in chunks.
inline double evaluate_mse(const Network& net, const Dataset& data, Eigen::Index chunk = 2000) {
  if (data.size() == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index start = 0; start < data.size(); start += chunk) {
    const Eigen::Index n = std::min(chunk, data.size() - start);
    sum += (net.forward(data.x.middleCols(start, n)) - data.y.middleCols(start, n)).squaredNorm();
  }
  return sum / static_cast<double>(data.y.size());
}

/// Where minibatches come from: a fixed training set iterated in shuffled
/// epochs, or a sampler queried afresh every iteration.
struct TrainSource {
  std::optional<Dataset> fixed;
  BatchSampler sampler;
};

namespace detail {

class MinibatchStream {
 public:
  MinibatchStream(const TrainSource& src, const TrainConfig& cfg, std::mt19937_64& rng)
      : src_(src), cfg_(cfg), rng_(rng) {
    if (src_.fixed) {
      order_.resize(static_cast<std::size_t>(src_.fixed->size()));
      std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    }
  }

  std::size_t total_iterations() const {
    if (!src_.fixed) return cfg_.iterations;
    const auto n = static_cast<std::size_t>(src_.fixed->size());
    const auto b = static_cast<std::size_t>(cfg_.batch_size);
    return cfg_.epochs * ((n + b - 1) / b);
  }

  Dataset next() {
    if (!src_.fixed) return src_.sampler(cfg_.batch_size, rng_);
    const Dataset& data = *src_.fixed;
    if (pos_ == 0) std::shuffle(order_.begin(), order_.end(), rng_);
    const std::size_t n = std::min(static_cast<std::size_t>(cfg_.batch_size), order_.size() - pos_);
    Dataset b{Matrix(data.x.rows(), static_cast<Eigen::Index>(n)), Matrix(data.y.rows(), static_cast<Eigen::Index>(n))};
    for (std::size_t k = 0; k < n; ++k) {
      b.x.col(static_cast<Eigen::Index>(k)) = data.x.col(order_[pos_ + k]);
      b.y.col(static_cast<Eigen::Index>(k)) = data.y.col(order_[pos_ + k]);
    }
    pos_ += n;
    if (pos_ >= order_.size()) pos_ = 0;
    return b;
  }

 private:
  const TrainSource& src_;
  const TrainConfig& cfg_;
  std::mt19937_64& rng_;
  std::vector<Eigen::Index> order_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Train `net` in place. Deterministic given cfg.seed and the initial parameters.
inline TrainReport train_loop(Network& net, const TrainSource& source, const Dataset& validation,
                              const TrainConfig& cfg) {
  cfg.validate();
  if (!source.fixed && !source.sampler) throw std::invalid_argument("train_loop: no training data source");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  detail::MinibatchStream stream(source, cfg, rng);
  ParamView view = net.params();
  AdamState state(view.size());
  TrainReport rep;
  const std::size_t total = stream.total_iterations();
  rep.losses.reserve(total);
  double window_sum = 0.0;
  std::size_t window_n = 0;

  for (std::size_t it = 1; it <= total; ++it) {
    Dataset batch = stream.next();
    LossAndGradient lg;
    try {
      lg = param_gradients(net, batch.x, batch.y);
    } catch (const NumericError& e) {
      rep.diverged = true;
      rep.error = e.what();
      break;
    }
    if (!std::isfinite(lg.loss) || lg.loss > cfg.divergence_threshold) {
      rep.diverged = true;
      rep.error = "training diverged at iteration " + std::to_string(it) + " (loss " + std::to_string(lg.loss) + ")";
      break;
    }
    rep.losses.push_back(lg.loss);
    window_sum += lg.loss;
    ++window_n;
    adam_step(view, lg.grad, state, cfg);
    if (cfg.check_constraints && cfg.projection && !view.constraints_hold())
      throw std::logic_error("train_loop: constraint tags violated after projection");
    rep.iterations_run = it;
    if (it % cfg.eval_interval == 0 || it == total) {
      rep.curve.push_back({it, window_sum / static_cast<double>(window_n), evaluate_mse(net, validation)});
      window_sum = 0.0;
      window_n = 0;
    }
  }
  rep.final_val_mse = rep.diverged ? std::numeric_limits<double>::quiet_NaN() : evaluate_mse(net, validation);
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace gradnet

#pragma once

// Randomly initialized network construction, reconstruction from structural
// specs, parameter-budget sizing, and the JSON model file format.

#include "gradnet/networks.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace gradnet {

using Rng = std::mt19937_64;

/// Raised when a model file cannot be parsed or does not match its structure.
class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng* rng) {
  if (rng == nullptr) return Matrix::Zero(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  // Fill in row-major order so the draw sequence does not depend on storage order.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(*rng);
  return m;
}

inline Vector uniform_vector(Eigen::Index n, double lo, double hi, Rng* rng) {
  return uniform_matrix(n, 1, lo, hi, rng).col(0);
}

/// Fan-in scaled weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Matrix init_weights(Eigen::Index rows, Eigen::Index fan_in, Rng* rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_matrix(rows, fan_in, -r, r, rng);
}

}  // namespace detail

/// Activation with initialized learnable parameters. Neural scalar units
/// start with u, v ~ U(0, 1) and beta ~ U(-1, 1), which is monotone.
inline ActivationPtr make_activation(const json& spec, Rng* rng) {
  const std::string kind = spec.at("kind").get<std::string>();
  if (kind == "neural_scalar") {
    const auto w = spec.value("width", Eigen::Index{8});
    if (w < 0) throw std::invalid_argument("neural_scalar width must be nonnegative");
    NeuralScalarParams p;
    p.u = detail::uniform_vector(w, 0.0, 1.0, rng);
    p.v = rng ? detail::uniform_vector(w, 0.0, 1.0, rng) : Vector(Vector::Ones(w));
    p.beta = detail::uniform_vector(w, -1.0, 1.0, rng);
    p.offset = 0.0;
    p.base = spec.value("base", std::string("sigmoid")) == "tanh" ? ActivationKind::tanh : ActivationKind::sigmoid;
    return neural_scalar_activation(std::move(p));
  }
  return activation_from_spec(spec);
}

inline std::size_t activation_param_count(const json& spec) {
  return make_activation(spec, nullptr)->num_params();
}

// ---------------------------------------------------------------------------
// Builders. Passing rng = nullptr yields deterministic placeholder values
// (zero weights, unit scalings) suitable for loading parameters afterwards.

inline NetworkPtr make_single_layer(Eigen::Index d, Eigen::Index hidden, const json& act, ConstraintMode mode,
                                    Rng* rng) {
  Matrix w = detail::init_weights(hidden, d, rng);
  return std::make_unique<SingleLayer>(std::move(w), Vector::Zero(hidden), Vector::Zero(d), make_activation(act, rng),
                                       mode);
}

struct ModuleSpec {
  Eigen::Index hidden = 0;
  json activation;
  RhoKind rho = RhoKind::one;
};

inline NetworkPtr make_gradnet_m(Eigen::Index d, const std::vector<ModuleSpec>& modules, ConstraintMode mode,
                                 Rng* rng) {
  std::vector<GradNetModule> mods;
  mods.reserve(modules.size());
  for (const auto& ms : modules) {
    GradNetModule m;
    m.w = detail::init_weights(ms.hidden, d, rng);
    m.b = Vector::Zero(ms.hidden);
    m.sigma = make_activation(ms.activation, rng);
    m.rho = ms.rho;
    m.coeff = 1.0;
    mods.push_back(std::move(m));
  }
  return std::make_unique<GradNetM>(d, std::move(mods), Vector::Zero(d), mode);
}

inline NetworkPtr make_gradnet_m(Eigen::Index d, std::size_t modules, Eigen::Index hidden, const json& act,
                                 RhoKind rho, ConstraintMode mode, Rng* rng) {
  return make_gradnet_m(d, std::vector<ModuleSpec>(modules, ModuleSpec{hidden, act, rho}), mode, rng);
}

/// Cascade scalings alpha, beta start at U(0, 1) so both constraint modes
/// begin from the same feasible point.
inline NetworkPtr make_gradnet_c(Eigen::Index d, Eigen::Index hidden, const std::vector<json>& acts,
                                 ConstraintMode mode, Rng* rng) {
  const std::size_t L = acts.size();
  Matrix w = detail::init_weights(hidden, d, rng);
  std::vector<Vector> beta;
  std::vector<Vector> alpha;
  std::vector<Vector> bias;
  std::vector<Cloned<Activation>> sigma;
  for (std::size_t l = 0; l < L; ++l) {
    beta.push_back(rng ? detail::uniform_vector(hidden, 0.0, 1.0, rng) : Vector(Vector::Ones(hidden)));
    alpha.push_back(rng ? detail::uniform_vector(hidden, 0.0, 1.0, rng) : Vector(Vector::Ones(hidden)));
    bias.push_back(Vector::Zero(hidden));
    sigma.emplace_back(make_activation(acts[l], rng));
  }
  return std::make_unique<GradNetC>(std::move(w), std::move(beta), std::move(alpha), std::move(bias),
                                    Vector::Zero(d), std::move(sigma), mode);
}

inline NetworkPtr make_gradnet_c(Eigen::Index d, Eigen::Index hidden, std::size_t layers, const json& act,
                                 ConstraintMode mode, Rng* rng) {
  return make_gradnet_c(d, hidden, std::vector<json>(layers, act), mode, rng);
}

/// Rebuild a network from its structural spec (the output of Network::spec()).
inline NetworkPtr network_from_spec(const json& s, Rng* rng = nullptr) {
  const std::string kind = s.at("kind").get<std::string>();
  auto mode_of = [&](const json& j) { return constraint_mode_from_string(j.value("mode", std::string("none"))); };
  if (kind == "single_layer") {
    return make_single_layer(s.at("d").get<Eigen::Index>(), s.at("hidden").get<Eigen::Index>(), s.at("activation"),
                             mode_of(s), rng);
  }
  if (kind == "gradnet_m") {
    std::vector<ModuleSpec> mods;
    for (const auto& m : s.at("modules"))
      mods.push_back({m.at("hidden").get<Eigen::Index>(), m.at("activation"),
                      rho_from_string(m.value("rho", std::string("one")))});
    return make_gradnet_m(s.at("d").get<Eigen::Index>(), mods, mode_of(s), rng);
  }
  if (kind == "gradnet_c") {
    std::vector<json> acts;
    for (const auto& a : s.at("activations")) acts.push_back(a);
    if (s.contains("layers") && s.at("layers").get<std::size_t>() != acts.size())
      throw std::invalid_argument("gradnet_c spec: layer count does not match activation list");
    return make_gradnet_c(s.at("d").get<Eigen::Index>(), s.at("hidden").get<Eigen::Index>(), acts, mode_of(s), rng);
  }
  if (kind == "difference") return compose_difference(network_from_spec(s.at("g1"), rng), network_from_spec(s.at("g2"), rng));
  if (kind == "strongly_convex_wrap")
    return wrap_strongly_convex(network_from_spec(s.at("f"), rng), s.at("mu").get<double>());
  if (kind == "lipschitz_flip")
    return wrap_lipschitz_flip(network_from_spec(s.at("f"), rng), s.at("L").get<double>());
  if (kind == "linear_combination") {
    std::vector<NetworkPtr> nets;
    for (const auto& m : s.at("members")) nets.push_back(network_from_spec(m, rng));
    Vector c = Vector::Ones(static_cast<Eigen::Index>(nets.size()));
    return linear_combination(std::move(nets), std::move(c), mode_of(s));
  }
  if (kind == "transformed") {
    return compose_transformed(network_from_spec(s.at("g"), rng), make_activation(s.at("gamma"), rng), 0.0,
                               s.value("outer_softplus", false), mode_of(s));
  }
  throw std::invalid_argument("unknown network kind: " + kind);
}

// ---------------------------------------------------------------------------
// Parameter budgets.

inline std::size_t single_layer_param_count(Eigen::Index d, Eigen::Index h, const json& act) {
  return static_cast<std::size_t>(h * d + h + d) + activation_param_count(act);
}
inline std::size_t gradnet_m_param_count(Eigen::Index d, std::size_t modules, Eigen::Index h, const json& act) {
  return static_cast<std::size_t>(d) + modules * (static_cast<std::size_t>(h * d + h) + activation_param_count(act) + 1);
}
inline std::size_t gradnet_c_param_count(Eigen::Index d, Eigen::Index h, std::size_t layers, const json& act) {
  return static_cast<std::size_t>(h * d + d) + layers * (3 * static_cast<std::size_t>(h) + activation_param_count(act));
}

struct BudgetFit {
  Eigen::Index hidden = 0;
  std::size_t params = 0;
  double relative_error = 0.0;
};

/// Hidden width whose parameter count is closest to `target`. Counts are
/// nondecreasing in the width, so a doubling search plus bisection suffices.
template <typename CountFn>
BudgetFit fit_hidden_to_budget(std::size_t target, CountFn count) {
  Eigen::Index hi = 1;
  while (count(hi) < target) hi *= 2;
  Eigen::Index lo = std::max<Eigen::Index>(1, hi / 2);
  while (hi - lo > 1) {
    const Eigen::Index mid = (lo + hi) / 2;
    if (count(mid) < target) lo = mid;
    else hi = mid;
  }
  auto err = [&](Eigen::Index h) {
    return std::abs(static_cast<double>(count(h)) - static_cast<double>(target)) / static_cast<double>(target);
  };
  const Eigen::Index best = err(lo) <= err(hi) ? lo : hi;
  return {best, count(best), err(best)};
}

// ---------------------------------------------------------------------------
// Model file format: {"format", "version", "spec", "segments", "params"}.
// Parameters are written with shortest round-trip formatting, so a
// save/load cycle reproduces every double exactly.

inline constexpr const char* kModelFormat = "gradnet-model";

inline json save_network(Network& net) {
  ParamView view = net.params();
  json segs = json::array();
  for (const auto& s : view.segments())
    segs.push_back({{"name", s.name}, {"size", s.values.size()}, {"tag", to_string(s.tag)}});
  Vector flat = view.flatten();
  std::vector<double> values(flat.data(), flat.data() + flat.size());
  return {{"format", kModelFormat}, {"version", 1}, {"spec", net.spec()}, {"segments", segs}, {"params", values}};
}

inline NetworkPtr load_network(const json& j) {
  try {
    if (j.value("format", std::string()) != kModelFormat) throw ModelFormatError("not a gradnet model file");
    NetworkPtr net = network_from_spec(j.at("spec"));
    ParamView view = net->params();
    const auto& segs = j.at("segments");
    if (segs.size() != view.segments().size())
      throw ModelFormatError("segment count does not match the network structure");
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const auto& have = view.segments()[k];
      if (segs[k].at("name").get<std::string>() != have.name ||
          segs[k].at("size").get<std::size_t>() != have.values.size() ||
          segs[k].at("tag").get<std::string>() != to_string(have.tag))
        throw ModelFormatError("segment " + std::to_string(k) + " does not match structure (expected " + have.name +
                               ")");
    }
    const auto values = j.at("params").get<std::vector<double>>();
    if (values.size() != view.size())
      throw ModelFormatError("parameter count " + std::to_string(values.size()) + " does not match structure " +
                             std::to_string(view.size()));
    view.unflatten(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
    return net;
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed model file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(std::string("invalid model structure: ") + e.what());
  }
}

inline void save_network_file(Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << save_network(net).dump(1) << '\n';
}

inline NetworkPtr load_network_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelFormatError("cannot open model file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ModelFormatError("cannot parse model file " + path + ": " + e.what());
  }
  return load_network(j);
}

}  // namespace gradnet

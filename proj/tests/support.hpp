#pragma once

// Shared helpers for the test suites: randomized networks with every
// parameter perturbed away from its initial value.

#include "gradnet/gradnet.hpp"

#include <random>
#include <string>
#include <vector>

namespace gradnet::testing {

inline Matrix random_points(Eigen::Index d, Eigen::Index n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix x(d, n);
  for (auto& v : x.reshaped()) v = u(rng);
  return x;
}

/// Add U(-scale, scale) noise to every parameter, then project onto the constraints.
inline void perturb(Network& net, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  ParamView view = net.params();
  Vector theta = view.flatten();
  for (auto& v : theta) v += u(rng);
  view.unflatten(theta);
  view.project();
}

struct ArchCase {
  std::string label;
  std::string kind;  // single_layer | gradnet_m | gradnet_c
  json activation;
  RhoKind rho = RhoKind::one;
};

/// The architecture and activation combinations the library supports in both modes.
inline std::vector<ArchCase> arch_cases() {
  return {
      {"single_layer/softmax", "single_layer", {{"kind", "softmax"}, {"t", 1.5}}},
      {"single_layer/sigmoid", "single_layer", {{"kind", "sigmoid"}}},
      {"single_layer/neural_scalar", "single_layer", {{"kind", "neural_scalar"}, {"width", 3}}},
      {"gradnet_m/softmax", "gradnet_m", {{"kind", "softmax"}, {"t", 1.0}}},
      {"gradnet_m/mix", "gradnet_m", {{"kind", "softmax_softmin_mix"}, {"t", 1.0}}},
      {"gradnet_m/sigmoid+softplus_rho", "gradnet_m", {{"kind", "sigmoid"}}, RhoKind::softplus},
      {"gradnet_m/relu_smooth", "gradnet_m", {{"kind", "relu_smooth"}, {"b", 0.1}}},
      {"gradnet_c/tanh", "gradnet_c", {{"kind", "tanh"}}},
      {"gradnet_c/scaled_tanh_mix", "gradnet_c", {{"kind", "scaled_tanh_mix"}}},
      {"gradnet_c/softplus", "gradnet_c", {{"kind", "softplus"}, {"beta", 2.0}}},
  };
}

inline NetworkPtr build_case(const ArchCase& c, Eigen::Index d, ConstraintMode mode, std::uint64_t seed,
                             Eigen::Index hidden = 5) {
  Rng rng(seed);
  NetworkPtr net;
  if (c.kind == "single_layer") net = make_single_layer(d, hidden, c.activation, mode, &rng);
  else if (c.kind == "gradnet_m") net = make_gradnet_m(d, 2, hidden, c.activation, c.rho, mode, &rng);
  else net = make_gradnet_c(d, hidden, 3, c.activation, mode, &rng);
  perturb(*net, seed ^ 0x9e3779b97f4a7c15ULL);
  return net;
}

/// Network with the default activation of its family.
inline NetworkPtr random_network(const std::string& kind, Eigen::Index d, ConstraintMode mode, std::uint64_t seed,
                                 Eigen::Index hidden = 5) {
  for (const auto& c : arch_cases())
    if (c.kind == kind) return build_case(c, d, mode, seed, hidden);
  throw std::invalid_argument("unknown kind " + kind);
}

}  // namespace gradnet::testing

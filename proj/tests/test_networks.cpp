#include "support.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>

using namespace gradnet;
using namespace gradnet::testing;
using Catch::Matchers::WithinAbs;

namespace {

double asymmetry(const Matrix& j) { return frobenius_asymmetry(j) / (1.0 + j.norm()); }

Matrix fd_jac(const Network& net, const Vector& x) { return fd_jacobian(net.as_field(), x); }

}  // namespace

TEST_CASE("single layer examples", "[networks]") {
  const Vector b{{0.3, -0.7}};
  SingleLayer zero_w(Matrix::Zero(3, 2), Vector::Zero(3), b, make_sigmoid());
  CHECK((zero_w(Vector{{4.0, -2.0}}) - b).norm() == 0.0);

  SingleLayer sig(Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2), make_sigmoid());
  CHECK((sig(Vector::Zero(2)) - Vector{{0.5, 0.5}}).norm() < 1e-15);

  SingleLayer smx(Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2), make_softmax(1.0),
                  ConstraintMode::monotone);
  CHECK((smx(Vector::Zero(2)) - Vector{{0.5, 0.5}}).norm() < 1e-15);
  const Matrix j = fd_jac(smx, Vector::Zero(2));
  CHECK(asymmetry(j) < 1e-9);
  CHECK(min_symmetric_eigenvalue(j) >= -1e-9);
}

TEST_CASE("gradnet-m examples", "[networks]") {
  std::vector<GradNetModule> mods(1);
  mods[0].w = Matrix::Identity(2, 2);
  mods[0].b = Vector::Zero(2);
  mods[0].sigma = make_softmax(1.0);
  GradNetM one(2, std::move(mods), Vector::Zero(2), ConstraintMode::monotone);
  CHECK((one(Vector::Zero(2)) - Vector{{0.5, 0.5}}).norm() < 1e-15);

  const Vector a{{1.5, -2.0, 0.25}};
  GradNetM none(3, {}, a);
  CHECK((none(Vector{{0.1, 0.2, 0.3}}) - a).norm() == 0.0);
}

TEST_CASE("gradnet-m requires activations with a known antiderivative", "[networks]") {
  std::vector<GradNetModule> mods(1);
  mods[0].w = Matrix::Identity(2, 2);
  mods[0].b = Vector::Zero(2);
  mods[0].sigma = make_softplus();
  CHECK_THROWS_AS(GradNetM(2, std::move(mods), Vector::Zero(2)), std::invalid_argument);
}

TEST_CASE("gradnet-m with constant rho has J = sum W^T J_sigma W", "[networks]") {
  auto net = random_network("gradnet_m", 4, ConstraintMode::none, 21);
  auto& m = static_cast<GradNetM&>(*net);
  const Vector x = random_points(4, 1, 5).col(0);
  Matrix expected = Matrix::Zero(4, 4);
  for (const auto& mod : m.modules()) {
    REQUIRE(mod.rho == RhoKind::one);
    expected += mod.coeff * mod.w.transpose() * mod.sigma->jacobian(mod.w * x + mod.b) * mod.w;
  }
  CHECK((m.jacobian(x) - expected).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("gradnet-c examples", "[networks]") {
  // W x = 0 for x = 0: every layer sees tanh(0) = 0 and the output is b_L.
  const Vector b_out{{0.4, -0.1}};
  GradNetC one(Matrix{{1.0, 2.0}, {-1.0, 0.5}, {0.3, 0.3}}, {Vector::Ones(3)}, {Vector::Ones(3)}, {Vector::Zero(3)},
               b_out, [] {
                 std::vector<Cloned<Activation>> s;
                 s.emplace_back(make_tanh());
                 return s;
               }());
  CHECK((one(Vector::Zero(2)) - b_out).norm() == 0.0);

  // All beta and biases zero: the cascade carries tanh(0) = 0 and the output is constant.
  auto net = random_network("gradnet_c", 3, ConstraintMode::none, 4);
  auto& c = static_cast<GradNetC&>(*net);
  for (auto& v : c.beta()) v.setZero();
  for (auto& v : c.bias()) v.setZero();
  for (const Matrix x = random_points(3, 5, 6); Eigen::Index k : {0, 1, 2, 3, 4})
    CHECK((c(x.col(k)) - c.output_bias()).norm() < 1e-15);
}

TEST_CASE("gradnet-c single layer Jacobian is W^T A J_sigma B W", "[networks]") {
  Rng rng(3);
  auto net = make_gradnet_c(3, 4, 1, json{{"kind", "tanh"}}, ConstraintMode::none, &rng);
  perturb(*net, 8);
  auto& c = static_cast<GradNetC&>(*net);
  const Vector x = random_points(3, 1, 9).col(0);
  const Vector z0 = c.beta()[0].cwiseProduct(c.weights() * x) + c.bias()[0];
  const Vector dsig = (1.0 - z0.array().tanh().square()).matrix();
  const Vector d = c.alpha()[0].cwiseProduct(dsig).cwiseProduct(c.beta()[0]);
  CHECK((c.cascade_diagonal(x) - d).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((c.jacobian(x) - c.weights().transpose() * d.asDiagonal() * c.weights()).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("gradnet-c rejects group activations", "[networks]") {
  Rng rng(1);
  CHECK_THROWS_AS(make_gradnet_c(2, 3, 2, json{{"kind", "softmax"}}, ConstraintMode::none, &rng),
                  std::invalid_argument);
}

TEST_CASE("monotone gradnet-c has a nonnegative cascade diagonal", "[networks][property]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto net = random_network("gradnet_c", 5, ConstraintMode::monotone, seed);
    const auto& c = static_cast<const GradNetC&>(*net);
    const Matrix x = random_points(5, 10, seed + 100);
    for (Eigen::Index k = 0; k < x.cols(); ++k) REQUIRE(c.cascade_diagonal(x.col(k)).minCoeff() >= 0.0);
  }
}

TEST_CASE("every architecture has a symmetric Jacobian matching its analytic form", "[networks][property]") {
  for (const auto& ac : arch_cases()) {
    for (ConstraintMode mode : {ConstraintMode::none, ConstraintMode::monotone}) {
      INFO(ac.label << " mode " << to_string(mode));
      double worst_sym = 0.0, worst_match = 0.0, worst_eig = 0.0;
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto net = build_case(ac, 4, mode, 1000 + seed);
        const Matrix x = random_points(4, 10, seed);
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
          const Matrix fd = fd_jac(*net, x.col(k));
          worst_sym = std::max(worst_sym, asymmetry(fd));
          worst_match = std::max(worst_match, (net->jacobian(x.col(k)) - fd).norm() / (1.0 + fd.norm()));
          worst_eig = std::min(worst_eig, min_symmetric_eigenvalue(fd));
        }
      }
      CHECK(worst_sym <= 1e-5);
      CHECK(worst_match <= 1e-5);
      if (mode == ConstraintMode::monotone) CHECK(worst_eig >= -1e-6);
    }
  }
}

TEST_CASE("monotone analytic Jacobians are PSD", "[networks][property]") {
  for (const auto& ac : arch_cases()) {
    INFO(ac.label);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto net = build_case(ac, 5, ConstraintMode::monotone, seed);
      const Matrix x = random_points(5, 5, seed + 7);
      for (Eigen::Index k = 0; k < x.cols(); ++k) REQUIRE(min_symmetric_eigenvalue(net->jacobian(x.col(k))) >= -1e-8);
    }
  }
}

TEST_CASE("tracked potentials have the forward map as gradient", "[networks][property]") {
  for (const auto& ac : arch_cases()) {
    auto net = build_case(ac, 3, ConstraintMode::none, 77);
    if (!net->has_potential()) continue;
    INFO(ac.label);
    const Matrix x = random_points(3, 20, 78);
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      const Vector g = fd_gradient([&net](const Vector& v) { return potential(*net, v); }, x.col(k));
      const Vector y = (*net)(x.col(k));
      REQUIRE((g - y).norm() / (1.0 + y.norm()) <= 1e-6);
    }
  }
}

TEST_CASE("potential examples", "[networks]") {
  auto zero = make_zero_network(2);
  CHECK(potential(*zero, Vector{{1.0, 2.0}}) == 0.0);
  SingleLayer with_b(Matrix::Zero(1, 2), Vector::Zero(1), Vector{{0.5, -1.0}}, make_sigmoid());
  // psi(0) = softplus(0) is constant, so the potential is b^T x up to that offset.
  CHECK_THAT(potential(with_b, Vector{{2.0, 3.0}}) - potential(with_b, Vector::Zero(2)), WithinAbs(-2.0, 1e-14));

  auto wrapped = wrap_strongly_convex(make_zero_network(2), 2.0);
  CHECK_THAT(potential(*wrapped, Vector{{1.0, 1.0}}), WithinAbs(2.0, 1e-15));

  Rng rng(4);
  SingleLayer sm(Matrix{{1.0, 2.0}, {-1.0, 0.5}, {0.0, 1.0}}, Vector{{0.1, 0.2, -0.3}}, Vector{{0.7, -0.2}},
                 make_softmax(2.0));
  const Vector x{{0.4, 0.6}};
  const Vector z = sm.weights() * x + sm.inner_bias();
  CHECK_THAT(potential(sm, x), WithinAbs(logsumexp_t(z, 2.0) + sm.outer_bias().dot(x), 1e-14));
}

TEST_CASE("general gradnet-c has no potential", "[networks]") {
  auto net = random_network("gradnet_c", 3, ConstraintMode::none, 1);
  CHECK_FALSE(net->has_potential());
  CHECK_THROWS_AS(potential(*net, Vector::Zero(3)), std::logic_error);
}

TEST_CASE("difference composition", "[networks]") {
  auto g1 = random_network("gradnet_m", 3, ConstraintMode::monotone, 5);
  auto same = compose_difference(g1->clone(), g1->clone());
  const Matrix x = random_points(3, 10, 2);
  CHECK(same->forward(x).cwiseAbs().maxCoeff() == 0.0);

  auto minus_zero = compose_difference(g1->clone(), make_zero_network(3));
  CHECK((minus_zero->forward(x) - g1->forward(x)).cwiseAbs().maxCoeff() == 0.0);

  auto diff = compose_difference(random_network("gradnet_m", 3, ConstraintMode::monotone, 6),
                                 random_network("gradnet_c", 3, ConstraintMode::monotone, 7));
  for (Eigen::Index k = 0; k < x.cols(); ++k) CHECK(asymmetry(fd_jac(*diff, x.col(k))) <= 1e-5);
  CHECK_THROWS(compose_difference(make_zero_network(2), make_zero_network(3)));
}

TEST_CASE("strongly convex wrapper", "[networks]") {
  auto id = wrap_strongly_convex(make_zero_network(3), 1.0);
  const Matrix x = random_points(3, 10, 3);
  CHECK((id->forward(x) - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS(wrap_strongly_convex(make_zero_network(3), 0.0));
  CHECK_THROWS(wrap_strongly_convex(make_zero_network(3), -1.0));

  const double mu = 0.3;
  auto g = wrap_strongly_convex(random_network("gradnet_m", 3, ConstraintMode::monotone, 8), mu);
  for (Eigen::Index k = 0; k < x.cols(); ++k) CHECK(min_symmetric_eigenvalue(g->jacobian(x.col(k))) >= mu - 1e-8);
  const AuditCheck c = audit_strong_monotone(batched(*g), mu, Box::unit(3), 10000, 1e-8, 1);
  CHECK(c.pass);
}

TEST_CASE("lipschitz flip", "[networks]") {
  auto flipped_id = wrap_lipschitz_flip(make_identity_network(2), 1.0);
  const Matrix x = random_points(2, 10, 4);
  CHECK(flipped_id->forward(x).cwiseAbs().maxCoeff() == 0.0);
  auto two_x = wrap_lipschitz_flip(make_zero_network(2), 2.0);
  CHECK((two_x->forward(x) - 2.0 * x).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(9);
  auto sl = make_single_layer(3, 6, json{{"kind", "sigmoid"}}, ConstraintMode::none, &rng);
  perturb(*sl, 10, 1.0);
  const double w2 = spectral_norm(static_cast<SingleLayer&>(*sl).weights());
  auto g = wrap_lipschitz_flip(std::move(sl), 0.25 * w2 * w2);
  const Matrix pts = random_points(3, 100, 11);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < pts.cols(); ++k) worst = std::min(worst, min_symmetric_eigenvalue(g->jacobian(pts.col(k))));
  CHECK(worst >= -1e-8);
}

TEST_CASE("linear and conical combinations", "[networks]") {
  std::vector<NetworkPtr> nets;
  nets.push_back(random_network("gradnet_m", 3, ConstraintMode::monotone, 1));
  nets.push_back(random_network("single_layer", 3, ConstraintMode::monotone, 2));
  nets.push_back(random_network("gradnet_c", 3, ConstraintMode::monotone, 3));
  std::vector<NetworkPtr> copy;
  for (const auto& n : nets) copy.push_back(n->clone());
  const Vector coeffs{{0.5, 2.0, 1.25}};
  auto conical = linear_combination(std::move(copy), coeffs, ConstraintMode::monotone);
  const Matrix x = random_points(3, 50, 4);
  Matrix expected = Matrix::Zero(3, x.cols());
  for (std::size_t k = 0; k < nets.size(); ++k) expected += coeffs[static_cast<Eigen::Index>(k)] * nets[k]->forward(x);
  CHECK((conical->forward(x) - expected).cwiseAbs().maxCoeff() < 1e-13);
  AuditOptions opt;
  opt.pairs = 2000;
  CHECK(audit_network(*conical, opt).all_pass());

  std::vector<NetworkPtr> mixed;
  mixed.push_back(random_network("gradnet_m", 3, ConstraintMode::none, 5));
  mixed.push_back(random_network("gradnet_c", 3, ConstraintMode::none, 6));
  auto lin = linear_combination(std::move(mixed), Vector{{-1.5, 0.7}});
  for (Eigen::Index k = 0; k < 10; ++k) CHECK(asymmetry(fd_jac(*lin, x.col(k))) <= 1e-5);

  std::vector<NetworkPtr> bad;
  bad.push_back(random_network("gradnet_m", 3, ConstraintMode::monotone, 7));
  CHECK_THROWS(linear_combination(std::move(bad), Vector{{-1.0}}, ConstraintMode::monotone));
}

TEST_CASE("transformed composition", "[networks]") {
  const Matrix x = random_points(3, 20, 5);
  {
    // gamma = 1: a neural scalar that is constant one.
    NeuralScalarParams p{Vector::Zero(1), Vector::Ones(1), Vector::Zero(1), 1.0, ActivationKind::sigmoid, false};
    auto g = random_network("gradnet_m", 3, ConstraintMode::none, 8);
    auto h = compose_transformed(g->clone(), neural_scalar_activation(p), 0.0, false);
    CHECK((h->forward(x) - g->forward(x)).cwiseAbs().maxCoeff() < 1e-15);
  }
  {
    // g = identity, gamma(u) = u, beta = 0 gives (|x|^2 / 2) x.
    auto h = compose_transformed(make_identity_network(3), make_identity(), 0.0, false);
    const Matrix y = h->forward(x);
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      const Vector expected = 0.5 * x.col(k).squaredNorm() * x.col(k);
      CHECK((y.col(k) - expected).norm() < 1e-15);
      const Matrix j = fd_jac(*h, x.col(k));
      CHECK(asymmetry(j) <= 1e-8);
      CHECK((h->jacobian(x.col(k)) - j).norm() / (1.0 + j.norm()) <= 1e-6);
    }
  }
  {
    Rng rng(12);
    NeuralScalarParams p{Vector{{0.6, 1.1}}, Vector{{0.8, 0.4}}, Vector{{-0.2, 0.3}}, 0.0, ActivationKind::sigmoid,
                         true};
    auto g = random_network("gradnet_m", 3, ConstraintMode::monotone, 13);
    auto h = compose_transformed(std::move(g), neural_scalar_activation(p), 0.4, true, ConstraintMode::monotone);
    double worst = 0.0;
    const Matrix pts = random_points(3, 100, 14);
    for (Eigen::Index k = 0; k < pts.cols(); ++k) {
      const Matrix j = fd_jac(*h, pts.col(k));
      CHECK(asymmetry(j) <= 1e-5);
      worst = std::min(worst, min_symmetric_eigenvalue(j));
    }
    CHECK(worst >= -1e-6);
  }
  CHECK_THROWS(compose_transformed(random_network("gradnet_c", 3, ConstraintMode::none, 1), make_identity(), 0.0,
                                   false));
}

TEST_CASE("parameter views round trip and project", "[networks]") {
  for (const auto& ac : arch_cases()) {
    auto net = build_case(ac, 3, ConstraintMode::monotone, 31);
    ParamView view = net->params();
    CHECK(view.size() == net->num_params());
    const Vector theta = view.flatten();
    Vector noisy = theta.array() - 5.0;
    view.unflatten(noisy);
    const auto tags = view.tags();
    const bool constrained = std::find(tags.begin(), tags.end(), Constraint::nonneg) != tags.end();
    CHECK(view.constraints_hold() == !constrained);
    view.project();
    CHECK(view.constraints_hold());
    view.unflatten(theta);
    CHECK(view.flatten() == theta);
  }
}

TEST_CASE("monotone constructors reject violating parameters", "[networks]") {
  CHECK_THROWS(GradNetC(Matrix::Identity(2, 2), {Vector{{-1.0, 1.0}}}, {Vector::Ones(2)}, {Vector::Zero(2)},
                        Vector::Zero(2),
                        [] {
                          std::vector<Cloned<Activation>> s;
                          s.emplace_back(make_tanh());
                          return s;
                        }(),
                        ConstraintMode::monotone));
  CHECK_THROWS(SingleLayer(Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2),
                           std::make_unique<ScaledTanhMix>(-1.0, 1.0), ConstraintMode::monotone));
}

TEST_CASE("dimension mismatches are errors", "[networks]") {
  auto net = random_network("gradnet_m", 3, ConstraintMode::none, 1);
  CHECK_THROWS_AS((*net)(Vector::Zero(2)), DimensionError);
  CHECK_THROWS_AS(net->forward(Matrix::Zero(4, 2)), DimensionError);
}

TEST_CASE("model files round trip bit-exactly", "[networks]") {
  for (const auto& ac : arch_cases()) {
    INFO(ac.label);
    auto net = build_case(ac, 3, ConstraintMode::monotone, 41);
    const json j = save_network(*net);
    auto back = load_network(json::parse(j.dump()));
    CHECK(back->params().flatten() == net->params().flatten());
    const Matrix x = random_points(3, 5, 42);
    CHECK(back->forward(x) == net->forward(x));
  }
  std::vector<NetworkPtr> parts;
  parts.push_back(random_network("gradnet_m", 2, ConstraintMode::monotone, 1));
  parts.push_back(random_network("gradnet_c", 2, ConstraintMode::monotone, 2));
  auto nested = wrap_strongly_convex(linear_combination(std::move(parts), Vector{{0.3, 0.9}}, ConstraintMode::monotone),
                                     0.5);
  auto back = load_network(json::parse(save_network(*nested).dump()));
  CHECK(back->kind() == NetworkKind::strongly_convex_wrap);
  CHECK(back->params().flatten() == nested->params().flatten());
}

TEST_CASE("model files with mismatched parameters are rejected", "[networks]") {
  auto net = random_network("gradnet_m", 3, ConstraintMode::none, 1);
  json j = save_network(*net);
  j["params"].erase(j["params"].size() - 1);
  CHECK_THROWS_AS(load_network(j), ModelFormatError);
  json k = save_network(*net);
  k["format"] = "other";
  CHECK_THROWS_AS(load_network(k), ModelFormatError);
}

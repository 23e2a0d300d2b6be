#include "support.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

using namespace gradnet;
using namespace gradnet::testing;

namespace {

double half_square(const Vector& x) { return 0.5 * (x.array() - 0.5).matrix().squaredNorm(); }

/// sup over [a, b] of |F' - forward| on a dense 1D grid.
double forward_sup_error(const Network& net, double a, double b) {
  double worst = 0.0;
  for (int k = 0; k <= 400; ++k) {
    const double x = a + (b - a) * k / 400.0;
    worst = std::max(worst, std::abs((x - 0.5) - net(Vector{{x}})[0]));
  }
  return worst;
}

}  // namespace

TEST_CASE("hyperplane count and cap", "[lse]") {
  LseApproxConfig cfg{5, 500.0, 2, 1'000'000};
  CHECK(cfg.hyperplane_count().value() == 31u * 31u);
  CHECK_NOTHROW(cfg.validate());
  LseApproxConfig big{10, 500.0, 3, 1'000'000};
  CHECK(big.hyperplane_count().value() == 1023ull * 1023ull * 1023ull);
  CHECK_THROWS_AS(big.validate(), GridCapError);
  LseApproxConfig overflow{40, 1.0, 3, 1'000'000};
  CHECK_FALSE(overflow.hyperplane_count().has_value());
  CHECK_THROWS_AS(overflow.validate(), GridCapError);
}

TEST_CASE("affine functions are reproduced up to log(n)/t", "[lse]") {
  std::mt19937_64 rng(1);
  for (Eigen::Index d : {1, 2}) {
    const ConvexTestFunction fn = random_affine(d, rng);
    for (int m : {2, 4, 5}) {
      for (double t : {10.0, 500.0}) {
        LseApproxConfig cfg{m, t, d};
        auto net = build_lse_approximant(fn.f, cfg, fn.grad);
        const CertificationReport rep = certify_bound(fn.f, *net, cfg, 0.0);
        // Every hyperplane equals F, so the approximant is F + log(n)/t exactly.
        const double logn_t = std::log(static_cast<double>(*cfg.hyperplane_count())) / t;
        CHECK_THAT(rep.sup_error, Catch::Matchers::WithinAbs(logn_t, 1e-9));
      }
    }
  }
}

TEST_CASE("1D quadratic meets the certified bound", "[lse]") {
  LseApproxConfig cfg{5, 200.0, 1};
  auto net = build_lse_approximant(half_square, cfg);
  const double eps = lipschitz_eps(0.5, cfg);
  const CertificationReport rep = certify_bound(half_square, *net, cfg, eps);
  CHECK_THAT(rep.bound, Catch::Matchers::WithinRel(2.0 * eps + std::log(31.0) / 200.0, 1e-12));
  CHECK(rep.pass);
  CHECK(rep.points_evaluated >= 4u * 32u);
}

TEST_CASE("forward error of the approximant shrinks with the grid level", "[lse]") {
  double prev = std::numeric_limits<double>::infinity();
  for (int m : {3, 4, 5}) {
    LseApproxConfig cfg{m, 200.0, 1};
    auto net = build_lse_approximant(half_square, cfg);
    const double err = forward_sup_error(*net, 0.1, 0.9);
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("bound grows as the temperature shrinks", "[lse]") {
  LseApproxConfig hot{5, 500.0, 1}, cold{5, 5.0, 1};
  auto net = build_lse_approximant(half_square, cold);
  const double eps = lipschitz_eps(0.5, cold);
  const CertificationReport rep = certify_bound(half_square, *net, cold, eps);
  CHECK(rep.pass);
  CHECK(lse_error_bound(cold, eps) > lse_error_bound(hot, eps));
}

TEST_CASE("random convex quadratics are certified", "[lse][property]") {
  std::mt19937_64 rng(2024);
  int passed = 0;
  for (int k = 0; k < 20; ++k) {
    const ConvexTestFunction fn = random_convex_quadratic(k % 2 == 0 ? 1 : 2, rng);
    const CertificationReport rep = certify_test_function(fn, 5, 500.0);
    INFO("trial " << k << " sup " << rep.sup_error << " bound " << rep.bound);
    CHECK(rep.pass);
    passed += rep.pass ? 1 : 0;
  }
  CHECK(passed == 20);
}

TEST_CASE("the convex 2D benchmark is certified", "[lse]") {
  const CertificationReport rep = certify_test_function(convex2d_test_function(), 5, 500.0);
  CHECK(rep.pass);
  CHECK(rep.d == 2);
}

TEST_CASE("approximants are monotone gradient networks", "[lse][property]") {
  std::mt19937_64 rng(5);
  const ConvexTestFunction fn = random_convex_quadratic(2, rng);
  auto net = build_lse_approximant(fn.f, LseApproxConfig{3, 50.0, 2}, fn.grad);
  CHECK(net->mode() == ConstraintMode::monotone);
  AuditOptions opt;
  opt.pairs = 2000;
  CHECK(audit_network(*net, opt).all_pass());
}

TEST_CASE("non-finite functions are rejected", "[lse]") {
  auto f = [](const Vector& x) { return std::log(x[0] - 0.5); };
  CHECK_THROWS_AS(build_lse_approximant(f, LseApproxConfig{3, 10.0, 1}), NumericError);
}

TEST_CASE("staircase examples", "[lse]") {
  auto flat = build_staircase_monotone([](double) { return 0.7; }, 4, 4.0);
  for (double x : {0.0, 0.3, 1.0}) CHECK((*flat)(x) == 0.7);

  auto id = build_staircase_monotone([](double x) { return x; }, 6, 4.0);
  double worst = 0.0;
  for (int k = 0; k <= 2000; ++k) {
    const double x = k / 2000.0;
    worst = std::max(worst, std::abs((*id)(x) - x));
  }
  CHECK(worst <= 3.0 / 64.0);
}

TEST_CASE("staircase output is nondecreasing", "[lse][property]") {
  auto g = build_staircase_monotone([](double x) { return x * x * x + std::sqrt(x); }, 5, 3.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 10000; ++k) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    REQUIRE((*g)(a) <= (*g)(b) + 1e-9);
  }
  CHECK((g->params().u.array() >= 0.0).all());
}

TEST_CASE("staircase rejects decreasing functions", "[lse]") {
  CHECK_THROWS_AS(build_staircase_monotone([](double x) { return -x; }, 3, 1.0), std::invalid_argument);
}

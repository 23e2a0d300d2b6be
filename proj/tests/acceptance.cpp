// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
//
//   acceptance [--out DIR] [--configs DIR] [--only 1,4,8]
//
// Tolerances, sample counts and runtime limits are fixed below. The
// experiment criteria load the shipped configs so the same runs can be
// repeated with the gradnet tool.

#include "gradnet/gradnet.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gradnet;

namespace {

// Criterion 1
constexpr double kSymmetryTol = 1e-5;
constexpr double kPsdTol = 1e-6;
constexpr double kPairsTol = 1e-8;
constexpr std::size_t kJacobianPoints = 100;
constexpr std::size_t kPairs = 10000;
// Criterion 2
constexpr double kParamGradTol = 1e-4;
constexpr std::size_t kMaxParams = 200;
// Criterion 3
constexpr int kLseM = 5;
constexpr double kLseT = 500.0;
constexpr int kLseQuadratics = 20;
// Criteria 4-7
constexpr double k2dValMse = 1e-2;
constexpr double kD32PiecewiseDb = -12.0;
constexpr double kD32GmmDb = -25.0;
constexpr double kTruthCoordDb = -80.0;
constexpr double kEnergyDrift = 1e-5;
// Runtime limits in seconds.
constexpr double kLimit1 = 120.0, kLimit2 = 60.0, kLimit3 = 60.0, kLimit4 = 600.0, kLimit5 = 1800.0,
                 kLimit6 = 1800.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path out;
  fs::path configs;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome within_time(Outcome o, double elapsed, double limit) {
  if (elapsed > limit) {
    o.pass = false;
    o.detail += "; runtime " + fmt(elapsed) + " s exceeds " + fmt(limit) + " s";
  }
  return o;
}

ExperimentResult run_config(const Context& ctx, const std::string& name, const fs::path& dest) {
  const ExperimentConfig cfg = load_experiment_config((ctx.configs / (name + ".ini")).string());
  ExperimentResult res = run_gradient_field(cfg);
  write_gradient_field_outputs(res, dest);
  return res;
}

// ---------------------------------------------------------------------------

Outcome invariant_suite(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  struct Arch {
    const char* name;
    std::function<NetworkPtr(Eigen::Index, ConstraintMode, Rng&)> make;
  };
  const std::vector<Arch> archs{
      {"single_layer",
       [](Eigen::Index d, ConstraintMode m, Rng& r) {
         return make_single_layer(d, 16, json{{"kind", "softmax"}, {"t", 1.0}}, m, &r);
       }},
      {"gradnet_m",
       [](Eigen::Index d, ConstraintMode m, Rng& r) {
         return make_gradnet_m(d, 4, 8, json{{"kind", "softmax"}, {"t", 1.0}}, RhoKind::one, m, &r);
       }},
      {"gradnet_c",
       [](Eigen::Index d, ConstraintMode m, Rng& r) { return make_gradnet_c(d, 16, 3, json{{"kind", "tanh"}}, m, &r); }},
  };
  double worst_sym = 0.0, worst_psd = -std::numeric_limits<double>::infinity(),
         worst_pairs = -std::numeric_limits<double>::infinity();
  int runs = 0, failures = 0;
  std::string first_failure;
  for (const auto& arch : archs) {
    for (ConstraintMode mode : {ConstraintMode::none, ConstraintMode::monotone}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (Eigen::Index d : {2, 8, 32}) {
          Rng rng(mix_seed(seed, static_cast<std::uint64_t>(d)));
          NetworkPtr net = arch.make(d, mode, rng);
          const BatchField f = batched(*net);
          const Box box = Box::unit(d);
          std::vector<AuditCheck> checks{audit_symmetry(f, box, kJacobianPoints, kSymmetryTol, seed)};
          worst_sym = std::max(worst_sym, checks.back().worst_violation);
          if (mode == ConstraintMode::monotone) {
            checks.push_back(audit_psd(f, box, kJacobianPoints, kPsdTol, seed));
            worst_psd = std::max(worst_psd, checks.back().worst_violation);
            checks.push_back(audit_monotone_pairs(f, box, kPairs, kPairsTol, seed));
            worst_pairs = std::max(worst_pairs, checks.back().worst_violation);
          }
          ++runs;
          for (const auto& c : checks) {
            if (c.pass) continue;
            ++failures;
            if (first_failure.empty())
              first_failure = std::string(arch.name) + " " + to_string(mode) + " seed " + std::to_string(seed) +
                              " d=" + std::to_string(d) + " " + c.name;
          }
        }
      }
    }
  }
  Outcome o;
  o.pass = failures == 0;
  o.detail = std::to_string(runs) + " networks, worst symmetry " + fmt(worst_sym) + ", worst -min eig " +
             fmt(worst_psd) + ", worst pair deficit " + fmt(worst_pairs);
  if (!o.pass) o.detail += "; first failure: " + first_failure;
  return within_time(o, seconds_since(t0), kLimit1);
}

Outcome gradient_engine(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int checked = 0;
  std::string worst_case;
  for (ConstraintMode mode : {ConstraintMode::none, ConstraintMode::monotone}) {
    for (const auto& ac : testing::arch_cases()) {
      auto net = testing::build_case(ac, 3, mode, 21, 4);
      if (net->num_params() > kMaxParams) continue;
      const Matrix x = testing::random_points(3, 16, 22);
      const Matrix y = testing::random_points(3, 16, 23, -1.0, 1.0);
      const GradientCheck gc = check_param_gradients(*net, x, y);
      ++checked;
      if (gc.relative_error >= worst) {
        worst = gc.relative_error;
        worst_case = ac.label + " (" + to_string(mode) + ")";
      }
    }
  }
  Outcome o;
  o.pass = checked > 0 && worst <= kParamGradTol;
  o.detail = std::to_string(checked) + " architectures, worst relative error " + fmt(worst) + " at " + worst_case;
  return within_time(o, seconds_since(t0), kLimit2);
}

Outcome lse_certification(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  int passed = 0;
  double worst_ratio = 0.0;
  for (int k = 0; k < kLseQuadratics; ++k) {
    const ConvexTestFunction fn = random_convex_quadratic(k % 2 == 0 ? 1 : 2, rng);
    const CertificationReport rep = certify_test_function(fn, kLseM, kLseT);
    passed += rep.pass ? 1 : 0;
    worst_ratio = std::max(worst_ratio, rep.sup_error / rep.bound);
  }
  bool affine_ok = true;
  double affine_sup = 0.0;
  for (Eigen::Index d : {1, 2}) {
    const ConvexTestFunction fn = random_affine(d, rng);
    LseApproxConfig cfg{kLseM, kLseT, d};
    auto net = build_lse_approximant(fn.f, cfg, fn.grad);
    const CertificationReport rep = certify_bound(fn.f, *net, cfg, 0.0);
    const double limit = std::log(static_cast<double>(*cfg.hyperplane_count())) / kLseT;
    affine_ok = affine_ok && rep.sup_error <= limit + 1e-12;
    affine_sup = std::max(affine_sup, rep.sup_error);
  }
  Outcome o;
  o.pass = passed == kLseQuadratics && affine_ok;
  o.detail = std::to_string(passed) + "/" + std::to_string(kLseQuadratics) + " quadratics within bound (worst sup/bound " +
             fmt(worst_ratio) + "), affine sup " + fmt(affine_sup, 6) + (affine_ok ? " within" : " exceeds") +
             " log(n)/t";
  return within_time(o, seconds_since(t0), kLimit3);
}

Outcome desk_2d(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o{true, ""};
  for (const char* name : {"convex2d_mgradnet_m", "convex2d_mgradnet_c", "nonconvex2d_gradnet_m", "nonconvex2d_gradnet_c"}) {
    const ExperimentResult res = run_config(ctx, name, ctx.out / name);
    const double v = res.trials.empty() ? std::numeric_limits<double>::quiet_NaN() : res.trials.front().val_mse;
    const bool ok = !res.failed && v <= k2dValMse;
    o.pass = o.pass && ok;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + name + " val MSE " + fmt(v) + (ok ? "" : " (FAIL)");
  }
  return within_time(o, seconds_since(t0), kLimit4);
}

Outcome table_check(const Context& ctx, const char* name, double threshold, double limit) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentResult res = run_config(ctx, name, ctx.out / name);
  Outcome o;
  o.pass = !res.failed && res.db.n > 0 && res.db.mean <= threshold;
  o.detail = format_summary_line(res) + " (threshold " + fmt(threshold) + " dB)";
  if (res.failed) o.detail += "; " + res.message;
  return within_time(o, seconds_since(t0), limit);
}

Outcome hamiltonian_gates(const Context& ctx) {
  Outcome o{true, ""};
  {
    const ExperimentConfig cfg = load_experiment_config((ctx.configs / "hamiltonian_ground_truth.ini").string());
    HamiltonianResult gt = run_hamiltonian(cfg);
    write_hamiltonian_outputs(gt, cfg.hamiltonian.orbit, ctx.out / "hamiltonian_ground_truth");
    double drift = 0.0;
    for (const auto& tr : gt.truth_trajectories) drift = std::max(drift, max_relative_energy_drift(tr, cfg.hamiltonian.orbit));
    const bool coord_ok = !gt.failed && gt.metrics.coordinate_mse_db <= kTruthCoordDb;
    const bool steps_ok = cfg.hamiltonian.orbit.steps == 2000 && cfg.hamiltonian.orbit.dt == 0.03;
    const bool drift_ok = !gt.truth_trajectories.empty() && drift <= kEnergyDrift;
    o.pass = coord_ok && drift_ok && steps_ok;
    o.detail = "ground truth coordinate MSE " + fmt(gt.metrics.coordinate_mse_db) + " dB, energy drift " + fmt(drift);
  }
  {
    const ExperimentConfig cfg = load_experiment_config((ctx.configs / "hamiltonian_gradnet_m.ini").string());
    HamiltonianResult net = run_hamiltonian(cfg);
    write_hamiltonian_outputs(net, cfg.hamiltonian.orbit, ctx.out / "hamiltonian_gradnet_m");
    const bool finite = std::isfinite(net.metrics.coordinate_mse_db) && std::isfinite(net.metrics.energy_mse_db);
    const bool sym = net.symmetry && net.symmetry->pass;
    o.pass = o.pass && finite && sym && !net.failed;
    o.detail += "; " + net.model + " coordinate MSE " + fmt(net.metrics.coordinate_mse_db) + " dB, energy MSE " +
                fmt(net.metrics.energy_mse_db) + " dB, symmetry " +
                (net.symmetry ? fmt(net.symmetry->worst_violation) : std::string("n/a")) + (sym ? " pass" : " FAIL");
    if (!net.message.empty()) o.detail += " (" + net.message + ")";
  }
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism(const Context& ctx) {
  const std::string name = "convex2d_mgradnet_m";
  const fs::path a = ctx.out / "determinism_a", b = ctx.out / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run_config(ctx, name, a);
  run_config(ctx, name, b);
  int files = 0, mismatched = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().extension() != ".csv") continue;
    ++files;
    if (!fs::exists(b / e.path().filename()) || slurp(e.path()) != slurp(b / e.path().filename())) ++mismatched;
  }
  Outcome o;
  o.pass = files > 0 && mismatched == 0;
  o.detail = name + " run twice: " + std::to_string(files) + " CSV files, " + std::to_string(mismatched) + " differ";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  Context ctx{"acceptance_out", GRADNET_CONFIG_DIR};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if ((arg == "--out" || arg == "--configs" || arg == "--only") && i + 1 < argc) {
      const std::string val = argv[++i];
      if (arg == "--out") ctx.out = val;
      else if (arg == "--configs") ctx.configs = val;
      else {
        std::istringstream is(val);
        std::string item;
        while (std::getline(is, item, ',')) only.insert(std::stoi(item));
      }
    } else {
      std::cerr << "usage: acceptance [--out DIR] [--configs DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(ctx.out);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"invariant suite", invariant_suite},
      {"parameter gradient oracle", gradient_engine},
      {"LSE certification", lse_certification},
      {"2D gradient fields", desk_2d},
      {"d=32 piecewise quadratic", [](const Context& c) { return table_check(c, "d32_piecewise_mgradnet_m", kD32PiecewiseDb, kLimit5); }},
      {"d=32 GMM score", [](const Context& c) { return table_check(c, "d32_gmm_gradnet_c", kD32GmmDb, kLimit6); }},
      {"Hamiltonian gates", hamiltonian_gates},
      {"determinism", determinism},
  };

  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[k].first << ": " << o.detail << " ["
              << fmt(seconds_since(t0), 4) << " s]" << std::endl;
  }
  return all ? 0 : 1;
}

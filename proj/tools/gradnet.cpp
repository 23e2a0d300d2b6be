// gradnet command-line tool.
//
//   gradnet train --config FILE [--out DIR]
//   gradnet verify (--model FILE | --builtin KIND) [options]
//   gradnet lse --function {affine,quadratic,convex2d} [--m M] [--t T] [--d D]
//   gradnet hamiltonian --config FILE [--out DIR]
//   gradnet export-plot-data --model FILE (--task NAME | --config FILE) --out FILE
//
// Exit codes: 0 success, 1 experiment or audit failure, 2 usage or config error.

#include "gradnet/gradnet.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace gradnet;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

/// Command-line override wins over [output] dir; one of the two is required.
fs::path resolve_output(const ExperimentConfig& cfg, const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  throw ConfigError("no output directory: set [output] dir or pass --out");
}

int cmd_train(const std::string& config_path, const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (cfg.type != "gradient_field") throw ConfigError("train expects [experiment] type = gradient_field");
  const fs::path dir = resolve_output(cfg, out);
  // Surface model errors (bad budget, incompatible activation) before any work.
  (void)build_model(cfg.model, make_task(cfg.task).dim(), 0);

  ExperimentResult res = run_gradient_field(cfg);
  write_gradient_field_outputs(res, dir);
  for (const auto& t : res.trials) {
    std::cout << "trial " << t.trial << ": lr " << t.best_lr << ", test MSE " << t.test_mse << " (" << t.mse_db
              << " dB)\n";
  }
  std::cout << format_summary_line(res) << '\n';
  if (res.failed) {
    std::cerr << "error: " << res.message << '\n';
    return kFailure;
  }
  return kOk;
}

int cmd_hamiltonian(const std::string& config_path, const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (cfg.type != "hamiltonian") throw ConfigError("hamiltonian expects [experiment] type = hamiltonian");
  const fs::path dir = resolve_output(cfg, out);
  if (cfg.hamiltonian.model == "network") (void)build_model(cfg.model, 8, 0);

  HamiltonianResult res = run_hamiltonian(cfg);
  write_hamiltonian_outputs(res, cfg.hamiltonian.orbit, dir);
  std::cout << res.model << ": coordinate MSE " << res.metrics.coordinate_mse_db << " dB, energy MSE "
            << res.metrics.energy_mse_db << " dB";
  if (res.symmetry) std::cout << ", symmetry " << (res.symmetry->pass ? "pass" : "FAIL");
  std::cout << '\n';
  if (res.failed) {
    std::cerr << "error: " << res.message << '\n';
    return kFailure;
  }
  return kOk;
}

struct VerifyOptions {
  std::string model;
  std::string builtin;
  std::string mode = "monotone";
  std::string activation;
  Eigen::Index d = 4;
  Eigen::Index hidden = 8;
  std::size_t modules = 2;
  std::size_t layers = 3;
  std::uint64_t seed = 0;
  std::size_t points = 100;
  std::size_t pairs = 10000;
  bool json_out = false;
};

int cmd_verify(const VerifyOptions& o) {
  NetworkPtr net;
  if (!o.model.empty()) {
    try {
      net = load_network_file(o.model);
    } catch (const ModelFormatError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kUsage;
    }
  } else {
    ModelSection m;
    m.kind = o.builtin;
    m.mode = constraint_mode_from_string(o.mode);
    const std::string act = o.activation.empty() ? (o.builtin == "gradnet_c" ? "tanh" : "softmax") : o.activation;
    m.activation = {{"kind", act}};
    if (act == "softmax" || act == "softmax_softmin_mix") m.activation["t"] = 1.0;
    m.hidden = o.hidden;
    m.modules = o.modules;
    m.layers = o.layers;
    net = build_model(m, o.d, o.seed).net;
  }
  AuditOptions opt;
  opt.jacobian_points = o.points;
  opt.pairs = o.pairs;
  opt.seed = o.seed;
  AuditReport rep = audit_network(*net, opt);
  if (o.json_out) std::cout << rep.to_json().dump(2) << '\n';
  else std::cout << rep.to_text();
  return rep.all_pass() ? kOk : kFailure;
}

struct LseOptions {
  std::string function = "quadratic";
  int m = 5;
  double t = 500.0;
  Eigen::Index d = 1;
  std::uint64_t cap = 1'000'000;
  std::uint64_t seed = 0;
  bool json_out = false;
};

int cmd_lse(const LseOptions& o) {
  std::mt19937_64 rng(o.seed);
  ConvexTestFunction fn;
  if (o.function == "affine") fn = random_affine(o.d, rng);
  else if (o.function == "quadratic") fn = random_convex_quadratic(o.d, rng);
  else if (o.function == "convex2d") {
    if (o.d != 1 && o.d != 2) throw ConfigError("convex2d is two-dimensional");
    fn = convex2d_test_function();
  } else throw ConfigError("unknown function '" + o.function + "' (affine, quadratic, convex2d)");
  if (o.m < 1 || !(o.t > 0.0) || o.d < 1) throw ConfigError("need m >= 1, t > 0, d >= 1");

  CertificationReport rep;
  try {
    rep = certify_test_function(fn, o.m, o.t, o.cap);
  } catch (const GridCapError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  if (o.json_out) {
    json j = rep.to_json();
    j["function"] = fn.name;
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << fn.name << " d=" << rep.d << " m=" << rep.m << " t=" << rep.t << " n=" << rep.n << ": sup error "
              << rep.sup_error << " vs bound " << rep.bound << " over " << rep.points_evaluated << " points: "
              << (rep.pass ? "PASS" : "FAIL") << '\n';
  }
  return rep.pass ? kOk : kFailure;
}

struct ExportOptions {
  std::string model;
  std::string task;
  std::string config;
  std::string out;
  Eigen::Index d = 0;
  int components = 5;
  std::uint64_t task_seed = 0;
  int grid = 101;
  int axis0 = 0;
  int axis1 = 1;
};

/// Grid over two coordinates of [0,1]^d (others fixed at 0.5) with the model
/// field, the task field, and the pointwise error norm.
int cmd_export(const ExportOptions& o) {
  NetworkPtr net;
  try {
    net = load_network_file(o.model);
  } catch (const ModelFormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  TaskSection ts;
  if (!o.config.empty()) {
    ts = load_experiment_config(o.config).task;
  } else {
    if (o.task.empty()) throw ConfigError("export-plot-data needs --task or --config");
    ts.kind = task_kind_from_string(o.task);
    ts.d = o.d > 0 ? o.d : net->dim();
    ts.components = o.components;
    ts.seed = o.task_seed;
  }
  const Task task = make_task(ts);
  if (task.dim() != net->dim())
    throw ConfigError("model dimension " + std::to_string(net->dim()) + " does not match task dimension " +
                      std::to_string(task.dim()));
  if (o.grid < 2) throw ConfigError("--grid must be >= 2");
  if (o.axis0 < 0 || o.axis1 < 0 || o.axis0 >= task.dim() || o.axis1 >= task.dim() || o.axis0 == o.axis1)
    throw ConfigError("--axes must name two distinct coordinates");

  const Eigen::Index n = static_cast<Eigen::Index>(o.grid) * o.grid;
  Matrix x = Matrix::Constant(task.dim(), n, 0.5);
  for (int i = 0; i < o.grid; ++i)
    for (int j = 0; j < o.grid; ++j) {
      x(o.axis0, i * o.grid + j) = static_cast<double>(j) / (o.grid - 1);
      x(o.axis1, i * o.grid + j) = static_cast<double>(i) / (o.grid - 1);
    }
  const Matrix pred = net->forward(x);
  const Matrix truth = task.gradient_batch(x);
  std::ofstream os(o.out);
  if (!os) throw ConfigError("cannot open " + o.out + " for writing");
  os << "x1,x2,pred1,pred2,true1,true2,err\n";
  for (Eigen::Index k = 0; k < n; ++k) {
    os << csv_num(x(o.axis0, k)) << ',' << csv_num(x(o.axis1, k)) << ',' << csv_num(pred(o.axis0, k)) << ','
       << csv_num(pred(o.axis1, k)) << ',' << csv_num(truth(o.axis0, k)) << ',' << csv_num(truth(o.axis1, k)) << ','
       << csv_num((pred.col(k) - truth.col(k)).norm()) << '\n';
  }
  std::cout << "wrote " << n << " grid points to " << o.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Gradient networks: training, audits, LSE certification, Hamiltonian dynamics"};
  app.require_subcommand(1);

  std::string config, out;
  auto* train = app.add_subcommand("train", "Train gradient-field models from a config file");
  train->add_option("--config,-c", config, "Experiment config (INI)")->required();
  train->add_option("--out,-o", out, "Output directory (overrides [output] dir)");

  auto* ham = app.add_subcommand("hamiltonian", "Two-body Hamiltonian experiment from a config file");
  ham->add_option("--config,-c", config, "Experiment config (INI)")->required();
  ham->add_option("--out,-o", out, "Output directory (overrides [output] dir)");

  VerifyOptions vo;
  auto* verify = app.add_subcommand("verify", "Audit symmetry, PSD and monotonicity of a model");
  auto* vsrc = verify->add_option("--model", vo.model, "Saved model file");
  verify->add_option("--builtin", vo.builtin, "Fresh model: single_layer, gradnet_m or gradnet_c")
      ->check(CLI::IsMember({"single_layer", "gradnet_m", "gradnet_c"}))
      ->excludes(vsrc);
  verify->add_option("--mode", vo.mode, "monotone or none")->check(CLI::IsMember({"monotone", "none"}));
  verify->add_option("--activation", vo.activation, "Activation kind for --builtin");
  verify->add_option("--d", vo.d, "Input dimension for --builtin")->check(CLI::PositiveNumber);
  verify->add_option("--hidden", vo.hidden, "Hidden width for --builtin")->check(CLI::PositiveNumber);
  verify->add_option("--modules", vo.modules, "Modules for a builtin gradnet_m")->check(CLI::PositiveNumber);
  verify->add_option("--layers", vo.layers, "Layers for a builtin gradnet_c")->check(CLI::PositiveNumber);
  verify->add_option("--seed", vo.seed, "Seed for initialization and sampling");
  verify->add_option("--points", vo.points, "Jacobian sample points")->check(CLI::PositiveNumber);
  verify->add_option("--pairs", vo.pairs, "Monotonicity sample pairs")->check(CLI::PositiveNumber);
  verify->add_flag("--json", vo.json_out, "Print the report as JSON");

  LseOptions lo;
  auto* lse = app.add_subcommand("lse", "Build and certify an LSE approximant of a convex function");
  lse->add_option("--function,-f", lo.function, "affine, quadratic or convex2d");
  lse->add_option("--m", lo.m, "Grid level (step 2^-m)");
  lse->add_option("--t", lo.t, "Softmax temperature");
  lse->add_option("--d", lo.d, "Input dimension");
  lse->add_option("--cap", lo.cap, "Maximum number of hyperplanes");
  lse->add_option("--seed", lo.seed, "Seed for random coefficients");
  lse->add_flag("--json", lo.json_out, "Print the report as JSON");

  ExportOptions eo;
  auto* exp = app.add_subcommand("export-plot-data", "Export a model field on a 2D grid as CSV");
  exp->add_option("--model", eo.model, "Saved model file")->required();
  auto* etask = exp->add_option("--task", eo.task, "convex2d, nonconvex2d, piecewise_quadratic or gmm_score");
  exp->add_option("--config", eo.config, "Take the task from this experiment config")->excludes(etask);
  exp->add_option("--out,-o", eo.out, "Output CSV file")->required();
  exp->add_option("--d", eo.d, "Task dimension (defaults to the model's)");
  exp->add_option("--components", eo.components, "GMM components");
  exp->add_option("--task-seed", eo.task_seed, "GMM mean seed");
  exp->add_option("--grid", eo.grid, "Points per axis");
  std::vector<int> axes{0, 1};
  exp->add_option("--axes", axes, "The two coordinates to sweep")->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(config, out);
    if (*ham) return cmd_hamiltonian(config, out);
    if (*verify) {
      if (vo.model.empty() && vo.builtin.empty()) throw ConfigError("verify needs --model or --builtin");
      return cmd_verify(vo);
    }
    if (*lse) return cmd_lse(lo);
    if (*exp) {
      eo.axis0 = axes[0];
      eo.axis1 = axes[1];
      return cmd_export(eo);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ModelFormatError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

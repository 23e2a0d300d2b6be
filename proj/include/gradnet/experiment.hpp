#pragma once

// Experiment drivers shared by the command-line tool and the acceptance
// suite: INI configuration, model construction from a config section,
// trial / learning-rate sweeps, and deterministic CSV reports.

#include "gradnet/builders.hpp"
#include "gradnet/gradcheck.hpp"
#include "gradnet/hamiltonian.hpp"
#include "gradnet/networks.hpp"
#include "gradnet/tasks.hpp"
#include "gradnet/train.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace gradnet {

/// Invalid or incomplete configuration (maps to the usage-error exit code).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small utilities.

/// Keep large batch temporaries on the heap instead of fresh mmap pages.
/// Training allocates many short-lived hidden x batch matrices, and with
/// glibc defaults each one above 128 KiB costs a round of page faults.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

/// splitmix64 finalizer, used to derive independent seeds per trial and stream.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0xbf58476d1ce4e5b9ULL * (c + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Shortest text that round-trips the double (up to 17 significant digits).
inline std::string csv_num(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v || std::isnan(v)) break;
  }
  return buf;
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;     // sample standard deviation
  double stderr_ = 0.0;  // std / sqrt(n)
  std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    s.stderr_ = s.std / std::sqrt(static_cast<double>(xs.size()));
  }
  return s;
}

inline std::string display_name(const Network& net) {
  const bool mono = net.mode() == ConstraintMode::monotone;
  switch (net.kind()) {
    case NetworkKind::gradnet_m: return mono ? "mGradNet-M" : "GradNet-M";
    case NetworkKind::gradnet_c: return mono ? "mGradNet-C" : "GradNet-C";
    case NetworkKind::single_layer: return mono ? "mGradNet" : "GradNet";
    default: return to_string(net.kind());
  }
}

// ---------------------------------------------------------------------------
// Configuration.

struct TaskSection {
  TaskKind kind = TaskKind::convex2d;
  Eigen::Index d = 2;
  int components = 5;
  std::uint64_t seed = 0;
};

struct ModelSection {
  std::string kind = "gradnet_m";  // single_layer | gradnet_m | gradnet_c
  ConstraintMode mode = ConstraintMode::monotone;
  json activation = {{"kind", "softmax"}, {"t", 1.0}};
  std::size_t modules = 4;
  std::size_t layers = 3;
  Eigen::Index hidden = 0;        // 0 means: fit to param_budget
  std::size_t param_budget = 0;   // 0 means: 1024 d
  RhoKind rho = RhoKind::one;
  std::uint64_t init_seed = 0;
};

struct TrainSection {
  std::vector<double> learning_rates{0.005};
  TrainConfig base;
  Eigen::Index train_points = 0;  // 0: fresh samples each iteration
  Eigen::Index val_points = 10000;
  Eigen::Index test_points = 10000;
};

struct HamiltonianSection {
  OrbitConfig orbit;
  std::string model = "network";  // network | ground_truth | zero
  std::size_t train_orbits = 200;
  std::size_t states_per_orbit = 50;
  std::size_t stride = 10;
  std::size_t test_orbits = 5;
  std::size_t audit_points = 100;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::string type = "gradient_field";  // gradient_field | hamiltonian
  TaskSection task;
  ModelSection model;
  TrainSection train;
  HamiltonianSection hamiltonian;
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  std::string output_dir;
};

namespace detail {

using boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"experiment", {"type", "trials", "seed"}},
      {"task", {"kind", "d", "components", "seed"}},
      {"model",
       {"kind", "mode", "activation", "temperature", "softplus_beta", "neural_width", "modules", "layers", "hidden",
        "param_budget", "rho", "init_seed"}},
      {"train",
       {"learning_rates", "batch_size", "iterations", "epochs", "train_points", "val_points", "test_points",
        "eval_interval", "seed", "projection", "divergence_threshold"}},
      {"hamiltonian",
       {"convention", "m1", "m2", "g", "dt", "steps", "truth_substeps", "model", "train_orbits", "states_per_orbit",
        "stride", "test_orbits", "audit_points", "seed"}},
      {"output", {"dir"}},
  };
  return keys;
}

template <typename T>
T get_value(const ptree& sec, const std::string& section, const std::string& key, T fallback) {
  auto child = sec.get_child_optional(key);
  if (!child) return fallback;
  const std::string text = child->data();
  std::istringstream is(text);
  T v{};
  is >> v;
  std::string rest;
  if (is.fail() || (is >> rest)) throw ConfigError("[" + section + "] " + key + ": cannot parse value '" + text + "'");
  return v;
}

inline std::string get_string(const ptree& sec, const std::string& key, const std::string& fallback) {
  auto child = sec.get_child_optional(key);
  return child ? child->data() : fallback;
}

inline bool get_bool(const ptree& sec, const std::string& section, const std::string& key, bool fallback) {
  auto child = sec.get_child_optional(key);
  if (!child) return fallback;
  const std::string v = child->data();
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& section, const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    double v;
    std::string rest;
    if (!(is >> v) || (is >> rest)) throw ConfigError("[" + section + "] " + key + ": bad list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("[" + section + "] " + key + ": empty list");
  return out;
}

inline json activation_spec(const ptree& m) {
  const std::string kind = get_string(m, "activation", "softmax");
  json j{{"kind", kind}};
  if (kind == "softmax" || kind == "softmax_softmin_mix") j["t"] = get_value<double>(m, "model", "temperature", 1.0);
  if (kind == "softplus") j["beta"] = get_value<double>(m, "model", "softplus_beta", 1.0);
  if (kind == "neural_scalar") j["width"] = get_value<long>(m, "model", "neural_width", 8);
  // Validate the kind early so configuration errors surface before any work.
  try {
    (void)activation_from_spec(j);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("[model] activation: ") + e.what());
  }
  return j;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(std::istream& in) {
  using detail::ptree;
  ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  for (const auto& [section, body] : pt) {
    auto it = detail::allowed_keys().find(section);
    if (it == detail::allowed_keys().end()) throw ConfigError("unknown config section [" + section + "]");
    if (!body.data().empty()) throw ConfigError("key '" + section + "' must appear inside a section");
    for (const auto& [key, val] : body)
      if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
  }
  ExperimentConfig c;
  const ptree empty;
  const ptree& ex = pt.get_child("experiment", empty);
  const ptree& task = pt.get_child("task", empty);
  const ptree& model = pt.get_child("model", empty);
  const ptree& train = pt.get_child("train", empty);
  const ptree& ham = pt.get_child("hamiltonian", empty);
  const ptree& out = pt.get_child("output", empty);

  try {
    c.type = detail::get_string(ex, "type", "gradient_field");
    if (c.type != "gradient_field" && c.type != "hamiltonian")
      throw ConfigError("[experiment] type must be gradient_field or hamiltonian");
    const long trials = detail::get_value<long>(ex, "experiment", "trials", 1);
    if (trials < 1) throw ConfigError("[experiment] trials must be >= 1");
    c.trials = static_cast<std::size_t>(trials);
    c.seed = detail::get_value<std::uint64_t>(ex, "experiment", "seed", 0);

    c.task.kind = task_kind_from_string(detail::get_string(task, "kind", "convex2d"));
    const bool fixed2d = c.task.kind == TaskKind::convex2d || c.task.kind == TaskKind::nonconvex2d;
    c.task.d = detail::get_value<Eigen::Index>(task, "task", "d", fixed2d ? 2 : 32);
    if (fixed2d && c.task.d != 2) throw ConfigError("[task] d must be 2 for " + std::string(to_string(c.task.kind)));
    if (c.task.d < (c.task.kind == TaskKind::piecewise_quadratic ? 2 : 1)) throw ConfigError("[task] d is too small");
    c.task.components = detail::get_value<int>(task, "task", "components", 5);
    if (c.task.components < 1) throw ConfigError("[task] components must be >= 1");
    c.task.seed = detail::get_value<std::uint64_t>(task, "task", "seed", 0);

    c.model.kind = detail::get_string(model, "kind", "gradnet_m");
    if (c.model.kind != "single_layer" && c.model.kind != "gradnet_m" && c.model.kind != "gradnet_c")
      throw ConfigError("[model] kind must be single_layer, gradnet_m or gradnet_c");
    c.model.mode = constraint_mode_from_string(detail::get_string(model, "mode", "monotone"));
    c.model.activation = detail::activation_spec(model);
    c.model.modules = detail::get_value<std::size_t>(model, "model", "modules", 4);
    c.model.layers = detail::get_value<std::size_t>(model, "model", "layers", 3);
    c.model.hidden = detail::get_value<Eigen::Index>(model, "model", "hidden", 0);
    c.model.param_budget = detail::get_value<std::size_t>(model, "model", "param_budget", 0);
    c.model.rho = rho_from_string(detail::get_string(model, "rho", "one"));
    c.model.init_seed = detail::get_value<std::uint64_t>(model, "model", "init_seed", 0);
    if (c.model.hidden < 0) throw ConfigError("[model] hidden must be >= 0");
    if (c.model.kind == "gradnet_m" && c.model.modules < 1) throw ConfigError("[model] modules must be >= 1");
    if (c.model.kind == "gradnet_c" && c.model.layers < 1) throw ConfigError("[model] layers must be >= 1");

    if (auto lr = train.get_child_optional("learning_rates"))
      c.train.learning_rates = detail::parse_list("train", "learning_rates", lr->data());
    for (double lr : c.train.learning_rates)
      if (!(lr >= 0.0)) throw ConfigError("[train] learning rates must be >= 0");
    auto& b = c.train.base;
    b.batch_size = detail::get_value<Eigen::Index>(train, "train", "batch_size", 1000);
    b.iterations = detail::get_value<std::size_t>(train, "train", "iterations", 10000);
    b.epochs = detail::get_value<std::size_t>(train, "train", "epochs", 200);
    b.eval_interval = detail::get_value<std::size_t>(train, "train", "eval_interval", 100);
    b.seed = detail::get_value<std::uint64_t>(train, "train", "seed", 0);
    b.projection = detail::get_bool(train, "train", "projection", true);
    b.divergence_threshold = detail::get_value<double>(train, "train", "divergence_threshold", 1e6);
    c.train.train_points = detail::get_value<Eigen::Index>(train, "train", "train_points", 0);
    c.train.val_points = detail::get_value<Eigen::Index>(train, "train", "val_points", 10000);
    c.train.test_points = detail::get_value<Eigen::Index>(train, "train", "test_points", 10000);
    if (c.train.train_points < 0 || c.train.val_points < 1 || c.train.test_points < 1)
      throw ConfigError("[train] train_points must be >= 0 and val/test points >= 1");
    TrainConfig probe = b;
    probe.learning_rate = 0.0;
    probe.validate();

    auto& h = c.hamiltonian;
    h.orbit.convention = potential_convention_from_string(detail::get_string(ham, "convention", "inverse_distance"));
    h.orbit.m1 = detail::get_value<double>(ham, "hamiltonian", "m1", 1.0);
    h.orbit.m2 = detail::get_value<double>(ham, "hamiltonian", "m2", 1.0);
    h.orbit.g = detail::get_value<double>(ham, "hamiltonian", "g", 1.0);
    h.orbit.dt = detail::get_value<double>(ham, "hamiltonian", "dt", 0.03);
    h.orbit.steps = detail::get_value<std::size_t>(ham, "hamiltonian", "steps", 2000);
    h.orbit.truth_substeps = detail::get_value<std::size_t>(ham, "hamiltonian", "truth_substeps", 10);
    h.orbit.validate();
    h.model = detail::get_string(ham, "model", "network");
    if (h.model != "network" && h.model != "ground_truth" && h.model != "zero")
      throw ConfigError("[hamiltonian] model must be network, ground_truth or zero");
    h.train_orbits = detail::get_value<std::size_t>(ham, "hamiltonian", "train_orbits", 200);
    h.states_per_orbit = detail::get_value<std::size_t>(ham, "hamiltonian", "states_per_orbit", 50);
    h.stride = detail::get_value<std::size_t>(ham, "hamiltonian", "stride", 10);
    h.test_orbits = detail::get_value<std::size_t>(ham, "hamiltonian", "test_orbits", 5);
    h.audit_points = detail::get_value<std::size_t>(ham, "hamiltonian", "audit_points", 100);
    h.seed = detail::get_value<std::uint64_t>(ham, "hamiltonian", "seed", 0);
    if (h.states_per_orbit < 1 || h.stride < 1 || h.test_orbits < 1)
      throw ConfigError("[hamiltonian] states_per_orbit, stride and test_orbits must be >= 1");
    if (c.type == "hamiltonian" && h.model == "network" && h.train_orbits < 1)
      throw ConfigError("[hamiltonian] train_orbits must be >= 1");

    c.output_dir = detail::get_string(out, "dir", "");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_experiment_config(in);
}

// ---------------------------------------------------------------------------
// Model construction.

struct ModelBuild {
  NetworkPtr net;
  Eigen::Index hidden = 0;
  std::size_t budget = 0;
  double budget_error = 0.0;
};

/// Build a freshly initialized model for input dimension d. When no hidden
/// width is set, it is fitted so the parameter count is within 2% of the budget.
inline ModelBuild build_model(const ModelSection& m, Eigen::Index d, std::uint64_t seed) {
  ModelBuild out;
  out.budget = m.param_budget ? m.param_budget : static_cast<std::size_t>(1024 * d);
  out.hidden = m.hidden;
  if (out.hidden == 0) {
    BudgetFit fit;
    if (m.kind == "single_layer")
      fit = fit_hidden_to_budget(out.budget, [&](Eigen::Index h) { return single_layer_param_count(d, h, m.activation); });
    else if (m.kind == "gradnet_m")
      fit = fit_hidden_to_budget(out.budget,
                                 [&](Eigen::Index h) { return gradnet_m_param_count(d, m.modules, h, m.activation); });
    else
      fit = fit_hidden_to_budget(out.budget,
                                 [&](Eigen::Index h) { return gradnet_c_param_count(d, h, m.layers, m.activation); });
    if (fit.relative_error > 0.02)
      throw ConfigError("no hidden width brings the parameter count within 2% of " + std::to_string(out.budget));
    out.hidden = fit.hidden;
  }
  Rng rng(seed);
  try {
    if (m.kind == "single_layer")
      out.net = make_single_layer(d, out.hidden, m.activation, m.mode, &rng);
    else if (m.kind == "gradnet_m")
      out.net = make_gradnet_m(d, m.modules, out.hidden, m.activation, m.rho, m.mode, &rng);
    else
      out.net = make_gradnet_c(d, out.hidden, m.layers, m.activation, m.mode, &rng);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[model] ") + e.what());
  }
  out.budget_error = std::abs(static_cast<double>(out.net->num_params()) - static_cast<double>(out.budget)) /
                     static_cast<double>(out.budget);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient-field experiments.

struct TrialResult {
  std::size_t trial = 0;
  std::string model;
  std::string mode;
  Eigen::Index d = 0;
  std::size_t params = 0;
  double best_lr = 0.0;
  double val_mse = 0.0;
  double test_mse = 0.0;
  double mse_db = 0.0;
  bool failed = false;
  std::vector<std::pair<double, TrainReport>> runs;  // one per learning rate
  NetworkPtr best_net;
};

struct ExperimentResult {
  std::vector<TrialResult> trials;
  Summary db;
  bool failed = false;
  std::string message;
};

inline Dataset make_task_dataset(const Task& task, Eigen::Index n, std::uint64_t seed) {
  Dataset ds;
  ds.x = sample_domain(task, n, seed);
  ds.y = task.gradient_batch(ds.x);
  return ds;
}

inline Task make_task(const TaskSection& t) {
  switch (t.kind) {
    case TaskKind::convex2d: return Task::convex2d();
    case TaskKind::nonconvex2d: return Task::nonconvex2d();
    case TaskKind::piecewise_quadratic: return Task::piecewise_quadratic(t.d);
    case TaskKind::gmm_score: return Task::gmm_score(t.d, t.components, t.seed);
  }
  throw ConfigError("unknown task");
}

/// Runs trials x learning rates; per trial the learning rate with the lowest
/// validation MSE is kept and scored on a held-out test set.
inline ExperimentResult run_gradient_field(const ExperimentConfig& cfg) {
  const Task task = make_task(cfg.task);
  const Eigen::Index d = task.dim();
  ExperimentResult res;
  std::vector<double> dbs;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    TrialResult tr;
    tr.trial = trial;
    tr.d = d;
    const std::uint64_t data_seed = mix_seed(cfg.seed, trial, 1);
    const Dataset val = make_task_dataset(task, cfg.train.val_points, mix_seed(data_seed, 0, 2));
    const Dataset test = make_task_dataset(task, cfg.train.test_points, mix_seed(data_seed, 0, 3));
    TrainSource source;
    if (cfg.train.train_points > 0) {
      source.fixed = make_task_dataset(task, cfg.train.train_points, mix_seed(data_seed, 0, 4));
    } else {
      source.sampler = [&task](Eigen::Index n, std::mt19937_64& rng) {
        Dataset b;
        b.x = sample_unit_cube(task.dim(), n, rng);
        b.y = task.gradient_batch(b.x);
        return b;
      };
    }
    const std::uint64_t init_seed = mix_seed(cfg.model.init_seed, trial, 5);
    double best_val = std::numeric_limits<double>::infinity();
    for (double lr : cfg.train.learning_rates) {
      ModelBuild mb = build_model(cfg.model, d, init_seed);
      tr.model = display_name(*mb.net);
      tr.mode = to_string(mb.net->mode());
      tr.params = mb.net->num_params();
      TrainConfig tc = cfg.train.base;
      tc.learning_rate = lr;
      tc.seed = mix_seed(cfg.train.base.seed, trial, 6);
      TrainReport rep = train_loop(*mb.net, source, val, tc);
      if (!rep.diverged && rep.final_val_mse < best_val) {
        best_val = rep.final_val_mse;
        tr.best_lr = lr;
        tr.best_net = std::move(mb.net);
      }
      tr.runs.emplace_back(lr, std::move(rep));
    }
    if (!tr.best_net) {
      tr.failed = true;
      res.failed = true;
      res.message = "every learning rate diverged in trial " + std::to_string(trial);
      tr.val_mse = tr.test_mse = tr.mse_db = std::numeric_limits<double>::quiet_NaN();
    } else {
      tr.val_mse = best_val;
      tr.test_mse = evaluate_mse(*tr.best_net, test);
      tr.mse_db = to_db(tr.test_mse);
      dbs.push_back(tr.mse_db);
    }
    res.trials.push_back(std::move(tr));
  }
  res.db = summarize(dbs);
  return res;
}

inline std::string lr_tag(double lr) {
  std::string s = csv_num(lr);
  for (char& ch : s)
    if (ch == '.') ch = 'p';
  return s;
}

/// Writes metrics.csv, summary.csv, curve_trial<k>_lr<lr>.csv,
/// model_trial<k>.json, and timing.txt (the only non-deterministic file).
inline void write_gradient_field_outputs(const ExperimentResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "metrics.csv");
    m << "trial,model,mode,d,params,learning_rate,val_mse,test_mse,mse_db\n";
    for (const auto& t : res.trials)
      m << t.trial << ',' << t.model << ',' << t.mode << ',' << t.d << ',' << t.params << ',' << csv_num(t.best_lr)
        << ',' << csv_num(t.val_mse) << ',' << csv_num(t.test_mse) << ',' << csv_num(t.mse_db) << '\n';
  }
  {
    std::ofstream s(dir / "summary.csv");
    s << "model,d,trials,mean_mse_db,std_mse_db,stderr_mse_db\n";
    const std::string name = res.trials.empty() ? "" : res.trials.front().model;
    const Eigen::Index d = res.trials.empty() ? 0 : res.trials.front().d;
    s << name << ',' << d << ',' << res.db.n << ',' << csv_num(res.db.mean) << ',' << csv_num(res.db.std) << ','
      << csv_num(res.db.stderr_) << '\n';
  }
  std::ofstream timing(dir / "timing.txt");
  for (const auto& t : res.trials) {
    for (const auto& [lr, rep] : t.runs) {
      std::ofstream c(dir / ("curve_trial" + std::to_string(t.trial) + "_lr" + lr_tag(lr) + ".csv"));
      c << "iteration,train_mse,val_mse\n";
      for (const auto& p : rep.curve)
        c << p.iteration << ',' << csv_num(p.train_mse) << ',' << csv_num(p.val_mse) << '\n';
      timing << "trial " << t.trial << " lr " << lr << ": " << rep.wall_time << " s\n";
    }
    if (t.best_net) save_network_file(*t.best_net, (dir / ("model_trial" + std::to_string(t.trial) + ".json")).string());
  }
}

inline std::string format_summary_line(const ExperimentResult& res) {
  std::ostringstream os;
  const std::string name = res.trials.empty() ? "model" : res.trials.front().model;
  const Eigen::Index d = res.trials.empty() ? 0 : res.trials.front().d;
  os << std::fixed << std::setprecision(2) << name << " d=" << d << ": MSE (dB) " << res.db.mean << " ± "
     << res.db.std << " (std), ± " << res.db.stderr_ << " (stderr) over " << res.db.n << " trials";
  return os.str();
}

// ---------------------------------------------------------------------------
// Hamiltonian experiments.

struct HamiltonianResult {
  std::string model;
  UnrollMetrics metrics;
  std::optional<AuditCheck> symmetry;
  std::optional<TrainReport> training;
  NetworkPtr net;
  std::vector<Trajectory> model_trajectories;
  std::vector<Trajectory> truth_trajectories;
  bool failed = false;
  std::string message;
};

inline std::vector<PhaseState> hamiltonian_test_starts(const HamiltonianSection& h) {
  std::mt19937_64 rng(mix_seed(h.seed, 0, 7));
  std::vector<PhaseState> starts;
  for (std::size_t k = 0; k < h.test_orbits; ++k) starts.push_back(sample_orbit_state(rng, h.orbit));
  return starts;
}

inline HamiltonianResult run_hamiltonian(const ExperimentConfig& cfg) {
  const auto& h = cfg.hamiltonian;
  HamiltonianResult res;
  res.model = h.model;
  PhaseField field;
  if (h.model == "ground_truth") {
    field = true_dynamics(h.orbit);
  } else if (h.model == "zero") {
    field = [](const Vector& z) { return Vector(Vector::Zero(z.size())); };
  } else {
    const HamiltonianDataset ds =
        generate_dataset(h.orbit, h.train_orbits, h.states_per_orbit, h.stride, mix_seed(h.seed, 0, 8));
    // Validation: a small set of separate orbits.
    const HamiltonianDataset vs = generate_dataset(h.orbit, std::max<std::size_t>(1, h.train_orbits / 10),
                                                   h.states_per_orbit, h.stride, mix_seed(h.seed, 0, 9));
    Dataset all{ds.states, ds.targets};
    Dataset val{vs.states, vs.targets};
    TrainSource source;
    source.sampler = [&all](Eigen::Index n, std::mt19937_64& rng) {
      std::uniform_int_distribution<Eigen::Index> pick(0, all.size() - 1);
      Dataset b{Matrix(all.x.rows(), n), Matrix(all.y.rows(), n)};
      for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index k = pick(rng);
        b.x.col(j) = all.x.col(k);
        b.y.col(j) = all.y.col(k);
      }
      return b;
    };
    double best_val = std::numeric_limits<double>::infinity();
    for (double lr : cfg.train.learning_rates) {
      ModelBuild mb = build_model(cfg.model, 8, mix_seed(cfg.model.init_seed, 0, 5));
      TrainConfig tc = cfg.train.base;
      tc.learning_rate = lr;
      tc.seed = mix_seed(cfg.train.base.seed, 0, 6);
      TrainReport rep = train_loop(*mb.net, source, val, tc);
      if (!rep.diverged && rep.final_val_mse < best_val) {
        best_val = rep.final_val_mse;
        res.net = std::move(mb.net);
        res.training = std::move(rep);
      }
    }
    if (!res.net) {
      res.failed = true;
      res.message = "training diverged for every learning rate";
      return res;
    }
    res.model = display_name(*res.net);
    field = model_dynamics(*res.net);
    // Audit symmetry over the region the orbits occupy.
    Vector lo(8), hi(8);
    lo << Vector::Constant(4, -1.5), Vector::Constant(4, -0.6);
    hi << Vector::Constant(4, 1.5), Vector::Constant(4, 0.6);
    res.symmetry = audit_symmetry(batched(*res.net), Box{lo, hi}, h.audit_points, 1e-5, mix_seed(h.seed, 0, 10));
  }
  res.metrics = evaluate_unrolled(field, h.orbit, hamiltonian_test_starts(h), &res.model_trajectories,
                                  &res.truth_trajectories);
  res.failed = res.metrics.failed || (res.symmetry && !res.symmetry->pass);
  if (res.metrics.failed) res.message = "unroll failed: " + res.metrics.error;
  else if (res.failed) res.message = "symmetry audit failed";
  return res;
}

/// Writes metrics.csv, trajectory_orbit<k>_{model,truth}.csv, and for trained
/// models curve.csv, model.json, and timing.txt.
inline void write_hamiltonian_outputs(HamiltonianResult& res, const OrbitConfig& orbit,
                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "metrics.csv");
    m << "model,coordinate_mse,coordinate_mse_db,energy_mse,energy_mse_db,symmetry_worst,failed\n";
    m << res.model << ',' << csv_num(res.metrics.coordinate_mse) << ',' << csv_num(res.metrics.coordinate_mse_db) << ','
      << csv_num(res.metrics.energy_mse) << ',' << csv_num(res.metrics.energy_mse_db) << ','
      << (res.symmetry ? csv_num(res.symmetry->worst_violation) : std::string("")) << ',' << (res.failed ? 1 : 0)
      << '\n';
  }
  for (std::size_t k = 0; k < res.model_trajectories.size(); ++k) {
    std::ofstream a(dir / ("trajectory_orbit" + std::to_string(k) + "_model.csv"));
    write_trajectory_csv(a, res.model_trajectories[k], orbit);
    std::ofstream b(dir / ("trajectory_orbit" + std::to_string(k) + "_truth.csv"));
    write_trajectory_csv(b, res.truth_trajectories[k], orbit);
  }
  if (res.training) {
    std::ofstream c(dir / "curve.csv");
    c << "iteration,train_mse,val_mse\n";
    for (const auto& p : res.training->curve)
      c << p.iteration << ',' << csv_num(p.train_mse) << ',' << csv_num(p.val_mse) << '\n';
    std::ofstream t(dir / "timing.txt");
    t << "training: " << res.training->wall_time << " s\n";
  }
  if (res.net) save_network_file(*res.net, (dir / "model.json").string());
}

}  // namespace gradnet

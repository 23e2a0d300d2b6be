#include "support.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gradnet;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_experiment_config(in);
}

const char* kSmall = R"(
[experiment]
trials = 2
seed = 4
[task]
kind = convex2d
[model]
kind = gradnet_m
activation = softmax
modules = 2
hidden = 4
[train]
learning_rates = 0.01, 0.001
batch_size = 50
epochs = 2
train_points = 200
val_points = 100
test_points = 100
eval_interval = 2
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gradnet_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config parsing fills every section", "[experiment]") {
  const ExperimentConfig c = parse(kSmall);
  CHECK(c.type == "gradient_field");
  CHECK(c.trials == 2);
  CHECK(c.seed == 4);
  CHECK(c.task.kind == TaskKind::convex2d);
  CHECK(c.task.d == 2);
  CHECK(c.model.modules == 2);
  CHECK(c.model.hidden == 4);
  CHECK(c.model.mode == ConstraintMode::monotone);
  CHECK(c.train.learning_rates == std::vector<double>{0.01, 0.001});
  CHECK(c.train.base.batch_size == 50);
  CHECK(c.train.train_points == 200);
  CHECK(c.output_dir.empty());
}

TEST_CASE("config errors are reported as ConfigError", "[experiment]") {
  CHECK_THROWS_AS(parse("[bogus]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[train]\nlearning_rat = 0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[train]\nbatch_size = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse("[train]\nbatch_size = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse("[train]\nlearning_rates = 0.1, -1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[task]\nkind = convex2d\nd = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse("[task]\nkind = spiral\n"), ConfigError);
  CHECK_THROWS_AS(parse("[model]\nkind = transformer\n"), ConfigError);
  CHECK_THROWS_AS(parse("[experiment]\ntrials = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse("[hamiltonian]\nmodel = oracle\n"), ConfigError);
  CHECK_THROWS_AS(parse("[hamiltonian]\ndt = -0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[experiment\n"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("summaries report the sample std and the standard error", "[experiment]") {
  const Summary s = summarize({-10.0, -12.0, -14.0});
  CHECK(s.n == 3);
  CHECK_THAT(s.mean, WithinAbs(-12.0, 1e-15));
  CHECK_THAT(s.std, WithinAbs(2.0, 1e-15));
  CHECK_THAT(s.stderr_, WithinAbs(2.0 / std::sqrt(3.0), 1e-15));
  CHECK(summarize({1.5}).std == 0.0);
}

TEST_CASE("decibel conversions", "[experiment]") {
  CHECK(to_db(1.0) == 0.0);
  CHECK_THAT(to_db(0.01), WithinAbs(-20.0, 1e-12));
  CHECK_THAT(to_db(1e-3), WithinAbs(-30.0, 1e-12));
}

TEST_CASE("learning-rate tags and csv numbers", "[experiment]") {
  CHECK(lr_tag(0.005) == "0p005");
  CHECK(csv_num(0.1) == "0.1");
  CHECK(csv_num(1.0 / 3.0) == "0.3333333333333333");
}

TEST_CASE("parameter budgets are met within 2%", "[experiment][property]") {
  for (const char* kind : {"single_layer", "gradnet_m", "gradnet_c"}) {
    for (Eigen::Index d : {2, 8, 32}) {
      ModelSection m;
      m.kind = kind;
      m.activation = std::string(kind) == "gradnet_c" ? json{{"kind", "tanh"}} : json{{"kind", "softmax"}, {"t", 1.0}};
      const ModelBuild b = build_model(m, d, 1);
      INFO(kind << " d=" << d << " params " << b.net->num_params());
      CHECK(b.budget == static_cast<std::size_t>(1024 * d));
      CHECK(b.budget_error <= 0.02);
    }
  }
}

TEST_CASE("zero learning rate leaves the validation error at its initial value", "[experiment]") {
  ExperimentConfig c = parse(kSmall);
  c.trials = 1;
  c.train.learning_rates = {0.0};
  const ExperimentResult res = run_gradient_field(c);
  REQUIRE(res.trials.size() == 1);
  ModelBuild fresh = build_model(c.model, 2, mix_seed(c.model.init_seed, 0, 5));
  const Dataset val = make_task_dataset(Task::convex2d(), c.train.val_points, mix_seed(mix_seed(c.seed, 0, 1), 0, 2));
  CHECK(res.trials[0].val_mse == evaluate_mse(*fresh.net, val));
}

TEST_CASE("gradient field runs pick the best learning rate and write outputs", "[experiment]") {
  const ExperimentConfig c = parse(kSmall);
  const ExperimentResult res = run_gradient_field(c);
  REQUIRE(res.trials.size() == 2);
  CHECK_FALSE(res.failed);
  for (const auto& t : res.trials) {
    REQUIRE(t.runs.size() == 2);
    const double v0 = t.runs[0].second.final_val_mse, v1 = t.runs[1].second.final_val_mse;
    CHECK(t.val_mse == std::min(v0, v1));
    CHECK(t.best_lr == (v0 <= v1 ? 0.01 : 0.001));
    CHECK_THAT(t.mse_db, WithinRel(to_db(t.test_mse), 1e-12));
    CHECK(t.model == "mGradNet-M");
  }
  CHECK(format_summary_line(res).find("over 2 trials") != std::string::npos);

  const fs::path dir = scratch("outputs");
  write_gradient_field_outputs(res, dir);
  for (const char* f : {"metrics.csv", "summary.csv", "timing.txt", "model_trial0.json", "model_trial1.json",
                        "curve_trial0_lr0p01.csv", "curve_trial1_lr0p001.csv"})
    CHECK(fs::exists(dir / f));
  CHECK(slurp(dir / "metrics.csv").rfind("trial,model,mode,d,params,learning_rate,val_mse,test_mse,mse_db\n", 0) == 0);
  auto loaded = load_network_file((dir / "model_trial0.json").string());
  const Matrix x = testing::random_points(2, 10, 1);
  CHECK(loaded->forward(x) == res.trials[0].best_net->forward(x));
  fs::remove_all(dir);
}

TEST_CASE("gradient field outputs are byte-identical across runs", "[experiment][property]") {
  const ExperimentConfig c = parse(kSmall);
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  write_gradient_field_outputs(run_gradient_field(c), a);
  write_gradient_field_outputs(run_gradient_field(c), b);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().filename() == "timing.txt") continue;
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    ++compared;
  }
  CHECK(compared == 8);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("hamiltonian reference models", "[experiment]") {
  ExperimentConfig c = parse("[experiment]\ntype = hamiltonian\n[hamiltonian]\nmodel = ground_truth\nsteps = 300\n"
                             "test_orbits = 2\n");
  HamiltonianResult gt = run_hamiltonian(c);
  CHECK_FALSE(gt.failed);
  CHECK(gt.metrics.coordinate_mse_db <= -80.0);
  CHECK(gt.model_trajectories.size() == 2);

  c.hamiltonian.model = "zero";
  HamiltonianResult zero = run_hamiltonian(c);
  CHECK_FALSE(zero.failed);
  CHECK(zero.metrics.energy_mse == 0.0);
  CHECK(zero.metrics.coordinate_mse > 0.0);

  const fs::path dir = scratch("ham");
  write_hamiltonian_outputs(zero, c.hamiltonian.orbit, dir);
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "trajectory_orbit1_truth.csv"));
  CHECK_FALSE(fs::exists(dir / "model.json"));
  fs::remove_all(dir);
}

TEST_CASE("a small trained hamiltonian model is audited", "[experiment]") {
  const ExperimentConfig c = parse(R"(
[experiment]
type = hamiltonian
[model]
kind = gradnet_m
mode = none
activation = softmax
modules = 2
hidden = 8
[train]
learning_rates = 0.01
batch_size = 50
iterations = 50
eval_interval = 25
[hamiltonian]
train_orbits = 4
states_per_orbit = 10
steps = 50
test_orbits = 1
audit_points = 20
)");
  const HamiltonianResult res = run_hamiltonian(c);
  REQUIRE(res.net);
  REQUIRE(res.symmetry.has_value());
  CHECK(res.symmetry->pass);
  CHECK(std::isfinite(res.metrics.coordinate_mse));
  CHECK(res.training->iterations_run == 50);
}

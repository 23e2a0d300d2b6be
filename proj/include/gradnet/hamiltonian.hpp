#pragma once

// Two-body Hamiltonian system in the plane. The phase state is
// z = (q, p) in R^8 with q = (q1x, q1y, q2x, q2y) and p likewise. A
// learned model approximates grad H = (dH/dq, dH/dp), so its dynamics are
// dq/dt = out[4:8] and dp/dt = -out[0:4].

#include "gradnet/networks.hpp"
#include "gradnet/numerics.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace gradnet {

enum class PotentialConvention { inverse_distance, inverse_square };

inline const char* to_string(PotentialConvention c) {
  return c == PotentialConvention::inverse_distance ? "inverse_distance" : "inverse_square";
}

inline PotentialConvention potential_convention_from_string(const std::string& s) {
  if (s == "inverse_distance") return PotentialConvention::inverse_distance;
  if (s == "inverse_square") return PotentialConvention::inverse_square;
  throw std::invalid_argument("unknown potential convention: " + s);
}

struct OrbitConfig {
  double m1 = 1.0;
  double m2 = 1.0;
  double g = 1.0;
  double dt = 0.03;
  std::size_t steps = 2000;
  std::size_t truth_substeps = 10;  // ground truth integrates at dt / truth_substeps
  PotentialConvention convention = PotentialConvention::inverse_distance;

  double total_mass() const { return m1 + m2; }
  double reduced_mass() const { return m1 * m2 / (m1 + m2); }

  void validate() const {
    if (!(m1 > 0.0 && m2 > 0.0 && g > 0.0)) throw std::invalid_argument("masses and g must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (truth_substeps < 1) throw std::invalid_argument("truth_substeps must be >= 1");
  }
};

using PhaseState = Vector;  // (q1x, q1y, q2x, q2y, p1x, p1y, p2x, p2y)
using PhaseField = std::function<Vector(const Vector&)>;

inline constexpr double kMinSeparation = 1e-6;

namespace detail {

inline Eigen::Vector2d separation(const Vector& z) { return z.segment<2>(0) - z.segment<2>(2); }

inline double checked_distance(const Vector& z) {
  require_dims(z.size() == 8, "two-body state must have 8 entries");
  const double r = separation(z).norm();
  if (!(r > kMinSeparation)) throw NumericError("two-body state has coincident bodies");
  return r;
}

}  // namespace detail

/// ||p1 + p2||^2 / (m1 + m2) + (||p1||^2 + ||p2||^2) / (2 mu) + V(||q1 - q2||)
inline double hamiltonian_value(const PhaseState& z, const OrbitConfig& cfg) {
  const double r = detail::checked_distance(z);
  const Eigen::Vector2d p1 = z.segment<2>(4), p2 = z.segment<2>(6);
  const double kinetic =
      (p1 + p2).squaredNorm() / cfg.total_mass() + (p1.squaredNorm() + p2.squaredNorm()) / (2.0 * cfg.reduced_mass());
  const double k = cfg.g * cfg.m1 * cfg.m2;
  const double potential = cfg.convention == PotentialConvention::inverse_distance ? -k / r : k / (r * r);
  return kinetic + potential;
}

/// grad H = (dH/dq, dH/dp) in R^8.
inline Vector hamiltonian_grads(const PhaseState& z, const OrbitConfig& cfg) {
  const double r = detail::checked_distance(z);
  const Eigen::Vector2d sep = detail::separation(z);
  const Eigen::Vector2d p1 = z.segment<2>(4), p2 = z.segment<2>(6);
  const double k = cfg.g * cfg.m1 * cfg.m2;
  // dV/dr, then dV/dq1 = dV/dr * sep / r and dV/dq2 = -dV/dq1.
  const double dv_dr = cfg.convention == PotentialConvention::inverse_distance ? k / (r * r) : -2.0 * k / (r * r * r);
  const Eigen::Vector2d dq1 = dv_dr * sep / r;
  const Eigen::Vector2d cm = 2.0 * (p1 + p2) / cfg.total_mass();
  Vector g(8);
  g << dq1, -dq1, cm + p1 / cfg.reduced_mass(), cm + p2 / cfg.reduced_mass();
  return g;
}

/// Phase-space velocity (dq/dt, dp/dt) from an estimate of grad H.
inline Vector phase_velocity_from_gradient(const Vector& grad_h) {
  Vector v(8);
  v << grad_h.segment<4>(4), -grad_h.segment<4>(0);
  return v;
}

inline PhaseField true_dynamics(const OrbitConfig& cfg) {
  return [cfg](const Vector& z) { return phase_velocity_from_gradient(hamiltonian_grads(z, cfg)); };
}

/// Dynamics induced by a model of grad H over R^8.
inline PhaseField model_dynamics(const Network& model) {
  require_dims(model.dim() == 8, "Hamiltonian model must act on R^8");
  return [&model](const Vector& z) { return phase_velocity_from_gradient(model(z)); };
}

struct Trajectory {
  Matrix states;  // 8 x (completed + 1)
  std::size_t completed = 0;
  bool failed = false;
  std::string error;
};

/// Classic RK4 with `steps` outer steps of size dt, each split into `substeps`.
/// Returns the states at the outer steps; stops early on a non-finite state.
inline Trajectory integrate_rk4(const PhaseField& f, const Vector& z0, double dt, std::size_t steps,
                                std::size_t substeps = 1) {
  Trajectory tr;
  tr.states.resize(z0.size(), static_cast<Eigen::Index>(steps + 1));
  tr.states.col(0) = z0;
  Vector z = z0;
  const double h = dt / static_cast<double>(substeps);
  try {
    for (std::size_t s = 1; s <= steps; ++s) {
      for (std::size_t k = 0; k < substeps; ++k) {
        const Vector k1 = f(z);
        const Vector k2 = f(z + 0.5 * h * k1);
        const Vector k3 = f(z + 0.5 * h * k2);
        const Vector k4 = f(z + h * k3);
        z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      if (!z.allFinite()) throw NumericError("integrate_rk4: non-finite state at step " + std::to_string(s));
      tr.states.col(static_cast<Eigen::Index>(s)) = z;
      tr.completed = s;
    }
  } catch (const NumericError& e) {
    tr.failed = true;
    tr.error = e.what();
  }
  tr.states.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(tr.completed + 1));
  return tr;
}

/// Near-circular bound orbit: each body at distance R from the origin (the
/// centre of mass for equal masses), opposite momenta, speed scaled by
/// `speed_factor` relative to the circular orbit.
inline PhaseState orbit_initial_state(double radius, double angle, double speed_factor, bool clockwise,
                                      const OrbitConfig& cfg) {
  const double mu = cfg.reduced_mass();
  const double s = 2.0 * radius;
  const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
  const Eigen::Vector2d q1 = (cfg.m2 / cfg.total_mass()) * s * dir;
  const Eigen::Vector2d q2 = -(cfg.m1 / cfg.total_mass()) * s * dir;
  // The relative coordinate r = q1 - q2 obeys r'' = -k r / |r|^3 with
  // k = 2 g m1 m2 / mu and r' = 2 p / mu, giving |p| = (mu / 2) sqrt(k / s).
  const double k = 2.0 * cfg.g * cfg.m1 * cfg.m2 / mu;
  const double pmag = speed_factor * 0.5 * mu * std::sqrt(k / s);
  Eigen::Vector2d tangent(-dir.y(), dir.x());
  if (clockwise) tangent = -tangent;
  PhaseState z(8);
  z << q1, q2, pmag * tangent, -pmag * tangent;
  return z;
}

struct OrbitSampling {
  double radius_min = 0.5;
  double radius_max = 1.5;
  double speed_jitter = 0.05;  // speed factor drawn from [1 - j, 1 + j]
};

inline PhaseState sample_orbit_state(std::mt19937_64& rng, const OrbitConfig& cfg, const OrbitSampling& os = {}) {
  std::uniform_real_distribution<double> ur(os.radius_min, os.radius_max);
  std::uniform_real_distribution<double> ua(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> uf(1.0 - os.speed_jitter, 1.0 + os.speed_jitter);
  std::bernoulli_distribution coin(0.5);
  const double radius = ur(rng);
  const double angle = ua(rng);
  const double factor = uf(rng);
  const bool cw = coin(rng);
  return orbit_initial_state(radius, angle, factor, cw, cfg);
}

/// Ground-truth trajectory at the outer step dt, integrated with substeps.
inline Trajectory ground_truth_trajectory(const PhaseState& z0, const OrbitConfig& cfg, std::size_t steps) {
  return integrate_rk4(true_dynamics(cfg), z0, cfg.dt, steps, cfg.truth_substeps);
}

struct HamiltonianDataset {
  Matrix states;   // 8 x n
  Matrix targets;  // 8 x n, grad H at each state
  std::size_t orbits = 0;
  std::size_t rejected = 0;
};

/// States along n_orbits ground-truth orbits, with grad H targets. Orbits
/// whose separation leaves [0.1, 10] are rejected and resampled.
inline HamiltonianDataset generate_dataset(const OrbitConfig& cfg, std::size_t n_orbits, std::size_t states_per_orbit,
                                           std::size_t stride, std::uint64_t seed, const OrbitSampling& os = {}) {
  cfg.validate();
  if (states_per_orbit < 1 || stride < 1) throw std::invalid_argument("states_per_orbit and stride must be >= 1");
  std::mt19937_64 rng(seed);
  HamiltonianDataset ds;
  ds.states.resize(8, static_cast<Eigen::Index>(n_orbits * states_per_orbit));
  Eigen::Index col = 0;
  const std::size_t steps = (states_per_orbit - 1) * stride;
  while (ds.orbits < n_orbits) {
    const PhaseState z0 = sample_orbit_state(rng, cfg, os);
    const Trajectory tr = ground_truth_trajectory(z0, cfg, steps);
    bool ok = !tr.failed;
    for (Eigen::Index j = 0; ok && j < tr.states.cols(); ++j) {
      const double r = detail::separation(tr.states.col(j)).norm();
      ok = r > 0.1 && r < 10.0;
    }
    if (!ok) {
      ++ds.rejected;
      continue;
    }
    for (std::size_t k = 0; k < states_per_orbit; ++k) ds.states.col(col++) = tr.states.col(static_cast<Eigen::Index>(k * stride));
    ++ds.orbits;
  }
  ds.targets.resize(8, ds.states.cols());
  for (Eigen::Index j = 0; j < ds.states.cols(); ++j) ds.targets.col(j) = hamiltonian_grads(ds.states.col(j), cfg);
  return ds;
}

struct UnrollMetrics {
  double coordinate_mse = 0.0;
  double energy_mse = 0.0;
  double coordinate_mse_db = 0.0;
  double energy_mse_db = 0.0;
  bool failed = false;
  std::string error;
};

/// Unroll `field` from each initial state with RK4 at cfg.dt for cfg.steps and
/// compare positions against the ground truth and energies against H(start).
/// Errors are pooled over all orbits, steps, and coordinates.
inline UnrollMetrics evaluate_unrolled(const PhaseField& field, const OrbitConfig& cfg,
                                       const std::vector<PhaseState>& starts,
                                       std::vector<Trajectory>* model_trajectories = nullptr,
                                       std::vector<Trajectory>* truth_trajectories = nullptr) {
  cfg.validate();
  UnrollMetrics m;
  double coord_sum = 0.0, energy_sum = 0.0;
  std::size_t coord_n = 0, energy_n = 0;
  for (const auto& z0 : starts) {
    Trajectory truth = ground_truth_trajectory(z0, cfg, cfg.steps);
    Trajectory pred = integrate_rk4(field, z0, cfg.dt, cfg.steps);
    if (pred.failed || truth.failed) {
      m.failed = true;
      m.error = pred.failed ? pred.error : truth.error;
    }
    const double h0 = hamiltonian_value(z0, cfg);
    const Eigen::Index n = std::min(pred.states.cols(), truth.states.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
      coord_sum += (pred.states.col(j).head<4>() - truth.states.col(j).head<4>()).squaredNorm();
      coord_n += 4;
      double h;
      try {
        h = hamiltonian_value(pred.states.col(j), cfg);
      } catch (const NumericError& e) {
        m.failed = true;
        m.error = e.what();
        continue;
      }
      energy_sum += (h - h0) * (h - h0);
      ++energy_n;
    }
    if (model_trajectories) model_trajectories->push_back(std::move(pred));
    if (truth_trajectories) truth_trajectories->push_back(std::move(truth));
  }
  m.coordinate_mse = coord_n ? coord_sum / static_cast<double>(coord_n) : 0.0;
  m.energy_mse = energy_n ? energy_sum / static_cast<double>(energy_n) : 0.0;
  m.coordinate_mse_db = to_db(m.coordinate_mse);
  m.energy_mse_db = to_db(m.energy_mse);
  if (!std::isfinite(m.coordinate_mse) || !std::isfinite(m.energy_mse)) m.failed = true;
  return m;
}

/// Largest relative energy drift |H(z_k) - H(z_0)| / |H(z_0)| along a trajectory.
inline double max_relative_energy_drift(const Trajectory& tr, const OrbitConfig& cfg) {
  const double h0 = hamiltonian_value(tr.states.col(0), cfg);
  double worst = 0.0;
  for (Eigen::Index j = 1; j < tr.states.cols(); ++j)
    worst = std::max(worst, std::abs(hamiltonian_value(tr.states.col(j), cfg) - h0) / std::abs(h0));
  return worst;
}

/// CSV with columns t,q1x,q1y,q2x,q2y,energy.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, const OrbitConfig& cfg) {
  os << "t,q1x,q1y,q2x,q2y,energy\n";
  os.precision(17);
  for (Eigen::Index j = 0; j < tr.states.cols(); ++j) {
    const Vector z = tr.states.col(j);
    double energy = std::numeric_limits<double>::quiet_NaN();
    try {
      energy = hamiltonian_value(z, cfg);
    } catch (const NumericError&) {
    }
    os << static_cast<double>(j) * cfg.dt << ',' << z[0] << ',' << z[1] << ',' << z[2] << ',' << z[3] << ',' << energy
       << '\n';
  }
}

}  // namespace gradnet

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "reachcal/datastore.h"
#include "reachcal/errors.h"

namespace reachcal {

// Axis-aligned box; the sampling support for initial states and inputs.
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const { return lower.size(); }
  bool contains(const Eigen::VectorXd& x) const;
  double volume() const;
  void validate(const char* what) const;
};

struct DuffingParams {
  double a = 1.0;
  double b = 5.0;
  double c = 0.02;
  double A = 8.0;
  double omega = 0.5;
  Box x0_box{{-1.0, -1.0}, {1.0, 1.0}};

  void validate() const;
};

struct QuadrotorParams {
  double g = 9.81;
  double K_rotor = 0.89 / 1.4;
  double d0 = 70.0;
  double d1 = 17.0;
  double n0 = 55.0;
  // (x, h, theta, xdot, hdot, thetadot)
  Box x0_box{{-1.7, 0.3, -std::numbers::pi / 12, -0.8, -1.0, -std::numbers::pi / 2},
             {1.7, 2.0, std::numbers::pi / 12, 0.8, 1.0, std::numbers::pi / 2}};
  std::vector<double> u1_range{-1.5 + 9.81 / (0.89 / 1.4), 1.5 + 9.81 / (0.89 / 1.4)};
  std::vector<double> u2_range{-std::numbers::pi / 4, std::numbers::pi / 4};

  double hover_thrust() const { return g / K_rotor; }
  void validate() const;
};

struct GrayScottParams {
  double Du = 0.2;
  double Dv = 0.1;
  double F = 0.055;
  double kappa = 0.062;
  int grid = 16;
  double dx = 1.0;
  int substeps = 50;

  // Explicit Euler step: 0.8 of the diffusion stability limit.
  double euler_dt() const { return 0.8 * dx * dx / (4.0 * std::max(Du, Dv)); }
  std::size_t state_dim() const { return 2 * static_cast<std::size_t>(grid) * grid; }
  void validate() const;
};

struct Trajectory {
  Eigen::MatrixXd states;  // K x n
  double dt = 0.0;
  std::uint64_t seed_id = 0;
};

constexpr double kDivergenceGuard = 1e6;

// Classical fourth-order Runge-Kutta step for x' = f(t, x).
template <class Field>
Eigen::VectorXd rk4_step(Field&& field, const Eigen::VectorXd& x, double t,
                         double dt) {
  if (!(dt > 0)) throw ContractViolation("rk4_step: dt must be positive");
  auto check = [t](const Eigen::VectorXd& v) {
    if (!v.allFinite()) {
      throw SimulationError("non-finite vector field near t=" + std::to_string(t));
    }
    return v;
  };
  const double h2 = 0.5 * dt;
  Eigen::VectorXd k1 = check(field(t, x));
  Eigen::VectorXd k2 = check(field(t + h2, x + h2 * k1));
  Eigen::VectorXd k3 = check(field(t + h2, x + h2 * k2));
  Eigen::VectorXd k4 = check(field(t + dt, x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::VectorXd duffing_field(const DuffingParams& p, double t,
                              const Eigen::VectorXd& x);
Eigen::VectorXd quadrotor_field(const QuadrotorParams& p, double u1, double u2,
                                const Eigen::VectorXd& x);

// K states at t_k = k * dt (k = 0 is xi), each step integrated with
// `substeps` RK4 sub-steps.
Trajectory simulate_duffing(const DuffingParams& params,
                            const Eigen::VectorXd& xi, std::size_t K, double dt,
                            int substeps);

// State at t1 under constant inputs, RK4 with step dt (the final step is
// shortened so that t1 is hit exactly).
Eigen::VectorXd simulate_quadrotor(const QuadrotorParams& params,
                                   const Eigen::VectorXd& xi, double u1,
                                   double u2, double t1, double dt);

// One explicit-Euler reaction-diffusion sub-step on the periodic grid.
// u and v are row-major grid x grid fields.
void gray_scott_euler_step(const GrayScottParams& params, double dt,
                           std::vector<double>& u, std::vector<double>& v);

// K recorded states; k = 0 is the initial field, each subsequent state follows
// `substeps` Euler sub-steps. State layout: u channel then v channel.
Trajectory simulate_gray_scott(const GrayScottParams& params,
                               const std::vector<double>& u0,
                               const std::vector<double>& v0, std::size_t K);

struct DuffingSystem {
  DuffingParams params;
  int substeps = 10;
};

struct QuadrotorSystem {
  QuadrotorParams params;
  double t1 = 5.0;
  double step = 0.01;
};

struct GrayScottSystem {
  GrayScottParams params;
};

using SystemSpec = std::variant<DuffingSystem, QuadrotorSystem, GrayScottSystem>;

std::string system_tag(const SystemSpec& system);
std::size_t state_dim(const SystemSpec& system);

// Seeded i.i.d. dataset. Trajectory i draws from its own stream keyed by
// (seed, i), so the result is independent of scheduling. Quadrotor datasets
// record the terminal state only (K must be 1, dt is reported as t1).
Dataset generate_dataset(const SystemSpec& system, std::size_t N,
                         std::size_t K, double dt, std::uint64_t seed);

// Gray-Scott initial fields for one trajectory: u=1, v=0 with a square seed
// patch (u=0.5, v=0.25) of random centre and side in {3,4,5}, plus uniform
// [-0.02, 0.02] noise on both channels.
void sample_gray_scott_initial(const GrayScottParams& params, std::uint64_t key,
                               std::vector<double>& u0, std::vector<double>& v0);

}  // namespace reachcal

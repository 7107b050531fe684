#include "reachcal/dynamics.h"

#include <algorithm>

#include "reachcal/parallel.h"
#include "reachcal/random.h"

namespace reachcal {

bool Box::contains(const Eigen::VectorXd& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) return false;
  for (std::size_t d = 0; d < dim(); ++d) {
    if (x[d] < lower[d] || x[d] > upper[d]) return false;
  }
  return true;
}

double Box::volume() const {
  double v = 1.0;
  for (std::size_t d = 0; d < dim(); ++d) v *= upper[d] - lower[d];
  return v;
}

void Box::validate(const char* what) const {
  if (lower.size() != upper.size() || lower.empty()) {
    throw ConfigError(std::string(what) + ": box bounds have mismatched sizes");
  }
  for (std::size_t d = 0; d < dim(); ++d) {
    if (!(lower[d] < upper[d])) {
      throw ConfigError(std::string(what) + ": box lower >= upper on axis " +
                        std::to_string(d));
    }
  }
}

void DuffingParams::validate() const {
  if (c < 0) throw ConfigError("duffing: damping c must be >= 0");
  if (!(omega > 0)) throw ConfigError("duffing: omega must be > 0");
  x0_box.validate("duffing x0_box");
  if (x0_box.dim() != 2) throw ConfigError("duffing: x0_box must be 2-D");
}

void QuadrotorParams::validate() const {
  if (!(g > 0)) throw ConfigError("quadrotor: g must be > 0");
  x0_box.validate("quadrotor x0_box");
  if (x0_box.dim() != 6) throw ConfigError("quadrotor: x0_box must be 6-D");
  if (u1_range.size() != 2 || !(u1_range[0] <= u1_range[1]) ||
      u2_range.size() != 2 || !(u2_range[0] <= u2_range[1])) {
    throw ConfigError("quadrotor: input ranges must be nonempty intervals");
  }
}

void GrayScottParams::validate() const {
  if (!(Du > 0) || !(Dv > 0)) throw ConfigError("gray-scott: Du, Dv must be > 0");
  if (grid < 4) throw ConfigError("gray-scott: grid must be >= 4");
  if (substeps < 1) throw ConfigError("gray-scott: substeps must be >= 1");
  if (!(dx > 0)) throw ConfigError("gray-scott: dx must be > 0");
}

Eigen::VectorXd duffing_field(const DuffingParams& p, double t,
                              const Eigen::VectorXd& x) {
  Eigen::VectorXd dx(2);
  const double pos = x[0];
  const double vel = x[1];
  dx[0] = vel;
  dx[1] = p.A * std::cos(p.omega * t) - p.c * vel + p.a * pos -
          p.b * pos * pos * pos;
  return dx;
}

Eigen::VectorXd quadrotor_field(const QuadrotorParams& p, double u1, double u2,
                                const Eigen::VectorXd& x) {
  Eigen::VectorXd dx(6);
  const double theta = x[2];
  dx[0] = x[3];
  dx[1] = x[4];
  dx[2] = x[5];
  dx[3] = u1 * p.K_rotor * std::sin(theta);
  dx[4] = -p.g + u1 * p.K_rotor * std::cos(theta);
  dx[5] = -p.d0 * theta - p.d1 * x[5] + p.n0 * u2;
  return dx;
}

namespace {
void guard(const Eigen::VectorXd& x, double t) {
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceGuard) {
    throw SimulationError("trajectory diverged at t=" + std::to_string(t));
  }
}
}  // namespace

Trajectory simulate_duffing(const DuffingParams& params,
                            const Eigen::VectorXd& xi, std::size_t K, double dt,
                            int substeps) {
  if (K < 1) throw ContractViolation("simulate_duffing: K must be >= 1");
  if (substeps < 1) throw ContractViolation("simulate_duffing: substeps must be >= 1");
  if (xi.size() != 2) throw ContractViolation("simulate_duffing: xi must be 2-D");
  Trajectory traj;
  traj.dt = dt;
  traj.states.resize(static_cast<Eigen::Index>(K), 2);
  auto field = [&params](double t, const Eigen::VectorXd& x) {
    return duffing_field(params, t, x);
  };
  Eigen::VectorXd x = xi;
  traj.states.row(0) = x.transpose();
  const double h = dt / substeps;
  for (std::size_t k = 1; k < K; ++k) {
    const double t0 = static_cast<double>(k - 1) * dt;
    for (int s = 0; s < substeps; ++s) {
      x = rk4_step(field, x, t0 + s * h, h);
    }
    guard(x, static_cast<double>(k) * dt);
    traj.states.row(static_cast<Eigen::Index>(k)) = x.transpose();
  }
  return traj;
}

Eigen::VectorXd simulate_quadrotor(const QuadrotorParams& params,
                                   const Eigen::VectorXd& xi, double u1,
                                   double u2, double t1, double dt) {
  if (xi.size() != 6) throw ContractViolation("simulate_quadrotor: xi must be 6-D");
  if (!(dt > 0) || t1 < 0) throw ContractViolation("simulate_quadrotor: bad time grid");
  auto field = [&](double, const Eigen::VectorXd& x) {
    return quadrotor_field(params, u1, u2, x);
  };
  Eigen::VectorXd x = xi;
  const auto steps = static_cast<long>(std::ceil(t1 / dt - 1e-9));
  double t = 0.0;
  for (long s = 0; s < steps; ++s) {
    const double h = std::min(dt, t1 - t);
    if (h <= 0) break;
    x = rk4_step(field, x, t, h);
    t += h;
    guard(x, t);
  }
  return x;
}

void gray_scott_euler_step(const GrayScottParams& p, double dt,
                           std::vector<double>& u, std::vector<double>& v) {
  const int g = p.grid;
  const double inv_dx2 = 1.0 / (p.dx * p.dx);
  std::vector<double> un(u.size());
  std::vector<double> vn(v.size());
  for (int r = 0; r < g; ++r) {
    const int up = (r + g - 1) % g;
    const int dn = (r + 1) % g;
    for (int c = 0; c < g; ++c) {
      const int lf = (c + g - 1) % g;
      const int rt = (c + 1) % g;
      const int i = r * g + c;
      const double lap_u =
          (u[up * g + c] + u[dn * g + c] + u[r * g + lf] + u[r * g + rt] - 4.0 * u[i]) * inv_dx2;
      const double lap_v =
          (v[up * g + c] + v[dn * g + c] + v[r * g + lf] + v[r * g + rt] - 4.0 * v[i]) * inv_dx2;
      const double uvv = u[i] * v[i] * v[i];
      un[i] = u[i] + dt * (p.Du * lap_u - uvv + p.F * (1.0 - u[i]));
      vn[i] = v[i] + dt * (p.Dv * lap_v + uvv - (p.F + p.kappa) * v[i]);
    }
  }
  u.swap(un);
  v.swap(vn);
}

Trajectory simulate_gray_scott(const GrayScottParams& params,
                               const std::vector<double>& u0,
                               const std::vector<double>& v0, std::size_t K) {
  params.validate();
  const std::size_t cells = static_cast<std::size_t>(params.grid) * params.grid;
  if (u0.size() != cells || v0.size() != cells) {
    throw ContractViolation("simulate_gray_scott: field size does not match grid");
  }
  if (K < 1) throw ContractViolation("simulate_gray_scott: K must be >= 1");
  Trajectory traj;
  const double h = params.euler_dt();
  traj.dt = h * params.substeps;
  traj.states.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(2 * cells));
  std::vector<double> u = u0;
  std::vector<double> v = v0;
  auto record = [&](std::size_t k) {
    for (std::size_t i = 0; i < cells; ++i) {
      traj.states(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = u[i];
      traj.states(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cells + i)) = v[i];
    }
  };
  record(0);
  for (std::size_t k = 1; k < K; ++k) {
    for (int s = 0; s < params.substeps; ++s) {
      gray_scott_euler_step(params, h, u, v);
      for (std::size_t i = 0; i < cells; ++i) {
        if (!std::isfinite(u[i]) || !std::isfinite(v[i]) ||
            std::abs(u[i]) > kDivergenceGuard || std::abs(v[i]) > kDivergenceGuard) {
          throw SimulationError("gray-scott field became non-finite at sub-step " +
                                std::to_string((k - 1) * params.substeps + s + 1));
        }
      }
    }
    record(k);
  }
  return traj;
}

void sample_gray_scott_initial(const GrayScottParams& params, std::uint64_t key,
                               std::vector<double>& u0, std::vector<double>& v0) {
  const int g = params.grid;
  Stream rng(key);
  u0.assign(static_cast<std::size_t>(g) * g, 1.0);
  v0.assign(static_cast<std::size_t>(g) * g, 0.0);
  const int cr = static_cast<int>(rng.uniform() * g);
  const int cc = static_cast<int>(rng.uniform() * g);
  const int side = 3 + static_cast<int>(rng.uniform() * 3);
  const int lo = -(side / 2);
  for (int dr = lo; dr < lo + side; ++dr) {
    for (int dc = lo; dc < lo + side; ++dc) {
      const int r = ((cr + dr) % g + g) % g;
      const int c = ((cc + dc) % g + g) % g;
      u0[r * g + c] = 0.5;
      v0[r * g + c] = 0.25;
    }
  }
  for (auto& x : u0) x += 0.04 * rng.uniform() - 0.02;
  for (auto& x : v0) x += 0.04 * rng.uniform() - 0.02;
}

std::string system_tag(const SystemSpec& system) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, DuffingSystem>) {
          return "duffing";
        } else if constexpr (std::is_same_v<T, QuadrotorSystem>) {
          return "quadrotor";
        } else {
          return "gray_scott";
        }
      },
      system);
}

std::size_t state_dim(const SystemSpec& system) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, DuffingSystem>) {
          return 2;
        } else if constexpr (std::is_same_v<T, QuadrotorSystem>) {
          return 6;
        } else {
          return s.params.state_dim();
        }
      },
      system);
}

namespace {

Eigen::VectorXd sample_box(const Box& box, Stream& rng) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(box.dim()));
  for (std::size_t d = 0; d < box.dim(); ++d) {
    x[static_cast<Eigen::Index>(d)] =
        box.lower[d] + (box.upper[d] - box.lower[d]) * rng.uniform();
  }
  return x;
}

void store(Dataset& ds, std::size_t i, const Eigen::MatrixXd& states) {
  for (std::size_t k = 0; k < ds.K; ++k) {
    auto row = ds.at(i, k);
    for (std::size_t d = 0; d < ds.n; ++d) {
      row[d] = static_cast<float>(states(static_cast<Eigen::Index>(k),
                                         static_cast<Eigen::Index>(d)));
    }
  }
}

}  // namespace

Dataset generate_dataset(const SystemSpec& system, std::size_t N,
                         std::size_t K, double dt, std::uint64_t seed) {
  if (N < 1) throw ContractViolation("generate_dataset: N must be >= 1");
  if (K < 1) throw ContractViolation("generate_dataset: K must be >= 1");
  const std::size_t n = state_dim(system);
  double recorded_dt = dt;
  if (const auto* q = std::get_if<QuadrotorSystem>(&system)) {
    if (K != 1) throw ConfigError("quadrotor datasets record the terminal state only (K=1)");
    recorded_dt = q->t1;
  }
  if (const auto* gs = std::get_if<GrayScottSystem>(&system)) {
    recorded_dt = gs->params.euler_dt() * gs->params.substeps;
  }
  Dataset ds(N, K, n, recorded_dt);
  ds.system_tag = system_tag(system);
  ds.seed = seed;

  std::visit([](const auto& s) { s.params.validate(); }, system);

  parallel_for(N, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint64_t key = derive_key({seed, static_cast<std::uint64_t>(i)});
      try {
        std::visit(
            [&](const auto& s) {
              using T = std::decay_t<decltype(s)>;
              Stream rng(key);
              if constexpr (std::is_same_v<T, DuffingSystem>) {
                Eigen::VectorXd xi = sample_box(s.params.x0_box, rng);
                store(ds, i, simulate_duffing(s.params, xi, K, dt, s.substeps).states);
              } else if constexpr (std::is_same_v<T, QuadrotorSystem>) {
                Eigen::VectorXd xi = sample_box(s.params.x0_box, rng);
                const auto& p = s.params;
                double u1 = p.u1_range[0] + (p.u1_range[1] - p.u1_range[0]) * rng.uniform();
                double u2 = p.u2_range[0] + (p.u2_range[1] - p.u2_range[0]) * rng.uniform();
                Eigen::VectorXd x = simulate_quadrotor(p, xi, u1, u2, s.t1, s.step);
                store(ds, i, Eigen::MatrixXd(x.transpose()));
              } else {
                std::vector<double> u0;
                std::vector<double> v0;
                sample_gray_scott_initial(s.params, key, u0, v0);
                store(ds, i, simulate_gray_scott(s.params, u0, v0, K).states);
              }
            },
            system);
      } catch (const SimulationError& e) {
        throw SimulationError("trajectory " + std::to_string(i) + ": " + e.what());
      }
    }
  }, 16);
  return ds;
}

}  // namespace reachcal

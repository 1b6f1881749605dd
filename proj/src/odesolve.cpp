#include "ncode/odesolve.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace ncode {

std::string to_string(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::dopri5: return "dopri5";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw ConfigError("unknown solver '" + name + "' (valid: euler, rk4, dopri5)");
}

void SolverConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw ParameterError("solver: rtol and atol must be > 0");
  if (!(fixed_dt > 0.0)) throw ParameterError("solver: fixed_dt must be > 0");
  if (max_steps < 1) throw ParameterError("solver: max_steps must be >= 1");
}

Vec AugmentedState::flat() const {
  Vec z(x);
  z.insert(z.end(), theta.begin(), theta.end());
  return z;
}

AugmentedState AugmentedState::from_flat(std::span<const double> z, std::size_t x_dim, double t) {
  if (x_dim > z.size()) throw ShapeError("augmented state: x_dim exceeds flat length");
  return {StateVec(z.begin(), z.begin() + x_dim), Vec(z.begin() + x_dim, z.end()), t};
}

AugmentedState Trajectory::state(std::size_t i) const {
  return AugmentedState::from_flat(states.at(i), x_dim, times.at(i));
}

namespace {

void check_finite(std::span<const double> v, double t, const char* what) {
  if (!all_finite(v)) throw NumericalError(std::string(what) + ": non-finite value", t);
}

// Dormand-Prince 5(4) tableau.
constexpr std::array<double, 7> kC{0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5.0},
    {3.0 / 40.0, 9.0 / 40.0},
    {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0},
    {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0},
    {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0},
    {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0}};
constexpr std::array<double, 7> kB5{35.0 / 384.0,     0.0, 500.0 / 1113.0, 125.0 / 192.0,
                                    -2187.0 / 6784.0, 11.0 / 84.0, 0.0};
constexpr std::array<double, 7> kB4{5179.0 / 57600.0,    0.0,          7571.0 / 16695.0,
                                    393.0 / 640.0,       -92097.0 / 339200.0, 187.0 / 2100.0,
                                    1.0 / 40.0};

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;

struct DopriWork {
  std::array<Vec, 7> k;
  Vec stage;
  Vec z5;
};

// Attempt one step; k[0] must hold rhs(t, z). On return k[6] = rhs(t+dt, z5).
DopriStep dopri_attempt(const Rhs& rhs, double t, std::span<const double> z, double dt,
                        double rtol, double atol, DopriWork& w) {
  const std::size_t n = z.size();
  w.stage.resize(n);
  for (auto& k : w.k) k.resize(n);
  for (int s = 1; s < 7; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < s; ++j) acc += kA[s][j] * w.k[j][i];
      w.stage[i] = z[i] + dt * acc;
    }
    rhs(t + kC[s] * dt, w.stage, w.k[s]);
    check_finite(w.k[s], t + kC[s] * dt, "dopri5 stage");
  }
  // The seventh stage point is the 5th-order solution itself.
  w.z5 = w.stage;
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = 0.0;
    for (int s = 0; s < 7; ++s) e += (kB5[s] - kB4[s]) * w.k[s][i];
    e = std::abs(dt * e);
    const double scale = atol + rtol * std::max(std::abs(z[i]), std::abs(w.z5[i]));
    err = std::max(err, e / scale);
  }
  DopriStep out;
  out.err_norm = err;
  out.accepted = err <= 1.0;
  double factor = err == 0.0 ? kMaxFactor : kSafety * std::pow(err, -0.2);
  factor = std::clamp(factor, kMinFactor, kMaxFactor);
  if (!out.accepted) factor = std::min(factor, 1.0);
  out.dt_next = dt * factor;
  out.z_next = w.z5;
  return out;
}

double initial_step(const Rhs& rhs, double t0, std::span<const double> z0,
                    std::span<const double> f0, double span_len, double rtol, double atol,
                    std::size_t& evals) {
  // Hairer, Norsett & Wanner starting-step heuristic, order 5.
  const std::size_t n = z0.size();
  double d0 = 0.0, d1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sc = atol + rtol * std::abs(z0[i]);
    d0 = std::max(d0, std::abs(z0[i]) / sc);
    d1 = std::max(d1, std::abs(f0[i]) / sc);
  }
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span_len);
  Vec z1(n), f1(n);
  for (std::size_t i = 0; i < n; ++i) z1[i] = z0[i] + h0 * f0[i];
  rhs(t0 + h0, z1, f1);
  ++evals;
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sc = atol + rtol * std::abs(z0[i]);
    d2 = std::max(d2, std::abs(f1[i] - f0[i]) / sc);
  }
  d2 /= h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
  return std::min({100.0 * h0, h1, span_len});
}

}  // namespace

Vec step_euler(const Rhs& rhs, double t, std::span<const double> z, double dt) {
  Vec dz(z.size());
  rhs(t, z, dz);
  check_finite(dz, t, "euler");
  Vec out(z.begin(), z.end());
  axpy(dt, dz, out);
  return out;
}

namespace {

struct Rk4Work {
  Vec k1, k2, k3, k4, u;
  void resize(std::size_t n) {
    k1.resize(n);
    k2.resize(n);
    k3.resize(n);
    k4.resize(n);
    u.resize(n);
  }
};

// Stage values are not checked separately: a non-finite stage reaches `out`.
void rk4_into(const Rhs& rhs, double t, std::span<const double> z, double dt, Rk4Work& w,
              std::span<double> out) {
  const std::size_t n = z.size();
  w.resize(n);
  rhs(t, z, w.k1);
  for (std::size_t i = 0; i < n; ++i) w.u[i] = z[i] + 0.5 * dt * w.k1[i];
  rhs(t + 0.5 * dt, w.u, w.k2);
  for (std::size_t i = 0; i < n; ++i) w.u[i] = z[i] + 0.5 * dt * w.k2[i];
  rhs(t + 0.5 * dt, w.u, w.k3);
  for (std::size_t i = 0; i < n; ++i) w.u[i] = z[i] + dt * w.k3[i];
  rhs(t + dt, w.u, w.k4);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = z[i] + dt / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
  }
}

}  // namespace

Vec step_rk4(const Rhs& rhs, double t, std::span<const double> z, double dt) {
  Rk4Work w;
  Vec out(z.size());
  rk4_into(rhs, t, z, dt, w, out);
  check_finite(out, t + dt, "rk4");
  return out;
}

AugmentedState step_rk4(const Rhs& rhs, const AugmentedState& z, double dt) {
  const Vec next = step_rk4(rhs, z.t, z.flat(), dt);
  return AugmentedState::from_flat(next, z.x.size(), z.t + dt);
}

DopriStep step_dopri5(const Rhs& rhs, double t, std::span<const double> z, double dt_try,
                      double rtol, double atol) {
  if (!(dt_try > 0.0)) throw ParameterError("step_dopri5: dt_try must be > 0");
  DopriWork w;
  w.k[0].resize(z.size());
  rhs(t, z, w.k[0]);
  check_finite(w.k[0], t, "dopri5 stage");
  return dopri_attempt(rhs, t, z, dt_try, rtol, atol, w);
}

Trajectory integrate(const Rhs& rhs, std::span<const double> z0, double t0, double t1,
                     const SolverConfig& cfg, std::size_t x_dim) {
  cfg.validate();
  if (t1 == t0) throw ParameterError("integrate: t1 == t0");
  check_finite(z0, t0, "integrate: initial state");
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span_len = std::abs(t1 - t0);

  Trajectory traj;
  traj.x_dim = x_dim;
  traj.times.push_back(t0);
  traj.states.emplace_back(z0.begin(), z0.end());
  Vec z(z0.begin(), z0.end());
  double t = t0;

  auto record = [&](bool final_point) {
    if (cfg.dense_record || final_point) {
      traj.times.push_back(t);
      traj.states.push_back(z);
    }
  };

  if (cfg.fixed_step()) {
    const auto n = static_cast<std::size_t>(std::ceil(span_len / cfg.fixed_dt - 1e-9));
    const std::size_t steps = std::max<std::size_t>(n, 1);
    if (steps > cfg.max_steps) {
      throw BudgetError("integrate: " + std::to_string(steps) + " fixed steps exceed max_steps",
                        traj);
    }
    const double dt = (t1 - t0) / static_cast<double>(steps);
    Rk4Work w;
    Vec next(z.size());
    for (std::size_t s = 0; s < steps; ++s) {
      if (cfg.method == Method::rk4) {
        rk4_into(rhs, t, z, dt, w, next);
        std::swap(z, next);
      } else {
        z = step_euler(rhs, t, z, dt);
      }
      traj.n_rhs_evals += cfg.method == Method::rk4 ? 4 : 1;
      t = s + 1 == steps ? t1 : t0 + static_cast<double>(s + 1) * dt;
      check_finite(z, t, "integrate");
      record(s + 1 == steps);
    }
    return traj;
  }

  DopriWork w;
  w.k[0].resize(z.size());
  rhs(t, z, w.k[0]);
  ++traj.n_rhs_evals;
  check_finite(w.k[0], t, "integrate");
  double h = initial_step(rhs, t, z, w.k[0], span_len, cfg.rtol, cfg.atol, traj.n_rhs_evals);
  std::size_t steps = 0;
  while (dir * (t1 - t) > 0.0) {
    if (steps++ >= cfg.max_steps) {
      throw BudgetError("integrate: max_steps (" + std::to_string(cfg.max_steps) +
                            ") exceeded at t = " + std::to_string(t),
                        traj);
    }
    const double remaining = std::abs(t1 - t);
    bool last = false;
    if (h >= remaining) {
      h = remaining;
      last = true;
    }
    if (h <= 1e-14 * std::max(1.0, std::abs(t))) {
      throw NumericalError("integrate: step size underflow", t);
    }
    const DopriStep st = dopri_attempt(rhs, t, z, dir * h, cfg.rtol, cfg.atol, w);
    traj.n_rhs_evals += 6;
    if (st.accepted) {
      z = st.z_next;
      t = last ? t1 : t + dir * h;
      std::swap(w.k[0], w.k[6]);
      record(last);
      if (last) break;
    }
    h = std::abs(st.dt_next);
  }
  return traj;
}

Trajectory integrate_at(const Rhs& rhs, std::span<const double> z0, std::span<const double> times,
                        const SolverConfig& cfg, std::size_t x_dim) {
  if (times.size() < 2) throw ParameterError("integrate_at: need at least two times");
  Trajectory traj;
  traj.x_dim = x_dim;
  traj.times.push_back(times[0]);
  traj.states.emplace_back(z0.begin(), z0.end());
  SolverConfig seg_cfg = cfg;
  seg_cfg.dense_record = false;
  for (std::size_t k = 1; k < times.size(); ++k) {
    Trajectory seg = integrate(rhs, traj.states.back(), times[k - 1], times[k], seg_cfg, x_dim);
    traj.n_rhs_evals += seg.n_rhs_evals;
    traj.times.push_back(times[k]);
    traj.states.push_back(std::move(seg.states.back()));
  }
  return traj;
}

StateVec flow_map(const Rhs& rhs, const StateVec& x0, const Vec& theta, double T,
                  const SolverConfig& cfg) {
  const AugmentedState z0{x0, theta, 0.0};
  SolverConfig c = cfg;
  c.dense_record = false;
  const Trajectory traj = integrate(rhs, z0.flat(), 0.0, T, c, x0.size());
  const Vec& zT = traj.back();
  return StateVec(zT.begin(), zT.begin() + static_cast<std::ptrdiff_t>(x0.size()));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const std::size_t n = traj.states.empty() ? 0 : traj.states.front().size();
  os << "t";
  for (std::size_t i = 0; i < traj.x_dim; ++i) os << ",x_" << i;
  for (std::size_t i = traj.x_dim; i < n; ++i) os << ",theta_" << (i - traj.x_dim);
  os << '\n';
  for (std::size_t r = 0; r < traj.size(); ++r) {
    os << format_double(traj.times[r]);
    for (double v : traj.states[r]) os << ',' << format_double(v);
    os << '\n';
  }
}

}  // namespace ncode

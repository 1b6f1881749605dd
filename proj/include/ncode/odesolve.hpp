#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ncode/numcore.hpp"

namespace ncode {

enum class Method { euler, rk4, dopri5 };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct SolverConfig {
  Method method = Method::dopri5;
  double rtol = 1e-3;
  double atol = 1e-3;
  double fixed_dt = 1e-2;
  std::size_t max_steps = 1'000'000;
  bool dense_record = false;

  void validate() const;
  bool fixed_step() const { return method != Method::dopri5; }
  bool operator==(const SolverConfig&) const = default;

  static SolverConfig adaptive(double tol) {
    SolverConfig c;
    c.rtol = c.atol = tol;
    return c;
  }
  static SolverConfig fixed(Method m, double dt) {
    SolverConfig c;
    c.method = m;
    c.fixed_dt = dt;
    return c;
  }
};

/// Joint integration variable z = (x, theta) at time t.
struct AugmentedState {
  StateVec x;
  Vec theta;
  double t = 0.0;

  Vec flat() const;
  static AugmentedState from_flat(std::span<const double> z, std::size_t x_dim, double t);
};

/// Right-hand side dz/dt = rhs(t, z), written into `dz`.
using Rhs = std::function<void(double t, std::span<const double> z, std::span<double> dz)>;

/// Recorded solve. Times are strictly monotone in the direction of integration.
struct Trajectory {
  Vec times;
  std::vector<Vec> states;
  std::size_t x_dim = 0;
  std::size_t n_rhs_evals = 0;

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
  const Vec& back() const { return states.back(); }
  AugmentedState state(std::size_t i) const;
};

/// max_steps exhausted; the partial trajectory is kept for inspection.
class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, Trajectory partial)
      : Error(what), partial_(std::move(partial)) {}
  const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

Vec step_euler(const Rhs& rhs, double t, std::span<const double> z, double dt);
Vec step_rk4(const Rhs& rhs, double t, std::span<const double> z, double dt);
AugmentedState step_rk4(const Rhs& rhs, const AugmentedState& z, double dt);

struct DopriStep {
  Vec z_next;
  double dt_next = 0.0;
  bool accepted = false;
  double err_norm = 0.0;
};

/// One Dormand-Prince 5(4) attempt with the max-norm error estimate and the
/// 0.9 err^(-1/5) controller clamped to [0.2, 5].
DopriStep step_dopri5(const Rhs& rhs, double t, std::span<const double> z, double dt_try,
                      double rtol, double atol);

/// Solves from t0 to t1 (t1 < t0 integrates backward). Records every accepted
/// step when cfg.dense_record, otherwise only the endpoints.
Trajectory integrate(const Rhs& rhs, std::span<const double> z0, double t0, double t1,
                     const SolverConfig& cfg, std::size_t x_dim = 0);

/// Solves through `times` (monotone, times[0] is the start) and records
/// exactly those points.
Trajectory integrate_at(const Rhs& rhs, std::span<const double> z0, std::span<const double> times,
                        const SolverConfig& cfg, std::size_t x_dim = 0);

/// x-component of the solution at time T starting from (x0, theta) at t = 0.
StateVec flow_map(const Rhs& rhs, const StateVec& x0, const Vec& theta, double T,
                  const SolverConfig& cfg);

/// CSV with header t,x_0..x_{d-1},theta_0..theta_{k-1}; 17 significant digits.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

/// "%.17g" formatting shared by every CSV/JSON writer.
std::string format_double(double v);

}  // namespace ncode

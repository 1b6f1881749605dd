#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "ncode/odesolve.hpp"

using namespace ncode;

namespace {

const Rhs kZero = [](double, std::span<const double>, std::span<double> dz) {
  std::fill(dz.begin(), dz.end(), 0.0);
};
const Rhs kOne = [](double, std::span<const double>, std::span<double> dz) {
  std::fill(dz.begin(), dz.end(), 1.0);
};
const Rhs kGrowth = [](double, std::span<const double> z, std::span<double> dz) {
  for (std::size_t i = 0; i < z.size(); ++i) dz[i] = z[i];
};
const Rhs kRotation = [](double, std::span<const double> z, std::span<double> dz) {
  dz[0] = -z[1];
  dz[1] = z[0];
};

}  // namespace

TEST_CASE("step_rk4") {
  const Vec z{0.3, -2.0};
  CHECK(step_rk4(kZero, 0.0, z, 0.1) == z);
  CHECK(step_rk4(kOne, 0.0, Vec{0.0}, 0.1)[0] == doctest::Approx(0.1).epsilon(1e-15));
  // One step reproduces the degree-4 Taylor polynomial of e^h exactly; the
  // local truncation error h^5/120 ~ 8.3e-8 bounds the distance to e^0.1.
  const double h = 0.1;
  const double taylor4 = 1.0 + h + h * h / 2.0 + h * h * h / 6.0 + h * h * h * h / 24.0;
  const double one_step = step_rk4(kGrowth, 0.0, Vec{1.0}, h)[0];
  CHECK(std::abs(one_step - taylor4) < 1e-15);
  CHECK(std::abs(one_step - std::exp(0.1)) < 1e-7);

  const AugmentedState s{{1.0}, {2.0}, 0.5};
  const AugmentedState next = step_rk4(kZero, s, 0.25);
  CHECK(next.x == s.x);
  CHECK(next.theta == s.theta);
  CHECK(next.t == 0.75);

  const Rhs bad = [](double, std::span<const double>, std::span<double> dz) {
    dz[0] = std::nan("");
  };
  CHECK_THROWS_AS(step_rk4(bad, 0.0, Vec{1.0}, 0.1), NumericalError);
}

TEST_CASE("step_dopri5") {
  const DopriStep zero = step_dopri5(kZero, 0.0, Vec{1.0, 2.0}, 0.1, 1e-6, 1e-6);
  CHECK(zero.accepted);
  CHECK(zero.err_norm == 0.0);
  CHECK(zero.dt_next == doctest::Approx(0.5));

  // A single 0.5 step overshoots the 1e-6 tolerance; the controller shrinks
  // the step and the adaptive solve lands within tolerance.
  const DopriStep g = step_dopri5(kGrowth, 0.0, Vec{1.0}, 0.5, 1e-6, 1e-6);
  CHECK_FALSE(g.accepted);
  CHECK(g.dt_next < 0.5);
  CHECK(g.dt_next >= 0.1);
  const Trajectory tr = integrate(kGrowth, Vec{1.0}, 0.0, 0.5, SolverConfig::adaptive(1e-6));
  CHECK(std::abs(tr.back()[0] - std::exp(0.5)) < 1e-6);
  const DopriStep small = step_dopri5(kGrowth, 0.0, Vec{1.0}, 0.1, 1e-6, 1e-6);
  CHECK(small.accepted);
  CHECK(std::abs(small.z_next[0] - std::exp(0.1)) < 1e-7);

  const Rhs stiff = [](double, std::span<const double> z, std::span<double> dz) {
    dz[0] = -1e6 * z[0];
  };
  const DopriStep s = step_dopri5(stiff, 0.0, Vec{1.0}, 1.0, 1e-6, 1e-6);
  CHECK_FALSE(s.accepted);
  CHECK(s.dt_next < 1.0);
  CHECK(s.err_norm > 1.0);

  CHECK_THROWS_AS(step_dopri5(kZero, 0.0, Vec{1.0}, -0.1, 1e-6, 1e-6), ParameterError);
}

TEST_CASE("integrate endpoints and recording") {
  for (Method m : {Method::euler, Method::rk4, Method::dopri5}) {
    SolverConfig cfg;
    cfg.method = m;
    cfg.fixed_dt = 0.3;
    const Trajectory tr = integrate(kZero, Vec{1.0, -1.0}, 0.0, 2.0, cfg, 1);
    CHECK(tr.times.front() == 0.0);
    CHECK(tr.times.back() == 2.0);
    CHECK(tr.back() == Vec{1.0, -1.0});
    CHECK(tr.size() == 2);
  }

  SolverConfig dense = SolverConfig::adaptive(1e-8);
  dense.dense_record = true;
  const Trajectory tr = integrate(kRotation, Vec{1.0, 0.0}, 0.0, 3.0, dense, 1);
  CHECK(tr.size() > 3);
  CHECK(tr.times.size() == tr.states.size());
  for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr.times[i] > tr.times[i - 1]);
  CHECK(tr.times.back() == 3.0);
  CHECK(tr.n_rhs_evals > 0);

  SolverConfig back = SolverConfig::adaptive(1e-8);
  back.dense_record = true;
  const Trajectory rev = integrate(kGrowth, Vec{std::exp(1.0)}, 1.0, 0.0, back);
  for (std::size_t i = 1; i < rev.size(); ++i) CHECK(rev.times[i] < rev.times[i - 1]);
  CHECK(rev.times.back() == 0.0);
  CHECK(std::abs(rev.back()[0] - 1.0) < 1e-7);

  CHECK_THROWS_AS(integrate(kZero, Vec{1.0}, 1.0, 1.0, SolverConfig{}), ParameterError);
}

TEST_CASE("integrate accuracy on analytic problems") {
  const SolverConfig rk4 = SolverConfig::fixed(Method::rk4, 1e-3);
  const Trajectory rot = integrate(kRotation, Vec{1.0, 0.0}, 0.0, 2.0 * std::numbers::pi, rk4);
  CHECK(std::abs(rot.back()[0] - 1.0) < 1e-8);
  CHECK(std::abs(rot.back()[1]) < 1e-8);

  const SolverConfig tight = SolverConfig::adaptive(1e-8);
  const Trajectory e = integrate(kGrowth, Vec{1.0}, 0.0, 1.0, tight);
  CHECK(std::abs(e.back()[0] - 2.718281828459045) < 1e-7);

  const Trajectory loose = integrate(kGrowth, Vec{1.0}, 0.0, 1.0, SolverConfig{});
  CHECK(std::abs(loose.back()[0] - std::numbers::e) < 1e-2);
}

TEST_CASE("rk4 global error is fourth order") {
  auto err = [](double dt) {
    const Trajectory tr = integrate(kGrowth, Vec{1.0}, 0.0, 1.0, SolverConfig::fixed(Method::rk4, dt));
    return std::abs(tr.back()[0] - std::numbers::e);
  };
  for (double dt : {0.1, 0.05, 0.025}) {
    const double ratio = err(dt) / err(dt / 2.0);
    CHECK(ratio > 16.0 * 0.8);
    CHECK(ratio < 16.0 * 1.2);
  }
}

TEST_CASE("dopri5 at 1e-8 agrees with fine rk4 on the rotation") {
  const Trajectory a = integrate(kRotation, Vec{1.0, 0.5}, 0.0, 5.0, SolverConfig::adaptive(1e-8));
  const Trajectory b =
      integrate(kRotation, Vec{1.0, 0.5}, 0.0, 5.0, SolverConfig::fixed(Method::rk4, 1e-4));
  CHECK(std::abs(a.back()[0] - b.back()[0]) < 1e-6);
  CHECK(std::abs(a.back()[1] - b.back()[1]) < 1e-6);
}

TEST_CASE("budget and numerical failures") {
  SolverConfig cfg = SolverConfig::adaptive(1e-10);
  cfg.max_steps = 5;
  cfg.dense_record = true;
  try {
    integrate(kRotation, Vec{1.0, 0.0}, 0.0, 100.0, cfg);
    FAIL("expected BudgetError");
  } catch (const BudgetError& e) {
    CHECK(e.partial().size() >= 1);
    CHECK(e.partial().times.front() == 0.0);
  }

  const Rhs blowup = [](double, std::span<const double> z, std::span<double> dz) {
    dz[0] = z[0] * z[0];
  };
  CHECK_THROWS_AS(integrate(blowup, Vec{1.0}, 0.0, 2.0, SolverConfig::fixed(Method::rk4, 0.1)),
                  NumericalError);

  SolverConfig bad;
  bad.rtol = 0.0;
  CHECK_THROWS_AS(integrate(kZero, Vec{1.0}, 0.0, 1.0, bad), ParameterError);
}

TEST_CASE("integrate_at lands on every requested time") {
  const Vec times{0.0, 0.25, 0.5, 1.0};
  const Trajectory tr = integrate_at(kGrowth, Vec{1.0}, times, SolverConfig::adaptive(1e-9));
  REQUIRE(tr.size() == times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    CHECK(tr.times[i] == times[i]);
    CHECK(std::abs(tr.states[i][0] - std::exp(times[i])) < 1e-7);
  }
}

TEST_CASE("flow_map") {
  // f(x, theta) = -theta with theta = x0.
  const Rhs neg_theta = [](double, std::span<const double> z, std::span<double> dz) {
    dz[0] = -z[1];
    dz[1] = 0.0;
  };
  const SolverConfig cfg = SolverConfig::adaptive(1e-8);
  for (double x0 : {-2.0, 0.0, 0.5, 1.0, 3.0}) {
    CHECK(std::abs(flow_map(neg_theta, {x0}, {x0}, 1.0, cfg)[0]) < 1e-12);
  }
  CHECK(flow_map(neg_theta, {1.0}, {1.0}, 2.0, cfg)[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(flow_map(kZero, {0.7, -0.1}, {}, 3.0, cfg) == StateVec{0.7, -0.1});
}

TEST_CASE("autonomous flows are reversible and order preserving") {
  const Rhs f = [](double, std::span<const double> z, std::span<double> dz) {
    dz[0] = std::sin(3.0 * z[0]) - 0.5 * z[0] + 0.2;
  };
  const SolverConfig cfg = SolverConfig::adaptive(1e-8);
  for (double x0 : {-1.5, -0.2, 0.0, 0.9, 2.0}) {
    const StateVec fwd = flow_map(f, {x0}, {}, 1.0, cfg);
    const StateVec back = flow_map(f, fwd, {}, -1.0, cfg);
    CHECK(std::abs(back[0] - x0) < 10.0 * (cfg.rtol + cfg.atol));
  }
  double prev = -1e9;
  for (double x0 = -2.0; x0 <= 2.0; x0 += 0.05) {
    const double y = flow_map(f, {x0}, {}, 1.0, cfg)[0];
    CHECK(y > prev);
    prev = y;
  }
}

TEST_CASE("trajectory csv") {
  Trajectory tr;
  tr.x_dim = 1;
  tr.times = {0.0, 0.1};
  tr.states = {{1.0, 2.0, 3.0}, {0.1, 1.0 / 3.0, -4.0}};
  std::ostringstream os;
  write_trajectory_csv(os, tr);
  CHECK(os.str() ==
        "t,x_0,theta_0,theta_1\n"
        "0,1,2,3\n"
        "0.10000000000000001,0.10000000000000001,0.33333333333333331,-4\n");
}

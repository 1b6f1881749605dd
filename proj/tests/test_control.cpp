#include <cmath>
#include <numbers>

#include "doctest.h"
#include "ncode/control.hpp"
#include "oracles.hpp"

using namespace ncode;

namespace {

DynamicsSpec prop1_open() {
  DynamicsSpec s;
  s.x_dim = 1;
  s.f_kind = FieldKind::neg_theta;
  s.gamma_kind = GammaKind::identity;
  return s;
}

DynamicsSpec oscillator() {
  DynamicsSpec s;
  s.x_dim = 1;
  s.f_kind = FieldKind::theta;
  s.g_kind = ControlKind::neg_state;
  s.gamma_kind = GammaKind::constant;
  return s;
}

DynamicsSpec random_mlp_spec(bool closed, Rng& rng) {
  DynamicsSpec s;
  s.x_dim = 2;
  s.f_mlp = MlpSpec{{2, 3, 2}, Activation::tanh, Activation::identity};
  s.gamma_kind = GammaKind::mlp;
  s.gamma_mlp = MlpSpec{{2, 4, s.f_mlp.param_count()}, Activation::tanh, Activation::identity};
  if (closed) {
    s.g_kind = ControlKind::mlp;
    const std::size_t td = s.f_mlp.param_count();
    s.g_mlp = MlpSpec{{td + 2, 5, td}, Activation::tanh, Activation::identity};
  }
  (void)rng;
  return s;
}

Vec state_for(const DynamicsSpec& s, Rng& rng) {
  return rand_normal(rng, s.x_dim + s.theta_dim(), 0.0, 0.7);
}

}  // namespace

TEST_CASE("gamma_init modes") {
  DynamicsSpec c;
  c.x_dim = 1;
  c.f_kind = FieldKind::theta;
  c.gamma_kind = GammaKind::constant;
  for (double x0 : {-3.0, 0.0, 2.0}) CHECK(gamma_init(c, Vec{0.5}, Vec{x0}) == Vec{0.5});

  CHECK(gamma_init(prop1_open(), Vec{}, Vec{1.0}) == Vec{1.0});

  DynamicsSpec m;
  m.x_dim = 2;
  m.f_kind = FieldKind::theta;
  m.gamma_kind = GammaKind::mlp;
  m.gamma_mlp = MlpSpec{{2, 3, 2}, Activation::tanh, Activation::identity};
  Vec mu(m.meta_dim(), 0.0);
  const auto lay = m.meta_layout();
  auto b1 = lay.view(std::span<double>(mu), "gamma.b1");
  b1[0] = 0.3;
  b1[1] = -1.2;
  CHECK(gamma_init(m, mu, Vec{5.0, -7.0}) == Vec{0.3, -1.2});

  DynamicsSpec bad = prop1_open();
  bad.x_dim = 2;
  bad.f_kind = FieldKind::mlp;
  bad.f_mlp = MlpSpec{{2, 2}, Activation::identity, Activation::identity};
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("coupled_rhs") {
  Rng rng(2);
  DynamicsSpec open = random_mlp_spec(false, rng);
  const Vec mu = init_meta_params(open, rng);
  for (int i = 0; i < 10; ++i) {
    const Vec dz = coupled_rhs(open, mu, state_for(open, rng));
    for (std::size_t k = open.x_dim; k < dz.size(); ++k) CHECK(dz[k] == 0.0);
  }

  // Van der Pol planar form at its fixed point, written as f = mu(x - x^3/3 - theta),
  // g = x / mu; here with the oscillator analogue at the origin.
  CHECK(coupled_rhs(oscillator(), Vec{0.0}, Vec{0.0, 0.0}) == Vec{0.0, 0.0});
  CHECK(coupled_rhs(oscillator(), Vec{0.0}, Vec{0.3, 2.0}) == Vec{2.0, -0.3});
}

TEST_CASE("closed-loop oscillator: x(t) = x0 cos t") {
  const CoupledDynamics h(oscillator());
  const SolverConfig cfg = SolverConfig::adaptive(1e-10);
  for (double x0 : {-1.0, -0.5, 0.5, 1.0}) {
    const Trajectory tr =
        integrate(h.bind(Vec{}), Vec{x0, 0.0}, 0.0, std::numbers::pi / 2.0, cfg, 1);
    CHECK(std::abs(tr.back()[0]) < 1e-6);
    const Trajectory t1 = integrate(h.bind(Vec{}), Vec{x0, 0.0}, 0.0, 1.0, cfg, 1);
    CHECK(std::abs(t1.back()[0] - x0 * std::cos(1.0)) < 1e-8);
  }
}

TEST_CASE("open-loop Proposition 1 witness") {
  const DynamicsSpec s = prop1_open();
  const CoupledDynamics h(s);
  const SolverConfig cfg = SolverConfig::adaptive(1e-8);
  auto phi = [&](double x0, double T) {
    const Vec th = gamma_init(s, Vec{}, Vec{x0});
    return flow_map(h.bind(Vec{}), {x0}, th, T, cfg)[0];
  };
  CHECK(std::abs(phi(0.0, 1.0) - phi(1.0, 1.0)) < 1e-6);
  CHECK(phi(1.0, 2.0) == doctest::Approx(-1.0));
}

TEST_CASE("node_baseline_rhs") {
  const MlpSpec f{{1, 1}, Activation::identity, Activation::identity};
  CHECK(node_baseline_rhs(f, Vec{0.0, 0.0}, Vec{0.7, 0.0, 0.0}) == Vec{0.0, 0.0, 0.0});
  const Vec theta{1.0, 0.0};
  const Rhs rhs = [&](double, std::span<const double> z, std::span<double> dz) {
    const Vec d = node_baseline_rhs(f, theta, z);
    std::copy(d.begin(), d.end(), dz.begin());
  };
  CHECK(std::abs(flow_map(rhs, {1.0}, theta, 1.0, SolverConfig::adaptive(1e-9))[0] -
                 std::numbers::e) < 1e-7);
}

TEST_CASE("1-D NODE preserves the order of -1 and 1 for random weights") {
  Rng rng(31);
  const MlpSpec f{{1, 8, 1}, Activation::tanh, Activation::identity};
  const DynamicsSpec s = node_baseline_spec(1, f);
  const CoupledDynamics h(s);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec theta = rand_normal(rng, f.param_count(), 0.0, 2.0);
    const double a = flow_map(h.bind(Vec{}), {-1.0}, theta, 1.0, SolverConfig::adaptive(1e-8))[0];
    const double b = flow_map(h.bind(Vec{}), {1.0}, theta, 1.0, SolverConfig::adaptive(1e-8))[0];
    CHECK(a < b);
  }
}

TEST_CASE("coupled_jacobian") {
  const BlockJacobian osc = coupled_jacobian(oscillator(), Vec{0.0}, Vec{0.4, -0.2});
  CHECK(osc.dh_dz == Matrix(2, 2, {0, 1, -1, 0}));

  Rng rng(77);
  for (bool closed : {false, true}) {
    const DynamicsSpec s = random_mlp_spec(closed, rng);
    for (int trial = 0; trial < 20; ++trial) {
      const Vec mu = rand_normal(rng, s.meta_dim(), 0.0, 0.5);
      const Vec z = state_for(s, rng);
      const BlockJacobian j = coupled_jacobian(s, mu, z);
      if (!closed) {
        for (std::size_t r = s.x_dim; r < z.size(); ++r) {
          for (std::size_t c = 0; c < z.size(); ++c) REQUIRE(j.dh_dz(r, c) == 0.0);
        }
      }
      const auto fz = oracle::central_jacobian(
          [&](const Vec& zz) { return coupled_rhs(s, mu, zz); }, z, 1e-6);
      const auto fm = oracle::central_jacobian(
          [&](const Vec& mm) { return coupled_rhs(s, mm, z); }, mu, 1e-6);
      for (std::size_t r = 0; r < z.size(); ++r) {
        for (std::size_t c = 0; c < z.size(); ++c) {
          REQUIRE(oracle::rel_err(j.dh_dz(r, c), fz[r][c], 1e-4) < 1e-5);
        }
        for (std::size_t c = 0; c < mu.size(); ++c) {
          REQUIRE(oracle::rel_err(j.dh_dmu(r, c), fm[r][c], 1e-4) < 1e-5);
        }
      }
      // The generic vjp-stacked Jacobian agrees with the assembled one.
      const CoupledDynamics h(s);
      Matrix dz, dp;
      h.Dynamics::jacobian(0.0, z, g_slice(s, mu), dz, dp);
      for (std::size_t k = 0; k < dz.data.size(); ++k) {
        REQUIRE(dz.data[k] == doctest::Approx(j.dh_dz.data[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("analytic field kinds have correct transposed products") {
  Rng rng(8);
  std::vector<DynamicsSpec> specs;
  DynamicsSpec lin;
  lin.x_dim = 4;
  lin.f_kind = FieldKind::linear;
  specs.push_back(lin);
  lin.linear_nnz_per_row = 2;
  specs.push_back(lin);
  DynamicsSpec heb;
  heb.x_dim = 3;
  heb.f_kind = FieldKind::hebbian;
  heb.hebbian_activation = Activation::tanh;
  heb.g_kind = ControlKind::hebbian;
  specs.push_back(heb);
  heb.hebbian_activation = Activation::sigmoid;
  specs.push_back(heb);
  specs.push_back(oscillator());
  specs.push_back(prop1_open());
  for (const auto& s : specs) {
    const Vec mu = rand_normal(rng, s.meta_dim(), 0.0, 0.8);
    const Vec z = state_for(s, rng);
    const BlockJacobian j = coupled_jacobian(s, mu, z);
    const auto fz =
        oracle::central_jacobian([&](const Vec& zz) { return coupled_rhs(s, mu, zz); }, z, 1e-6);
    const auto fm =
        oracle::central_jacobian([&](const Vec& mm) { return coupled_rhs(s, mm, z); }, mu, 1e-6);
    for (std::size_t r = 0; r < z.size(); ++r) {
      for (std::size_t c = 0; c < z.size(); ++c) {
        REQUIRE(oracle::rel_err(j.dh_dz(r, c), fz[r][c], 1e-4) < 1e-5);
      }
      for (std::size_t c = 0; c < mu.size(); ++c) {
        REQUIRE(oracle::rel_err(j.dh_dmu(r, c), fm[r][c], 1e-4) < 1e-5);
      }
    }
  }
}

TEST_CASE("open-loop theta is conserved along trajectories") {
  Rng rng(12);
  const DynamicsSpec s = random_mlp_spec(false, rng);
  const Vec mu = init_meta_params(s, rng);
  const CoupledDynamics h(s);
  SolverConfig cfg = SolverConfig::adaptive(1e-6);
  cfg.dense_record = true;
  const Vec x0{0.3, -0.8};
  const Vec th = gamma_init(s, mu, x0);
  Vec z0 = x0;
  z0.insert(z0.end(), th.begin(), th.end());
  const Trajectory tr = integrate(h.bind(g_slice(s, mu)), z0, 0.0, 2.0, cfg, 2);
  for (const auto& z : tr.states) {
    for (std::size_t k = 0; k < th.size(); ++k) CHECK(std::abs(z[2 + k] - th[k]) <= cfg.rtol);
  }
}

TEST_CASE("closed-loop augmented flow is reversible") {
  Rng rng(21);
  const DynamicsSpec s = random_mlp_spec(true, rng);
  const Vec mu = init_meta_params(s, rng, 0.5);
  const CoupledDynamics h(s);
  const SolverConfig cfg = SolverConfig::adaptive(1e-9);
  const Vec x0{0.3, -0.8};
  const Vec th = gamma_init(s, mu, x0);
  Vec z0 = x0;
  z0.insert(z0.end(), th.begin(), th.end());
  const Trajectory fwd = integrate(h.bind(g_slice(s, mu)), z0, 0.0, 1.0, cfg);
  const Trajectory back = integrate(h.bind(g_slice(s, mu)), fwd.back(), 1.0, 0.0, cfg);
  for (std::size_t k = 0; k < z0.size(); ++k) {
    CHECK(std::abs(back.back()[k] - z0[k]) < 10.0 * (cfg.rtol + cfg.atol));
  }
}

TEST_CASE("meta layout") {
  Rng rng(1);
  const DynamicsSpec s = random_mlp_spec(true, rng);
  const Layout lay = s.meta_layout();
  CHECK(lay.total() == s.meta_dim());
  CHECK(lay.slots().front().name == "gamma.W0");
  CHECK(lay.offset("g.W0") == s.gamma_param_dim());
}

#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "ncode/adjoint.hpp"
#include "oracles.hpp"

using namespace ncode;

namespace {

/// dx/dt = p x with the growth rate as the only parameter.
class ScalarGrowth final : public Dynamics {
 public:
  std::size_t x_dim() const override { return 1; }
  std::size_t theta_dim() const override { return 0; }
  std::size_t param_dim() const override { return 1; }
  void eval(double, std::span<const double> z, std::span<const double> p,
            std::span<double> dz) const override {
    dz[0] = p[0] * z[0];
  }
  void vjp(double, std::span<const double> z, std::span<const double> p,
           std::span<const double> a, std::span<double> gz, std::span<double> gp) const override {
    gz[0] += a[0] * p[0];
    gp[0] += a[0] * z[0];
  }
};

DynamicsSpec small_spec(bool closed, std::size_t hidden = 3) {
  DynamicsSpec s;
  s.x_dim = 2;
  s.f_mlp = MlpSpec{{2, hidden, 2}, Activation::tanh, Activation::identity};
  s.gamma_kind = GammaKind::mlp;
  const std::size_t td = s.f_mlp.param_count();
  s.gamma_mlp = MlpSpec{{2, 3, td}, Activation::tanh, Activation::identity};
  if (closed) {
    s.g_kind = ControlKind::mlp;
    s.g_mlp = MlpSpec{{td + 2, 3, td}, Activation::tanh, Activation::identity};
  }
  return s;
}

LossSpec mse_to(Vec target) {
  return LossSpec::terminal(std::make_shared<TargetMseLoss>(std::move(target)));
}

}  // namespace

TEST_CASE("loss_integral") {
  SolverConfig cfg = SolverConfig::fixed(Method::rk4, 1e-3);
  cfg.dense_record = true;
  const Rhs growth = [](double, std::span<const double> z, std::span<double> dz) { dz[0] = z[0]; };
  const Trajectory tr = integrate(growth, Vec{1.0}, 0.0, 1.0, cfg, 1);

  CHECK(loss_integral(tr, LossSpec::integrated(std::make_shared<ZeroLoss>()), {}) == 0.0);
  const Trajectory tr2 = integrate(growth, Vec{1.0}, 0.0, 2.0, cfg, 1);
  CHECK(std::abs(loss_integral(tr2, LossSpec::integrated(std::make_shared<ConstantLoss>(1.0))) -
                 2.0) < 1e-10);
  const double sq = loss_integral(tr, LossSpec::integrated(std::make_shared<SquaredNormLoss>(1)));
  CHECK(std::abs(sq - (std::exp(2.0) - 1.0) / 2.0) < 1e-5);

  const Trajectory grid = integrate_at(growth, Vec{1.0}, Vec{0.0, 0.5, 1.0}, cfg, 1);
  const double g3 = loss_integral(grid, LossSpec::fixed_grid(std::make_shared<SquaredNormLoss>(1), 3));
  CHECK(g3 == doctest::Approx(0.25 * (1.0 + 2.0 * std::exp(1.0) + std::exp(2.0))).epsilon(1e-9));
  CHECK_THROWS_AS(
      loss_integral(tr, LossSpec::fixed_grid(std::make_shared<SquaredNormLoss>(1), 3)), InputError);

  CHECK(loss_integral(tr, LossSpec::terminal(std::make_shared<ComponentLoss>(0))) ==
        doctest::Approx(std::numbers::e).epsilon(1e-10));
  CHECK_THROWS_AS(loss_integral(Trajectory{}, LossSpec::terminal(std::make_shared<ZeroLoss>())),
                  InputError);
}

TEST_CASE("adjoint on the scalar growth sensitivity") {
  // l = x(T) for dx/dt = mu x: dl/dmu = T e^{mu T}.
  const ScalarGrowth h;
  const double expected = std::exp(0.3);
  const LossSpec loss = LossSpec::terminal(std::make_shared<ComponentLoss>(0));
  const GradientResult a =
      adjoint_solve(h, Vec{0.3}, Vec{1.0}, 1.0, loss, {}, SolverConfig::adaptive(1e-8));
  CHECK(std::abs(a.grad_p[0] - expected) < 1e-4);
  CHECK(std::abs(a.loss - expected) < 1e-6);
  CHECK(std::abs(a.grad_z0[0] - expected) < 1e-6);

  const GradientResult d = backprop_through_solver(h, Vec{0.3}, Vec{1.0}, 1.0, loss, {},
                                                   SolverConfig::fixed(Method::rk4, 1e-3));
  CHECK(std::abs(d.grad_p[0] - expected) < 1e-5);

  // The same sensitivity expressed as a controlled model: f(x) = w x + b with
  // theta0 = (w, b) learned as a constant.
  DynamicsSpec s;
  s.x_dim = 1;
  s.f_mlp = MlpSpec{{1, 1}, Activation::identity, Activation::identity};
  s.gamma_kind = GammaKind::constant;
  const ModelGradient m = model_gradient(s, Vec{0.3, 0.0}, Vec{1.0}, 1.0, loss,
                                         SolverConfig::adaptive(1e-8));
  CHECK(std::abs(m.grad_mu[0] - expected) < 1e-4);
}

TEST_CASE("zero loss gives an exactly zero gradient") {
  const DynamicsSpec s = small_spec(true);
  Rng rng(4);
  const Vec mu = init_meta_params(s, rng, 0.5);
  const LossSpec zero = LossSpec::terminal(std::make_shared<ZeroLoss>());
  for (GradientEngine e : {GradientEngine::adjoint, GradientEngine::discrete}) {
    const SolverConfig cfg =
        e == GradientEngine::adjoint ? SolverConfig::adaptive(1e-6) : SolverConfig::fixed(Method::rk4, 0.05);
    const ModelGradient g = model_gradient(s, mu, Vec{0.2, 0.1}, 1.0, zero, cfg, e);
    for (double v : g.grad_mu) CHECK(v == 0.0);
    CHECK(g.loss == 0.0);
  }
}

TEST_CASE("adjoint matches central differences") {
  Rng rng(2718);
  const SolverConfig cfg = SolverConfig::adaptive(1e-8);
  for (bool closed : {false, true}) {
    const DynamicsSpec s = small_spec(closed);
    for (int trial = 0; trial < 5; ++trial) {
      const Vec mu = init_meta_params(s, rng, 0.5);
      const Vec x0 = rand_uniform(rng, 2, -1, 1);
      for (const LossSpec& loss :
           {mse_to({0.5, -0.5}), LossSpec::integrated(std::make_shared<SquaredNormLoss>(2)),
            LossSpec::fixed_grid(std::make_shared<SquaredNormLoss>(2), 5)}) {
        const GradCheckReport rep = grad_check(s, mu, x0, 1.0, loss, cfg);
        CHECK(rep.max_rel_err < 1e-3);
      }
    }
  }
}

TEST_CASE("adjoint and discrete engines agree at small fixed steps") {
  Rng rng(99);
  for (bool closed : {false, true}) {
    const DynamicsSpec s = small_spec(closed);
    const Vec mu = init_meta_params(s, rng, 0.5);
    const Vec x0{0.4, -0.3};
    for (const LossSpec& loss :
         {mse_to({1.0, 0.0}), LossSpec::integrated(std::make_shared<SquaredNormLoss>(2)),
          LossSpec::fixed_grid(std::make_shared<SquaredNormLoss>(2), 4)}) {
      const SolverConfig cfg = SolverConfig::fixed(Method::rk4, 1e-3);
      const ModelGradient a = model_gradient(s, mu, x0, 1.0, loss, cfg, GradientEngine::adjoint);
      const ModelGradient d = model_gradient(s, mu, x0, 1.0, loss, cfg, GradientEngine::discrete);
      const double scale = max_abs(d.grad_mu);
      for (std::size_t i = 0; i < mu.size(); ++i) {
        CHECK(std::abs(a.grad_mu[i] - d.grad_mu[i]) <= 1e-4 * std::max(scale, 1e-12));
      }
    }
  }
}

TEST_CASE("discrete engine is the exact gradient of the discrete solve") {
  Rng rng(5);
  const DynamicsSpec s = small_spec(true);
  const Vec mu = init_meta_params(s, rng, 0.5);
  const Vec x0{0.1, 0.7};
  const SolverConfig coarse = SolverConfig::fixed(Method::rk4, 0.2);
  const LossSpec loss = LossSpec::integrated(std::make_shared<SquaredNormLoss>(2));
  const ModelGradient d = model_gradient(s, mu, x0, 1.0, loss, coarse, GradientEngine::discrete);
  const CoupledDynamics h(s);
  auto discrete_loss = [&](const Vec& m) {
    const Vec th = gamma_init(s, m, x0);
    Vec z0 = x0;
    z0.insert(z0.end(), th.begin(), th.end());
    return backprop_through_solver(h, g_slice(s, m), z0, 1.0, loss, {}, coarse).loss;
  };
  const Vec fd = oracle::central_gradient(discrete_loss, mu, 1e-6);
  for (std::size_t i = 0; i < mu.size(); ++i) CHECK(oracle::rel_err(d.grad_mu[i], fd[i], 1e-4) < 1e-5);

  SolverConfig euler = SolverConfig::fixed(Method::euler, 0.1);
  const ModelGradient e = model_gradient(s, mu, x0, 1.0, loss, euler, GradientEngine::discrete);
  auto euler_loss = [&](const Vec& m) {
    const Vec th = gamma_init(s, m, x0);
    Vec z0 = x0;
    z0.insert(z0.end(), th.begin(), th.end());
    return backprop_through_solver(h, g_slice(s, m), z0, 1.0, loss, {}, euler).loss;
  };
  const Vec fde = oracle::central_gradient(euler_loss, mu, 1e-6);
  for (std::size_t i = 0; i < mu.size(); ++i) CHECK(oracle::rel_err(e.grad_mu[i], fde[i], 1e-4) < 1e-5);

  CHECK_THROWS_AS(model_gradient(s, mu, x0, 1.0, loss, SolverConfig{}, GradientEngine::discrete),
                  UnsupportedError);
}

TEST_CASE("gradient is linear in the loss weight") {
  Rng rng(6);
  const DynamicsSpec s = small_spec(false);
  const Vec mu = init_meta_params(s, rng, 0.5);
  const SolverConfig cfg = SolverConfig::fixed(Method::rk4, 0.01);
  LossSpec l1 = mse_to({0.3, 0.3});
  LossSpec l3 = l1;
  l3.weight = 3.0;
  const ModelGradient g1 = model_gradient(s, mu, Vec{0.5, 0.5}, 1.0, l1, cfg);
  const ModelGradient g3 = model_gradient(s, mu, Vec{0.5, 0.5}, 1.0, l3, cfg);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    CHECK(std::abs(g3.grad_mu[i] - 3.0 * g1.grad_mu[i]) <= 1e-10 * std::abs(3.0 * g1.grad_mu[i]) + 1e-300);
  }
}

TEST_CASE("grad_initial_map") {
  DynamicsSpec c;
  c.x_dim = 2;
  c.f_kind = FieldKind::theta;
  c.gamma_kind = GammaKind::constant;
  CHECK(grad_initial_map(c, Vec{1, 2}, Vec{0.5, -0.25}, Vec{3, 4}) == Vec{0.5, -0.25});

  DynamicsSpec lin;
  lin.x_dim = 2;
  lin.f_kind = FieldKind::theta;
  lin.gamma_kind = GammaKind::mlp;
  lin.gamma_mlp = MlpSpec{{2, 2}, Activation::identity, Activation::identity};
  Rng rng(10);
  const Vec mu = rand_normal(rng, lin.meta_dim(), 0.0, 1.0);
  const Vec zero = grad_initial_map(lin, mu, Vec{0.0, 0.0}, Vec{0.3, 0.1});
  for (double v : zero) CHECK(v == 0.0);

  // End to end through a terminal loss.
  const Vec x0{0.3, -0.6};
  const LossSpec loss = mse_to({0.0, 1.0});
  const SolverConfig cfg = SolverConfig::adaptive(1e-9);
  const ModelGradient g = model_gradient(lin, mu, x0, 1.0, loss, cfg);
  const Vec fd = oracle::central_gradient(
      [&](const Vec& m) { return model_loss(lin, m, x0, {}, 1.0, loss, {}, cfg); }, mu, 1e-5);
  for (std::size_t i = 0; i < mu.size(); ++i) CHECK(oracle::rel_err(g.grad_mu[i], fd[i]) < 1e-3);
}

TEST_CASE("grad_check report") {
  auto f = [](std::span<const double> p) { return p[0] * p[0] + 3.0 * p[1]; };
  const GradCheckReport ok = grad_check(f, Vec{1.0, 2.0, 5.0}, Vec{2.0, 3.0, 0.0});
  CHECK(ok.max_rel_err < 1e-8);
  CHECK(ok.entries.size() == 3);
  for (const auto& e : ok.entries) {
    if (e.coord == 2) {
      CHECK(e.analytic == 0.0);
      CHECK(e.fd == 0.0);
      CHECK(e.rel_err == 0.0);
    }
  }

  // Mutation: flipped adjoint signs give relative error ~2.
  const DynamicsSpec s = small_spec(true);
  Rng rng(3);
  const Vec mu = init_meta_params(s, rng, 0.5);
  const CoupledDynamics h(s);
  const SignFlippedAdjoint bad(h);
  const Vec x0{0.5, 0.2};
  const LossSpec loss = mse_to({1.0, -1.0});
  const SolverConfig cfg = SolverConfig::adaptive(1e-8);
  const ModelGradient g = model_gradient(s, bad, mu, x0, {}, 1.0, loss, {}, cfg);
  const GradCheckReport rep = grad_check(
      [&](std::span<const double> m) { return model_loss(s, m, x0, {}, 1.0, loss, {}, cfg); }, mu,
      g.grad_mu);
  CHECK(rep.max_rel_err == doctest::Approx(2.0).epsilon(0.01));
  for (std::size_t i = 1; i < rep.entries.size(); ++i) {
    CHECK(rep.entries[i - 1].rel_err >= rep.entries[i].rel_err);
  }

  std::ostringstream os;
  write_grad_check_csv(os, ok);
  CHECK(os.str().rfind("coord,adjoint,fd,rel_err\n", 0) == 0);
}

TEST_CASE("classification and decoder losses differentiate their parameters") {
  Rng rng(15);
  const SoftmaxCrossEntropyLoss ce(2, 3, 1);
  const Vec z{0.3, -0.7, 9.0};
  const Vec q = rand_normal(rng, ce.param_dim(), 0.0, 1.0);
  Vec gz(3, 0.0), gq(q.size(), 0.0);
  ce.gradient(0.0, z, q, gz, gq);
  const Vec fdq = oracle::central_gradient([&](const Vec& qq) { return ce.value(0.0, z, qq); }, q, 1e-6);
  const Vec fdz = oracle::central_gradient([&](const Vec& zz) { return ce.value(0.0, zz, q); }, z, 1e-6);
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(oracle::rel_err(gq[i], fdq[i], 1e-4) < 1e-5);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(oracle::rel_err(gz[i], fdz[i], 1e-4) < 1e-5);
  CHECK(gz[2] == 0.0);

  const MlpSpec dec{{2, 4, 3}, Activation::tanh, Activation::identity};
  const DecoderMseLoss dl(dec, Vec{0.1, 0.2, -0.3});
  const Vec qd = rand_normal(rng, dl.param_dim(), 0.0, 1.0);
  Vec gz2(3, 0.0), gq2(qd.size(), 0.0);
  dl.gradient(0.0, z, qd, gz2, gq2);
  const Vec fd2 = oracle::central_gradient([&](const Vec& qq) { return dl.value(0.0, z, qq); }, qd, 1e-6);
  for (std::size_t i = 0; i < qd.size(); ++i) CHECK(oracle::rel_err(gq2[i], fd2[i], 1e-4) < 1e-5);

  const TrackingLoss tl(Vec{0.0, 1.0, 2.0}, Vec{0.0, 2.0, 0.0});
  CHECK(tl.observed(0.5) == doctest::Approx(1.0));
  CHECK(tl.observed(1.5) == doctest::Approx(1.0));
  CHECK(tl.value(0.5, Vec{3.0}, {}) == doctest::Approx(4.0));
}

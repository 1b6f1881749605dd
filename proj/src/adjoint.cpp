#include "ncode/adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace ncode {

void LossSpec::validate() const {
  if (!point) throw ParameterError("loss: no point loss");
  if (kind == LossKind::integrated && quadrature == Quadrature::fixed_grid && n_points < 2) {
    throw ParameterError("loss: fixed-grid quadrature needs at least two points");
  }
}

LossSpec LossSpec::terminal(std::shared_ptr<const PointLoss> p, double weight) {
  LossSpec s;
  s.point = std::move(p);
  s.weight = weight;
  return s;
}

LossSpec LossSpec::integrated(std::shared_ptr<const PointLoss> p, double weight) {
  LossSpec s;
  s.kind = LossKind::integrated;
  s.point = std::move(p);
  s.weight = weight;
  return s;
}

LossSpec LossSpec::fixed_grid(std::shared_ptr<const PointLoss> p, std::size_t n_points,
                              double weight) {
  LossSpec s = integrated(std::move(p), weight);
  s.quadrature = Quadrature::fixed_grid;
  s.n_points = n_points;
  return s;
}

double ComponentLoss::value(double, std::span<const double> z, std::span<const double>) const {
  return coeff_ * z[index_];
}

void ComponentLoss::gradient(double, std::span<const double>, std::span<const double>,
                             std::span<double> gz, std::span<double>) const {
  gz[index_] += coeff_;
}

double SquaredNormLoss::value(double, std::span<const double> z, std::span<const double>) const {
  double s = 0.0;
  for (std::size_t i = 0; i < n_; ++i) s += z[i] * z[i];
  return s;
}

void SquaredNormLoss::gradient(double, std::span<const double> z, std::span<const double>,
                               std::span<double> gz, std::span<double>) const {
  for (std::size_t i = 0; i < n_; ++i) gz[i] += 2.0 * z[i];
}

double TargetMseLoss::value(double, std::span<const double> z, std::span<const double>) const {
  double s = 0.0;
  for (std::size_t i = 0; i < target_.size(); ++i) {
    const double d = z[i] - target_[i];
    s += d * d;
  }
  return s / static_cast<double>(target_.size());
}

void TargetMseLoss::gradient(double, std::span<const double> z, std::span<const double>,
                             std::span<double> gz, std::span<double>) const {
  const double k = 2.0 / static_cast<double>(target_.size());
  for (std::size_t i = 0; i < target_.size(); ++i) gz[i] += k * (z[i] - target_[i]);
}

SoftmaxCrossEntropyLoss::SoftmaxCrossEntropyLoss(std::size_t x_dim, std::size_t n_classes,
                                                 std::size_t label)
    : x_dim_(x_dim), n_classes_(n_classes), label_(label) {
  if (label >= n_classes) throw ParameterError("cross-entropy: label out of range");
}

namespace {

Vec head_logits(std::span<const double> x, std::span<const double> q, std::size_t x_dim,
                std::size_t n_classes) {
  Vec logits(n_classes);
  matvec(q.first(n_classes * x_dim), n_classes, x_dim, x.first(x_dim), logits);
  for (std::size_t c = 0; c < n_classes; ++c) logits[c] += q[n_classes * x_dim + c];
  return logits;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double SoftmaxCrossEntropyLoss::value(double, std::span<const double> z,
                                      std::span<const double> q) const {
  const Vec logits = head_logits(z, q, x_dim_, n_classes_);
  return log_sum_exp(logits) - logits[label_];
}

void SoftmaxCrossEntropyLoss::gradient(double, std::span<const double> z,
                                       std::span<const double> q, std::span<double> gz,
                                       std::span<double> gq) const {
  const Vec logits = head_logits(z, q, x_dim_, n_classes_);
  const double lse = log_sum_exp(logits);
  Vec d(n_classes_);
  for (std::size_t c = 0; c < n_classes_; ++c) d[c] = std::exp(logits[c] - lse);
  d[label_] -= 1.0;
  matvec_transposed_add(q.first(n_classes_ * x_dim_), n_classes_, x_dim_, d, gz.first(x_dim_));
  if (gq.empty()) return;
  for (std::size_t c = 0; c < n_classes_; ++c) {
    for (std::size_t j = 0; j < x_dim_; ++j) gq[c * x_dim_ + j] += d[c] * z[j];
    gq[n_classes_ * x_dim_ + c] += d[c];
  }
}

DecoderMseLoss::DecoderMseLoss(MlpSpec decoder, Vec target)
    : decoder_(std::move(decoder)), target_(std::move(target)) {
  decoder_.validate();
  if (target_.size() != decoder_.output_dim()) {
    throw ShapeError("decoder loss: target length differs from decoder output");
  }
}

double DecoderMseLoss::value(double, std::span<const double> z, std::span<const double> q) const {
  const StateVec y = mlp_forward(decoder_, q, z.first(decoder_.input_dim()));
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - target_[i]) * (y[i] - target_[i]);
  return s / static_cast<double>(y.size());
}

void DecoderMseLoss::gradient(double, std::span<const double> z, std::span<const double> q,
                              std::span<double> gz, std::span<double> gq) const {
  const auto x = z.first(decoder_.input_dim());
  const StateVec y = mlp_forward(decoder_, q, x);
  Vec g(y.size());
  const double k = 2.0 / static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = k * (y[i] - target_[i]);
  mlp_vjp(decoder_, q, x, g, gz.first(decoder_.input_dim()), gq);
}

TrackingLoss::TrackingLoss(Vec times, Vec values, std::size_t index)
    : times_(std::move(times)), values_(std::move(values)), index_(index) {
  if (times_.empty() || times_.size() != values_.size()) {
    throw InputError("tracking loss: need matching non-empty times and values");
  }
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) throw InputError("tracking loss: times must increase");
  }
}

double TrackingLoss::observed(double t) const {
  if (t <= times_.front()) return values_.front();
  if (t >= times_.back()) return values_.back();
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - times_.begin());
  const double t0 = times_[k - 1], t1 = times_[k];
  const double w = (t - t0) / (t1 - t0);
  return (1.0 - w) * values_[k - 1] + w * values_[k];
}

double TrackingLoss::value(double t, std::span<const double> z, std::span<const double>) const {
  const double d = z[index_] - observed(t);
  return d * d;
}

void TrackingLoss::gradient(double t, std::span<const double> z, std::span<const double>,
                            std::span<double> gz, std::span<double>) const {
  gz[index_] += 2.0 * (z[index_] - observed(t));
}

namespace {

Vec uniform_grid(double T, std::size_t n) {
  Vec g(n);
  for (std::size_t k = 0; k < n; ++k) {
    g[k] = k + 1 == n ? T : T * static_cast<double>(k) / static_cast<double>(n - 1);
  }
  return g;
}

// Trapezoid weights for samples at `times` (signed spacing).
Vec trapezoid_weights(std::span<const double> times) {
  Vec w(times.size(), 0.0);
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    const double half = 0.5 * (times[k + 1] - times[k]);
    w[k] += half;
    w[k + 1] += half;
  }
  return w;
}

void require_finite(std::span<const double> v, double t, const char* what) {
  if (!all_finite(v)) throw NumericalError(std::string(what) + ": non-finite gradient", t);
}

void check_problem(const Dynamics& h, std::span<const double> p, std::span<const double> z0,
                   const LossSpec& loss, std::span<const double> q) {
  loss.validate();
  if (p.size() != h.param_dim()) throw ShapeError("gradient: parameter length mismatch");
  if (z0.size() != h.state_dim()) throw ShapeError("gradient: state length mismatch");
  if (q.size() != loss.param_dim()) throw ShapeError("gradient: loss parameter length mismatch");
}

struct ForwardPass {
  double loss = 0.0;
  Vec times;            // checkpoint times
  std::vector<Vec> zs;  // checkpoint states
  std::size_t n_rhs_evals = 0;
};

ForwardPass forward_pass(const Dynamics& h, std::span<const double> p,
                         std::span<const double> z0, double T, const LossSpec& loss,
                         std::span<const double> q, const SolverConfig& cfg) {
  ForwardPass f;
  SolverConfig c = cfg;
  c.dense_record = false;
  const Rhs rhs = h.bind(p);
  const PointLoss& ell = *loss.point;
  const std::size_t n = z0.size();

  if (T == 0.0) {
    f.times = {0.0};
    f.zs = {Vec(z0.begin(), z0.end())};
    f.loss = loss.kind == LossKind::terminal ? loss.weight * ell.value(0.0, z0, q) : 0.0;
    return f;
  }

  if (loss.kind == LossKind::terminal) {
    const Trajectory tr = integrate(rhs, z0, 0.0, T, c, h.x_dim());
    f.n_rhs_evals = tr.n_rhs_evals;
    f.times = {0.0, T};
    f.zs = {Vec(z0.begin(), z0.end()), tr.back()};
    f.loss = loss.weight * ell.value(T, tr.back(), q);
  } else if (loss.quadrature == Quadrature::solver_grid) {
    const double w = loss.weight;
    Rhs aug = [&](double t, std::span<const double> y, std::span<double> dy) {
      rhs(t, y.first(n), dy.first(n));
      dy[n] = w * ell.value(t, y.first(n), q);
    };
    Vec y0(z0.begin(), z0.end());
    y0.push_back(0.0);
    const Trajectory tr = integrate(aug, y0, 0.0, T, c, h.x_dim());
    f.n_rhs_evals = tr.n_rhs_evals;
    f.times = {0.0, T};
    f.zs = {Vec(z0.begin(), z0.end()), Vec(tr.back().begin(), tr.back().begin() + n)};
    f.loss = tr.back()[n];
  } else {
    const Vec grid = uniform_grid(T, loss.n_points);
    const Trajectory tr = integrate_at(rhs, z0, grid, c, h.x_dim());
    f.n_rhs_evals = tr.n_rhs_evals;
    f.times = grid;
    f.zs = tr.states;
    const Vec cw = trapezoid_weights(grid);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      f.loss += loss.weight * cw[k] * ell.value(grid[k], f.zs[k], q);
    }
  }
  if (!std::isfinite(f.loss)) throw NumericalError("forward: non-finite loss", T);
  return f;
}

// a += c ∂ℓ/∂z, gq += c ∂ℓ/∂q.
void add_jump(const PointLoss& ell, double c, double t, std::span<const double> z,
              std::span<const double> q, std::span<double> a, std::span<double> gq) {
  if (c == 0.0) return;
  Vec gz(z.size(), 0.0), g(q.size(), 0.0);
  ell.gradient(t, z, q, gz, g);
  axpy(c, gz, a);
  axpy(c, g, gq);
}

}  // namespace

double loss_integral(const Trajectory& traj, const LossSpec& loss, std::span<const double> q) {
  loss.validate();
  if (traj.empty()) throw InputError("loss_integral: empty trajectory");
  const PointLoss& ell = *loss.point;
  if (loss.kind == LossKind::terminal) {
    return loss.weight * ell.value(traj.times.back(), traj.back(), q);
  }
  if (loss.quadrature == Quadrature::fixed_grid) {
    if (traj.size() != loss.n_points) {
      throw InputError("loss_integral: trajectory not recorded on the fixed grid");
    }
    const double t0 = traj.times.front();
    const double span = traj.times.back() - t0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const double expect = t0 + span * static_cast<double>(k) / static_cast<double>(traj.size() - 1);
      if (std::abs(traj.times[k] - expect) > 1e-9 * std::max(1.0, std::abs(span))) {
        throw InputError("loss_integral: trajectory times are not the uniform grid");
      }
    }
  }
  const Vec w = trapezoid_weights(traj.times);
  double s = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    s += w[k] * ell.value(traj.times[k], traj.states[k], q);
  }
  return loss.weight * s;
}

BackwardSegment backward_segment(const Dynamics& h, std::span<const double> p,
                                 std::span<const double> z_end, std::span<const double> a_end,
                                 double t_end, double t_start, const PointLoss* running,
                                 double weight, std::span<const double> q,
                                 std::span<double> grad_p, std::span<double> grad_q,
                                 const SolverConfig& cfg) {
  const std::size_t n = h.state_dim();
  const std::size_t np = h.param_dim();
  const std::size_t nq = running ? q.size() : 0;
  BackwardSegment out;
  if (t_end == t_start) {
    out.z.assign(z_end.begin(), z_end.end());
    out.a.assign(a_end.begin(), a_end.end());
    return out;
  }
  Vec tz(n), tp(np), lz(n), lq(nq);
  Rhs rhs = [&, tz, tp, lz, lq](double t, std::span<const double> y,
                                std::span<double> dy) mutable {
    const auto z = y.first(n);
    const auto a = y.subspan(n, n);
    h.eval(t, z, p, dy.first(n));
    std::fill(tz.begin(), tz.end(), 0.0);
    std::fill(tp.begin(), tp.end(), 0.0);
    h.vjp(t, z, p, a, tz, tp);
    auto da = dy.subspan(n, n);
    for (std::size_t i = 0; i < n; ++i) da[i] = -tz[i];
    auto dgp = dy.subspan(2 * n, np);
    for (std::size_t i = 0; i < np; ++i) dgp[i] = -tp[i];
    if (running) {
      std::fill(lz.begin(), lz.end(), 0.0);
      std::fill(lq.begin(), lq.end(), 0.0);
      running->gradient(t, z, q, lz, lq);
      for (std::size_t i = 0; i < n; ++i) da[i] -= weight * lz[i];
      auto dgq = dy.subspan(2 * n + np, nq);
      for (std::size_t i = 0; i < nq; ++i) dgq[i] = -weight * lq[i];
    }
  };
  Vec y(2 * n + np + nq, 0.0);
  std::copy(z_end.begin(), z_end.end(), y.begin());
  std::copy(a_end.begin(), a_end.end(), y.begin() + static_cast<std::ptrdiff_t>(n));
  SolverConfig c = cfg;
  c.dense_record = false;
  const Trajectory tr = integrate(rhs, y, t_end, t_start, c);
  const Vec& yb = tr.back();
  require_finite(yb, t_start, "adjoint");
  out.n_rhs_evals = tr.n_rhs_evals;
  out.z.assign(yb.begin(), yb.begin() + static_cast<std::ptrdiff_t>(n));
  out.a.assign(yb.begin() + static_cast<std::ptrdiff_t>(n),
               yb.begin() + static_cast<std::ptrdiff_t>(2 * n));
  for (std::size_t i = 0; i < np; ++i) grad_p[i] += yb[2 * n + i];
  for (std::size_t i = 0; i < nq; ++i) grad_q[i] += yb[2 * n + np + i];
  return out;
}

GradientResult adjoint_solve(const Dynamics& h, std::span<const double> p,
                             std::span<const double> z0, double T, const LossSpec& loss,
                             std::span<const double> q, const SolverConfig& cfg) {
  check_problem(h, p, z0, loss, q);
  const std::size_t n = h.state_dim();
  const PointLoss& ell = *loss.point;
  GradientResult r;
  r.grad_p.assign(h.param_dim(), 0.0);
  r.grad_q.assign(q.size(), 0.0);

  const ForwardPass f = forward_pass(h, p, z0, T, loss, q, cfg);
  r.loss = f.loss;
  r.n_rhs_evals = f.n_rhs_evals;

  Vec a(n, 0.0);
  if (T == 0.0) {
    if (loss.kind == LossKind::terminal) add_jump(ell, loss.weight, 0.0, z0, q, a, r.grad_q);
    r.grad_z0 = std::move(a);
    return r;
  }

  if (loss.kind == LossKind::terminal) {
    add_jump(ell, loss.weight, T, f.zs.back(), q, a, r.grad_q);
    const BackwardSegment b =
        backward_segment(h, p, f.zs.back(), a, T, 0.0, nullptr, 0.0, q, r.grad_p, r.grad_q, cfg);
    r.n_rhs_evals += b.n_rhs_evals;
    a = b.a;
  } else if (loss.quadrature == Quadrature::solver_grid) {
    const BackwardSegment b =
        backward_segment(h, p, f.zs.back(), a, T, 0.0, &ell, loss.weight, q, r.grad_p, r.grad_q,
                         cfg);
    r.n_rhs_evals += b.n_rhs_evals;
    a = b.a;
  } else {
    const Vec cw = trapezoid_weights(f.times);
    const std::size_t last = f.times.size() - 1;
    add_jump(ell, loss.weight * cw[last], f.times[last], f.zs[last], q, a, r.grad_q);
    for (std::size_t k = last; k > 0; --k) {
      const BackwardSegment b = backward_segment(h, p, f.zs[k], a, f.times[k], f.times[k - 1],
                                                 nullptr, 0.0, q, r.grad_p, r.grad_q, cfg);
      r.n_rhs_evals += b.n_rhs_evals;
      a = b.a;
      add_jump(ell, loss.weight * cw[k - 1], f.times[k - 1], f.zs[k - 1], q, a, r.grad_q);
    }
  }
  require_finite(r.grad_p, 0.0, "adjoint");
  require_finite(r.grad_q, 0.0, "adjoint");
  r.grad_z0 = std::move(a);
  return r;
}

namespace {

// Reverse of one fixed step z' = step(z). Returns ā_z given ā_{z'}; adds the
// parameter contribution into gp.
Vec step_vjp(const Dynamics& h, std::span<const double> p, Method method, double t,
             std::span<const double> z, double dt, std::span<const double> abar,
             std::span<double> gp, std::size_t& evals) {
  const std::size_t n = z.size();
  Vec out(abar.begin(), abar.end());
  if (method == Method::euler) {
    Vec g(n, 0.0), s(n, 0.0);
    Vec a_scaled(abar.begin(), abar.end());
    for (auto& v : a_scaled) v *= dt;
    h.vjp(t, z, p, a_scaled, g, gp);
    ++evals;
    axpy(1.0, g, out);
    return out;
  }
  // Stage points.
  Vec k1(n), k2(n), k3(n), u2(n), u3(n), u4(n);
  h.eval(t, z, p, k1);
  for (std::size_t i = 0; i < n; ++i) u2[i] = z[i] + 0.5 * dt * k1[i];
  h.eval(t + 0.5 * dt, u2, p, k2);
  for (std::size_t i = 0; i < n; ++i) u3[i] = z[i] + 0.5 * dt * k2[i];
  h.eval(t + 0.5 * dt, u3, p, k3);
  for (std::size_t i = 0; i < n; ++i) u4[i] = z[i] + dt * k3[i];
  evals += 3;

  Vec ak1(n), ak2(n), ak3(n), ak4(n);
  for (std::size_t i = 0; i < n; ++i) {
    ak1[i] = dt / 6.0 * abar[i];
    ak2[i] = dt / 3.0 * abar[i];
    ak3[i] = dt / 3.0 * abar[i];
    ak4[i] = dt / 6.0 * abar[i];
  }
  Vec g(n);
  std::fill(g.begin(), g.end(), 0.0);
  h.vjp(t + dt, u4, p, ak4, g, gp);
  axpy(1.0, g, out);
  axpy(dt, g, ak3);
  std::fill(g.begin(), g.end(), 0.0);
  h.vjp(t + 0.5 * dt, u3, p, ak3, g, gp);
  axpy(1.0, g, out);
  axpy(0.5 * dt, g, ak2);
  std::fill(g.begin(), g.end(), 0.0);
  h.vjp(t + 0.5 * dt, u2, p, ak2, g, gp);
  axpy(1.0, g, out);
  axpy(0.5 * dt, g, ak1);
  std::fill(g.begin(), g.end(), 0.0);
  h.vjp(t, z, p, ak1, g, gp);
  axpy(1.0, g, out);
  evals += 4;
  return out;
}

void append_steps(Vec& times, double t0, double t1, double dt) {
  const auto n = static_cast<std::size_t>(std::ceil(std::abs(t1 - t0) / dt - 1e-9));
  const std::size_t steps = std::max<std::size_t>(n, 1);
  const double h = (t1 - t0) / static_cast<double>(steps);
  for (std::size_t s = 1; s <= steps; ++s) {
    times.push_back(s == steps ? t1 : t0 + static_cast<double>(s) * h);
  }
}

}  // namespace

GradientResult backprop_through_solver(const Dynamics& h, std::span<const double> p,
                                       std::span<const double> z0, double T,
                                       const LossSpec& loss, std::span<const double> q,
                                       const SolverConfig& cfg) {
  check_problem(h, p, z0, loss, q);
  if (!cfg.fixed_step()) {
    throw UnsupportedError("backprop_through_solver: requires a fixed-step method (euler, rk4)");
  }
  cfg.validate();
  const PointLoss& ell = *loss.point;

  // Step grid and quadrature weight per grid point.
  Vec times{0.0};
  Vec cw;
  if (T != 0.0) {
    if (loss.kind == LossKind::integrated && loss.quadrature == Quadrature::fixed_grid) {
      const Vec grid = uniform_grid(T, loss.n_points);
      const Vec gw = trapezoid_weights(grid);
      cw.push_back(gw[0]);
      for (std::size_t k = 1; k < grid.size(); ++k) {
        append_steps(times, grid[k - 1], grid[k], cfg.fixed_dt);
        cw.resize(times.size(), 0.0);
        cw.back() = gw[k];
      }
    } else {
      append_steps(times, 0.0, T, cfg.fixed_dt);
      if (loss.kind == LossKind::terminal) {
        cw.assign(times.size(), 0.0);
        cw.back() = 1.0;
      } else {
        cw = trapezoid_weights(times);
      }
    }
  } else {
    cw = {loss.kind == LossKind::terminal ? 1.0 : 0.0};
  }
  for (auto& c : cw) c *= loss.weight;

  GradientResult r;
  r.grad_p.assign(h.param_dim(), 0.0);
  r.grad_q.assign(q.size(), 0.0);
  const Rhs rhs = h.bind(p);
  std::vector<Vec> zs;
  zs.reserve(times.size());
  zs.emplace_back(z0.begin(), z0.end());
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    const double dt = times[k + 1] - times[k];
    zs.push_back(cfg.method == Method::rk4 ? step_rk4(rhs, times[k], zs[k], dt)
                                           : step_euler(rhs, times[k], zs[k], dt));
    r.n_rhs_evals += cfg.method == Method::rk4 ? 4 : 1;
  }
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (cw[k] != 0.0) r.loss += cw[k] * ell.value(times[k], zs[k], q);
  }
  if (!std::isfinite(r.loss)) throw NumericalError("discrete: non-finite loss", T);

  const std::size_t last = times.size() - 1;
  Vec a(z0.size(), 0.0);
  add_jump(ell, cw[last], times[last], zs[last], q, a, r.grad_q);
  for (std::size_t k = last; k > 0; --k) {
    a = step_vjp(h, p, cfg.method, times[k - 1], zs[k - 1], times[k] - times[k - 1], a, r.grad_p,
                 r.n_rhs_evals);
    add_jump(ell, cw[k - 1], times[k - 1], zs[k - 1], q, a, r.grad_q);
  }
  require_finite(a, 0.0, "discrete");
  require_finite(r.grad_p, 0.0, "discrete");
  r.grad_z0 = std::move(a);
  return r;
}

ModelGradient model_gradient(const DynamicsSpec& spec, const Dynamics& h,
                             std::span<const double> mu, std::span<const double> x0,
                             std::span<const double> gamma_input, double T, const LossSpec& loss,
                             std::span<const double> q, const SolverConfig& cfg,
                             GradientEngine engine) {
  if (x0.size() != spec.x_dim) throw ShapeError("model_gradient: x0 length");
  const auto input = gamma_input.empty() ? x0 : gamma_input;
  const Vec theta0 = gamma_init(spec, mu, input);
  Vec z0(x0.begin(), x0.end());
  z0.insert(z0.end(), theta0.begin(), theta0.end());
  const auto p = g_slice(spec, mu);
  const GradientResult r = engine == GradientEngine::adjoint
                               ? adjoint_solve(h, p, z0, T, loss, q, cfg)
                               : backprop_through_solver(h, p, z0, T, loss, q, cfg);
  ModelGradient out;
  out.loss = r.loss;
  out.n_rhs_evals = r.n_rhs_evals;
  out.grad_q = r.grad_q;
  out.grad_mu.assign(spec.meta_dim(), 0.0);
  const auto a_theta = std::span<const double>(r.grad_z0).subspan(spec.x_dim);
  const Vec g_gamma = grad_initial_map(spec, mu, a_theta, input);
  std::copy(g_gamma.begin(), g_gamma.end(), out.grad_mu.begin());
  std::copy(r.grad_p.begin(), r.grad_p.end(),
            out.grad_mu.begin() + static_cast<std::ptrdiff_t>(spec.gamma_param_dim()));
  out.grad_x0.assign(r.grad_z0.begin(),
                     r.grad_z0.begin() + static_cast<std::ptrdiff_t>(spec.x_dim));
  if (spec.gamma_kind == GammaKind::identity && gamma_input.empty()) {
    axpy(1.0, a_theta, out.grad_x0);
  }
  return out;
}

ModelGradient model_gradient(const DynamicsSpec& spec, std::span<const double> mu,
                             std::span<const double> x0, double T, const LossSpec& loss,
                             const SolverConfig& cfg, GradientEngine engine) {
  const CoupledDynamics h(spec);
  return model_gradient(spec, h, mu, x0, {}, T, loss, {}, cfg, engine);
}

double model_loss(const DynamicsSpec& spec, std::span<const double> mu,
                  std::span<const double> x0, std::span<const double> gamma_input, double T,
                  const LossSpec& loss, std::span<const double> q, const SolverConfig& cfg) {
  const CoupledDynamics h(spec);
  const auto input = gamma_input.empty() ? x0 : gamma_input;
  const Vec theta0 = gamma_init(spec, mu, input);
  Vec z0(x0.begin(), x0.end());
  z0.insert(z0.end(), theta0.begin(), theta0.end());
  check_problem(h, g_slice(spec, mu), z0, loss, q);
  return forward_pass(h, g_slice(spec, mu), z0, T, loss, q, cfg).loss;
}

double relative_error(double analytic, double fd, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), floor});
  const double diff = std::abs(analytic - fd);
  return diff == 0.0 ? 0.0 : diff / denom;
}

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                           std::span<const double> params, std::span<const double> analytic,
                           double step, double floor) {
  if (analytic.size() != params.size()) throw ShapeError("grad_check: gradient length");
  GradCheckReport rep;
  Vec x(params.begin(), params.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = loss_fn(x);
    x[i] = orig - step;
    const double down = loss_fn(x);
    x[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    rep.entries.push_back({i, analytic[i], fd, relative_error(analytic[i], fd, floor)});
  }
  std::stable_sort(rep.entries.begin(), rep.entries.end(),
                   [](const auto& a, const auto& b) { return a.rel_err > b.rel_err; });
  rep.max_rel_err = rep.entries.empty() ? 0.0 : rep.entries.front().rel_err;
  return rep;
}

GradCheckReport grad_check(const DynamicsSpec& spec, std::span<const double> mu,
                           std::span<const double> x0, double T, const LossSpec& loss,
                           const SolverConfig& cfg, double step) {
  const ModelGradient g = model_gradient(spec, mu, x0, T, loss, cfg);
  return grad_check(
      [&](std::span<const double> m) { return model_loss(spec, m, x0, {}, T, loss, {}, cfg); },
      mu, g.grad_mu, step);
}

void write_grad_check_csv(std::ostream& os, const GradCheckReport& report) {
  os << "coord,adjoint,fd,rel_err\n";
  for (const auto& e : report.entries) {
    os << e.coord << ',' << format_double(e.analytic) << ',' << format_double(e.fd) << ','
       << format_double(e.rel_err) << '\n';
  }
}

}  // namespace ncode

#include "ncode/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ncode/hebbian.hpp"

namespace ncode {

std::string to_string(TaskName t) {
  switch (t) {
    case TaskName::reflection: return "reflection";
    case TaskName::annuli: return "annuli";
    case TaskName::vdp_fit: return "vdp_fit";
    case TaskName::memorize: return "memorize";
    case TaskName::latent_flow_ae: return "latent_flow_ae";
  }
  return "?";
}

TaskName task_from_string(const std::string& s) {
  if (s == "reflection") return TaskName::reflection;
  if (s == "annuli") return TaskName::annuli;
  if (s == "vdp_fit") return TaskName::vdp_fit;
  if (s == "memorize") return TaskName::memorize;
  if (s == "latent_flow_ae") return TaskName::latent_flow_ae;
  throw ConfigError("unknown task '" + s +
                    "' (valid: reflection, annuli, vdp_fit, memorize, latent_flow_ae)");
}

void TaskSpec::validate() const {
  switch (name) {
    case TaskName::reflection:
      if (!(range_lo < range_hi)) throw ConfigError("reflection: range_lo must be < range_hi");
      if (n_train == 0) throw ConfigError("reflection: n_train must be positive");
      break;
    case TaskName::annuli:
      if (!(0.0 < r1 && r1 < r2 && r2 < r3)) throw ConfigError("annuli: need 0 < r1 < r2 < r3");
      if (n_train == 0) throw ConfigError("annuli: n_train must be positive");
      break;
    case TaskName::vdp_fit:
      if (vdp_mu_true <= 0.0 || vdp_mu_init <= 0.0) throw ConfigError("vdp: mu must be positive");
      if (vdp_horizon <= 0.0 || vdp_n_obs < 2) throw ConfigError("vdp: bad observation grid");
      break;
    case TaskName::memorize:
      if (mem_bits == 0 || mem_bits % 2 != 0) throw ConfigError("memorize: bits must be even");
      if (mem_patterns == 0 || mem_repeats == 0) throw ConfigError("memorize: empty episode");
      if (mem_degradation < 0.0 || mem_degradation > 1.0) {
        throw ConfigError("memorize: degradation must lie in [0, 1]");
      }
      if (mem_presentation <= 0.0 || mem_query <= 0.0) {
        throw ConfigError("memorize: durations must be positive");
      }
      break;
    case TaskName::latent_flow_ae:
      if (ae_factors == 0 || ae_data_dim == 0) throw ConfigError("latent_flow_ae: empty dims");
      break;
  }
}

Dataset gen_reflection(std::size_t n_points, double lo, double hi, Rng& rng) {
  if (n_points == 0) throw ParameterError("gen_reflection: n_points must be >= 1");
  Dataset d;
  for (std::size_t i = 0; i < n_points; ++i) {
    const double x = rng.uniform(lo, hi);
    d.inputs.push_back({x});
    d.targets.push_back({-x});
  }
  return d;
}

Dataset gen_annuli(std::size_t n_per_class, double r1, double r2, double r3, Rng& rng) {
  if (!(0.0 < r1 && r1 < r2 && r2 < r3)) throw ParameterError("gen_annuli: need r1 < r2 < r3");
  Dataset d;
  auto sample = [&](double ra, double rb) {
    const double r = std::sqrt(rng.uniform(ra * ra, rb * rb));
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return Vec{r * std::cos(phi), r * std::sin(phi)};
  };
  for (std::size_t i = 0; i < n_per_class; ++i) {
    d.inputs.push_back(sample(0.0, r1));
    d.labels.push_back(0);
    d.inputs.push_back(sample(r2, r3));
    d.labels.push_back(1);
  }
  return d;
}

double best_linear_accuracy(const Dataset& data, std::size_t n_angles) {
  const std::size_t n = data.size();
  if (n == 0 || data.labels.size() != n) throw InputError("best_linear_accuracy: needs labels");
  std::size_t best = 0;
  std::vector<std::pair<double, std::size_t>> proj(n);
  for (std::size_t k = 0; k < n_angles; ++k) {
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) /
                       static_cast<double>(n_angles);
    const double c = std::cos(phi), s = std::sin(phi);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
      proj[i] = {c * data.inputs[i][0] + s * data.inputs[i][1], data.labels[i]};
      ones += data.labels[i] == 1 ? 1 : 0;
    }
    std::sort(proj.begin(), proj.end());
    // Predict 1 above the threshold; start with everything above.
    std::size_t correct = ones;
    best = std::max(best, correct);
    for (std::size_t i = 0; i < n; ++i) {
      correct = proj[i].second == 0 ? correct + 1 : correct - 1;
      if (i + 1 == n || proj[i + 1].first != proj[i].first) best = std::max(best, correct);
    }
  }
  return static_cast<double>(best) / static_cast<double>(n);
}

Vec LatentGenerator::operator()(std::span<const double> s) const {
  Vec y = matvec(a, s);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i] + c[i]);
  return y;
}

LatentGenerator make_latent_generator(std::size_t factors, std::size_t data_dim, Rng& rng) {
  LatentGenerator g;
  g.a = Matrix(data_dim, factors, rand_normal(rng, data_dim * factors, 0.0, 1.0));
  g.c = rand_normal(rng, data_dim, 0.0, 0.3);
  return g;
}

Dataset gen_latent_data(const LatentGenerator& gen, std::size_t n, Rng& rng) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec s = rand_uniform(rng, gen.a.cols, -1.0, 1.0);
    Vec y = gen(s);
    d.inputs.push_back(y);
    d.targets.push_back(std::move(y));
  }
  return d;
}

// ---- memorization ----

Episode make_episode(const TaskSpec& task, Rng& rng) {
  task.validate();
  const std::size_t n = task.mem_bits, m = task.mem_patterns;
  Episode ep;
  ep.patterns = Matrix(m, n);
  for (double& v : ep.patterns.data) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
  std::vector<std::size_t> seq;
  for (std::size_t r = 0; r < task.mem_repeats; ++r) {
    for (std::size_t k = 0; k < m; ++k) seq.push_back(k);
  }
  for (std::size_t i : permutation(rng, seq.size())) ep.order.push_back(seq[i]);
  ep.query_index = rng.below(m);
  const auto row = ep.patterns.row(ep.query_index);
  ep.target.assign(row.begin(), row.end());
  ep.degraded = ep.target;
  const auto n_zero = static_cast<std::size_t>(
      std::llround(task.mem_degradation * static_cast<double>(n)));
  const auto perm = permutation(rng, n);
  for (std::size_t i = 0; i < n_zero; ++i) ep.degraded[perm[i]] = 0.0;
  return ep;
}

DynamicsSpec memorize_model_spec(std::size_t n_bits) {
  DynamicsSpec s;
  s.x_dim = n_bits;
  s.f_kind = FieldKind::hebbian;
  s.hebbian_activation = Activation::tanh;
  s.g_kind = ControlKind::hebbian;
  s.gamma_kind = GammaKind::constant;
  s.validate();
  return s;
}

double bit_error_rate(std::span<const double> x, std::span<const double> target) {
  if (x.size() != target.size() || x.empty()) throw ShapeError("bit_error_rate: lengths");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
    if (s != target[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(x.size());
}

namespace {

std::vector<const Vec*> episode_stimuli(const Episode& ep, std::vector<Vec>& storage) {
  storage.clear();
  for (std::size_t k : ep.order) {
    const auto r = ep.patterns.row(k);
    storage.emplace_back(r.begin(), r.end());
  }
  std::vector<const Vec*> out;
  for (const auto& v : storage) out.push_back(&v);
  out.push_back(&ep.degraded);
  return out;
}

struct EpisodeForward {
  std::vector<Vec> ends;  // state at the end of every segment
  std::vector<double> durations;
  std::size_t n_rhs_evals = 0;
};

EpisodeForward episode_forward(const CoupledDynamics& h, const Episode& ep,
                               std::span<const double> theta0, std::span<const double> gains,
                               double presentation, double query, const SolverConfig& cfg) {
  const std::size_t n = ep.target.size();
  if (theta0.size() != n * n || gains.size() != n * n) {
    throw ShapeError("episode: theta0 and gains must be n x n");
  }
  std::vector<Vec> storage;
  const auto stimuli = episode_stimuli(ep, storage);
  EpisodeForward fw;
  Vec z(n + n * n);
  std::copy(theta0.begin(), theta0.end(), z.begin() + static_cast<std::ptrdiff_t>(n));
  const Rhs rhs = h.bind(gains);
  SolverConfig c = cfg;
  c.dense_record = false;
  for (std::size_t s = 0; s < stimuli.size(); ++s) {
    std::copy(stimuli[s]->begin(), stimuli[s]->end(), z.begin());
    const double dur = s + 1 == stimuli.size() ? query : presentation;
    const Trajectory tr = integrate(rhs, z, 0.0, dur, c, n);
    fw.n_rhs_evals += tr.n_rhs_evals;
    z = tr.back();
    fw.ends.push_back(z);
    fw.durations.push_back(dur);
  }
  return fw;
}

double mse(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

EpisodeResult make_result(const EpisodeForward& fw, const Episode& ep) {
  const std::size_t n = ep.target.size();
  EpisodeResult r;
  r.final_x.assign(fw.ends.back().begin(), fw.ends.back().begin() + static_cast<std::ptrdiff_t>(n));
  r.reconstruction.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.reconstruction[i] = r.final_x[i] > 0.0 ? 1.0 : (r.final_x[i] < 0.0 ? -1.0 : 0.0);
  }
  r.error_rate = bit_error_rate(r.final_x, ep.target);
  r.n_rhs_evals = fw.n_rhs_evals;
  return r;
}

}  // namespace

EpisodeResult run_episode(const Episode& ep, std::span<const double> theta0,
                          std::span<const double> gains, double presentation, double query,
                          const SolverConfig& cfg) {
  const CoupledDynamics h(memorize_model_spec(ep.target.size()));
  return make_result(episode_forward(h, ep, theta0, gains, presentation, query, cfg), ep);
}

double episode_loss(const Episode& ep, std::span<const double> mu, double presentation,
                    double query, const SolverConfig& cfg) {
  const std::size_t n = ep.target.size();
  const DynamicsSpec spec = memorize_model_spec(n);
  const CoupledDynamics h(spec);
  const auto fw = episode_forward(h, ep, gamma_slice(spec, mu), g_slice(spec, mu), presentation,
                                  query, cfg);
  return mse(std::span<const double>(fw.ends.back()).first(n), ep.target);
}

EpisodeGradient episode_gradient(const Episode& ep, std::span<const double> mu,
                                 double presentation, double query, const SolverConfig& cfg,
                                 const GradientFixture& fixture) {
  const std::size_t n = ep.target.size();
  const DynamicsSpec spec = memorize_model_spec(n);
  const CoupledDynamics h(spec);
  const SignFlippedAdjoint flipped(h);
  const Dynamics& hb = fixture.flip_adjoint ? static_cast<const Dynamics&>(flipped) : h;
  const auto theta0 = gamma_slice(spec, mu);
  const auto gains = g_slice(spec, mu);
  const EpisodeForward fw = episode_forward(h, ep, theta0, gains, presentation, query, cfg);

  EpisodeGradient out;
  out.result = make_result(fw, ep);
  out.loss = fixture.loss_weight * mse(out.result.final_x, ep.target);
  out.grad.assign(spec.meta_dim(), 0.0);
  std::span<double> g_gain = std::span<double>(out.grad).subspan(n * n, n * n);

  Vec a(n + n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = fixture.loss_weight * 2.0 * (out.result.final_x[i] - ep.target[i]) / static_cast<double>(n);
  }
  std::size_t nfe = 0;
  for (std::size_t s = fw.ends.size(); s-- > 0;) {
    const BackwardSegment b = backward_segment(hb, gains, fw.ends[s], a, fw.durations[s], 0.0,
                                               nullptr, 0.0, {}, g_gain, {}, cfg);
    nfe += b.n_rhs_evals;
    a = b.a;
    // x was overwritten by the stimulus at the segment start.
    std::fill(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  }
  std::copy(a.begin() + static_cast<std::ptrdiff_t>(n), a.end(), out.grad.begin());
  out.result.n_rhs_evals += nfe;
  return out;
}

// ---- van der pol ----

std::pair<double, double> vdp_rhs(double x, double theta, double mu) {
  if (mu == 0.0) throw ParameterError("vdp_rhs: mu must be nonzero");
  return {mu * (x - x * x * x / 3.0 - theta), x / mu};
}

void VanDerPolDynamics::eval(double, std::span<const double> z, std::span<const double> p,
                             std::span<double> dz) const {
  const auto [dx, dth] = vdp_rhs(z[0], z[1], p[0]);
  dz[0] = dx;
  dz[1] = dth;
}

void VanDerPolDynamics::vjp(double, std::span<const double> z, std::span<const double> p,
                            std::span<const double> a, std::span<double> gz,
                            std::span<double> gp) const {
  const double x = z[0], th = z[1], mu = p[0];
  if (mu == 0.0) throw ParameterError("vdp: mu must be nonzero");
  gz[0] += a[0] * mu * (1.0 - x * x) + a[1] / mu;
  gz[1] += -a[0] * mu;
  gp[0] += a[0] * (x - x * x * x / 3.0 - th) - a[1] * x / (mu * mu);
}

Trajectory vdp_observe(double mu, double x0, double horizon, std::size_t n_obs,
                       const SolverConfig& cfg) {
  if (n_obs < 2) throw ParameterError("vdp_observe: need at least two observations");
  Vec times(n_obs);
  for (std::size_t i = 0; i < n_obs; ++i) {
    times[i] = horizon * static_cast<double>(i) / static_cast<double>(n_obs - 1);
  }
  const VanDerPolDynamics h;
  const Vec p{mu};
  return integrate_at(h.bind(p), Vec{x0, 0.0}, times, cfg, 1);
}

VdpLoss vdp_loss(const Trajectory& observed, double mu, const SolverConfig& cfg,
                 bool with_grad, const GradientFixture& fixture) {
  if (observed.size() < 2) throw InputError("vdp_loss: need at least two observations");
  Vec values(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) values[i] = observed.states[i][0];
  const double T = observed.times.back();
  const LossSpec loss = LossSpec::fixed_grid(
      std::make_shared<TrackingLoss>(observed.times, values, 0), observed.size(),
      fixture.loss_weight);
  const VanDerPolDynamics h;
  const Vec p{mu};
  const Vec z0{values[0], 0.0};
  VdpLoss out;
  if (with_grad) {
    const SignFlippedAdjoint flipped(h);
    const Dynamics& hb = fixture.flip_adjoint ? static_cast<const Dynamics&>(flipped) : h;
    const GradientResult r = adjoint_solve(hb, p, z0, T, loss, {}, cfg);
    out.loss = r.loss;
    out.grad = r.grad_p[0];
    out.n_rhs_evals = r.n_rhs_evals;
  } else {
    const Trajectory tr = integrate_at(h.bind(p), z0, observed.times, cfg, 1);
    out.loss = loss_integral(tr, loss);
    out.n_rhs_evals = tr.n_rhs_evals;
  }
  return out;
}

VdpFit fit_vdp(const Trajectory& observed, double mu_init, const SolverConfig& cfg,
               const VdpFitOptions& options) {
  VdpFit fit;
  Vec mu{mu_init};
  OptState opt = OptState::adam(1, options.lr);
  for (std::size_t step = 0; step < options.max_steps; ++step) {
    const VdpLoss l = vdp_loss(observed, mu[0], cfg, true);
    fit.n_rhs_evals += l.n_rhs_evals;
    if (!std::isfinite(l.loss) || !std::isfinite(l.grad)) {
      throw BudgetError("fit_vdp: loss diverged at mu = " + format_double(mu[0]), Trajectory{});
    }
    fit.losses.push_back(l.loss);
    if (std::abs(l.grad) < options.grad_tol) break;
    adam_step(opt, mu, Vec{l.grad});
    if (!(mu[0] > 0.0)) {
      throw BudgetError("fit_vdp: mu left the positive half-line", Trajectory{});
    }
  }
  fit.mu = mu[0];
  return fit;
}

// ---- latent flow ----

DynamicsSpec latent_flow_spec(std::size_t latent_dim, std::size_t data_dim, std::size_t hidden,
                              std::size_t nnz_per_row) {
  DynamicsSpec s;
  s.x_dim = latent_dim;
  s.f_kind = FieldKind::linear;
  s.linear_nnz_per_row = nnz_per_row;
  s.g_kind = ControlKind::none;
  s.gamma_kind = GammaKind::mlp;
  s.gamma_input_dim = data_dim;
  s.gamma_mlp = MlpSpec{{data_dim, hidden, s.theta_dim()}, Activation::tanh, Activation::identity};
  s.validate();
  return s;
}

StateVec latent_flow_encode(std::span<const double> theta, std::span<const double> x0, double T,
                            const SolverConfig& cfg, std::size_t nnz_per_row) {
  DynamicsSpec s;
  s.x_dim = x0.size();
  s.f_kind = FieldKind::linear;
  s.linear_nnz_per_row = nnz_per_row;
  s.gamma_kind = GammaKind::constant;
  s.validate();
  if (theta.size() != s.theta_dim()) throw ShapeError("latent_flow_encode: theta shape");
  if (T == 0.0) return StateVec(x0.begin(), x0.end());
  const CoupledDynamics h(s);
  return flow_map(h.bind(Vec{}), StateVec(x0.begin(), x0.end()), Vec(theta.begin(), theta.end()),
                  T, cfg);
}

// ---- objectives ----

namespace {

Vec uniform_times(double T, std::size_t n) {
  Vec t(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = n == 1 ? T : T * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return t;
}

/// x-only trajectory of a controlled model sampled on a uniform grid.
Trajectory model_trajectory(const DynamicsSpec& spec, std::span<const double> mu,
                            std::span<const double> x0, std::span<const double> gamma_input,
                            double T, std::size_t n_samples, const SolverConfig& cfg) {
  const CoupledDynamics h(spec);
  const Vec th = gamma_init(spec, mu, gamma_input.empty() ? x0 : gamma_input);
  Vec z0(x0.begin(), x0.end());
  z0.insert(z0.end(), th.begin(), th.end());
  Trajectory out;
  out.x_dim = spec.x_dim;
  if (T == 0.0 || n_samples < 2) {
    out.times.push_back(0.0);
    out.states.push_back(Vec(x0.begin(), x0.end()));
    return out;
  }
  const Trajectory tr = integrate_at(h.bind(g_slice(spec, mu)), z0,
                                     uniform_times(T, n_samples), cfg, spec.x_dim);
  out.times = tr.times;
  out.n_rhs_evals = tr.n_rhs_evals;
  for (const auto& z : tr.states) out.states.emplace_back(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(spec.x_dim));
  return out;
}

StateVec final_x(const DynamicsSpec& spec, std::span<const double> mu, std::span<const double> x0,
                 std::span<const double> gamma_input, double T, const SolverConfig& cfg,
                 std::size_t* nfe = nullptr) {
  if (T == 0.0) return StateVec(x0.begin(), x0.end());
  const CoupledDynamics h(spec);
  const Vec th = gamma_init(spec, mu, gamma_input.empty() ? x0 : gamma_input);
  Vec z0(x0.begin(), x0.end());
  z0.insert(z0.end(), th.begin(), th.end());
  const Trajectory tr = integrate(h.bind(g_slice(spec, mu)), z0, 0.0, T, cfg, spec.x_dim);
  if (nfe) *nfe += tr.n_rhs_evals;
  return StateVec(tr.back().begin(), tr.back().begin() + static_cast<std::ptrdiff_t>(spec.x_dim));
}

void check_params(std::span<const double> params, std::size_t expected) {
  if (params.size() != expected) {
    throw ShapeError("objective: " + std::to_string(params.size()) + " params, expected " +
                     std::to_string(expected));
  }
}

}  // namespace

FlowRegressionObjective::FlowRegressionObjective(DynamicsSpec spec, Dataset train, Dataset eval,
                                                 double horizon, SolverConfig cfg,
                                                 GradientEngine engine)
    : spec_(std::move(spec)), train_(std::move(train)), eval_(std::move(eval)),
      horizon_(horizon), cfg_(cfg), engine_(engine) {
  spec_.validate();
  if (train_.targets.size() != train_.size() || eval_.targets.size() != eval_.size()) {
    throw InputError("regression objective: every input needs a target");
  }
}

ExampleResult FlowRegressionObjective::example(std::span<const double> params, const Vec& x,
                                               const Vec& y, bool with_grad) const {
  check_params(params, param_dim());
  ExampleResult r;
  const LossSpec loss =
      LossSpec::terminal(std::make_shared<TargetMseLoss>(y), fixture_.loss_weight);
  if (with_grad) {
    const CoupledDynamics h(spec_);
    const SignFlippedAdjoint flipped(h);
    const Dynamics& hb = fixture_.flip_adjoint ? static_cast<const Dynamics&>(flipped) : h;
    const ModelGradient g =
        model_gradient(spec_, hb, params, x, {}, horizon_, loss, {}, cfg_, engine_);
    r.loss = g.loss;
    r.grad = g.grad_mu;
    r.n_rhs_evals = g.n_rhs_evals;
  } else {
    const StateVec xT = final_x(spec_, params, x, {}, horizon_, cfg_, &r.n_rhs_evals);
    r.loss = fixture_.loss_weight * mse(xT, y);
  }
  return r;
}

ExampleResult FlowRegressionObjective::train_example(std::span<const double> params,
                                                     std::size_t index, bool with_grad) const {
  return example(params, train_.inputs.at(index), train_.targets.at(index), with_grad);
}

ExampleResult FlowRegressionObjective::eval_example(std::span<const double> params,
                                                    std::size_t index) const {
  return example(params, eval_.inputs.at(index), eval_.targets.at(index), false);
}

Vec FlowRegressionObjective::initial_params(Rng& rng) const {
  return init_meta_params(spec_, rng);
}

Vec FlowRegressionObjective::predict(std::span<const double> params,
                                     std::span<const double> input) const {
  check_params(params, param_dim());
  if (input.size() != spec_.x_dim) throw InputError("predict: input width differs from x_dim");
  return final_x(spec_, params, input, {}, horizon_, cfg_);
}

Trajectory FlowRegressionObjective::sample_trajectory(std::span<const double> params,
                                                      std::size_t index,
                                                      std::size_t n_samples) const {
  return model_trajectory(spec_, params, eval_.inputs.at(index), {}, horizon_, n_samples, cfg_);
}

FlowClassifierObjective::FlowClassifierObjective(DynamicsSpec spec, std::size_t n_classes,
                                                 Dataset train, Dataset eval, double horizon,
                                                 SolverConfig cfg, GradientEngine engine)
    : spec_(std::move(spec)), n_classes_(n_classes), train_(std::move(train)),
      eval_(std::move(eval)), horizon_(horizon), cfg_(cfg), engine_(engine) {
  spec_.validate();
  if (train_.labels.size() != train_.size() || eval_.labels.size() != eval_.size()) {
    throw InputError("classifier objective: every input needs a label");
  }
  if (n_classes_ < 2) throw ParameterError("classifier objective: need at least two classes");
}

ExampleResult FlowClassifierObjective::example(std::span<const double> params, const Vec& x,
                                               std::size_t label, bool with_grad) const {
  check_params(params, param_dim());
  const std::size_t nm = spec_.meta_dim();
  const auto mu = params.first(nm);
  const auto head = params.subspan(nm);
  const auto ce = std::make_shared<SoftmaxCrossEntropyLoss>(spec_.x_dim, n_classes_, label);
  ExampleResult r;
  StateVec xT;
  if (with_grad) {
    const CoupledDynamics h(spec_);
    const SignFlippedAdjoint flipped(h);
    const Dynamics& hb = fixture_.flip_adjoint ? static_cast<const Dynamics&>(flipped) : h;
    const LossSpec loss = LossSpec::terminal(ce, fixture_.loss_weight);
    const ModelGradient g = model_gradient(spec_, hb, mu, x, {}, horizon_, loss, head, cfg_, engine_);
    r.loss = g.loss;
    r.grad = g.grad_mu;
    r.grad.insert(r.grad.end(), g.grad_q.begin(), g.grad_q.end());
    r.n_rhs_evals = g.n_rhs_evals;
    xT = final_x(spec_, mu, x, {}, horizon_, cfg_);
  } else {
    xT = final_x(spec_, mu, x, {}, horizon_, cfg_, &r.n_rhs_evals);
    r.loss = fixture_.loss_weight * ce->value(horizon_, xT, head);
  }
  const Matrix w(n_classes_, spec_.x_dim,
                 Vec(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(n_classes_ * spec_.x_dim)));
  const Vec p = classify_head(xT, w, head.subspan(n_classes_ * spec_.x_dim));
  const auto arg = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  r.score = arg == label ? 1.0 : 0.0;
  return r;
}

ExampleResult FlowClassifierObjective::train_example(std::span<const double> params,
                                                     std::size_t index, bool with_grad) const {
  return example(params, train_.inputs.at(index), train_.labels.at(index), with_grad);
}

ExampleResult FlowClassifierObjective::eval_example(std::span<const double> params,
                                                    std::size_t index) const {
  return example(params, eval_.inputs.at(index), eval_.labels.at(index), false);
}

Vec FlowClassifierObjective::initial_params(Rng& rng) const {
  Vec p = init_meta_params(spec_, rng);
  const double s = std::sqrt(6.0 / static_cast<double>(spec_.x_dim + n_classes_));
  for (std::size_t i = 0; i < n_classes_ * spec_.x_dim; ++i) p.push_back(rng.uniform(-s, s));
  p.insert(p.end(), n_classes_, 0.0);
  return p;
}

Vec FlowClassifierObjective::predict(std::span<const double> params,
                                     std::span<const double> input) const {
  check_params(params, param_dim());
  if (input.size() != spec_.x_dim) throw InputError("predict: input width differs from x_dim");
  const std::size_t nm = spec_.meta_dim();
  const auto head = params.subspan(nm);
  const StateVec xT = final_x(spec_, params.first(nm), input, {}, horizon_, cfg_);
  const Matrix w(n_classes_, spec_.x_dim,
                 Vec(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(n_classes_ * spec_.x_dim)));
  return classify_head(xT, w, head.subspan(n_classes_ * spec_.x_dim));
}

Trajectory FlowClassifierObjective::sample_trajectory(std::span<const double> params,
                                                      std::size_t index,
                                                      std::size_t n_samples) const {
  return model_trajectory(spec_, params.first(spec_.meta_dim()), eval_.inputs.at(index), {},
                          horizon_, n_samples, cfg_);
}

namespace {
constexpr std::uint64_t kTrainStream = 0x7472;
constexpr std::uint64_t kEvalStream = 0x6576;
}  // namespace

MemorizeObjective::MemorizeObjective(TaskSpec task, SolverConfig cfg, std::uint64_t seed)
    : task_(std::move(task)), spec_(memorize_model_spec(task_.mem_bits)), cfg_(cfg), seed_(seed) {
  task_.validate();
}

Episode MemorizeObjective::train_episode(std::size_t index) const {
  Rng r = Rng(seed_).split(kTrainStream).split(index);
  return make_episode(task_, r);
}

Episode MemorizeObjective::eval_episode(std::size_t index) const {
  Rng r = Rng(seed_).split(kEvalStream).split(index);
  return make_episode(task_, r);
}

ExampleResult MemorizeObjective::train_example(std::span<const double> params, std::size_t index,
                                               bool with_grad) const {
  check_params(params, param_dim());
  const Episode ep = train_episode(index);
  ExampleResult r;
  if (with_grad) {
    EpisodeGradient g = episode_gradient(ep, params, task_.mem_presentation, task_.mem_query, cfg_,
                                         fixture_);
    r.loss = g.loss;
    r.grad = std::move(g.grad);
    r.score = 1.0 - g.result.error_rate;
    r.n_rhs_evals = g.result.n_rhs_evals;
  } else {
    const EpisodeResult e = run_episode(ep, gamma_slice(spec_, params), g_slice(spec_, params),
                                        task_.mem_presentation, task_.mem_query, cfg_);
    r.loss = fixture_.loss_weight * mse(e.final_x, ep.target);
    r.score = 1.0 - e.error_rate;
    r.n_rhs_evals = e.n_rhs_evals;
  }
  return r;
}

ExampleResult MemorizeObjective::eval_example(std::span<const double> params,
                                              std::size_t index) const {
  check_params(params, param_dim());
  const Episode ep = eval_episode(index);
  const EpisodeResult e = run_episode(ep, gamma_slice(spec_, params), g_slice(spec_, params),
                                      task_.mem_presentation, task_.mem_query, cfg_);
  ExampleResult r;
  r.loss = mse(e.final_x, ep.target);
  r.score = 1.0 - e.error_rate;
  r.n_rhs_evals = e.n_rhs_evals;
  return r;
}

Vec MemorizeObjective::initial_params(Rng& rng) const {
  const std::size_t n = task_.mem_bits;
  Vec p = rand_normal(rng, n * n, 0.0, 1.0 / static_cast<double>(n));
  p.insert(p.end(), n * n, 0.0);
  return p;
}

Vec MemorizeObjective::predict(std::span<const double>, std::span<const double>) const {
  throw UnsupportedError("memorize: replay on raw inputs is not supported; episodes are generated");
}

Trajectory MemorizeObjective::sample_trajectory(std::span<const double> params, std::size_t index,
                                                std::size_t n_samples) const {
  // Query segment only, after the presentations have shaped theta.
  const Episode ep = eval_episode(index);
  const std::size_t n = task_.mem_bits;
  const CoupledDynamics h(spec_);
  const auto gains = g_slice(spec_, params);
  const EpisodeForward fw = episode_forward(h, ep, gamma_slice(spec_, params), gains,
                                            task_.mem_presentation, task_.mem_query, cfg_);
  Vec z = fw.ends.size() >= 2 ? fw.ends[fw.ends.size() - 2] : fw.ends.back();
  std::copy(ep.degraded.begin(), ep.degraded.end(), z.begin());
  const Trajectory tr = integrate_at(h.bind(gains), z, uniform_times(task_.mem_query, std::max<std::size_t>(n_samples, 2)),
                                     cfg_, n);
  Trajectory out;
  out.x_dim = n;
  out.times = tr.times;
  out.n_rhs_evals = tr.n_rhs_evals;
  for (const auto& s : tr.states) out.states.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

VdpObjective::VdpObjective(TaskSpec task, SolverConfig cfg) : task_(std::move(task)), cfg_(cfg) {
  task_.validate();
  observed_ = vdp_observe(task_.vdp_mu_true, task_.vdp_x0, task_.vdp_horizon, task_.vdp_n_obs, cfg_);
}

ExampleResult VdpObjective::train_example(std::span<const double> params, std::size_t,
                                          bool with_grad) const {
  check_params(params, 1);
  const VdpLoss l = vdp_loss(observed_, params[0], cfg_, with_grad, fixture_);
  ExampleResult r;
  r.loss = l.loss;
  if (with_grad) r.grad = {l.grad};
  r.n_rhs_evals = l.n_rhs_evals;
  return r;
}

ExampleResult VdpObjective::eval_example(std::span<const double> params, std::size_t index) const {
  return train_example(params, index, false);
}

Vec VdpObjective::initial_params(Rng&) const { return {task_.vdp_mu_init}; }

Vec VdpObjective::predict(std::span<const double> params, std::span<const double> input) const {
  check_params(params, 1);
  if (input.size() != 1) throw InputError("vdp predict: one time value per row");
  if (input[0] == 0.0) return {task_.vdp_x0};
  const VanDerPolDynamics h;
  const Trajectory tr = integrate(h.bind(params), Vec{task_.vdp_x0, 0.0}, 0.0, input[0], cfg_, 1);
  return {tr.back()[0]};
}

Trajectory VdpObjective::sample_trajectory(std::span<const double> params, std::size_t,
                                           std::size_t n_samples) const {
  const VanDerPolDynamics h;
  return integrate_at(h.bind(params), Vec{task_.vdp_x0, 0.0},
                      uniform_times(task_.vdp_horizon, std::max<std::size_t>(n_samples, 2)), cfg_, 1);
}

LatentAeObjective::LatentAeObjective(DynamicsSpec spec, MlpSpec decoder, Vec x0, Dataset train,
                                     Dataset eval, double horizon, SolverConfig cfg,
                                     GradientEngine engine)
    : spec_(std::move(spec)), decoder_(std::move(decoder)), x0_(std::move(x0)),
      train_(std::move(train)), eval_(std::move(eval)), horizon_(horizon), cfg_(cfg),
      engine_(engine) {
  spec_.validate();
  decoder_.validate();
  if (x0_.size() != spec_.x_dim) throw ShapeError("latent ae: x0 length differs from x_dim");
  if (decoder_.input_dim() != spec_.x_dim) throw ShapeError("latent ae: decoder input dim");
  if (spec_.gamma_in() != decoder_.output_dim()) {
    throw ShapeError("latent ae: encoder input and decoder output dims differ");
  }
}

ExampleResult LatentAeObjective::example(std::span<const double> params, const Vec& y,
                                         bool with_grad) const {
  check_params(params, param_dim());
  const std::size_t nm = spec_.meta_dim();
  const auto mu = params.first(nm);
  const auto dec = params.subspan(nm);
  const auto point = std::make_shared<DecoderMseLoss>(decoder_, y);
  ExampleResult r;
  if (with_grad) {
    const CoupledDynamics h(spec_);
    const SignFlippedAdjoint flipped(h);
    const Dynamics& hb = fixture_.flip_adjoint ? static_cast<const Dynamics&>(flipped) : h;
    const ModelGradient g = model_gradient(spec_, hb, mu, x0_, y, horizon_,
                                           LossSpec::terminal(point, fixture_.loss_weight), dec, cfg_,
                                           engine_);
    r.loss = g.loss;
    r.grad = g.grad_mu;
    r.grad.insert(r.grad.end(), g.grad_q.begin(), g.grad_q.end());
    r.n_rhs_evals = g.n_rhs_evals;
  } else {
    const StateVec xT = final_x(spec_, mu, x0_, y, horizon_, cfg_, &r.n_rhs_evals);
    r.loss = fixture_.loss_weight * point->value(horizon_, xT, dec);
  }
  return r;
}

ExampleResult LatentAeObjective::train_example(std::span<const double> params, std::size_t index,
                                               bool with_grad) const {
  return example(params, train_.inputs.at(index), with_grad);
}

ExampleResult LatentAeObjective::eval_example(std::span<const double> params,
                                              std::size_t index) const {
  return example(params, eval_.inputs.at(index), false);
}

Vec LatentAeObjective::initial_params(Rng& rng) const {
  Vec p = init_meta_params(spec_, rng);
  const Vec d = init_mlp_params(decoder_, rng);
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

Vec LatentAeObjective::predict(std::span<const double> params,
                               std::span<const double> input) const {
  check_params(params, param_dim());
  if (input.size() != spec_.gamma_in()) throw InputError("latent ae predict: input width");
  const std::size_t nm = spec_.meta_dim();
  const StateVec xT = final_x(spec_, params.first(nm), x0_, input, horizon_, cfg_);
  return mlp_forward(decoder_, params.subspan(nm), xT);
}

Trajectory LatentAeObjective::sample_trajectory(std::span<const double> params,
                                                std::size_t index, std::size_t n_samples) const {
  return model_trajectory(spec_, params.first(spec_.meta_dim()), x0_, eval_.inputs.at(index),
                          horizon_, n_samples, cfg_);
}

TrainResult toy_autoencode(const LatentAeObjective& objective, const TrainOptions& options,
                           Rng& rng) {
  Rng init = rng.split(0x696e6974);
  return train_loop(objective, objective.initial_params(init), options, rng);
}

}  // namespace ncode

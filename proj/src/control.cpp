#include "ncode/control.hpp"

#include "ncode/hebbian.hpp"

namespace ncode {

std::string to_string(FieldKind k) {
  switch (k) {
    case FieldKind::mlp: return "mlp";
    case FieldKind::neg_theta: return "neg_theta";
    case FieldKind::theta: return "theta";
    case FieldKind::linear: return "linear";
    case FieldKind::hebbian: return "hebbian";
  }
  return "?";
}

std::string to_string(ControlKind k) {
  switch (k) {
    case ControlKind::none: return "none";
    case ControlKind::mlp: return "mlp";
    case ControlKind::hebbian: return "hebbian";
    case ControlKind::neg_state: return "neg_state";
  }
  return "?";
}

std::string to_string(GammaKind k) {
  switch (k) {
    case GammaKind::mlp: return "mlp";
    case GammaKind::constant: return "constant";
    case GammaKind::identity: return "identity";
  }
  return "?";
}

FieldKind field_kind_from_string(const std::string& s) {
  if (s == "mlp") return FieldKind::mlp;
  if (s == "neg_theta") return FieldKind::neg_theta;
  if (s == "theta") return FieldKind::theta;
  if (s == "linear") return FieldKind::linear;
  if (s == "hebbian") return FieldKind::hebbian;
  throw ConfigError("unknown f kind '" + s + "' (valid: mlp, neg_theta, theta, linear, hebbian)");
}

ControlKind control_kind_from_string(const std::string& s) {
  if (s == "none") return ControlKind::none;
  if (s == "mlp") return ControlKind::mlp;
  if (s == "hebbian") return ControlKind::hebbian;
  if (s == "neg_state") return ControlKind::neg_state;
  throw ConfigError("unknown g kind '" + s + "' (valid: none, mlp, hebbian, neg_state)");
}

GammaKind gamma_kind_from_string(const std::string& s) {
  if (s == "mlp") return GammaKind::mlp;
  if (s == "constant") return GammaKind::constant;
  if (s == "identity") return GammaKind::identity;
  throw ConfigError("unknown gamma kind '" + s + "' (valid: mlp, constant, identity)");
}

std::size_t DynamicsSpec::theta_dim() const {
  switch (f_kind) {
    case FieldKind::mlp: return f_mlp.param_count();
    case FieldKind::neg_theta:
    case FieldKind::theta: return x_dim;
    case FieldKind::linear:
      return linear_nnz_per_row == 0 ? x_dim * x_dim : x_dim * linear_nnz_per_row;
    case FieldKind::hebbian: return x_dim * x_dim;
  }
  return 0;
}

std::size_t DynamicsSpec::gamma_param_dim() const {
  switch (gamma_kind) {
    case GammaKind::mlp: return gamma_mlp.param_count();
    case GammaKind::constant: return theta_dim();
    case GammaKind::identity: return 0;
  }
  return 0;
}

std::size_t DynamicsSpec::g_param_dim() const {
  switch (g_kind) {
    case ControlKind::none:
    case ControlKind::neg_state: return 0;
    case ControlKind::mlp: return g_mlp.param_count();
    case ControlKind::hebbian: return x_dim * x_dim;
  }
  return 0;
}

Layout DynamicsSpec::meta_layout() const {
  Layout lay;
  switch (gamma_kind) {
    case GammaKind::mlp: lay.append(gamma_mlp.layout(), "gamma."); break;
    case GammaKind::constant: lay.add_vector("gamma.theta0", theta_dim()); break;
    case GammaKind::identity: break;
  }
  switch (g_kind) {
    case ControlKind::mlp: lay.append(g_mlp.layout(), "g."); break;
    case ControlKind::hebbian: lay.add("g.gain", x_dim, x_dim); break;
    default: break;
  }
  return lay;
}

Layout DynamicsSpec::theta_layout() const {
  switch (f_kind) {
    case FieldKind::mlp: return f_mlp.layout();
    case FieldKind::linear:
      return linear_nnz_per_row == 0 ? Layout().add("theta", x_dim, x_dim)
                                     : Layout().add("theta", x_dim, linear_nnz_per_row);
    case FieldKind::hebbian: return Layout().add("theta", x_dim, x_dim);
    default: return Layout().add_vector("theta", x_dim);
  }
}

void DynamicsSpec::validate() const {
  if (x_dim == 0) throw ShapeError("dynamics: x_dim must be positive");
  if (f_kind == FieldKind::mlp) {
    f_mlp.validate();
    if (f_mlp.input_dim() != x_dim || f_mlp.output_dim() != x_dim) {
      throw ShapeError("dynamics: f network must map x_dim -> x_dim");
    }
  }
  if (f_kind == FieldKind::linear && linear_nnz_per_row > x_dim) {
    throw ShapeError("dynamics: linear_nnz_per_row exceeds x_dim");
  }
  const std::size_t td = theta_dim();
  switch (g_kind) {
    case ControlKind::mlp:
      g_mlp.validate();
      if (g_mlp.input_dim() != td + x_dim || g_mlp.output_dim() != td) {
        throw ShapeError("dynamics: g network must map theta_dim + x_dim -> theta_dim (" +
                         std::to_string(td + x_dim) + " -> " + std::to_string(td) + ")");
      }
      break;
    case ControlKind::hebbian:
      if (f_kind != FieldKind::hebbian) {
        throw ShapeError("dynamics: hebbian controller requires the hebbian field");
      }
      break;
    case ControlKind::neg_state:
      if (td != x_dim) throw ShapeError("dynamics: g = -x requires theta_dim == x_dim");
      break;
    case ControlKind::none: break;
  }
  switch (gamma_kind) {
    case GammaKind::mlp:
      gamma_mlp.validate();
      if (gamma_mlp.input_dim() != gamma_in() || gamma_mlp.output_dim() != td) {
        throw ShapeError("dynamics: gamma network must map " + std::to_string(gamma_in()) +
                         " -> theta_dim " + std::to_string(td));
      }
      break;
    case GammaKind::identity:
      if (gamma_in() != td) {
        throw ShapeError("dynamics: identity gamma requires input dim == theta_dim");
      }
      break;
    case GammaKind::constant: break;
  }
}

DynamicsSpec node_baseline_spec(std::size_t x_dim, const MlpSpec& f) {
  DynamicsSpec s;
  s.x_dim = x_dim;
  s.f_kind = FieldKind::mlp;
  s.f_mlp = f;
  s.g_kind = ControlKind::none;
  s.gamma_kind = GammaKind::constant;
  s.validate();
  return s;
}

CoupledDynamics::CoupledDynamics(DynamicsSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  theta_dim_ = spec_.theta_dim();
}

void CoupledDynamics::eval_f(std::span<const double> x, std::span<const double> theta,
                             std::span<double> dx) const {
  const std::size_t m = spec_.x_dim;
  switch (spec_.f_kind) {
    case FieldKind::mlp: {
      const StateVec y = mlp_forward(spec_.f_mlp, theta, x);
      std::copy(y.begin(), y.end(), dx.begin());
      break;
    }
    case FieldKind::neg_theta:
      for (std::size_t i = 0; i < m; ++i) dx[i] = -theta[i];
      break;
    case FieldKind::theta:
      for (std::size_t i = 0; i < m; ++i) dx[i] = theta[i];
      break;
    case FieldKind::linear: {
      const std::size_t k = spec_.linear_nnz_per_row;
      if (k == 0) {
        matvec(theta, m, m, x, dx);
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += theta[i * k + j] * x[(i + j) % m];
          dx[i] = s;
        }
      }
      break;
    }
    case FieldKind::hebbian: {
      matvec(theta, m, m, x, dx);
      for (std::size_t i = 0; i < m; ++i) dx[i] = activate(spec_.hebbian_activation, dx[i]);
      break;
    }
  }
}

void CoupledDynamics::vjp_f(std::span<const double> x, std::span<const double> theta,
                            std::span<const double> a_x, std::span<double> gx,
                            std::span<double> gtheta) const {
  const std::size_t m = spec_.x_dim;
  switch (spec_.f_kind) {
    case FieldKind::mlp: mlp_vjp(spec_.f_mlp, theta, x, a_x, gx, gtheta); break;
    case FieldKind::neg_theta:
      for (std::size_t i = 0; i < m; ++i) gtheta[i] -= a_x[i];
      break;
    case FieldKind::theta:
      for (std::size_t i = 0; i < m; ++i) gtheta[i] += a_x[i];
      break;
    case FieldKind::linear: {
      const std::size_t k = spec_.linear_nnz_per_row;
      if (k == 0) {
        matvec_transposed_add(theta, m, m, a_x, gx);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < m; ++j) gtheta[i * m + j] += a_x[i] * x[j];
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t c = (i + j) % m;
            gx[c] += a_x[i] * theta[i * k + j];
            gtheta[i * k + j] += a_x[i] * x[c];
          }
        }
      }
      break;
    }
    case FieldKind::hebbian: {
      Vec s(m);
      matvec(theta, m, m, x, s);
      Vec u(m);
      for (std::size_t i = 0; i < m; ++i) {
        u[i] = activate_slope(spec_.hebbian_activation, s[i]) * a_x[i];
      }
      matvec_transposed_add(theta, m, m, u, gx);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) gtheta[i * m + j] += u[i] * x[j];
      }
      break;
    }
  }
}

void CoupledDynamics::eval(double /*t*/, std::span<const double> z, std::span<const double> p,
                           std::span<double> dz) const {
  const std::size_t m = spec_.x_dim;
  const auto x = z.first(m);
  const auto theta = z.subspan(m, theta_dim_);
  auto dx = dz.first(m);
  auto dtheta = dz.subspan(m, theta_dim_);
  switch (spec_.g_kind) {
    case ControlKind::hebbian:
      hebbian_rhs_into(x, theta, p, spec_.hebbian_activation, dx, dtheta);
      return;
    case ControlKind::none: std::fill(dtheta.begin(), dtheta.end(), 0.0); break;
    case ControlKind::neg_state:
      for (std::size_t i = 0; i < m; ++i) dtheta[i] = -x[i];
      break;
    case ControlKind::mlp: {
      Vec in(theta.begin(), theta.end());
      in.insert(in.end(), x.begin(), x.end());
      const StateVec y = mlp_forward(spec_.g_mlp, p, in);
      std::copy(y.begin(), y.end(), dtheta.begin());
      break;
    }
  }
  eval_f(x, theta, dx);
}

void CoupledDynamics::vjp(double /*t*/, std::span<const double> z, std::span<const double> p,
                          std::span<const double> a, std::span<double> gz,
                          std::span<double> gp) const {
  const std::size_t m = spec_.x_dim;
  const auto x = z.first(m);
  const auto theta = z.subspan(m, theta_dim_);
  const auto a_x = a.first(m);
  const auto a_theta = a.subspan(m, theta_dim_);
  auto gx = gz.first(m);
  auto gtheta = gz.subspan(m, theta_dim_);
  switch (spec_.g_kind) {
    case ControlKind::hebbian:
      hebbian_vjp(x, theta, p, spec_.hebbian_activation, a_x, a_theta, gx, gtheta, gp);
      return;
    case ControlKind::none: break;
    case ControlKind::neg_state:
      for (std::size_t i = 0; i < m; ++i) gx[i] -= a_theta[i];
      break;
    case ControlKind::mlp: {
      // g reads the concatenation (theta, x) while z stores (x, theta).
      Vec in(theta.begin(), theta.end());
      in.insert(in.end(), x.begin(), x.end());
      Vec gin(in.size(), 0.0);
      mlp_vjp(spec_.g_mlp, p, in, a_theta, gin, gp);
      for (std::size_t i = 0; i < theta_dim_; ++i) gtheta[i] += gin[i];
      for (std::size_t i = 0; i < m; ++i) gx[i] += gin[theta_dim_ + i];
      break;
    }
  }
  vjp_f(x, theta, a_x, gx, gtheta);
}

void CoupledDynamics::jacobian(double t, std::span<const double> z, std::span<const double> p,
                               Matrix& dz, Matrix& dp) const {
  if (spec_.f_kind != FieldKind::mlp ||
      (spec_.g_kind != ControlKind::mlp && spec_.g_kind != ControlKind::none)) {
    Dynamics::jacobian(t, z, p, dz, dp);
    return;
  }
  // Assemble the block Jacobian from the network Jacobians directly.
  const std::size_t m = spec_.x_dim;
  const std::size_t n = m + theta_dim_;
  dz = Matrix(n, n);
  dp = Matrix(n, param_dim());
  const auto x = z.first(m);
  const auto theta = z.subspan(m, theta_dim_);
  const MlpJacobians jf = mlp_jacobians(spec_.f_mlp, theta, x);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) dz(i, j) = jf.d_input(i, j);
    for (std::size_t j = 0; j < theta_dim_; ++j) dz(i, m + j) = jf.d_params(i, j);
  }
  if (spec_.g_kind == ControlKind::mlp) {
    Vec in(theta.begin(), theta.end());
    in.insert(in.end(), x.begin(), x.end());
    const MlpJacobians jg = mlp_jacobians(spec_.g_mlp, p, in);
    for (std::size_t i = 0; i < theta_dim_; ++i) {
      for (std::size_t j = 0; j < theta_dim_; ++j) dz(m + i, m + j) = jg.d_input(i, j);
      for (std::size_t j = 0; j < m; ++j) dz(m + i, j) = jg.d_input(i, theta_dim_ + j);
      for (std::size_t j = 0; j < param_dim(); ++j) dp(m + i, j) = jg.d_params(i, j);
    }
  }
}

std::span<const double> gamma_slice(const DynamicsSpec& spec, std::span<const double> mu) {
  if (mu.size() != spec.meta_dim()) {
    throw ShapeError("meta-parameters: length " + std::to_string(mu.size()) + ", expected " +
                     std::to_string(spec.meta_dim()));
  }
  return mu.first(spec.gamma_param_dim());
}

std::span<const double> g_slice(const DynamicsSpec& spec, std::span<const double> mu) {
  if (mu.size() != spec.meta_dim()) {
    throw ShapeError("meta-parameters: length " + std::to_string(mu.size()) + ", expected " +
                     std::to_string(spec.meta_dim()));
  }
  return mu.subspan(spec.gamma_param_dim(), spec.g_param_dim());
}

Vec gamma_init(const DynamicsSpec& spec, std::span<const double> mu,
               std::span<const double> input) {
  const auto gp = gamma_slice(spec, mu);
  if (input.size() != spec.gamma_in()) {
    throw ShapeError("gamma: input of " + std::to_string(input.size()) + ", expected " +
                     std::to_string(spec.gamma_in()));
  }
  switch (spec.gamma_kind) {
    case GammaKind::mlp: return mlp_forward(spec.gamma_mlp, gp, input);
    case GammaKind::constant: return Vec(gp.begin(), gp.end());
    case GammaKind::identity:
      if (input.size() != spec.theta_dim()) {
        throw ShapeError("gamma identity: input dim differs from theta dim");
      }
      return Vec(input.begin(), input.end());
  }
  return {};
}

Vec grad_initial_map(const DynamicsSpec& spec, std::span<const double> mu,
                     std::span<const double> grad_theta0, std::span<const double> input) {
  const auto gp = gamma_slice(spec, mu);
  if (grad_theta0.size() != spec.theta_dim()) {
    throw ShapeError("grad_initial_map: gradient length differs from theta dim");
  }
  Vec out(spec.gamma_param_dim(), 0.0);
  switch (spec.gamma_kind) {
    case GammaKind::mlp: mlp_vjp(spec.gamma_mlp, gp, input, grad_theta0, {}, out); break;
    case GammaKind::constant: std::copy(grad_theta0.begin(), grad_theta0.end(), out.begin()); break;
    case GammaKind::identity: break;
  }
  return out;
}

Vec coupled_rhs(const DynamicsSpec& spec, std::span<const double> mu, std::span<const double> z,
                double t) {
  const CoupledDynamics h(spec);
  if (z.size() != h.state_dim()) throw ShapeError("coupled_rhs: state length");
  Vec dz(z.size());
  h.eval(t, z, g_slice(spec, mu), dz);
  return dz;
}

Vec node_baseline_rhs(const MlpSpec& f, std::span<const double> theta_fixed,
                      std::span<const double> z) {
  const std::size_t m = f.input_dim();
  if (theta_fixed.size() != f.param_count()) throw ShapeError("node baseline: theta length");
  if (z.size() != m + theta_fixed.size()) throw ShapeError("node baseline: state length");
  Vec dz(z.size(), 0.0);
  const StateVec dx = mlp_forward(f, theta_fixed, z.first(m));
  std::copy(dx.begin(), dx.end(), dz.begin());
  return dz;
}

BlockJacobian coupled_jacobian(const DynamicsSpec& spec, std::span<const double> mu,
                               std::span<const double> z, double t) {
  const CoupledDynamics h(spec);
  if (z.size() != h.state_dim()) throw ShapeError("coupled_jacobian: state length");
  Matrix dz, dp;
  h.jacobian(t, z, g_slice(spec, mu), dz, dp);
  BlockJacobian out{std::move(dz), Matrix(h.state_dim(), spec.meta_dim())};
  const std::size_t off = spec.gamma_param_dim();
  for (std::size_t i = 0; i < dp.rows; ++i) {
    for (std::size_t j = 0; j < dp.cols; ++j) out.dh_dmu(i, off + j) = dp(i, j);
  }
  return out;
}

Vec init_meta_params(const DynamicsSpec& spec, Rng& rng, double scale) {
  spec.validate();
  Vec mu;
  mu.reserve(spec.meta_dim());
  switch (spec.gamma_kind) {
    case GammaKind::mlp: {
      const Vec p = init_mlp_params(spec.gamma_mlp, rng);
      mu.insert(mu.end(), p.begin(), p.end());
      break;
    }
    case GammaKind::constant: {
      if (spec.f_kind == FieldKind::mlp) {
        const Vec p = init_mlp_params(spec.f_mlp, rng);
        mu.insert(mu.end(), p.begin(), p.end());
      } else {
        const Vec p = rand_normal(rng, spec.theta_dim(), 0.0, scale);
        mu.insert(mu.end(), p.begin(), p.end());
      }
      break;
    }
    case GammaKind::identity: break;
  }
  switch (spec.g_kind) {
    case ControlKind::mlp: {
      Vec p = init_mlp_params(spec.g_mlp, rng);
      for (auto& v : p) v *= scale;
      mu.insert(mu.end(), p.begin(), p.end());
      break;
    }
    case ControlKind::hebbian: {
      const Vec p = rand_normal(rng, spec.g_param_dim(), 0.0, scale);
      mu.insert(mu.end(), p.begin(), p.end());
      break;
    }
    default: break;
  }
  return mu;
}

}  // namespace ncode

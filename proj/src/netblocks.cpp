#include "ncode/netblocks.hpp"

#include <cmath>

namespace ncode {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "' (valid: tanh, relu, sigmoid, identity)");
}

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

StateVec sigmoid_vec(std::span<const double> x) {
  StateVec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

double activate(Activation a, double v) {
  switch (a) {
    case Activation::tanh: return std::tanh(v);
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::sigmoid: return sigmoid(v);
    case Activation::identity: return v;
  }
  return v;
}

double activate_slope(Activation a, double v) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(v);
      return 1.0 - t * t;
    }
    case Activation::relu: return v > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: {
      const double s = sigmoid(v);
      return s * (1.0 - s);
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ShapeError("mlp: need at least input and output sizes");
  for (auto s : layer_sizes) {
    if (s == 0) throw ShapeError("mlp: layer sizes must be positive");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    n += layer_sizes[l + 1] * layer_sizes[l] + layer_sizes[l + 1];
  }
  return n;
}

Layout MlpSpec::layout() const {
  Layout lay;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    lay.add("W" + std::to_string(l), layer_sizes[l + 1], layer_sizes[l]);
    lay.add_vector("b" + std::to_string(l), layer_sizes[l + 1]);
  }
  return lay;
}

namespace {

void check_shapes(const MlpSpec& spec, std::span<const double> params,
                  std::span<const double> input) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw ShapeError("mlp: " + std::to_string(params.size()) + " params, expected " +
                     std::to_string(spec.param_count()));
  }
  if (input.size() != spec.input_dim()) {
    throw ShapeError("mlp: input of " + std::to_string(input.size()) + ", expected " +
                     std::to_string(spec.input_dim()));
  }
}

Activation layer_activation(const MlpSpec& spec, std::size_t l) {
  return l + 1 == spec.num_layers() ? spec.final_activation : spec.activation;
}

// Pre-activations per layer plus the activated outputs (acts[0] = input).
struct ForwardCache {
  std::vector<Vec> pre;
  std::vector<Vec> acts;
};

ForwardCache forward_cached(const MlpSpec& spec, std::span<const double> params,
                            std::span<const double> input) {
  ForwardCache c;
  c.pre.reserve(spec.num_layers());
  c.acts.reserve(spec.num_layers() + 1);
  c.acts.emplace_back(input.begin(), input.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const auto w = params.subspan(off, out * in);
    const auto b = params.subspan(off + out * in, out);
    off += out * in + out;
    Vec z(out);
    matvec(w, out, in, c.acts.back(), z);
    for (std::size_t i = 0; i < out; ++i) z[i] += b[i];
    const Activation act = layer_activation(spec, l);
    Vec a(out);
    for (std::size_t i = 0; i < out; ++i) a[i] = activate(act, z[i]);
    c.pre.push_back(std::move(z));
    c.acts.push_back(std::move(a));
  }
  return c;
}

}  // namespace

StateVec mlp_forward(const MlpSpec& spec, std::span<const double> params,
                     std::span<const double> input) {
  check_shapes(spec, params, input);
  Vec cur(input.begin(), input.end());
  Vec next;
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    next.resize(out);
    matvec(params.subspan(off, out * in), out, in, cur, next);
    const auto b = params.subspan(off + out * in, out);
    const Activation act = layer_activation(spec, l);
    for (std::size_t i = 0; i < out; ++i) next[i] = activate(act, next[i] + b[i]);
    off += out * in + out;
    std::swap(cur, next);
  }
  return cur;
}

void mlp_vjp(const MlpSpec& spec, std::span<const double> params, std::span<const double> input,
             std::span<const double> grad_out, std::span<double> grad_input,
             std::span<double> grad_params) {
  check_shapes(spec, params, input);
  if (grad_out.size() != spec.output_dim()) throw ShapeError("mlp_vjp: grad_out length");
  if (!grad_input.empty() && grad_input.size() != spec.input_dim()) {
    throw ShapeError("mlp_vjp: grad_input length");
  }
  if (!grad_params.empty() && grad_params.size() != spec.param_count()) {
    throw ShapeError("mlp_vjp: grad_params length");
  }
  const ForwardCache c = forward_cached(spec, params, input);

  std::vector<std::size_t> offsets(spec.num_layers());
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    offsets[l] = off;
    off += spec.layer_sizes[l + 1] * spec.layer_sizes[l] + spec.layer_sizes[l + 1];
  }

  Vec g(grad_out.begin(), grad_out.end());
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const Activation act = layer_activation(spec, l);
    for (std::size_t i = 0; i < out; ++i) g[i] *= activate_slope(act, c.pre[l][i]);
    const auto w = params.subspan(offsets[l], out * in);
    if (!grad_params.empty()) {
      double* gw = grad_params.data() + offsets[l];
      double* gb = gw + out * in;
      const Vec& a_in = c.acts[l];
      for (std::size_t i = 0; i < out; ++i) {
        const double gi = g[i];
        gb[i] += gi;
        if (gi == 0.0) continue;
        for (std::size_t j = 0; j < in; ++j) gw[i * in + j] += gi * a_in[j];
      }
    }
    if (l == 0 && grad_input.empty()) break;
    Vec g_in(in, 0.0);
    matvec_transposed_add(w, out, in, g, g_in);
    g = std::move(g_in);
  }
  if (!grad_input.empty()) axpy(1.0, g, grad_input);
}

MlpJacobians mlp_jacobians(const MlpSpec& spec, std::span<const double> params,
                           std::span<const double> input) {
  check_shapes(spec, params, input);
  const ForwardCache c = forward_cached(spec, params, input);
  const std::size_t n_out = spec.output_dim();

  // Input Jacobian by forward propagation: J <- diag(slope) W J.
  Matrix jac = Matrix::identity(spec.input_dim());
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const Activation act = layer_activation(spec, l);
    Matrix next(out, jac.cols);
    for (std::size_t i = 0; i < out; ++i) {
      const double slope = activate_slope(act, c.pre[l][i]);
      for (std::size_t k = 0; k < in; ++k) {
        const double wik = params[off + i * in + k] * slope;
        if (wik == 0.0) continue;
        for (std::size_t j = 0; j < jac.cols; ++j) next(i, j) += wik * jac(k, j);
      }
    }
    jac = std::move(next);
    off += out * in + out;
  }

  // Parameter Jacobian row by row through the reverse pass.
  Matrix dp(n_out, spec.param_count());
  Vec e(n_out, 0.0);
  for (std::size_t r = 0; r < n_out; ++r) {
    e[r] = 1.0;
    mlp_vjp(spec, params, input, e, {}, dp.row(r));
    e[r] = 0.0;
  }
  return {std::move(jac), std::move(dp)};
}

Vec init_mlp_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  Vec p;
  p.reserve(spec.param_count());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const Activation act = spec.activation;
    if (act == Activation::relu) {
      const double s = std::sqrt(2.0 / static_cast<double>(in));
      for (std::size_t i = 0; i < out * in; ++i) p.push_back(rng.normal(0.0, s));
    } else {
      const double s = std::sqrt(6.0 / static_cast<double>(in + out));
      for (std::size_t i = 0; i < out * in; ++i) p.push_back(rng.uniform(-s, s));
    }
    p.insert(p.end(), out, 0.0);
  }
  return p;
}

}  // namespace ncode

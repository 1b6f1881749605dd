#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "ncode/dynamics.hpp"
#include "ncode/netblocks.hpp"
#include "ncode/numcore.hpp"

namespace ncode {

/// Equation of motion f(x, theta, t) of the controlled state.
enum class FieldKind {
  mlp,        // theta holds the parameters of f_mlp
  neg_theta,  // f = -theta
  theta,      // f = theta
  linear,     // f = theta x with theta m x m (optionally k nonzeros per row)
  hebbian,    // f = rho(theta x)
};

/// Controller g(theta, x, t) driving the weights.
enum class ControlKind {
  none,       // open loop: dtheta/dt = 0
  mlp,        // g_mlp applied to (theta, x)
  hebbian,    // gain ⊙ x xᵀ
  neg_state,  // g = -x
};

/// Initial map gamma producing theta(0).
enum class GammaKind { mlp, constant, identity };

std::string to_string(FieldKind k);
std::string to_string(ControlKind k);
std::string to_string(GammaKind k);
FieldKind field_kind_from_string(const std::string& s);
ControlKind control_kind_from_string(const std::string& s);
GammaKind gamma_kind_from_string(const std::string& s);

struct DynamicsSpec {
  std::size_t x_dim = 1;

  FieldKind f_kind = FieldKind::mlp;
  MlpSpec f_mlp;
  std::size_t linear_nnz_per_row = 0;  // 0 = dense
  Activation hebbian_activation = Activation::sigmoid;

  ControlKind g_kind = ControlKind::none;
  MlpSpec g_mlp;

  GammaKind gamma_kind = GammaKind::constant;
  MlpSpec gamma_mlp;
  std::size_t gamma_input_dim = 0;  // 0 means x_dim

  std::size_t theta_dim() const;
  std::size_t gamma_in() const { return gamma_input_dim == 0 ? x_dim : gamma_input_dim; }
  std::size_t gamma_param_dim() const;
  std::size_t g_param_dim() const;
  /// "gamma.*" slots followed by "g.*" slots.
  Layout meta_layout() const;
  std::size_t meta_dim() const { return gamma_param_dim() + g_param_dim(); }
  /// Layout of theta as weights of f.
  Layout theta_layout() const;
  bool open_loop() const { return g_kind == ControlKind::none; }

  void validate() const;
  bool operator==(const DynamicsSpec&) const = default;
};

/// Vanilla NODE: autonomous f with weights fixed and learned directly.
DynamicsSpec node_baseline_spec(std::size_t x_dim, const MlpSpec& f);

/// h = (f, g) for a spec. Its parameter vector is the g slice of mu.
class CoupledDynamics final : public Dynamics {
 public:
  explicit CoupledDynamics(DynamicsSpec spec);

  const DynamicsSpec& spec() const { return spec_; }

  std::size_t x_dim() const override { return spec_.x_dim; }
  std::size_t theta_dim() const override { return theta_dim_; }
  std::size_t param_dim() const override { return spec_.g_param_dim(); }

  void eval(double t, std::span<const double> z, std::span<const double> p,
            std::span<double> dz) const override;
  void vjp(double t, std::span<const double> z, std::span<const double> p,
           std::span<const double> a, std::span<double> gz, std::span<double> gp) const override;
  void jacobian(double t, std::span<const double> z, std::span<const double> p, Matrix& dz,
                Matrix& dp) const override;

 private:
  void eval_f(std::span<const double> x, std::span<const double> theta,
              std::span<double> dx) const;
  void vjp_f(std::span<const double> x, std::span<const double> theta,
             std::span<const double> a_x, std::span<double> gx, std::span<double> gtheta) const;

  DynamicsSpec spec_;
  std::size_t theta_dim_;
};

std::span<const double> gamma_slice(const DynamicsSpec& spec, std::span<const double> mu);
std::span<const double> g_slice(const DynamicsSpec& spec, std::span<const double> mu);

/// theta(0) = gamma(input); `input` is x0 unless the spec sets gamma_input_dim.
Vec gamma_init(const DynamicsSpec& spec, std::span<const double> mu,
               std::span<const double> input);

/// Chain rule through gamma: returns (∂theta0/∂mu_gamma)ᵀ grad_theta0.
Vec grad_initial_map(const DynamicsSpec& spec, std::span<const double> mu,
                     std::span<const double> grad_theta0, std::span<const double> input);

Vec coupled_rhs(const DynamicsSpec& spec, std::span<const double> mu,
                std::span<const double> z, double t = 0.0);

/// dx/dt = f(x, theta_fixed), dtheta/dt = 0.
Vec node_baseline_rhs(const MlpSpec& f, std::span<const double> theta_fixed,
                      std::span<const double> z);

struct BlockJacobian {
  Matrix dh_dz;   // (dim x + dim theta) square, blocks [[fx, ftheta], [gx, gtheta]]
  Matrix dh_dmu;  // columns over the full meta-parameter vector
};

BlockJacobian coupled_jacobian(const DynamicsSpec& spec, std::span<const double> mu,
                               std::span<const double> z, double t = 0.0);

/// Random meta-parameters: network slots use init_mlp_params, constant
/// theta0 and Hebbian gains draw from N(0, scale²).
Vec init_meta_params(const DynamicsSpec& spec, Rng& rng, double scale = 0.1);

}  // namespace ncode

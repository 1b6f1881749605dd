#pragma once

#include <cstddef>
#include <span>

#include "ncode/numcore.hpp"
#include "ncode/odesolve.hpp"

namespace ncode {

/// Coupled right-hand side h(z, t; p) on z = (x, theta) with parameters p,
/// together with the transposed-Jacobian products the adjoint needs.
class Dynamics {
 public:
  virtual ~Dynamics() = default;

  virtual std::size_t x_dim() const = 0;
  virtual std::size_t theta_dim() const = 0;
  virtual std::size_t param_dim() const = 0;
  std::size_t state_dim() const { return x_dim() + theta_dim(); }

  virtual void eval(double t, std::span<const double> z, std::span<const double> p,
                    std::span<double> dz) const = 0;

  /// gz += aᵀ ∂h/∂z, gp += aᵀ ∂h/∂p.
  virtual void vjp(double t, std::span<const double> z, std::span<const double> p,
                   std::span<const double> a, std::span<double> gz,
                   std::span<double> gp) const = 0;

  /// Dense ∂h/∂z and ∂h/∂p. The default stacks vjp rows.
  virtual void jacobian(double t, std::span<const double> z, std::span<const double> p,
                        Matrix& dz, Matrix& dp) const;

  /// Binds a parameter vector into a solver right-hand side.
  Rhs bind(std::span<const double> p) const;
};

/// Negates every transposed-Jacobian product of the wrapped dynamics while
/// leaving the forward field intact. Mutation fixture for gradient checks.
class SignFlippedAdjoint final : public Dynamics {
 public:
  explicit SignFlippedAdjoint(const Dynamics& inner) : inner_(inner) {}

  std::size_t x_dim() const override { return inner_.x_dim(); }
  std::size_t theta_dim() const override { return inner_.theta_dim(); }
  std::size_t param_dim() const override { return inner_.param_dim(); }
  void eval(double t, std::span<const double> z, std::span<const double> p,
            std::span<double> dz) const override {
    inner_.eval(t, z, p, dz);
  }
  void vjp(double t, std::span<const double> z, std::span<const double> p,
           std::span<const double> a, std::span<double> gz, std::span<double> gp) const override;

 private:
  const Dynamics& inner_;
};

}  // namespace ncode

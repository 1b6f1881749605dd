#include "ncode/dynamics.hpp"

namespace ncode {

void Dynamics::jacobian(double t, std::span<const double> z, std::span<const double> p,
                        Matrix& dz, Matrix& dp) const {
  const std::size_t n = state_dim();
  dz = Matrix(n, n);
  dp = Matrix(n, param_dim());
  Vec e(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    e[r] = 1.0;
    vjp(t, z, p, e, dz.row(r), dp.row(r));
    e[r] = 0.0;
  }
}

Rhs Dynamics::bind(std::span<const double> p) const {
  return [this, params = Vec(p.begin(), p.end())](double t, std::span<const double> z,
                                                  std::span<double> dz) {
    eval(t, z, params, dz);
  };
}

void SignFlippedAdjoint::vjp(double t, std::span<const double> z, std::span<const double> p,
                             std::span<const double> a, std::span<double> gz,
                             std::span<double> gp) const {
  Vec tz(gz.size(), 0.0), tp(gp.size(), 0.0);
  inner_.vjp(t, z, p, a, tz, tp);
  axpy(-1.0, tz, gz);
  axpy(-1.0, tp, gp);
}

}  // namespace ncode

#include "ncode/hebbian.hpp"

#include <cmath>

namespace ncode {

std::size_t square_side(std::size_t flat_len) {
  const auto m = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(flat_len))));
  if (m * m != flat_len) {
    throw ShapeError("expected a square matrix, got " + std::to_string(flat_len) + " entries");
  }
  return m;
}

namespace {

void check(std::span<const double> x, std::span<const double> theta,
           std::span<const double> gain) {
  const std::size_t m = x.size();
  if (theta.size() != m * m || gain.size() != m * m) {
    throw ShapeError("hebbian: theta and gain must be " + std::to_string(m) + "x" +
                     std::to_string(m));
  }
}

}  // namespace

void hebbian_rhs_into(std::span<const double> x, std::span<const double> theta,
                      std::span<const double> gain, Activation rho, std::span<double> dx,
                      std::span<double> dtheta) {
  check(x, theta, gain);
  const std::size_t m = x.size();
  matvec(theta, m, m, x, dx);
  for (auto& v : dx) v = activate(rho, v);
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i];
    const double* g = gain.data() + i * m;
    double* d = dtheta.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) d[j] = g[j] * xi * x[j];
  }
}

HebbianRates hebbian_rhs(std::span<const double> x, std::span<const double> theta,
                         std::span<const double> gain, Activation rho) {
  HebbianRates r{StateVec(x.size()), Vec(theta.size())};
  hebbian_rhs_into(x, theta, gain, rho, r.dx, r.dtheta);
  return r;
}

void hebbian_vjp(std::span<const double> x, std::span<const double> theta,
                 std::span<const double> gain, Activation rho, std::span<const double> a_x,
                 std::span<const double> a_theta, std::span<double> gx, std::span<double> gtheta,
                 std::span<double> ggain) {
  check(x, theta, gain);
  const std::size_t m = x.size();
  Vec s(m);
  matvec(theta, m, m, x, s);
  Vec u(m);
  for (std::size_t i = 0; i < m; ++i) u[i] = activate_slope(rho, s[i]) * a_x[i];
  matvec_transposed_add(theta, m, m, u, gx);
  for (std::size_t i = 0; i < m; ++i) {
    if (u[i] == 0.0) continue;
    double* gt = gtheta.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) gt[j] += u[i] * x[j];
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* at = a_theta.data() + i * m;
    const double* g = gain.data() + i * m;
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double w = at[j] * g[j];
      row += w * x[j];
      gx[j] += w * x[i];
    }
    gx[i] += row;
    if (!ggain.empty()) {
      double* gg = ggain.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) gg[j] += at[j] * x[i] * x[j];
    }
  }
}

}  // namespace ncode

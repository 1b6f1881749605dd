#pragma once

#include <span>

#include "ncode/netblocks.hpp"
#include "ncode/numcore.hpp"

namespace ncode {

/// Fast-synapse rates for an m-unit recurrent cell with plastic weights:
/// dx/dt = rho(theta x), dtheta/dt = gain ⊙ x xᵀ. theta and gain are m x m
/// row-major.
struct HebbianRates {
  StateVec dx;
  Vec dtheta;
};

HebbianRates hebbian_rhs(std::span<const double> x, std::span<const double> theta,
                         std::span<const double> gain, Activation rho = Activation::sigmoid);

/// In-place variant writing into dx (m) and dtheta (m*m).
void hebbian_rhs_into(std::span<const double> x, std::span<const double> theta,
                      std::span<const double> gain, Activation rho, std::span<double> dx,
                      std::span<double> dtheta);

/// Accumulates the transposed-Jacobian products of the rates for the
/// cotangent (a_x, a_theta) into gx, gtheta and ggain (ggain may be empty).
void hebbian_vjp(std::span<const double> x, std::span<const double> theta,
                 std::span<const double> gain, Activation rho, std::span<const double> a_x,
                 std::span<const double> a_theta, std::span<double> gx, std::span<double> gtheta,
                 std::span<double> ggain);

/// Side length m of an m x m flat block, or throws.
std::size_t square_side(std::size_t flat_len);

}  // namespace ncode

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ncode/numcore.hpp"

namespace ncode {

enum class Activation { tanh, relu, sigmoid, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

double activate(Activation a, double v);
/// Derivative expressed through the pre-activation `v`; relu'(0) = 0.
double activate_slope(Activation a, double v);

/// Dense perceptron: affine layers with `activation` between them and
/// `final_activation` on the output layer.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::tanh;
  Activation final_activation = Activation::identity;

  void validate() const;
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t param_count() const;
  /// W0 (out x in), b0, W1, b1, ...
  Layout layout() const;

  bool operator==(const MlpSpec&) const = default;
};

StateVec mlp_forward(const MlpSpec& spec, std::span<const double> params,
                     std::span<const double> input);

struct MlpJacobians {
  Matrix d_input;   // output_dim x input_dim
  Matrix d_params;  // output_dim x param_count
};

MlpJacobians mlp_jacobians(const MlpSpec& spec, std::span<const double> params,
                           std::span<const double> input);

/// Reverse-mode product: accumulates gᵀ ∂out/∂input into `grad_input` and
/// gᵀ ∂out/∂params into `grad_params`. Either output may be empty.
void mlp_vjp(const MlpSpec& spec, std::span<const double> params, std::span<const double> input,
             std::span<const double> grad_out, std::span<double> grad_input,
             std::span<double> grad_params);

double sigmoid(double v);
StateVec sigmoid_vec(std::span<const double> x);

/// Glorot-uniform weights for tanh/sigmoid/identity layers, He-normal for
/// relu; zero biases.
Vec init_mlp_params(const MlpSpec& spec, Rng& rng);

}  // namespace ncode

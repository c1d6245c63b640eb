#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tra/matrix.hpp"
#include "tra/rng.hpp"

namespace tra {

enum class BackboneKind { LinearFlatten, MlpFlatten, RecurrentMean };
enum class Activation { Tanh, Relu };

BackboneKind backbone_kind_from_string(const std::string& s);
std::string to_string(BackboneKind k);
Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Shared feature extractor mapping a (window_len x feature_dim) feature
// window to a latent vector. Three kinds:
//   linear-flatten : flattened window through a chain of affine maps, no
//                    activation (one affine map when hidden_dims is empty)
//   mlp-flatten    : same chain with the activation applied after every
//                    layer except the last
//   recurrent-mean : a single vanilla recurrent cell over the window rows,
//                    hidden states mean-pooled, then one affine projection
struct BackboneConfig {
  BackboneKind kind = BackboneKind::LinearFlatten;
  std::size_t window_len = 10;
  std::size_t feature_dim = 16;
  std::vector<std::size_t> hidden_dims;
  std::size_t latent_dim = 16;
  Activation activation = Activation::Tanh;

  std::size_t input_dim() const { return window_len * feature_dim; }
  std::size_t recurrent_state_dim() const {
    return hidden_dims.empty() ? latent_dim : hidden_dims.front();
  }

  // Throws ConfigError on zero-dimensional layers or inconsistent shapes.
  void validate() const;
};

struct AffineLayer {
  Matrix w;  // out x in
  Vec b;     // out
};

struct BackboneParams {
  BackboneConfig config;
  // recurrent-mean cell (empty for the flatten kinds)
  Matrix rec_in;     // state x feature_dim
  Matrix rec_state;  // state x state
  Vec rec_bias;      // state
  // affine chain; for recurrent-mean this is the single pooled-state projection
  std::vector<AffineLayer> stack;

  std::size_t param_count() const;
  void flatten_append(Vec& out) const;
  // Consumes param_count() values starting at offset; returns the new offset.
  std::size_t unflatten(std::span<const double> flat, std::size_t offset);
};

// Glorot-uniform weights (a = sqrt(6/(fan_in+fan_out))), zero biases.
BackboneParams init_backbone(const BackboneConfig& config, SeededRng& rng);

// Zero-valued gradient accumulator with the same shapes as params.
BackboneParams zero_like(const BackboneParams& params);

// Forward intermediates retained for the backward pass.
struct BackboneCache {
  Vec flat_input;
  std::vector<Vec> layer_inputs;  // input to each stack layer
  std::vector<Vec> layer_outputs;      // output of each stack layer (post-activation for hidden layers)
  std::vector<Vec> states;        // recurrent states h_1..h_W
  Vec pooled;
};

// h = psi(window); window must be (window_len x feature_dim).
Vec backbone_forward(const BackboneParams& params, const Matrix& window,
                     BackboneCache* cache = nullptr);

// Accumulates d(grad_h . h)/d(params) into grads; cache must come from a
// forward pass over the same (params, window).
void backbone_backward(const BackboneParams& params, const Matrix& window,
                       const BackboneCache& cache, std::span<const double> grad_h,
                       BackboneParams& grads);

}  // namespace tra

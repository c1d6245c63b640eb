#include "tra/backbone.hpp"

#include <cmath>
#include <string>

#include "tra/errors.hpp"
#include "tra/numerics.hpp"

namespace tra {

namespace {

double activate(Activation a, double z) {
  return a == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through the activation output (valid for both kinds).
double activate_grad_from_output(Activation a, double out) {
  return a == Activation::Tanh ? 1.0 - out * out : (out > 0.0 ? 1.0 : 0.0);
}

Matrix glorot_matrix(std::size_t rows, std::size_t cols, SeededRng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = (2.0 * rng.uniform() - 1.0) * a;
  return m;
}

Vec flatten_window(const Matrix& window) {
  return Vec(window.flat().begin(), window.flat().end());
}

void check_window(const BackboneConfig& cfg, const Matrix& window) {
  if (window.rows() != cfg.window_len || window.cols() != cfg.feature_dim) {
    throw InvalidArgumentError("window shape (" + std::to_string(window.rows()) + "x" +
                               std::to_string(window.cols()) + ") does not match config (" +
                               std::to_string(cfg.window_len) + "x" +
                               std::to_string(cfg.feature_dim) + ")");
  }
}

// Layer widths of the affine chain, input first.
std::vector<std::size_t> chain_dims(const BackboneConfig& cfg) {
  std::vector<std::size_t> dims;
  if (cfg.kind == BackboneKind::RecurrentMean) {
    dims.push_back(cfg.recurrent_state_dim());
  } else {
    dims.push_back(cfg.input_dim());
    for (std::size_t h : cfg.hidden_dims) dims.push_back(h);
  }
  dims.push_back(cfg.latent_dim);
  return dims;
}

}  // namespace

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "linear-flatten") return BackboneKind::LinearFlatten;
  if (s == "mlp-flatten") return BackboneKind::MlpFlatten;
  if (s == "recurrent-mean") return BackboneKind::RecurrentMean;
  throw ConfigError("unknown backbone kind '" + s + "'");
}

std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::LinearFlatten: return "linear-flatten";
    case BackboneKind::MlpFlatten: return "mlp-flatten";
    case BackboneKind::RecurrentMean: return "recurrent-mean";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

void BackboneConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("backbone latent_dim must be >= 1");
  if (window_len == 0) throw ConfigError("backbone window_len must be >= 1");
  if (feature_dim == 0) throw ConfigError("backbone feature_dim must be >= 1");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("backbone hidden_dims contains a zero-dimensional layer");
  }
  if (kind == BackboneKind::RecurrentMean && hidden_dims.size() > 1) {
    throw ConfigError("recurrent-mean takes at most one hidden dim (the cell state size)");
  }
}

std::size_t BackboneParams::param_count() const {
  std::size_t n = rec_in.size() + rec_state.size() + rec_bias.size();
  for (const auto& l : stack) n += l.w.size() + l.b.size();
  return n;
}

void BackboneParams::flatten_append(Vec& out) const {
  out.insert(out.end(), rec_in.flat().begin(), rec_in.flat().end());
  out.insert(out.end(), rec_state.flat().begin(), rec_state.flat().end());
  out.insert(out.end(), rec_bias.begin(), rec_bias.end());
  for (const auto& l : stack) {
    out.insert(out.end(), l.w.flat().begin(), l.w.flat().end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  }
}

std::size_t BackboneParams::unflatten(std::span<const double> flat, std::size_t offset) {
  auto take = [&](std::span<double> dst) {
    std::copy(flat.begin() + offset, flat.begin() + offset + dst.size(), dst.begin());
    offset += dst.size();
  };
  take(rec_in.flat());
  take(rec_state.flat());
  take(rec_bias);
  for (auto& l : stack) {
    take(l.w.flat());
    take(l.b);
  }
  return offset;
}

BackboneParams init_backbone(const BackboneConfig& config, SeededRng& rng) {
  config.validate();
  BackboneParams p;
  p.config = config;
  if (config.kind == BackboneKind::RecurrentMean) {
    const std::size_t h = config.recurrent_state_dim();
    p.rec_in = glorot_matrix(h, config.feature_dim, rng);
    p.rec_state = glorot_matrix(h, h, rng);
    p.rec_bias.assign(h, 0.0);
  }
  const auto dims = chain_dims(config);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    AffineLayer layer;
    layer.w = glorot_matrix(dims[i + 1], dims[i], rng);
    layer.b.assign(dims[i + 1], 0.0);
    p.stack.push_back(std::move(layer));
  }
  return p;
}

BackboneParams zero_like(const BackboneParams& params) {
  BackboneParams g;
  g.config = params.config;
  g.rec_in = Matrix(params.rec_in.rows(), params.rec_in.cols());
  g.rec_state = Matrix(params.rec_state.rows(), params.rec_state.cols());
  g.rec_bias.assign(params.rec_bias.size(), 0.0);
  for (const auto& l : params.stack) {
    g.stack.push_back({Matrix(l.w.rows(), l.w.cols()), Vec(l.b.size(), 0.0)});
  }
  return g;
}

Vec backbone_forward(const BackboneParams& params, const Matrix& window, BackboneCache* cache) {
  const BackboneConfig& cfg = params.config;
  check_window(cfg, window);

  Vec x;
  if (cfg.kind == BackboneKind::RecurrentMean) {
    const std::size_t h = cfg.recurrent_state_dim();
    Vec state(h, 0.0);
    Vec pooled(h, 0.0);
    if (cache) cache->states.clear();
    for (std::size_t t = 0; t < cfg.window_len; ++t) {
      Vec z = matvec(params.rec_in, window.row(t));
      axpy(1.0, matvec(params.rec_state, state), z);
      axpy(1.0, params.rec_bias, z);
      for (std::size_t j = 0; j < h; ++j) state[j] = activate(cfg.activation, z[j]);
      axpy(1.0, state, pooled);
      if (cache) cache->states.push_back(state);
    }
    const double inv = 1.0 / static_cast<double>(cfg.window_len);
    for (double& v : pooled) v *= inv;
    if (cache) cache->pooled = pooled;
    x = std::move(pooled);
  } else {
    x = flatten_window(window);
    if (cache) cache->flat_input = x;
  }

  const bool nonlinear = cfg.kind == BackboneKind::MlpFlatten;
  if (cache) {
    cache->layer_inputs.clear();
    cache->layer_outputs.clear();
  }
  for (std::size_t i = 0; i < params.stack.size(); ++i) {
    if (cache) cache->layer_inputs.push_back(x);
    Vec z = matvec(params.stack[i].w, x);
    axpy(1.0, params.stack[i].b, z);
    const bool last = (i + 1 == params.stack.size());
    if (nonlinear && !last) {
      for (double& v : z) v = activate(cfg.activation, v);
    }
    if (cache) cache->layer_outputs.push_back(z);
    x = std::move(z);
  }
  return x;
}

void backbone_backward(const BackboneParams& params, const Matrix& window,
                       const BackboneCache& cache, std::span<const double> grad_h,
                       BackboneParams& grads) {
  const BackboneConfig& cfg = params.config;
  check_window(cfg, window);
  if (grad_h.size() != cfg.latent_dim) {
    throw InvalidArgumentError("grad_h length does not equal latent_dim");
  }

  const bool nonlinear = cfg.kind == BackboneKind::MlpFlatten;
  Vec upstream(grad_h.begin(), grad_h.end());
  for (std::size_t i = params.stack.size(); i-- > 0;) {
    const bool last = (i + 1 == params.stack.size());
    Vec dz = std::move(upstream);
    if (nonlinear && !last) {
      // layer_outputs stores post-activation values for hidden layers
      for (std::size_t j = 0; j < dz.size(); ++j) {
        dz[j] *= activate_grad_from_output(cfg.activation, cache.layer_outputs[i][j]);
      }
    }
    add_outer(grads.stack[i].w, dz, cache.layer_inputs[i]);
    axpy(1.0, dz, grads.stack[i].b);
    upstream = matvec_transposed(params.stack[i].w, dz);
  }

  if (cfg.kind != BackboneKind::RecurrentMean) {
    return;  // flattened window is data, no parameter grads left
  }

  // BPTT through the mean-pooled recurrent cell.
  const std::size_t h = cfg.recurrent_state_dim();
  const double inv = 1.0 / static_cast<double>(cfg.window_len);
  Vec pool_grad = upstream;  // d loss / d pooled
  Vec dstate(h, 0.0);
  for (std::size_t t = cfg.window_len; t-- > 0;) {
    Vec dh(h, 0.0);
    axpy(inv, pool_grad, dh);
    axpy(1.0, dstate, dh);
    Vec dz(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
      dz[j] = dh[j] * activate_grad_from_output(cfg.activation, cache.states[t][j]);
    }
    add_outer(grads.rec_in, dz, window.row(t));
    if (t > 0) {
      add_outer(grads.rec_state, dz, cache.states[t - 1]);
    }
    axpy(1.0, dz, grads.rec_bias);
    dstate = matvec_transposed(params.rec_state, dz);
  }
}

}  // namespace tra

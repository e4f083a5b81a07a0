#pragma once

#include <string>

#include "icil/optim.hpp"
#include "icil/rng.hpp"
#include "icil/tensor.hpp"

namespace icil::nets {

using num::BoundParams;
using num::ParamStore;
using num::RngStream;
using num::Shape;
using num::Tape;
using num::Tensor;

// Unified parameter access for training (tape-bound leaves) and inference
// (raw values). One instance per forward graph.
struct ParamView {
  ParamStore* store = nullptr;
  Tape* tape = nullptr;
  BoundParams* bound = nullptr;

  Tensor get(const std::string& name) {
    if (tape) return bound->use(*tape, *store, name);
    return store->value(name);
  }
  bool training() const { return tape != nullptr; }
};

// W ~ N(0, 1/fan_in), b = 0. zero_weights forces W = 0 (used for the action
// head's output layer).
inline void init_linear(ParamStore& store, RngStream& rng,
                        const std::string& name, int64_t out, int64_t in,
                        bool zero_weights = false) {
  Tensor& w = store.create(name + ".w", {out, in});
  if (!zero_weights) {
    double s = 1.0 / std::sqrt(double(in));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = s * rng.normal();
  }
  store.create(name + ".b", {out});
}

inline void init_gain(ParamStore& store, const std::string& name, int64_t n) {
  Tensor& g = store.create(name, {n});
  for (int64_t i = 0; i < n; ++i) g[i] = 1.0;
}

inline Tensor apply_linear(ParamView& pv, const std::string& name,
                           const Tensor& X) {
  Tensor w = pv.get(name + ".w");
  Tensor b = pv.get(name + ".b");
  return num::linear(pv.tape, X, w, &b);
}

// Gated feed-forward: down( gelu(gate(x)) (.) up(x) ).
inline Tensor ffn_forward(ParamView& pv, const std::string& prefix,
                          const Tensor& X) {
  Tensor g = num::gelu(pv.tape, apply_linear(pv, prefix + ".wg", X));
  Tensor u = apply_linear(pv, prefix + ".wu", X);
  Tensor h = num::mul(pv.tape, g, u);
  return apply_linear(pv, prefix + ".wd", h);
}

inline void init_ffn(ParamStore& store, RngStream& rng,
                     const std::string& prefix, int64_t d_model,
                     int64_t expansion) {
  init_linear(store, rng, prefix + ".wg", expansion * d_model, d_model);
  init_linear(store, rng, prefix + ".wu", expansion * d_model, d_model);
  init_linear(store, rng, prefix + ".wd", d_model, expansion * d_model);
}

inline int64_t linear_param_count(int64_t out, int64_t in) {
  return out * in + out;
}

inline int64_t ffn_param_count(int64_t d_model, int64_t expansion) {
  return 2 * linear_param_count(expansion * d_model, d_model) +
         linear_param_count(d_model, expansion * d_model);
}

// Pre-norm residual skeleton shared by both backbones; only the mixer
// differs. ffn_out, when set, captures the feed-forward branch output.
template <typename MixerFn>
Tensor block_forward(ParamView& pv, const std::string& prefix,
                     const Tensor& h_in, MixerFn&& mixer,
                     Tensor* ffn_out = nullptr) {
  Tensor u = num::rmsnorm(pv.tape, h_in, pv.get(prefix + ".norm1.g"));
  Tensor h = num::add(pv.tape, h_in, mixer(u));
  Tensor v = num::rmsnorm(pv.tape, h, pv.get(prefix + ".norm2.g"));
  Tensor f = ffn_forward(pv, prefix + ".ffn", v);
  if (ffn_out) *ffn_out = f;
  return num::add(pv.tape, h, f);
}

}  // namespace icil::nets

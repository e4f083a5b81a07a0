#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icil/nn_common.hpp"
#include "icil/tensor.hpp"

namespace icil::attn {

using nets::ParamView;
using num::ParamStore;
using num::RngStream;
using num::Tape;
using num::Tensor;

struct AttentionConfig {
  int64_t n_blocks = 4;
  int64_t n_heads = 4;
  int64_t d_model = 64;
  int64_t ffn_expansion = 4;
  bool rotary = true;
  double rope_base = 10000.0;

  int64_t head_dim() const { return d_model / n_heads; }
  void validate() const;
};

// Per-layer rotated keys and values, row-major [t][d_model]. Grows by one row
// per decoded token.
struct KVCache {
  int64_t len = 0;
  std::vector<std::vector<double>> k, v;

  static KVCache make(const AttentionConfig& cfg) {
    KVCache c;
    c.k.resize(size_t(cfg.n_blocks));
    c.v.resize(size_t(cfg.n_blocks));
    return c;
  }
};

// In-place rotary embedding for one head-sized row at `pos`.
void rope_rotate(double* head_row, int64_t head_dim, int64_t pos, double base,
                 bool inverse = false);

// Differentiable causal multi-head attention over projected q/k/v, rotary
// applied inside. qp/kp/vp: (T, d_model); output: (T, d_model). Positions are
// pos_offset .. pos_offset+T-1.
Tensor attention_causal_seq(Tape* tape, const Tensor& qp, const Tensor& kp,
                            const Tensor& vp, const AttentionConfig& cfg,
                            int64_t pos_offset = 0);

// Causal-attention backbone with the shared pre-norm/FFN skeleton.
class AttentionNet {
 public:
  explicit AttentionNet(AttentionConfig cfg) : cfg_(cfg) { cfg_.validate(); }
  const AttentionConfig& config() const { return cfg_; }

  void init_params(ParamStore& store, RngStream& rng) const;
  int64_t param_count_formula() const;

  // Full-sequence forward (training and prompt ingestion). If cache is
  // non-null it is populated for subsequent decoding. ffn_latents, when
  // non-null, receives the final block's feed-forward output (T, d_model).
  Tensor forward_seq(ParamView pv, const Tensor& X, KVCache* cache,
                     Tensor* ffn_latents = nullptr) const;

  // Single-token decode against the cache (inference only).
  Tensor decode(ParamStore& store, const Tensor& x, KVCache& cache,
                Tensor* ffn_latent = nullptr) const;

 private:
  AttentionConfig cfg_;
};

}  // namespace icil::attn

#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "icil/nn_common.hpp"
#include "icil/optim.hpp"
#include "icil/tensor.hpp"

namespace icil::longhorn {

using num::ParamStore;
using num::Shape;
using num::Tape;
using num::Tensor;

struct LonghornLayerConfig {
  int64_t d = 64;           // value dimension
  int64_t m = 8;            // key/query dimension
  int64_t ffn_expansion = 4;
};

// Per-layer memory s in R^{d x m}, zero at sequence start.
struct LonghornState {
  Tensor s;
  static LonghornState zeros(int64_t d, int64_t m) {
    return LonghornState{Tensor::zeros({d, m})};
  }
};

struct StepInputs {
  Tensor x;     // (d)
  Tensor k;     // (m)
  Tensor q;     // (m)
  Tensor beta;  // (d), elementwise in (0,1)
};

// One element of the linear recurrence s_t = a (.) s_{t-1} + b.
struct ScanElement {
  Tensor a;  // (d, m)
  Tensor b;  // (d, m)
};

// Counts recurrence steps whose decay gate left [0,1]; stays zero for any
// beta in (0,1] because eps_i * k_j^2 <= eps_i * k^T k < 1.
extern std::atomic<uint64_t> gate_range_violations;

// eps_i = beta_i / (1 + beta_i * k^T k)
Tensor compute_epsilon(const Tensor& beta, const Tensor& k);

// s_t[i][j] = s_prev[i][j] (1 - eps_i k_j^2) + eps_i x_i k_j ;  r_t = s_t q
std::pair<LonghornState, Tensor> longhorn_step(const LonghornState& s_prev,
                                               const StepInputs& in);

// Exact row-wise minimizer of
//   ||s - s_prev||_F^2 + ||s k - x||^2_diag(beta)
// via the rank-one inverse identity: row_i = s_prev_i - eps_i (k^T s_prev_i) k
// + eps_i x_i k. Coincides with longhorn_step at m = 1.
Tensor argmin_oracle(const Tensor& s_prev, const Tensor& x, const Tensor& k,
                     const Tensor& beta);

// (a, b) o (a', b') = (a (.) a', a' (.) b + b')
ScanElement combine(const ScanElement& first, const ScanElement& second);

// Left fold of the recurrence; the reference for every scan variant.
std::vector<Tensor> scan_sequential(const std::vector<ScanElement>& elems,
                                    const Tensor& s0);

// Chunked associative scan; bitwise independent of worker count.
std::vector<Tensor> scan_chunked(const std::vector<ScanElement>& elems,
                                 const Tensor& s0, int64_t chunk_size,
                                 int workers = 1);

// beta' = gamma * beta, gamma in (0,1]; inference-time only.
Tensor apply_beta_scale(const Tensor& beta, double gamma);

// Differentiable full-sequence recurrence + readout. X: (T,d), K/Q: (T,m),
// Beta: (T,d); returns R: (T,d). s0 is a constant (training sequences start
// from zeros). If final_state is non-null it receives s_T. States are
// computed with the chunked scan.
Tensor longhorn_recurrence_seq(Tape* tape, const Tensor& X, const Tensor& K,
                               const Tensor& Q, const Tensor& Beta,
                               const Tensor& s0, int64_t chunk_size,
                               Tensor* final_state = nullptr);

// Raw single-step kernel used by rollout; updates s in place and writes r.
void recurrence_step_inplace(Tensor& s, const double* x, const double* k,
                             const double* q, const double* beta, int64_t d,
                             int64_t m, double* r_out);

struct LonghornNetConfig {
  int64_t n_blocks = 4;
  int64_t d_model = 64;
  LonghornLayerConfig layer;
  int64_t chunk_size = 64;
};

// Stacked Longhorn backbone with the shared pre-norm/FFN skeleton. Supports
// full-sequence mode (training, prompt ingestion) and single-step mode
// (closed-loop rollout); the two agree on the same token stream.
class LonghornNet {
 public:
  explicit LonghornNet(LonghornNetConfig cfg) : cfg_(cfg) {}
  const LonghornNetConfig& config() const { return cfg_; }

  void init_params(ParamStore& store, num::RngStream& rng) const;
  int64_t param_count_formula() const;

  std::vector<LonghornState> make_state() const;

  // X: (T, d_model). If states is non-null the recurrence starts from it and
  // it receives the final per-block states. gamma scales beta (inference
  // only; training requires gamma == 1). readout_latents, when non-null,
  // receives the final block's context vectors r_t (T, d).
  Tensor forward_seq(nets::ParamView pv, const Tensor& X,
                     std::vector<LonghornState>* states, double gamma,
                     Tensor* readout_latents = nullptr) const;

  // Single-step mode; x: (1, d_model).
  Tensor step(ParamStore& store, const Tensor& x,
              std::vector<LonghornState>& states, double gamma,
              Tensor* readout_latent = nullptr) const;

 private:
  LonghornNetConfig cfg_;
};

}  // namespace icil::longhorn

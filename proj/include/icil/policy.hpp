#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icil/attention.hpp"
#include "icil/env.hpp"
#include "icil/longhorn.hpp"
#include "icil/nn_common.hpp"

namespace icil::policy {

using env::Trajectory;
using nets::ParamView;
using num::ParamStore;
using num::RngStream;
using num::Tape;
using num::Tensor;

enum class BackboneKind { Longhorn, Attention };

struct PolicyConfig {
  BackboneKind backbone = BackboneKind::Longhorn;
  int64_t obs_dim = 19;
  int64_t act_dim = env::kActDim;
  int64_t d_model = 64;
  int64_t n_blocks = 4;
  int64_t value_dim = 64;  // Longhorn d
  int64_t key_dim = 8;     // Longhorn m
  int64_t n_heads = 4;
  bool rotary = true;
  double rope_base = 10000.0;
  int64_t ffn_expansion = 4;
  int64_t chunk_size = 64;
  bool mtl_mode = false;
  int64_t task_embedding_dim = 16;
  int64_t n_task_embeddings = 17;  // tasks + reserved "unknown" row

  // Per-dimension action normalization. The network regresses actions in
  // units of action_scale (velocities are tiny next to the gripper command;
  // without this the loss barely sees them). Raw = normalized * scale.
  std::vector<double> action_scale = {1.0, 1.0, 1.0};

  int64_t latent_dim() const {
    return backbone == BackboneKind::Longhorn ? value_dim : d_model;
  }
};

// Prompt of N demonstrations of one task (N = 0 only in MTL mode).
struct Prompt {
  std::vector<const Trajectory*> trajectories;
  int task_id = -1;
};

// One flattened supervised training sequence: prompt steps then query steps,
// a single continuous stream (state is never reset at segment boundaries).
struct PackedSequence {
  Tensor observations;           // (T, obs_dim), already slot-permuted
  std::vector<int> segment_ids;  // 0..N-1 prompt, N query
  Tensor loss_mask;              // (T) 0/1
  Tensor target_actions;         // (T, act_dim)
  int task_id = -1;              // metadata only
  int embedding_row = -1;        // MTL embedding row; -1 outside MTL mode

  int64_t length() const { return observations.data ? observations.dim(0) : 0; }
};

PackedSequence pack_training_example(const Prompt& prompt,
                                     const Trajectory& query,
                                     const env::SlotPermutation& perm,
                                     const env::EnvParams& env_params);

class Policy {
 public:
  explicit Policy(PolicyConfig cfg);
  const PolicyConfig& config() const { return cfg_; }

  void init_params(ParamStore& store, RngStream& rng) const;
  int64_t param_count_formula() const;

  // Observation encoder (plus MTL task-embedding fusion when embedding_row
  // >= 0). obs: (T, obs_dim) -> (T, d_model).
  Tensor encode(ParamView pv, const Tensor& obs, int embedding_row) const;

  // Full-sequence forward: obs -> predicted actions (T, act_dim).
  // latents, when non-null, receives the backbone latent per step.
  Tensor forward_seq(ParamView pv, const Tensor& obs, int embedding_row,
                     double gamma, Tensor* latents = nullptr) const;

  struct RollState {
    std::vector<longhorn::LonghornState> lh;
    attn::KVCache cache;
    int64_t consumed = 0;
  };
  RollState make_state() const;

  // Consumes prompt observations in full-sequence mode, carrying state.
  void ingest(ParamStore& store, RollState& state, const Tensor& prompt_obs,
              int embedding_row, double gamma, Tensor* latents = nullptr) const;

  // Single-step action prediction for closed-loop rollout.
  Tensor act(ParamStore& store, RollState& state, const double* obs,
             int embedding_row, double gamma, Tensor* latent = nullptr) const;

 private:
  Tensor backbone_seq(ParamView pv, const Tensor& emb,
                      std::vector<longhorn::LonghornState>* lh_states,
                      attn::KVCache* cache, double gamma,
                      Tensor* latents) const;
  Tensor head(ParamView pv, const Tensor& y) const;

  PolicyConfig cfg_;
  std::unique_ptr<longhorn::LonghornNet> lh_;
  std::unique_ptr<attn::AttentionNet> at_;
};

// ---- training ----

struct TrainHyper {
  int64_t total_steps = 1;
  double lr_max = 1e-4;
  double lr_min = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
};

struct TrainStepStats {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
};

// One optimizer step on a batch: masked MSE over prompt+query actions,
// backward, global-norm clip, cosine-scheduled AdamW. step is 0-based.
TrainStepStats training_step(const Policy& policy, ParamStore& params,
                             const std::vector<PackedSequence>& batch,
                             const TrainHyper& hyper, int64_t step);

// MTL comparison mode: no prompt, task identity only through the embedding.
Tensor mtl_forward(const Policy& policy, ParamView pv, const Tensor& query_obs,
                   int embedding_row);

// ---- rollout ----

struct RolloutResult {
  bool success = false;
  int steps_used = 0;
  Trajectory executed;
  Tensor latents;  // (steps_used, latent_dim) when capture was requested
};

// Anything that can drive an episode: the learned policy, the scripted
// oracle, or a random-action baseline.
class Actor {
 public:
  virtual ~Actor() = default;
  virtual void begin(const Tensor& prompt_obs) = 0;
  virtual void act(const double* obs, const env::EnvState& state,
                   double* action_out) = 0;
};

class PolicyActor : public Actor {
 public:
  PolicyActor(const Policy& policy, ParamStore& params, int embedding_row,
              double gamma_prompt, double gamma_query, bool capture_latents);
  void begin(const Tensor& prompt_obs) override;
  void act(const double* obs, const env::EnvState& state,
           double* action_out) override;
  Tensor prompt_latents;
  std::vector<double> step_latents;  // flattened rows

 private:
  const Policy& policy_;
  ParamStore& params_;
  Policy::RollState state_;
  int embedding_row_;
  double gamma_prompt_, gamma_query_;
  bool capture_;
};

class OracleActor : public Actor {
 public:
  OracleActor(env::TaskSpec task, env::EnvParams params)
      : task_(task), params_(params) {}
  void begin(const Tensor&) override {}
  void act(const double*, const env::EnvState& state, double* out) override {
    env::expert_action(state, task_, params_, out);
  }

 private:
  env::TaskSpec task_;
  env::EnvParams params_;
};

class RandomActor : public Actor {
 public:
  RandomActor(RngStream stream, double v_max) : rng_(stream), v_max_(v_max) {}
  void begin(const Tensor&) override {}
  void act(const double*, const env::EnvState&, double* out) override {
    out[0] = rng_.uniform_in(-v_max_, v_max_);
    out[1] = rng_.uniform_in(-v_max_, v_max_);
    out[2] = rng_.uniform_in(-1.0, 1.0);
  }

 private:
  RngStream rng_;
  double v_max_;
};

// Closed-loop evaluation: consume the prompt, then iterate
// observe -> act -> env_step until success or max_steps.
RolloutResult run_rollout(Actor& actor, const env::EnvParams& env_params,
                          const env::TaskSpec& task,
                          const env::SlotPermutation& perm,
                          const env::EnvState& initial,
                          const Tensor& prompt_obs, int max_steps);

// Concatenates (optionally dilated) permuted demo observations into one
// prompt matrix.
Tensor build_prompt_matrix(const std::vector<const Trajectory*>& demos,
                           int alpha, const env::SlotPermutation& perm,
                           const env::EnvParams& env_params);

}  // namespace icil::policy

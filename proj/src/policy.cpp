#include "icil/policy.hpp"

#include <cmath>
#include <iostream>

namespace icil::policy {

PackedSequence pack_training_example(const Prompt& prompt,
                                     const Trajectory& query,
                                     const env::SlotPermutation& perm,
                                     const env::EnvParams& env_params) {
  for (const Trajectory* t : prompt.trajectories) {
    if (t->task_id != query.task_id)
      throw std::logic_error("pack_training_example: prompt/query task mismatch");
    if (t == &query)
      throw std::logic_error("pack_training_example: query is a prompt member");
  }
  const int64_t od = query.observations.dim(1);
  int64_t total = query.length();
  for (const Trajectory* t : prompt.trajectories) total += t->length();

  PackedSequence out;
  out.task_id = query.task_id;
  out.observations = Tensor({total, od});
  out.target_actions = Tensor({total, env::kActDim});
  out.loss_mask = Tensor::full({total}, 1.0);
  out.segment_ids.reserve(size_t(total));

  int64_t row = 0;
  int segment = 0;
  auto append = [&](const Trajectory& t) {
    Tensor permuted = env::permute_observations(t.observations, perm, env_params);
    const int64_t T = t.length();
    for (int64_t i = 0; i < T; ++i, ++row) {
      for (int64_t j = 0; j < od; ++j)
        out.observations[row * od + j] = permuted[i * od + j];
      for (int64_t j = 0; j < env::kActDim; ++j)
        out.target_actions[row * env::kActDim + j] = t.actions[i * env::kActDim + j];
      out.segment_ids.push_back(segment);
    }
    ++segment;
  };
  for (const Trajectory* t : prompt.trajectories) append(*t);
  append(query);
  return out;
}

Policy::Policy(PolicyConfig cfg) : cfg_(cfg) {
  if (cfg_.backbone == BackboneKind::Longhorn) {
    longhorn::LonghornNetConfig c;
    c.n_blocks = cfg_.n_blocks;
    c.d_model = cfg_.d_model;
    c.layer.d = cfg_.value_dim;
    c.layer.m = cfg_.key_dim;
    c.layer.ffn_expansion = cfg_.ffn_expansion;
    c.chunk_size = cfg_.chunk_size;
    lh_ = std::make_unique<longhorn::LonghornNet>(c);
  } else {
    attn::AttentionConfig c;
    c.n_blocks = cfg_.n_blocks;
    c.n_heads = cfg_.n_heads;
    c.d_model = cfg_.d_model;
    c.ffn_expansion = cfg_.ffn_expansion;
    c.rotary = cfg_.rotary;
    c.rope_base = cfg_.rope_base;
    at_ = std::make_unique<attn::AttentionNet>(c);
  }
}

void Policy::init_params(ParamStore& store, RngStream& rng) const {
  const int64_t dm = cfg_.d_model, hidden = 2 * cfg_.d_model;
  nets::init_linear(store, rng, "enc.l1", hidden, cfg_.obs_dim);
  nets::init_linear(store, rng, "enc.l2", dm, hidden);
  if (cfg_.backbone == BackboneKind::Longhorn)
    lh_->init_params(store, rng);
  else
    at_->init_params(store, rng);
  nets::init_gain(store, "final_norm.g", dm);
  nets::init_linear(store, rng, "head.l1", hidden, dm);
  // Zero-initialized output layer: the untrained policy predicts zeros.
  nets::init_linear(store, rng, "head.l2", cfg_.act_dim, hidden,
                    /*zero_weights=*/true);
  if (cfg_.mtl_mode) {
    Tensor& emb = store.create("mtl.embed",
                               {cfg_.n_task_embeddings, cfg_.task_embedding_dim});
    for (int64_t i = 0; i < emb.numel(); ++i) emb[i] = 0.1 * rng.normal();
    nets::init_linear(store, rng, "mtl.fuse", dm, dm + cfg_.task_embedding_dim);
  }
}

int64_t Policy::param_count_formula() const {
  const int64_t dm = cfg_.d_model, hidden = 2 * cfg_.d_model;
  int64_t n = nets::linear_param_count(hidden, cfg_.obs_dim) +
              nets::linear_param_count(dm, hidden);
  n += cfg_.backbone == BackboneKind::Longhorn ? lh_->param_count_formula()
                                               : at_->param_count_formula();
  n += dm;  // final norm
  n += nets::linear_param_count(hidden, dm) +
       nets::linear_param_count(cfg_.act_dim, hidden);
  if (cfg_.mtl_mode)
    n += cfg_.n_task_embeddings * cfg_.task_embedding_dim +
         nets::linear_param_count(dm, dm + cfg_.task_embedding_dim);
  return n;
}

Tensor Policy::encode(ParamView pv, const Tensor& obs, int embedding_row) const {
  if (obs.dim(1) != cfg_.obs_dim)
    throw std::logic_error("encode: observation dimension mismatch");
  Tensor h = num::gelu(pv.tape, nets::apply_linear(pv, "enc.l1", obs));
  Tensor e = nets::apply_linear(pv, "enc.l2", h);
  if (cfg_.mtl_mode && embedding_row >= 0) {
    Tensor table = pv.get("mtl.embed");
    Tensor emb = num::row_select(pv.tape, table, embedding_row);
    Tensor wide = num::concat_cols(
        pv.tape, e, num::broadcast_rows(pv.tape, emb, e.dim(0)));
    e = nets::apply_linear(pv, "mtl.fuse", wide);
  }
  return e;
}

Tensor Policy::head(ParamView pv, const Tensor& y) const {
  Tensor n = num::rmsnorm(pv.tape, y, pv.get("final_norm.g"));
  Tensor h = num::gelu(pv.tape, nets::apply_linear(pv, "head.l1", n));
  return nets::apply_linear(pv, "head.l2", h);
}

Tensor Policy::backbone_seq(ParamView pv, const Tensor& emb,
                            std::vector<longhorn::LonghornState>* lh_states,
                            attn::KVCache* cache, double gamma,
                            Tensor* latents) const {
  if (cfg_.backbone == BackboneKind::Longhorn)
    return lh_->forward_seq(pv, emb, lh_states, gamma, latents);
  return at_->forward_seq(pv, emb, cache, latents);
}

Tensor Policy::forward_seq(ParamView pv, const Tensor& obs, int embedding_row,
                           double gamma, Tensor* latents) const {
  Tensor emb = encode(pv, obs, embedding_row);
  Tensor y = backbone_seq(pv, emb, nullptr, nullptr, gamma, latents);
  return head(pv, y);
}

Policy::RollState Policy::make_state() const {
  RollState s;
  if (cfg_.backbone == BackboneKind::Longhorn)
    s.lh = lh_->make_state();
  else
    s.cache = attn::KVCache::make(at_->config());
  return s;
}

void Policy::ingest(ParamStore& store, RollState& state,
                    const Tensor& prompt_obs, int embedding_row, double gamma,
                    Tensor* latents) const {
  if (prompt_obs.numel() == 0) return;
  ParamView pv{&store, nullptr, nullptr};
  Tensor emb = encode(pv, prompt_obs, embedding_row);
  if (cfg_.backbone == BackboneKind::Longhorn)
    lh_->forward_seq(pv, emb, &state.lh, gamma, latents);
  else
    at_->forward_seq(pv, emb, &state.cache, latents);
  state.consumed += prompt_obs.dim(0);
}

Tensor Policy::act(ParamStore& store, RollState& state, const double* obs,
                   int embedding_row, double gamma, Tensor* latent) const {
  ParamView pv{&store, nullptr, nullptr};
  Tensor row({1, cfg_.obs_dim});
  for (int64_t i = 0; i < cfg_.obs_dim; ++i) row[i] = obs[i];
  Tensor emb = encode(pv, row, embedding_row);
  Tensor y;
  if (cfg_.backbone == BackboneKind::Longhorn)
    y = lh_->step(store, emb, state.lh, gamma, latent);
  else
    y = at_->decode(store, emb, state.cache, latent);
  state.consumed += 1;
  return head(pv, y);
}

TrainStepStats training_step(const Policy& policy, ParamStore& params,
                             const std::vector<PackedSequence>& batch,
                             const TrainHyper& hyper, int64_t step) {
  if (batch.empty()) throw std::logic_error("training_step: empty batch");
  TrainStepStats stats;
  stats.lr = num::cosine_lr(step, hyper.total_steps, hyper.lr_max, hyper.lr_min);

  int64_t total_terms = 0;
  for (const auto& item : batch) {
    int64_t masked = 0;
    for (int64_t i = 0; i < item.loss_mask.numel(); ++i)
      if (item.loss_mask[i] != 0.0) ++masked;
    total_terms += masked * policy.config().act_dim;
  }
  if (total_terms == 0) {
    std::cerr << "[training_step] batch has an empty loss mask; skipped\n";
    stats.skipped = true;
    return stats;
  }

  const auto& scale = policy.config().action_scale;
  double sse_total = 0;
  for (const auto& item : batch) {
    // Targets in normalized action units.
    Tensor target = item.target_actions.clone();
    const int64_t act_dim = policy.config().act_dim;
    for (int64_t r = 0; r < target.dim(0); ++r)
      for (int64_t j = 0; j < act_dim; ++j)
        target[r * act_dim + j] /= scale[size_t(j)];
    Tape tape;
    num::BoundParams bound;
    ParamView pv{&params, &tape, &bound};
    Tensor pred = policy.forward_seq(pv, item.observations, item.embedding_row,
                                     /*gamma=*/1.0);
    Tensor sse = num::masked_sse(&tape, pred, target, item.loss_mask);
    sse_total += sse.item();
    tape.backward(sse);
    bound.harvest(tape, 1.0 / double(total_terms));
  }
  stats.loss = sse_total / double(total_terms);

  params.clip_grad_global_norm(hyper.clip_norm);
  stats.grad_norm = params.grad_global_norm();
  num::AdamWConfig opt;
  opt.lr = stats.lr;
  opt.weight_decay = hyper.weight_decay;
  opt.beta1 = hyper.beta1;
  opt.beta2 = hyper.beta2;
  opt.eps = hyper.eps;
  num::adamw_step(params, opt, step + 1);
  return stats;
}

Tensor mtl_forward(const Policy& policy, ParamView pv, const Tensor& query_obs,
                   int embedding_row) {
  if (!policy.config().mtl_mode)
    throw num::config_error("mtl_forward: policy is not in MTL mode");
  if (embedding_row < 0)
    throw num::config_error("mtl_forward: missing task embedding");
  return policy.forward_seq(pv, query_obs, embedding_row, 1.0);
}

PolicyActor::PolicyActor(const Policy& policy, ParamStore& params,
                         int embedding_row, double gamma_prompt,
                         double gamma_query, bool capture_latents)
    : policy_(policy),
      params_(params),
      state_(policy.make_state()),
      embedding_row_(embedding_row),
      gamma_prompt_(gamma_prompt),
      gamma_query_(gamma_query),
      capture_(capture_latents) {}

void PolicyActor::begin(const Tensor& prompt_obs) {
  if (prompt_obs.numel() == 0) return;
  policy_.ingest(params_, state_, prompt_obs, embedding_row_, gamma_prompt_,
                 capture_ ? &prompt_latents : nullptr);
}

void PolicyActor::act(const double* obs, const env::EnvState&, double* out) {
  Tensor latent;
  Tensor a = policy_.act(params_, state_, obs, embedding_row_, gamma_query_,
                         capture_ ? &latent : nullptr);
  // The network works in normalized action units; the env takes raw ones.
  const auto& scale = policy_.config().action_scale;
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * scale[size_t(i)];
  if (capture_ && latent.data)
    step_latents.insert(step_latents.end(), latent.ptr(),
                        latent.ptr() + latent.numel());
}

RolloutResult run_rollout(Actor& actor, const env::EnvParams& env_params,
                          const env::TaskSpec& task,
                          const env::SlotPermutation& perm,
                          const env::EnvState& initial,
                          const Tensor& prompt_obs, int max_steps) {
  RolloutResult res;
  actor.begin(prompt_obs);

  const int64_t od = env_params.obs_dim();
  std::vector<double> canonical(size_t(od), 0.0), permuted(size_t(od), 0.0);
  std::vector<double> obs_rows, act_rows;
  env::EnvState state = initial;
  for (int t = 0; t < max_steps; ++t) {
    env::write_observation(state, env_params, canonical.data());
    env::permute_observation_row(canonical.data(), perm, env_params,
                                 permuted.data());
    double a[env::kActDim];
    actor.act(permuted.data(), state, a);
    if (num::debug_checks) {
      bool bad = false;
      for (double v : a)
        if (!std::isfinite(v)) bad = true;
      if (bad) {
        std::cerr << "[rollout] non-finite action at step " << t
                  << "; episode aborted as failure\n";
        res.steps_used = t;
        break;
      }
    }
    obs_rows.insert(obs_rows.end(), permuted.begin(), permuted.end());
    act_rows.insert(act_rows.end(), a, a + env::kActDim);
    state = env::env_step(state, a, env_params);
    res.steps_used = t + 1;
    if (env::check_success(state, task, env_params)) {
      res.success = true;
      break;
    }
  }
  const int64_t T = int64_t(act_rows.size()) / env::kActDim;
  if (T > 0) {
    res.executed.observations = Tensor::from({T, od}, std::move(obs_rows));
    res.executed.actions = Tensor::from({T, env::kActDim}, std::move(act_rows));
    res.executed.task_id = task.task_id;
  }
  if (auto* pa = dynamic_cast<PolicyActor*>(&actor);
      pa && !pa->step_latents.empty()) {
    int64_t ld = int64_t(pa->step_latents.size()) / T;
    res.latents = Tensor::from({T, ld}, pa->step_latents);
  }
  return res;
}

Tensor build_prompt_matrix(const std::vector<const Trajectory*>& demos,
                           int alpha, const env::SlotPermutation& perm,
                           const env::EnvParams& env_params) {
  const int64_t od = env_params.obs_dim();
  int64_t total = 0;
  for (const Trajectory* d : demos) total += d->length() * alpha;
  Tensor out({total, od});
  int64_t row = 0;
  for (const Trajectory* d : demos) {
    Trajectory dilated = env::dilate_trajectory(*d, alpha);
    Tensor permuted =
        env::permute_observations(dilated.observations, perm, env_params);
    for (int64_t i = 0; i < dilated.length(); ++i, ++row)
      for (int64_t j = 0; j < od; ++j)
        out[row * od + j] = permuted[i * od + j];
  }
  return out;
}

}  // namespace icil::policy

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icil/env.hpp"
#include "icil/policy.hpp"

namespace icil::bench {

using num::Tensor;

// Declarative description of a run. Flat `key = value` text files with `#`
// comments; lists are comma-separated. Unknown keys are rejected.
struct ExperimentConfig {
  std::string experiment = "extrapolation";
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4, 5};
  uint64_t train_seed = 0;
  uint64_t data_seed = 7;
  std::string backbone = "longhorn";  // longhorn | attention

  int n_train = 2;
  std::vector<int> n_test = {1, 2, 4, 8, 16, 32};
  std::vector<int> alpha = {1, 2, 4, 8, 16};
  std::vector<double> gamma = {1.0};

  int d_model = 64;
  int n_blocks = 4;
  int value_dim = 64;
  int key_dim = 8;
  int n_heads = 4;
  int ffn_expansion = 4;
  bool rotary = true;
  int chunk_size = 64;

  int k_obj = 4;
  int k_zone = 4;
  int n_train_tasks = 8;
  int n_test_tasks = 2;
  int demos_per_task = 32;
  int demo_len_min = 40;
  int demo_len_max = 80;
  int episode_cap = 200;
  int rollouts_per_task = 20;
  double v_max = 0.02;
  double pickup_radius = 0.05;
  double success_radius = 0.08;
  double expert_action_noise = 0.5;

  int train_steps = 2000;
  int batch_size = 4;
  double lr_max = 1e-4;
  double lr_min = 1e-5;
  double weight_decay = 1e-4;
  double adam_b1 = 0.9;
  double adam_b2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;

  bool mtl_mode = false;
  int task_embedding_dim = 16;
  bool gamma_on_prompt = true;
  bool gamma_on_query = true;

  std::vector<int> runtime_lengths = {256, 512, 1024, 2048, 4096};
  int runtime_repeats = 5;
  int runtime_warmups = 2;
  int runtime_decode_steps = 200;
  std::vector<int> latent_n_test = {8, 16};

  std::string out = "runs/out";
  std::string data;
  std::string checkpoint;

  env::EnvParams env_params() const;
  policy::PolicyConfig policy_config() const;
};

ExperimentConfig parse_config_file(const std::string& path);
// One `key = value` assignment (CLI overrides reuse the same code path).
void apply_config_line(ExperimentConfig& cfg, const std::string& key,
                       const std::string& value);
// Fully-resolved config, fixed key order, reparseable.
void echo_config(const ExperimentConfig& cfg, const std::string& path);

struct ResultRow {
  std::string experiment;
  std::string backbone;
  uint64_t seed = 0;
  int task_id = 0;
  int n_train = 0;
  int n_test = 0;
  int alpha = 1;
  double gamma = 1.0;
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
  double wall_time_ms = 0.0;
};

// Fixed column set and order; wall_time_ms is the only run-varying column.
void write_result_csv(const std::string& path,
                      const std::vector<ResultRow>& rows);

// Evaluation grid runner shared by eval and the sweep commands.
struct EvalCondition {
  int n_test = 2;
  int alpha = 1;
  double gamma = 1.0;
};
std::vector<ResultRow> evaluate_grid(const ExperimentConfig& cfg,
                                     const policy::Policy& pol,
                                     num::ParamStore& params,
                                     const env::DemoFile& demos,
                                     const std::vector<EvalCondition>& grid);

// ---- commands (exit code 0 on success; errors are thrown) ----

void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_sweep_extrapolation(const ExperimentConfig& cfg);
void cmd_sweep_dilation(const ExperimentConfig& cfg);
void cmd_sweep_beta(const ExperimentConfig& cfg);
void cmd_bench_runtime(const ExperimentConfig& cfg);
void cmd_export_latents(const ExperimentConfig& cfg);

// ---- small statistics helpers (used by the acceptance suite too) ----

double median(std::vector<double> xs);
// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);
// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);
// Top-2 principal directions by power iteration; returns (n, 2) scores.
Tensor pca_2d(const Tensor& rows);

}  // namespace icil::bench

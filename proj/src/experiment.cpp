#include "icil/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "icil/checkpoint.hpp"

namespace icil::bench {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using num::RngStream;
using num::StreamId;

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  size_t e = s.find_last_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& v) {
  try {
    return std::stoi(v);
  } catch (...) {
    throw num::config_error("invalid integer: '" + v + "'");
  }
}

double to_double(const std::string& v) {
  try {
    return std::stod(v);
  } catch (...) {
    throw num::config_error("invalid number: '" + v + "'");
  }
}

uint64_t to_u64(const std::string& v) {
  try {
    return std::stoull(v);
  } catch (...) {
    throw num::config_error("invalid seed: '" + v + "'");
  }
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw num::config_error("invalid boolean: '" + v + "'");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& v, F item) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(item(tok));
  }
  if (out.empty()) throw num::config_error("empty list value: '" + v + "'");
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) os << ",";
    if constexpr (std::is_same_v<T, double>)
      os << fmt(xs[i]);
    else
      os << xs[i];
  }
  return os.str();
}

double elapsed_ms(Clock::time_point from) {
  return std::chrono::duration<double, std::milli>(Clock::now() - from).count();
}

// Partial Fisher-Yates draw of k distinct indices from [0, n).
std::vector<int> sample_indices(RngStream& rng, int n, int k) {
  std::vector<int> idx(size_t(n), 0);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i)
    std::swap(idx[size_t(i)], idx[size_t(i + rng.uniform_int(n - i))]);
  idx.resize(size_t(k));
  return idx;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw num::data_error("cannot create output directory: " + dir);
}

}  // namespace

env::EnvParams ExperimentConfig::env_params() const {
  env::EnvParams p;
  p.k_obj = k_obj;
  p.k_zone = k_zone;
  p.v_max = v_max;
  p.pickup_radius = pickup_radius;
  p.success_radius = success_radius;
  p.expert_action_noise = expert_action_noise;
  p.demo_len_min = demo_len_min;
  p.demo_len_max = demo_len_max;
  p.episode_cap = episode_cap;
  return p;
}

policy::PolicyConfig ExperimentConfig::policy_config() const {
  policy::PolicyConfig c;
  if (backbone == "longhorn")
    c.backbone = policy::BackboneKind::Longhorn;
  else if (backbone == "attention")
    c.backbone = policy::BackboneKind::Attention;
  else
    throw num::config_error("unknown backbone '" + backbone + "'");
  c.obs_dim = env_params().obs_dim();
  c.d_model = d_model;
  c.n_blocks = n_blocks;
  c.value_dim = value_dim;
  c.key_dim = key_dim;
  c.n_heads = n_heads;
  c.rotary = rotary;
  c.ffn_expansion = ffn_expansion;
  c.chunk_size = chunk_size;
  c.mtl_mode = mtl_mode;
  c.task_embedding_dim = task_embedding_dim;
  c.n_task_embeddings = int64_t(k_obj) * k_zone + 1;
  c.action_scale = {v_max, v_max, 1.0};
  return c;
}

void apply_config_line(ExperimentConfig& c, const std::string& key,
                       const std::string& value) {
  const std::string k = trim(key), v = trim(value);
  if (k == "experiment") c.experiment = v;
  else if (k == "seeds") c.seeds = to_list<uint64_t>(v, to_u64);
  else if (k == "train_seed") c.train_seed = to_u64(v);
  else if (k == "data_seed") c.data_seed = to_u64(v);
  else if (k == "backbone") c.backbone = v;
  else if (k == "n_train") c.n_train = to_int(v);
  else if (k == "n_test") c.n_test = to_list<int>(v, to_int);
  else if (k == "alpha") c.alpha = to_list<int>(v, to_int);
  else if (k == "gamma") c.gamma = to_list<double>(v, to_double);
  else if (k == "d_model") c.d_model = to_int(v);
  else if (k == "n_blocks") c.n_blocks = to_int(v);
  else if (k == "value_dim") c.value_dim = to_int(v);
  else if (k == "key_dim") c.key_dim = to_int(v);
  else if (k == "n_heads") c.n_heads = to_int(v);
  else if (k == "ffn_expansion") c.ffn_expansion = to_int(v);
  else if (k == "rotary") c.rotary = to_bool(v);
  else if (k == "chunk_size") c.chunk_size = to_int(v);
  else if (k == "k_obj") c.k_obj = to_int(v);
  else if (k == "k_zone") c.k_zone = to_int(v);
  else if (k == "n_train_tasks") c.n_train_tasks = to_int(v);
  else if (k == "n_test_tasks") c.n_test_tasks = to_int(v);
  else if (k == "demos_per_task") c.demos_per_task = to_int(v);
  else if (k == "demo_len_min") c.demo_len_min = to_int(v);
  else if (k == "demo_len_max") c.demo_len_max = to_int(v);
  else if (k == "episode_cap") c.episode_cap = to_int(v);
  else if (k == "rollouts_per_task") c.rollouts_per_task = to_int(v);
  else if (k == "v_max") c.v_max = to_double(v);
  else if (k == "pickup_radius") c.pickup_radius = to_double(v);
  else if (k == "success_radius") c.success_radius = to_double(v);
  else if (k == "expert_action_noise") c.expert_action_noise = to_double(v);
  else if (k == "train_steps") c.train_steps = to_int(v);
  else if (k == "batch_size") c.batch_size = to_int(v);
  else if (k == "lr_max") c.lr_max = to_double(v);
  else if (k == "lr_min") c.lr_min = to_double(v);
  else if (k == "weight_decay") c.weight_decay = to_double(v);
  else if (k == "adam_b1") c.adam_b1 = to_double(v);
  else if (k == "adam_b2") c.adam_b2 = to_double(v);
  else if (k == "adam_eps") c.adam_eps = to_double(v);
  else if (k == "clip_norm") c.clip_norm = to_double(v);
  else if (k == "mtl_mode") c.mtl_mode = to_bool(v);
  else if (k == "task_embedding_dim") c.task_embedding_dim = to_int(v);
  else if (k == "gamma_on_prompt") c.gamma_on_prompt = to_bool(v);
  else if (k == "gamma_on_query") c.gamma_on_query = to_bool(v);
  else if (k == "runtime_lengths") c.runtime_lengths = to_list<int>(v, to_int);
  else if (k == "runtime_repeats") c.runtime_repeats = to_int(v);
  else if (k == "runtime_warmups") c.runtime_warmups = to_int(v);
  else if (k == "runtime_decode_steps") c.runtime_decode_steps = to_int(v);
  else if (k == "latent_n_test") c.latent_n_test = to_list<int>(v, to_int);
  else if (k == "out") c.out = v;
  else if (k == "data") c.data = v;
  else if (k == "checkpoint") c.checkpoint = v;
  else throw num::config_error("unknown config key '" + k + "'");
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw num::config_error("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw num::config_error(path + ":" + std::to_string(lineno) +
                              ": expected key = value");
    apply_config_line(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

void echo_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw num::data_error("cannot open for writing: " + path);
  os << "experiment = " << c.experiment << "\n";
  os << "seeds = " << join(c.seeds) << "\n";
  os << "train_seed = " << c.train_seed << "\n";
  os << "data_seed = " << c.data_seed << "\n";
  os << "backbone = " << c.backbone << "\n";
  os << "n_train = " << c.n_train << "\n";
  os << "n_test = " << join(c.n_test) << "\n";
  os << "alpha = " << join(c.alpha) << "\n";
  os << "gamma = " << join(c.gamma) << "\n";
  os << "d_model = " << c.d_model << "\n";
  os << "n_blocks = " << c.n_blocks << "\n";
  os << "value_dim = " << c.value_dim << "\n";
  os << "key_dim = " << c.key_dim << "\n";
  os << "n_heads = " << c.n_heads << "\n";
  os << "ffn_expansion = " << c.ffn_expansion << "\n";
  os << "rotary = " << (c.rotary ? "true" : "false") << "\n";
  os << "chunk_size = " << c.chunk_size << "\n";
  os << "k_obj = " << c.k_obj << "\n";
  os << "k_zone = " << c.k_zone << "\n";
  os << "n_train_tasks = " << c.n_train_tasks << "\n";
  os << "n_test_tasks = " << c.n_test_tasks << "\n";
  os << "demos_per_task = " << c.demos_per_task << "\n";
  os << "demo_len_min = " << c.demo_len_min << "\n";
  os << "demo_len_max = " << c.demo_len_max << "\n";
  os << "episode_cap = " << c.episode_cap << "\n";
  os << "rollouts_per_task = " << c.rollouts_per_task << "\n";
  os << "v_max = " << fmt(c.v_max) << "\n";
  os << "pickup_radius = " << fmt(c.pickup_radius) << "\n";
  os << "success_radius = " << fmt(c.success_radius) << "\n";
  os << "expert_action_noise = " << fmt(c.expert_action_noise) << "\n";
  os << "train_steps = " << c.train_steps << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "lr_max = " << fmt(c.lr_max) << "\n";
  os << "lr_min = " << fmt(c.lr_min) << "\n";
  os << "weight_decay = " << fmt(c.weight_decay) << "\n";
  os << "adam_b1 = " << fmt(c.adam_b1) << "\n";
  os << "adam_b2 = " << fmt(c.adam_b2) << "\n";
  os << "adam_eps = " << fmt(c.adam_eps) << "\n";
  os << "clip_norm = " << fmt(c.clip_norm) << "\n";
  os << "mtl_mode = " << (c.mtl_mode ? "true" : "false") << "\n";
  os << "task_embedding_dim = " << c.task_embedding_dim << "\n";
  os << "gamma_on_prompt = " << (c.gamma_on_prompt ? "true" : "false") << "\n";
  os << "gamma_on_query = " << (c.gamma_on_query ? "true" : "false") << "\n";
  os << "runtime_lengths = " << join(c.runtime_lengths) << "\n";
  os << "runtime_repeats = " << c.runtime_repeats << "\n";
  os << "runtime_warmups = " << c.runtime_warmups << "\n";
  os << "runtime_decode_steps = " << c.runtime_decode_steps << "\n";
  os << "latent_n_test = " << join(c.latent_n_test) << "\n";
  os << "out = " << c.out << "\n";
  os << "data = " << c.data << "\n";
  os << "checkpoint = " << c.checkpoint << "\n";
}

void write_result_csv(const std::string& path,
                      const std::vector<ResultRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw num::data_error("cannot open for writing: " + path);
  os << "experiment,backbone,seed,task_id,n_train,n_test,alpha,gamma,"
        "episodes,successes,success_rate,wall_time_ms\n";
  for (const auto& r : rows) {
    os << r.experiment << ',' << r.backbone << ',' << r.seed << ','
       << r.task_id << ',' << r.n_train << ',' << r.n_test << ',' << r.alpha
       << ',' << fmt(r.gamma) << ',' << r.episodes << ',' << r.successes << ','
       << fmt(r.success_rate) << ',' << fmt(r.wall_time_ms) << "\n";
  }
}

// ---- data generation ----

void cmd_gen_data(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  env::EnvParams p = cfg.env_params();
  const int total_tasks = int(p.n_tasks());
  if (cfg.n_train_tasks + cfg.n_test_tasks > total_tasks)
    throw num::config_error("task split exceeds the task count");

  RngStream split_rng(cfg.data_seed, StreamId::DataGen, 0);
  std::vector<int> order(size_t(total_tasks), 0);
  std::iota(order.begin(), order.end(), 0);
  for (int i = total_tasks - 1; i > 0; --i)
    std::swap(order[size_t(i)], order[size_t(split_rng.uniform_int(i + 1))]);

  env::DemoFile demos;
  demos.env = p;
  demos.seed = cfg.data_seed;
  demos.train_tasks.assign(order.begin(), order.begin() + cfg.n_train_tasks);
  demos.test_tasks.assign(order.begin() + cfg.n_train_tasks,
                          order.begin() + cfg.n_train_tasks + cfg.n_test_tasks);
  std::sort(demos.train_tasks.begin(), demos.train_tasks.end());
  std::sort(demos.test_tasks.begin(), demos.test_tasks.end());

  env::GenAudit audit;
  std::vector<int> all_tasks = demos.train_tasks;
  all_tasks.insert(all_tasks.end(), demos.test_tasks.begin(),
                   demos.test_tasks.end());
  double len_sum = 0;
  int64_t len_count = 0;
  for (int task_id : all_tasks) {
    env::TaskSpec task = env::task_from_id(task_id, p);
    RngStream rng(cfg.data_seed, StreamId::DataGen, 1000 + uint64_t(task_id));
    auto trajs = env::generate_demos(task, cfg.demos_per_task, rng, p, &audit);
    for (auto& t : trajs) {
      // Generation-time audit: every demo must satisfy the success predicate.
      len_sum += double(t.length());
      ++len_count;
      demos.trajectories.push_back(std::move(t));
    }
  }
  env::save_demos(cfg.out + "/demos.bin", demos);
  env::write_manifest(cfg.out + "/manifest.jsonl", demos);
  echo_config(cfg, cfg.out + "/config.echo");

  std::ofstream audit_os(cfg.out + "/audit.txt", std::ios::trunc);
  audit_os << "tasks " << all_tasks.size() << "\n";
  audit_os << "demos_per_task " << cfg.demos_per_task << "\n";
  audit_os << "delivered " << audit.delivered << "\n";
  audit_os << "expert_success_rate 1\n";  // by construction; enforced below
  audit_os << "resampled_layouts " << audit.resampled_layouts << "\n";
  audit_os << "mean_length " << fmt(len_sum / double(len_count)) << "\n";
  std::cout << "gen-data: " << demos.trajectories.size() << " demos across "
            << all_tasks.size() << " tasks ("
            << audit.resampled_layouts << " layout resamples)\n";
}

// ---- training ----

namespace {

env::DemoFile load_demo_file(const ExperimentConfig& cfg) {
  std::string path = cfg.data.empty() ? cfg.out + "/demos.bin" : cfg.data;
  if (!fs::exists(path))
    throw num::data_error("demo file not found: " + path +
                          " (run gen-data first or pass data=...)");
  return env::load_demos(path);
}

int embedding_row_for(const env::DemoFile& demos, int task_id, bool mtl,
                      const env::EnvParams& p) {
  if (!mtl) return -1;
  bool seen = std::find(demos.train_tasks.begin(), demos.train_tasks.end(),
                        task_id) != demos.train_tasks.end();
  return seen ? task_id : int(p.n_tasks());  // reserved "unknown" row
}

}  // namespace

void cmd_train(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  env::DemoFile demos = load_demo_file(cfg);
  env::EnvParams p = demos.env;

  policy::Policy pol(cfg.policy_config());
  num::ParamStore params;
  RngStream init_rng(cfg.train_seed, StreamId::Init);
  pol.init_params(params, init_rng);

  policy::TrainHyper hyper;
  hyper.total_steps = cfg.train_steps;
  hyper.lr_max = cfg.lr_max;
  hyper.lr_min = cfg.lr_min;
  hyper.weight_decay = cfg.weight_decay;
  hyper.beta1 = cfg.adam_b1;
  hyper.beta2 = cfg.adam_b2;
  hyper.eps = cfg.adam_eps;
  hyper.clip_norm = cfg.clip_norm;

  const int needed = cfg.mtl_mode ? 1 : cfg.n_train + 1;
  std::ofstream loss_csv(cfg.out + "/train_loss.csv", std::ios::trunc);
  loss_csv << "step,lr,loss\n";

  auto started = Clock::now();
  for (int step = 0; step < cfg.train_steps; ++step) {
    RngStream rng(cfg.train_seed, StreamId::Augment, uint64_t(step));
    std::vector<policy::PackedSequence> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      int task_id = demos.train_tasks[size_t(
          rng.uniform_int(int(demos.train_tasks.size())))];
      auto pool = demos.demos_of(task_id);
      if (int(pool.size()) < needed)
        throw num::data_error("task " + std::to_string(task_id) +
                              " has too few demos for n_train");
      auto picks = sample_indices(rng, int(pool.size()), needed);
      policy::Prompt prompt;
      prompt.task_id = task_id;
      for (int i = 0; i + 1 < needed; ++i)
        prompt.trajectories.push_back(pool[size_t(picks[size_t(i)])]);
      const env::Trajectory& query = *pool[size_t(picks[size_t(needed - 1)])];
      env::SlotPermutation perm = cfg.mtl_mode
                                      ? env::identity_permutation(p)
                                      : env::random_permutation(rng, p);
      policy::PackedSequence packed =
          policy::pack_training_example(prompt, query, perm, p);
      packed.embedding_row = cfg.mtl_mode ? task_id : -1;
      batch.push_back(std::move(packed));
    }
    auto stats = policy::training_step(pol, params, batch, hyper, step);
    loss_csv << step << ',' << fmt(stats.lr) << ',' << fmt(stats.loss) << "\n";
    if (step % 100 == 0)
      std::cout << "train step " << step << " loss " << stats.loss << "\n";
  }
  num::save_checkpoint(cfg.out + "/checkpoint.bin", params);
  echo_config(cfg, cfg.out + "/config.echo");
  std::cout << "train: " << cfg.train_steps << " steps in "
            << elapsed_ms(started) / 1000.0 << " s, checkpoint written\n";
}

// ---- evaluation ----

namespace {

struct LoadedModel {
  policy::Policy pol;
  num::ParamStore params;
};

LoadedModel load_model(const ExperimentConfig& cfg) {
  if (cfg.checkpoint.empty())
    throw num::config_error("checkpoint path is required for evaluation");
  if (!fs::exists(cfg.checkpoint))
    throw num::data_error("checkpoint not found: " + cfg.checkpoint);
  LoadedModel m{policy::Policy(cfg.policy_config()), num::ParamStore{}};
  // Initialize to allocate shapes, then overwrite from the checkpoint so any
  // mismatch between config and file surfaces as an explicit error.
  RngStream rng(cfg.train_seed, StreamId::Init);
  m.pol.init_params(m.params, rng);
  num::load_checkpoint(cfg.checkpoint, m.params);
  return m;
}

}  // namespace

std::vector<ResultRow> evaluate_grid(const ExperimentConfig& cfg,
                                     const policy::Policy& pol,
                                     num::ParamStore& params,
                                     const env::DemoFile& demos,
                                     const std::vector<EvalCondition>& grid) {
  env::EnvParams p = demos.env;
  std::vector<ResultRow> rows;
  for (const EvalCondition& cond : grid) {
    for (uint64_t seed : cfg.seeds) {
      for (int task_id : demos.test_tasks) {
        auto cell_start = Clock::now();
        env::TaskSpec task = env::task_from_id(task_id, p);
        auto pool = demos.demos_of(task_id);
        if (cond.n_test > int(pool.size()))
          throw num::data_error(
              "n_test=" + std::to_string(cond.n_test) + " exceeds the " +
              std::to_string(pool.size()) + " demos available for task " +
              std::to_string(task_id));
        int successes = 0;
        for (int ep = 0; ep < cfg.rollouts_per_task; ++ep) {
          uint64_t sub = (uint64_t(task_id) << 32) | uint64_t(ep);
          RngStream roll_rng(seed, StreamId::Rollout, sub);
          RngStream aug_rng(seed, StreamId::Augment, sub);
          env::EnvState initial = env::sample_layout(roll_rng, p);
          env::SlotPermutation perm = cfg.mtl_mode
                                          ? env::identity_permutation(p)
                                          : env::random_permutation(aug_rng, p);
          Tensor prompt_obs;
          if (cond.n_test > 0) {
            auto picks = sample_indices(aug_rng, int(pool.size()), cond.n_test);
            std::vector<const env::Trajectory*> sel;
            for (int i : picks) sel.push_back(pool[size_t(i)]);
            prompt_obs = policy::build_prompt_matrix(sel, cond.alpha, perm, p);
          }
          double gp = cfg.gamma_on_prompt ? cond.gamma : 1.0;
          double gq = cfg.gamma_on_query ? cond.gamma : 1.0;
          policy::PolicyActor actor(pol, params,
                                    embedding_row_for(demos, task_id,
                                                      cfg.mtl_mode, p),
                                    gp, gq, /*capture=*/false);
          auto res = policy::run_rollout(actor, p, task, perm, initial,
                                         prompt_obs, cfg.episode_cap);
          if (res.success) ++successes;
        }
        ResultRow r;
        r.experiment = cfg.experiment;
        r.backbone = cfg.backbone;
        r.seed = seed;
        r.task_id = task_id;
        r.n_train = cfg.n_train;
        r.n_test = cond.n_test;
        r.alpha = cond.alpha;
        r.gamma = cond.gamma;
        r.episodes = cfg.rollouts_per_task;
        r.successes = successes;
        r.success_rate = double(successes) / double(cfg.rollouts_per_task);
        r.wall_time_ms = elapsed_ms(cell_start);
        rows.push_back(std::move(r));
      }
    }
  }
  return rows;
}

void cmd_eval(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  env::DemoFile demos = load_demo_file(cfg);
  LoadedModel m = load_model(cfg);
  std::vector<EvalCondition> grid;
  for (int nt : cfg.n_test)
    grid.push_back(EvalCondition{nt, 1, cfg.gamma.front()});
  auto rows = evaluate_grid(cfg, m.pol, m.params, demos, grid);
  write_result_csv(cfg.out + "/results.csv", rows);
  echo_config(cfg, cfg.out + "/config.echo");
}

void cmd_sweep_extrapolation(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  env::DemoFile demos = load_demo_file(cfg);
  LoadedModel m = load_model(cfg);
  std::vector<EvalCondition> grid;
  for (int nt : cfg.n_test) grid.push_back(EvalCondition{nt, 1, 1.0});
  auto rows = evaluate_grid(cfg, m.pol, m.params, demos, grid);
  write_result_csv(cfg.out + "/results.csv", rows);
  echo_config(cfg, cfg.out + "/config.echo");
}

void cmd_sweep_dilation(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  env::DemoFile demos = load_demo_file(cfg);
  LoadedModel m = load_model(cfg);
  std::vector<EvalCondition> grid;
  for (int a : cfg.alpha) grid.push_back(EvalCondition{cfg.n_train, a, 1.0});
  auto rows = evaluate_grid(cfg, m.pol, m.params, demos, grid);
  write_result_csv(cfg.out + "/results.csv", rows);
  echo_config(cfg, cfg.out + "/config.echo");
}

void cmd_sweep_beta(const ExperimentConfig& cfg) {
  if (cfg.backbone != "longhorn")
    throw num::config_error(
        "beta scaling applies to the longhorn backbone only");
  ensure_dir(cfg.out);
  env::DemoFile demos = load_demo_file(cfg);
  LoadedModel m = load_model(cfg);
  std::vector<double> gammas = cfg.gamma;
  if (gammas.size() < 2) gammas = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int nt = cfg.n_test.size() == 1 ? cfg.n_test.front() : 8;
  std::vector<EvalCondition> grid;
  for (double g : gammas) grid.push_back(EvalCondition{nt, 1, g});
  auto rows = evaluate_grid(cfg, m.pol, m.params, demos, grid);
  write_result_csv(cfg.out + "/results.csv", rows);
  echo_config(cfg, cfg.out + "/config.echo");
}

// ---- runtime benchmark ----

void cmd_bench_runtime(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  env::EnvParams p = cfg.env_params();
  const int64_t od = p.obs_dim();

  std::ofstream os(cfg.out + "/runtime.csv", std::ios::trunc);
  os << "backbone,prompt_len,ingest_ms,decode_ms,total_ms\n";

  for (const std::string& backbone : {std::string("longhorn"),
                                      std::string("attention")}) {
    ExperimentConfig c = cfg;
    c.backbone = backbone;
    policy::Policy pol(c.policy_config());
    num::ParamStore params;
    RngStream init_rng(cfg.train_seed, StreamId::Init);
    pol.init_params(params, init_rng);

    RngStream data_rng(cfg.train_seed, StreamId::Rollout, 99);
    Tensor decode_obs = num::rng_draw(data_rng, "uniform",
                                      {cfg.runtime_decode_steps, od});
    for (int L : cfg.runtime_lengths) {
      Tensor prompt = num::rng_draw(data_rng, "uniform", {int64_t(L), od});
      std::vector<double> ingest_times, decode_times;
      for (int rep = 0; rep < cfg.runtime_warmups + cfg.runtime_repeats;
           ++rep) {
        auto state = pol.make_state();
        auto t0 = Clock::now();
        pol.ingest(params, state, prompt, -1, 1.0);
        double ti = elapsed_ms(t0);
        auto t1 = Clock::now();
        for (int s = 0; s < cfg.runtime_decode_steps; ++s)
          pol.act(params, state, decode_obs.ptr() + s * od, -1, 1.0);
        double td = elapsed_ms(t1);
        if (rep >= cfg.runtime_warmups) {
          ingest_times.push_back(ti);
          decode_times.push_back(td);
        }
      }
      double mi = median(ingest_times), md = median(decode_times);
      os << backbone << ',' << L << ',' << fmt(mi) << ',' << fmt(md) << ','
         << fmt(mi + md) << "\n";
      std::cout << "bench " << backbone << " L=" << L << " ingest "
                << mi << " ms decode " << md << " ms\n";
    }
  }
  echo_config(cfg, cfg.out + "/config.echo");
}

// ---- latent export ----

void cmd_export_latents(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  env::DemoFile demos = load_demo_file(cfg);
  LoadedModel m = load_model(cfg);
  env::EnvParams p = demos.env;
  const int64_t ld = m.pol.config().latent_dim();

  std::ofstream lat(cfg.out + "/latents.csv", std::ios::trunc);
  lat << "n_test,phase,step";
  for (int64_t i = 0; i < ld; ++i) lat << ",l" << i;
  lat << "\n";
  std::ofstream proj(cfg.out + "/projection.csv", std::ios::trunc);
  proj << "n_test,phase,step,pc1,pc2\n";

  uint64_t seed = cfg.seeds.front();
  int task_id = demos.test_tasks.front();
  env::TaskSpec task = env::task_from_id(task_id, p);
  auto pool = demos.demos_of(task_id);

  for (int nt : cfg.latent_n_test) {
    if (nt > int(pool.size()))
      throw num::data_error("latent preset n_test exceeds available demos");
    uint64_t sub = (uint64_t(task_id) << 32);
    RngStream roll_rng(seed, StreamId::Rollout, sub);
    RngStream aug_rng(seed, StreamId::Augment, sub);
    env::EnvState initial = env::sample_layout(roll_rng, p);
    env::SlotPermutation perm = env::random_permutation(aug_rng, p);
    auto picks = sample_indices(aug_rng, int(pool.size()), nt);
    std::vector<const env::Trajectory*> sel;
    for (int i : picks) sel.push_back(pool[size_t(i)]);
    Tensor prompt_obs = policy::build_prompt_matrix(sel, 1, perm, p);

    policy::PolicyActor actor(m.pol, m.params, -1, 1.0, 1.0, /*capture=*/true);
    auto res = policy::run_rollout(actor, p, task, perm, initial, prompt_obs,
                                   cfg.episode_cap);

    const Tensor& pl = actor.prompt_latents;
    std::vector<double> all;
    int64_t n_prompt = pl.data ? pl.dim(0) : 0;
    for (int64_t i = 0; i < n_prompt * ld; ++i) all.push_back(pl[i]);
    int64_t n_pred = res.latents.data ? res.latents.dim(0) : 0;
    for (int64_t i = 0; i < n_pred * ld; ++i) all.push_back(res.latents[i]);
    Tensor stacked = Tensor::from({n_prompt + n_pred, ld}, all);
    Tensor scores = pca_2d(stacked);

    for (int64_t r = 0; r < n_prompt + n_pred; ++r) {
      const char* phase = r < n_prompt ? "prompt" : "predicted";
      int64_t step = r < n_prompt ? r : r - n_prompt;
      lat << nt << ',' << phase << ',' << step;
      for (int64_t i = 0; i < ld; ++i) lat << ',' << fmt(stacked[r * ld + i]);
      lat << "\n";
      proj << nt << ',' << phase << ',' << step << ',' << fmt(scores[r * 2])
           << ',' << fmt(scores[r * 2 + 1]) << "\n";
    }
  }
  echo_config(cfg, cfg.out + "/config.echo");
}

// ---- statistics helpers ----

double median(std::vector<double> xs) {
  if (xs.empty()) throw std::logic_error("median of empty set");
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::logic_error("loglog_slope: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    double avg = 0.5 * (double(i) + double(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::logic_error("spearman: need >= 2 points");
  auto rx = ranks_with_ties(x);
  auto ry = ranks_with_ties(y);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

Tensor pca_2d(const Tensor& rows) {
  const int64_t n = rows.dim(0), d = rows.dim(1);
  std::vector<double> mean(size_t(d), 0.0);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t i = 0; i < d; ++i) mean[size_t(i)] += rows[r * d + i];
  for (auto& v : mean) v /= double(n);
  std::vector<double> C(size_t(d * d), 0.0);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t i = 0; i < d; ++i) {
      double xi = rows[r * d + i] - mean[size_t(i)];
      for (int64_t j = 0; j < d; ++j)
        C[size_t(i * d + j)] += xi * (rows[r * d + j] - mean[size_t(j)]);
    }
  for (auto& v : C) v /= double(n);

  auto power_iter = [&](const std::vector<double>& M,
                        const std::vector<double>* orth) {
    auto project_out = [&](std::vector<double>& v) {
      if (!orth) return;
      double c = num::dot(v.data(), orth->data(), d);
      for (int64_t i = 0; i < d; ++i) v[size_t(i)] -= c * (*orth)[size_t(i)];
    };
    auto normalize = [&](std::vector<double>& v) {
      double n = std::sqrt(num::dot(v.data(), v.data(), d));
      if (n < 1e-12) {
        // Degenerate direction: fall back to a basis vector.
        std::fill(v.begin(), v.end(), 0.0);
        v[0] = 1.0;
        project_out(v);
        n = std::sqrt(num::dot(v.data(), v.data(), d));
        if (n < 1e-12) {
          v[0] = 0.0;
          if (d > 1) v[1] = 1.0;
          n = 1.0;
        }
      }
      for (int64_t i = 0; i < d; ++i) v[size_t(i)] /= n;
    };
    std::vector<double> v(size_t(d), 0.0);
    for (int64_t i = 0; i < d; ++i) v[size_t(i)] = 1.0 + 0.01 * double(i);
    project_out(v);
    normalize(v);
    double mscale = 0.0;
    for (double x : M) mscale = std::max(mscale, std::fabs(x));
    // Below this the matrix is cancellation noise from deflation; iterating
    // further would amplify denormal residue that points back along `orth`.
    const double floor_norm = mscale * 1e-9 + 1e-290;
    for (int it = 0; it < 300; ++it) {
      std::vector<double> w(size_t(d), 0.0);
      for (int64_t i = 0; i < d; ++i)
        w[size_t(i)] = num::dot(M.data() + i * d, v.data(), d);
      project_out(w);
      double norm = std::sqrt(num::dot(w.data(), w.data(), d));
      if (norm <= floor_norm) break;  // keep the current valid direction
      for (int64_t i = 0; i < d; ++i) v[size_t(i)] = w[size_t(i)] / norm;
    }
    return v;
  };
  auto v1 = power_iter(C, nullptr);
  // Deflate: C2 = C - lambda v1 v1^T.
  std::vector<double> Cv(size_t(d), 0.0);
  for (int64_t i = 0; i < d; ++i)
    Cv[size_t(i)] = num::dot(C.data() + i * d, v1.data(), d);
  double lambda = num::dot(v1.data(), Cv.data(), d);
  std::vector<double> C2 = C;
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j)
      C2[size_t(i * d + j)] -= lambda * v1[size_t(i)] * v1[size_t(j)];
  auto v2 = power_iter(C2, &v1);

  Tensor scores({n, 2});
  for (int64_t r = 0; r < n; ++r) {
    double s1 = 0, s2 = 0;
    for (int64_t i = 0; i < d; ++i) {
      double xi = rows[r * d + i] - mean[size_t(i)];
      s1 += xi * v1[size_t(i)];
      s2 += xi * v2[size_t(i)];
    }
    scores[r * 2] = s1;
    scores[r * 2 + 1] = s2;
  }
  return scores;
}

}  // namespace icil::bench

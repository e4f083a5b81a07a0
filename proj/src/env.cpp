#include "icil/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "icil/checkpoint.hpp"

namespace icil::env {

namespace {

double dist2d(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1];
  return std::sqrt(dx * dx + dy * dy);
}

double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace

TaskSpec task_from_id(int task_id, const EnvParams& p) {
  if (task_id < 0 || task_id >= p.n_tasks())
    throw num::config_error("task_from_id: id out of range");
  TaskSpec t;
  t.task_id = task_id;
  t.object_type = task_id / p.k_zone;
  t.target_zone = task_id % p.k_zone;
  return t;
}

EnvState env_step(const EnvState& s, const double* action, const EnvParams& p) {
  EnvState n = s;
  double vx = clampd(action[0], -p.v_max, p.v_max);
  double vy = clampd(action[1], -p.v_max, p.v_max);
  n.agent[0] = clampd(n.agent[0] + vx, 0.0, 1.0);
  n.agent[1] = clampd(n.agent[1] + vy, 0.0, 1.0);
  bool close = action[2] > 0.0;
  if (close) {
    n.gripper_closed = true;
    if (n.object_held < 0) {
      int best = -1;
      double best_d = p.pickup_radius;
      for (int i = 0; i < int(n.objects.size()); ++i) {
        double d = dist2d(n.agent, n.objects[size_t(i)]);
        if (d <= best_d) {
          best_d = d;
          best = i;
        }
      }
      n.object_held = best;
    }
  } else {
    n.gripper_closed = false;
    n.object_held = -1;
  }
  if (n.object_held >= 0) n.objects[size_t(n.object_held)] = n.agent;
  n.step_count = s.step_count + 1;
  return n;
}

bool check_success(const EnvState& s, const TaskSpec& task, const EnvParams& p) {
  if (s.gripper_closed) return false;
  const auto& obj = s.objects[size_t(task.object_type)];
  const auto& zone = s.zones[size_t(task.target_zone)];
  return dist2d(obj, zone) <= p.success_radius;
}

EnvState sample_layout(RngStream& rng, const EnvParams& p) {
  EnvState s;
  s.agent = {rng.uniform_in(0.1, 0.9), rng.uniform_in(0.1, 0.9)};
  s.zones.resize(size_t(p.k_zone));
  for (int z = 0; z < p.k_zone; ++z) {
    for (int tries = 0;; ++tries) {
      std::array<double, 2> c{rng.uniform_in(0.12, 0.88),
                              rng.uniform_in(0.12, 0.88)};
      bool ok = true;
      for (int j = 0; j < z; ++j)
        if (dist2d(c, s.zones[size_t(j)]) < 0.22) ok = false;
      if (ok || tries > 200) {
        s.zones[size_t(z)] = c;
        break;
      }
    }
  }
  s.objects.resize(size_t(p.k_obj));
  for (int o = 0; o < p.k_obj; ++o) {
    for (int tries = 0;; ++tries) {
      std::array<double, 2> c{rng.uniform_in(0.05, 0.95),
                              rng.uniform_in(0.05, 0.95)};
      bool ok = true;
      for (const auto& z : s.zones)
        if (dist2d(c, z) < p.success_radius + 0.06) ok = false;
      for (int j = 0; j < o; ++j)
        if (dist2d(c, s.objects[size_t(j)]) < 0.12) ok = false;
      if (dist2d(c, s.agent) < p.pickup_radius + 0.02) ok = false;
      if (ok || tries > 500) {
        s.objects[size_t(o)] = c;
        break;
      }
    }
  }
  return s;
}

void expert_action(const EnvState& s, const TaskSpec& task, const EnvParams& p,
                   double* a) {
  a[0] = a[1] = 0.0;
  a[2] = -1.0;
  // Holding the wrong object: drop it.
  if (s.object_held >= 0 && s.object_held != task.object_type) return;

  std::array<double, 2> target;
  bool carrying = s.object_held == task.object_type && s.object_held >= 0;
  if (carrying)
    target = s.zones[size_t(task.target_zone)];
  else
    target = s.objects[size_t(task.object_type)];

  double dx = target[0] - s.agent[0];
  double dy = target[1] - s.agent[1];
  double dist = std::sqrt(dx * dx + dy * dy);
  double speed = std::min(p.expert_gain * dist, p.v_max);
  if (dist > 1e-12) {
    a[0] = dx / dist * speed;
    a[1] = dy / dist * speed;
  }
  if (carrying) {
    // Keep hold until inside the release window.
    a[2] = dist <= p.release_dist ? -1.0 : 1.0;
    if (dist <= p.release_dist) {
      a[0] = 0.0;
      a[1] = 0.0;
    }
  } else {
    a[2] = dist <= p.grasp_dist ? 1.0 : -1.0;
  }
}

void write_observation(const EnvState& s, const EnvParams& p, double* out) {
  int64_t k = 0;
  out[k++] = s.agent[0];
  out[k++] = s.agent[1];
  out[k++] = s.gripper_closed ? 1.0 : 0.0;
  for (int o = 0; o < p.k_obj; ++o) {
    out[k++] = s.objects[size_t(o)][0];
    out[k++] = s.objects[size_t(o)][1];
  }
  for (int z = 0; z < p.k_zone; ++z) {
    out[k++] = s.zones[size_t(z)][0];
    out[k++] = s.zones[size_t(z)][1];
  }
}

namespace {

// Runs the expert from `layout`; returns the trajectory if it succeeds
// within the cap. Velocity noise is injected into the executed (and
// recorded) actions; the proportional controller corrects it.
std::optional<Trajectory> run_expert(const EnvState& layout,
                                     const TaskSpec& task, const EnvParams& p,
                                     RngStream& rng) {
  const int64_t od = p.obs_dim();
  std::vector<double> obs_rows, act_rows;
  EnvState s = layout;
  for (int t = 0; t < p.demo_len_max; ++t) {
    double a[kActDim];
    expert_action(s, task, p, a);
    if (p.expert_action_noise > 0.0) {
      double eta = p.expert_action_noise * p.v_max;
      a[0] += rng.uniform_in(-eta, eta);
      a[1] += rng.uniform_in(-eta, eta);
    }
    std::vector<double> row(size_t(od), 0.0);
    write_observation(s, p, row.data());
    obs_rows.insert(obs_rows.end(), row.begin(), row.end());
    act_rows.insert(act_rows.end(), a, a + kActDim);
    s = env_step(s, a, p);
    if (check_success(s, task, p)) {
      Trajectory traj;
      int64_t T = int64_t(act_rows.size()) / kActDim;
      traj.observations = Tensor::from({T, od}, std::move(obs_rows));
      traj.actions = Tensor::from({T, kActDim}, std::move(act_rows));
      traj.task_id = task.task_id;
      return traj;
    }
  }
  return std::nullopt;
}

}  // namespace

std::vector<Trajectory> generate_demos(const TaskSpec& task, int n,
                                       RngStream& rng, const EnvParams& p,
                                       GenAudit* audit) {
  if (n < 1) throw num::config_error("generate_demos: n must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(size_t(n));
  int resamples = 0;
  while (int(out.size()) < n) {
    EnvState layout = sample_layout(rng, p);
    auto traj = run_expert(layout, task, p, rng);
    if (!traj || traj->length() < p.demo_len_min) {
      ++resamples;
      if (resamples > 10000 * n)
        throw num::data_error("generate_demos: cannot hit length band; check env params");
      continue;
    }
    out.push_back(std::move(*traj));
  }
  if (audit) {
    audit->resampled_layouts += resamples;
    audit->delivered += n;
  }
  return out;
}

Trajectory dilate_trajectory(const Trajectory& traj, int alpha) {
  if (alpha < 1) throw num::config_error("dilate_trajectory: alpha must be >= 1");
  if (alpha == 1) return traj;
  const int64_t T = traj.length();
  const int64_t od = traj.observations.dim(1);
  Trajectory out;
  out.task_id = traj.task_id;
  out.observations = Tensor({T * alpha, od});
  out.actions = Tensor({T * alpha, kActDim});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t r = 0; r < alpha; ++r) {
      int64_t dst = t * alpha + r;
      for (int64_t i = 0; i < od; ++i)
        out.observations[dst * od + i] = traj.observations[t * od + i];
      for (int64_t i = 0; i < kActDim; ++i)
        out.actions[dst * kActDim + i] = traj.actions[t * kActDim + i];
    }
  return out;
}

SlotPermutation identity_permutation(const EnvParams& p) {
  SlotPermutation perm;
  perm.obj_slot_of_type.resize(size_t(p.k_obj));
  perm.zone_slot_of_zone.resize(size_t(p.k_zone));
  for (int i = 0; i < p.k_obj; ++i) perm.obj_slot_of_type[size_t(i)] = i;
  for (int i = 0; i < p.k_zone; ++i) perm.zone_slot_of_zone[size_t(i)] = i;
  return perm;
}

SlotPermutation random_permutation(RngStream& rng, const EnvParams& p) {
  SlotPermutation perm = identity_permutation(p);
  // Fisher-Yates, fixed draw order.
  for (int i = p.k_obj - 1; i > 0; --i)
    std::swap(perm.obj_slot_of_type[size_t(i)],
              perm.obj_slot_of_type[size_t(rng.uniform_int(i + 1))]);
  for (int i = p.k_zone - 1; i > 0; --i)
    std::swap(perm.zone_slot_of_zone[size_t(i)],
              perm.zone_slot_of_zone[size_t(rng.uniform_int(i + 1))]);
  return perm;
}

void permute_observation_row(const double* in, const SlotPermutation& perm,
                             const EnvParams& p, double* out) {
  out[0] = in[0];
  out[1] = in[1];
  out[2] = in[2];
  const int64_t ob = 3;
  const int64_t zb = 3 + 2 * p.k_obj;
  for (int t = 0; t < p.k_obj; ++t) {
    int slot = perm.obj_slot_of_type[size_t(t)];
    out[ob + 2 * slot] = in[ob + 2 * t];
    out[ob + 2 * slot + 1] = in[ob + 2 * t + 1];
  }
  for (int z = 0; z < p.k_zone; ++z) {
    int slot = perm.zone_slot_of_zone[size_t(z)];
    out[zb + 2 * slot] = in[zb + 2 * z];
    out[zb + 2 * slot + 1] = in[zb + 2 * z + 1];
  }
}

Tensor permute_observations(const Tensor& obs, const SlotPermutation& perm,
                            const EnvParams& p) {
  const int64_t T = obs.dim(0), od = obs.dim(1);
  Tensor out({T, od});
  for (int64_t t = 0; t < T; ++t)
    permute_observation_row(obs.ptr() + t * od, perm, p, out.ptr() + t * od);
  return out;
}

std::vector<const Trajectory*> DemoFile::demos_of(int task_id) const {
  std::vector<const Trajectory*> out;
  for (const auto& t : trajectories)
    if (t.task_id == task_id) out.push_back(&t);
  return out;
}

namespace {

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> v(size_t(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) v[size_t(i)] = float(t[i]);
  return v;
}

num::ContainerEntry meta_entry(const std::string& name,
                               std::vector<float> vals) {
  num::ContainerEntry e;
  e.name = name;
  e.shape = {int64_t(vals.size())};
  e.data = std::move(vals);
  return e;
}

}  // namespace

void save_demos(const std::string& path, const DemoFile& demos) {
  std::vector<num::ContainerEntry> entries;
  const EnvParams& p = demos.env;
  entries.push_back(meta_entry(
      "env.params",
      {float(p.k_obj), float(p.k_zone), float(p.v_max), float(p.pickup_radius),
       float(p.success_radius), float(p.grasp_dist), float(p.release_dist),
       float(p.expert_gain), float(p.demo_len_min), float(p.demo_len_max),
       float(p.episode_cap), float(p.expert_action_noise)}));
  std::vector<float> split_train(demos.train_tasks.begin(),
                                 demos.train_tasks.end());
  std::vector<float> split_test(demos.test_tasks.begin(),
                                demos.test_tasks.end());
  entries.push_back(meta_entry("split.train_tasks", split_train));
  entries.push_back(meta_entry("split.test_tasks", split_test));
  entries.push_back(meta_entry("gen.seed", {float(demos.seed)}));
  std::vector<float> task_ids;
  for (const auto& t : demos.trajectories) task_ids.push_back(float(t.task_id));
  entries.push_back(meta_entry("traj.task_ids", task_ids));
  for (size_t i = 0; i < demos.trajectories.size(); ++i) {
    const Trajectory& t = demos.trajectories[i];
    num::ContainerEntry obs;
    obs.name = "traj." + std::to_string(i) + ".obs";
    obs.shape = t.observations.shape;
    obs.data = to_f32(t.observations);
    entries.push_back(std::move(obs));
    num::ContainerEntry act;
    act.name = "traj." + std::to_string(i) + ".act";
    act.shape = t.actions.shape;
    act.data = to_f32(t.actions);
    entries.push_back(std::move(act));
  }
  num::write_container(path, "RDEM", entries);
}

DemoFile load_demos(const std::string& path) {
  auto entries = num::read_container(path, "RDEM");
  DemoFile out;
  std::vector<float> task_ids;
  std::vector<std::pair<num::Shape, std::vector<float>>> obs_list, act_list;
  for (auto& e : entries) {
    if (e.name == "env.params") {
      if (e.data.size() != 12) throw num::data_error("bad env.params entry");
      EnvParams& p = out.env;
      p.k_obj = int(e.data[0]);
      p.k_zone = int(e.data[1]);
      p.v_max = e.data[2];
      p.pickup_radius = e.data[3];
      p.success_radius = e.data[4];
      p.grasp_dist = e.data[5];
      p.release_dist = e.data[6];
      p.expert_gain = e.data[7];
      p.demo_len_min = int(e.data[8]);
      p.demo_len_max = int(e.data[9]);
      p.episode_cap = int(e.data[10]);
      p.expert_action_noise = e.data[11];
    } else if (e.name == "split.train_tasks") {
      for (float v : e.data) out.train_tasks.push_back(int(v));
    } else if (e.name == "split.test_tasks") {
      for (float v : e.data) out.test_tasks.push_back(int(v));
    } else if (e.name == "gen.seed") {
      out.seed = uint64_t(e.data.at(0));
    } else if (e.name == "traj.task_ids") {
      task_ids = e.data;
    } else if (e.name.ends_with(".obs")) {
      obs_list.emplace_back(e.shape, std::move(e.data));
    } else if (e.name.ends_with(".act")) {
      act_list.emplace_back(e.shape, std::move(e.data));
    }
  }
  if (obs_list.size() != act_list.size() || obs_list.size() != task_ids.size())
    throw num::data_error("demo container is inconsistent: " + path);
  for (size_t i = 0; i < obs_list.size(); ++i) {
    Trajectory t;
    t.task_id = int(task_ids[i]);
    std::vector<double> ov(obs_list[i].second.begin(), obs_list[i].second.end());
    std::vector<double> av(act_list[i].second.begin(), act_list[i].second.end());
    t.observations = Tensor::from(obs_list[i].first, std::move(ov));
    t.actions = Tensor::from(act_list[i].first, std::move(av));
    out.trajectories.push_back(std::move(t));
  }
  return out;
}

void write_manifest(const std::string& path, const DemoFile& demos) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw num::data_error("cannot open for writing: " + path);
  for (const auto& t : demos.trajectories) {
    char line[128];
    std::snprintf(line, sizeof(line),
                  "{\"task_id\":%d,\"length\":%lld,\"seed\":%llu}\n", t.task_id,
                  (long long)t.length(), (unsigned long long)demos.seed);
    os << line;
  }
}

}  // namespace icil::env

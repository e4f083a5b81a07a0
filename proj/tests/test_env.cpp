#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "icil/env.hpp"
#include "testutil.hpp"

using namespace icil::env;
using icil::num::RngStream;
using icil::num::StreamId;
using icil::num::Tensor;
using testutil::max_abs_diff;

namespace {

EnvParams params() { return EnvParams{}; }

}  // namespace

TEST_CASE("task ids enumerate (object, zone) pairs") {
  EnvParams p = params();
  std::set<std::pair<int, int>> seen;
  for (int id = 0; id < p.n_tasks(); ++id) {
    TaskSpec t = task_from_id(id, p);
    CHECK(t.task_id == id);
    seen.insert({t.object_type, t.target_zone});
  }
  CHECK(int64_t(seen.size()) == p.n_tasks());
  CHECK_THROWS_AS(task_from_id(int(p.n_tasks()), p),
                  icil::num::config_error);
}

TEST_CASE("env_step: zero action only advances the clock") {
  EnvParams p = params();
  RngStream rng(1, StreamId::Rollout);
  EnvState s = sample_layout(rng, p);
  double a[3] = {0, 0, 0};
  EnvState n = env_step(s, a, p);
  CHECK(n.step_count == s.step_count + 1);
  CHECK(n.agent == s.agent);
  CHECK(n.gripper_closed == s.gripper_closed);
  CHECK(n.object_held == s.object_held);
  for (size_t i = 0; i < s.objects.size(); ++i)
    CHECK(n.objects[i] == s.objects[i]);
}

TEST_CASE("env_step: closing at an object attaches it; velocity is clipped") {
  EnvParams p = params();
  RngStream rng(2, StreamId::Rollout);
  EnvState s = sample_layout(rng, p);
  s.agent = s.objects[2];  // stand on object 2
  double close_cmd[3] = {0, 0, 1.0};
  EnvState n = env_step(s, close_cmd, p);
  CHECK(n.gripper_closed);
  CHECK(n.object_held == 2);

  // Held object tracks the agent.
  double move[3] = {1.0, -1.0, 1.0};  // clipped to +-v_max
  EnvState m = env_step(n, move, p);
  CHECK(m.agent[0] == doctest::Approx(n.agent[0] + p.v_max));
  CHECK(m.agent[1] == doctest::Approx(n.agent[1] - p.v_max));
  CHECK(m.objects[2] == m.agent);

  // Opening releases.
  double open_cmd[3] = {0, 0, -1.0};
  EnvState r = env_step(m, open_cmd, p);
  CHECK(!r.gripper_closed);
  CHECK(r.object_held == -1);
}

TEST_CASE("env_step is a pure function of (state, action)") {
  EnvParams p = params();
  RngStream rng(3, StreamId::Rollout);
  EnvState s = sample_layout(rng, p);
  double a[3] = {0.01, -0.02, 1.0};
  EnvState n1 = env_step(s, a, p);
  EnvState n2 = env_step(s, a, p);
  CHECK(n1.agent == n2.agent);
  CHECK(n1.object_held == n2.object_held);
  CHECK(n1.step_count == n2.step_count);
}

TEST_CASE("check_success: predicate cases") {
  EnvParams p = params();
  RngStream rng(4, StreamId::Rollout);
  EnvState s = sample_layout(rng, p);
  TaskSpec task = task_from_id(5, p);  // object 1 -> zone 1

  // Spawn rule keeps every object outside every zone.
  for (int id = 0; id < p.n_tasks(); ++id)
    CHECK(!check_success(s, task_from_id(id, p), p));

  EnvState done = s;
  done.objects[size_t(task.object_type)] = done.zones[size_t(task.target_zone)];
  done.gripper_closed = false;
  CHECK(check_success(done, task, p));

  // Wrong object at the right zone does not count.
  EnvState wrong = s;
  wrong.objects[size_t((task.object_type + 1) % p.k_obj)] =
      wrong.zones[size_t(task.target_zone)];
  CHECK(!check_success(wrong, task, p));

  // Closed gripper (still holding) does not count.
  EnvState held = done;
  held.gripper_closed = true;
  CHECK(!check_success(held, task, p));
}

TEST_CASE("generate_demos: determinism, band, success, distinct layouts") {
  EnvParams p = params();
  TaskSpec task = task_from_id(9, p);
  RngStream r1(77, StreamId::DataGen), r2(77, StreamId::DataGen);
  auto d1 = generate_demos(task, 3, r1, p);
  auto d2 = generate_demos(task, 3, r2, p);
  REQUIRE(d1.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(max_abs_diff(d1[i].observations, d2[i].observations) == 0.0);
    CHECK(max_abs_diff(d1[i].actions, d2[i].actions) == 0.0);
  }
  // Different layouts give different observations.
  CHECK(max_abs_diff(d1[0].observations, d1[1].observations) > 1e-6);
}

TEST_CASE("generation audit: every demo succeeds, lengths stay in band") {
  EnvParams p = params();
  GenAudit audit;
  int total = 0;
  double len_sum = 0;
  for (int id = 0; id < p.n_tasks(); ++id) {
    TaskSpec task = task_from_id(id, p);
    RngStream rng(123, StreamId::DataGen, 1000 + uint64_t(id));
    auto demos = generate_demos(task, 63, rng, p, &audit);
    for (const auto& d : demos) {
      ++total;
      len_sum += double(d.length());
      REQUIRE(d.length() >= p.demo_len_min);
      REQUIRE(d.length() <= p.demo_len_max);
      // Replay the actions and confirm the success predicate held.
      EnvState s;
      s.agent = {d.observations[0], d.observations[1]};
      s.gripper_closed = d.observations[2] > 0.5;
      for (int o = 0; o < p.k_obj; ++o)
        s.objects.push_back(
            {d.observations[3 + 2 * o], d.observations[3 + 2 * o + 1]});
      int zb = 3 + 2 * p.k_obj;
      for (int z = 0; z < p.k_zone; ++z)
        s.zones.push_back(
            {d.observations[zb + 2 * z], d.observations[zb + 2 * z + 1]});
      for (int64_t t = 0; t < d.length(); ++t)
        s = env_step(s, d.actions.ptr() + t * kActDim, p);
      REQUIRE(check_success(s, task, p));
    }
  }
  CHECK(total == 63 * p.n_tasks());  // ~1000 demos audited
  double mean_len = len_sum / total;
  CHECK(mean_len >= p.demo_len_min);
  CHECK(mean_len <= p.demo_len_max);
}

TEST_CASE("dilate_trajectory: identity, repeat pattern, dedup inverse") {
  EnvParams p = params();
  TaskSpec task = task_from_id(0, p);
  RngStream rng(5, StreamId::DataGen);
  auto demos = generate_demos(task, 1, rng, p);
  const Trajectory& t = demos[0];

  Trajectory same = dilate_trajectory(t, 1);
  CHECK(max_abs_diff(same.observations, t.observations) == 0.0);

  Trajectory d2 = dilate_trajectory(t, 2);
  CHECK(d2.length() == 2 * t.length());
  const int64_t od = t.observations.dim(1);
  for (int64_t i = 0; i < t.length(); ++i)
    for (int64_t j = 0; j < od; ++j) {
      CHECK(d2.observations[(2 * i) * od + j] == t.observations[i * od + j]);
      CHECK(d2.observations[(2 * i + 1) * od + j] ==
            t.observations[i * od + j]);
    }

  Trajectory d16 = dilate_trajectory(t, 16);
  CHECK(d16.length() == 16 * t.length());

  // Deduplicating consecutive repeats recovers the original exactly.
  int alpha = 4;
  Trajectory d4 = dilate_trajectory(t, alpha);
  for (int64_t i = 0; i < t.length(); ++i)
    for (int64_t j = 0; j < od; ++j)
      CHECK(d4.observations[(alpha * i) * od + j] ==
            t.observations[i * od + j]);

  CHECK_THROWS_AS(dilate_trajectory(t, 0), icil::num::config_error);

  // T=3, alpha=2 definitional pattern on a tiny synthetic trajectory.
  Trajectory tiny;
  tiny.observations = Tensor::from({3, 1}, {1, 2, 3});
  tiny.actions = Tensor::from({3, 3}, {1, 1, 1, 2, 2, 2, 3, 3, 3});
  Trajectory td = dilate_trajectory(tiny, 2);
  CHECK(td.length() == 6);
  std::vector<double> expect = {1, 1, 2, 2, 3, 3};
  for (int64_t i = 0; i < 6; ++i) CHECK(td.observations[i] == expect[size_t(i)]);
}

TEST_CASE("slot permutations relabel observation slots consistently") {
  EnvParams p = params();
  RngStream rng(6, StreamId::Augment);
  SlotPermutation perm = random_permutation(rng, p);

  RngStream lrng(7, StreamId::Rollout);
  EnvState s = sample_layout(lrng, p);
  std::vector<double> canon(size_t(p.obs_dim()), 0.0);
  write_observation(s, p, canon.data());
  std::vector<double> permuted(size_t(p.obs_dim()), 0.0);
  permute_observation_row(canon.data(), perm, p, permuted.data());

  for (int i = 0; i < 3; ++i) CHECK(permuted[size_t(i)] == canon[size_t(i)]);
  for (int t = 0; t < p.k_obj; ++t) {
    int slot = perm.obj_slot_of_type[size_t(t)];
    CHECK(permuted[size_t(3 + 2 * slot)] == s.objects[size_t(t)][0]);
    CHECK(permuted[size_t(3 + 2 * slot + 1)] == s.objects[size_t(t)][1]);
  }
  // Identity permutation is a no-op.
  Tensor obs = Tensor::from({1, p.obs_dim()},
                            std::vector<double>(canon.begin(), canon.end()));
  Tensor same = permute_observations(obs, identity_permutation(p), p);
  CHECK(max_abs_diff(same, obs) == 0.0);
}

TEST_CASE("demo container: round trip and manifest") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "icil_demo_test";
  fs::create_directories(dir);
  EnvParams p = params();

  DemoFile demos;
  demos.env = p;
  demos.seed = 99;
  demos.train_tasks = {0, 3, 5};
  demos.test_tasks = {7, 9};
  RngStream rng(8, StreamId::DataGen);
  for (int id : {0, 7}) {
    auto t = generate_demos(task_from_id(id, p), 2, rng, p);
    for (auto& d : t) demos.trajectories.push_back(std::move(d));
  }

  std::string path = (dir / "demos.bin").string();
  save_demos(path, demos);
  DemoFile loaded = load_demos(path);
  CHECK(loaded.train_tasks == demos.train_tasks);
  CHECK(loaded.test_tasks == demos.test_tasks);
  CHECK(loaded.seed == 99);
  CHECK(loaded.env.k_obj == p.k_obj);
  REQUIRE(loaded.trajectories.size() == demos.trajectories.size());
  for (size_t i = 0; i < loaded.trajectories.size(); ++i) {
    const auto& a = demos.trajectories[i];
    const auto& b = loaded.trajectories[i];
    CHECK(a.task_id == b.task_id);
    REQUIRE(a.length() == b.length());
    for (int64_t j = 0; j < a.observations.numel(); ++j)
      CHECK(b.observations[j] == double(float(a.observations[j])));
  }

  // Saving the loaded copy reproduces the file byte for byte.
  std::string path2 = (dir / "demos2.bin").string();
  save_demos(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  std::string mpath = (dir / "manifest.jsonl").string();
  write_manifest(mpath, demos);
  std::ifstream mf(mpath);
  std::string line;
  int lines = 0;
  while (std::getline(mf, line)) {
    ++lines;
    CHECK(line.find("\"task_id\":") != std::string::npos);
    CHECK(line.find("\"length\":") != std::string::npos);
    CHECK(line.find("\"seed\":99") != std::string::npos);
  }
  CHECK(lines == 4);
}

TEST_CASE("demos_of filters by task") {
  EnvParams p = params();
  DemoFile demos;
  demos.env = p;
  RngStream rng(9, StreamId::DataGen);
  for (int id : {1, 2}) {
    auto t = generate_demos(task_from_id(id, p), 3, rng, p);
    for (auto& d : t) demos.trajectories.push_back(std::move(d));
  }
  CHECK(demos.demos_of(1).size() == 3);
  CHECK(demos.demos_of(2).size() == 3);
  CHECK(demos.demos_of(3).empty());
}

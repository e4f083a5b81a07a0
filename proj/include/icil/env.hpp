#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icil/rng.hpp"
#include "icil/tensor.hpp"

namespace icil::env {

using num::RngStream;
using num::Tensor;

// Point-reach-and-place world on the unit arena. One object per type; the
// task is "carry object of type c into zone z".
struct EnvParams {
  int k_obj = 4;
  int k_zone = 4;
  double v_max = 0.02;
  double pickup_radius = 0.05;
  double success_radius = 0.08;
  double grasp_dist = 0.02;       // expert closes the gripper inside this
  double release_dist = 0.04;     // expert opens inside this
  double expert_gain = 0.5;
  // Velocity exploration noise during demo generation, as a fraction of
  // v_max. The controller corrects the perturbations, so demonstrations
  // cover recovery behavior the way human teleoperation does; the recorded
  // actions are the executed (noisy) ones and still replay to success.
  double expert_action_noise = 0.5;
  int demo_len_min = 40;
  int demo_len_max = 80;
  int episode_cap = 200;

  int64_t n_tasks() const { return int64_t(k_obj) * k_zone; }
  int64_t obs_dim() const { return 3 + 2 * int64_t(k_obj) + 2 * int64_t(k_zone); }
};

constexpr int64_t kActDim = 3;  // velocity x/y + gripper command

struct TaskSpec {
  int task_id = 0;
  int object_type = 0;
  int target_zone = 0;
  std::string suite = "point-reach";
};

TaskSpec task_from_id(int task_id, const EnvParams& p);

struct EnvState {
  std::array<double, 2> agent{0.5, 0.5};
  bool gripper_closed = false;
  std::vector<std::array<double, 2>> objects;  // indexed by object type
  std::vector<std::array<double, 2>> zones;    // indexed by zone id
  int object_held = -1;
  int step_count = 0;
};

// Deterministic transition: clipped velocity move, gripper command > 0
// closes (attaching the nearest object inside pickup_radius), <= 0 opens
// (releasing anything held). Held objects track the agent.
EnvState env_step(const EnvState& s, const double* action, const EnvParams& p);

// True iff the task's object sits within success_radius of the task's zone
// and the gripper is open.
bool check_success(const EnvState& s, const TaskSpec& task, const EnvParams& p);

// Initial layout: objects spawn outside every zone, mutually separated.
EnvState sample_layout(RngStream& rng, const EnvParams& p);

// Scripted proportional-controller expert; pure function of the state.
void expert_action(const EnvState& s, const TaskSpec& task, const EnvParams& p,
                   double* action_out);

// Canonical (slot i = type i) observation layout:
// [agent(2), gripper(1), object_pos(2*k_obj), zone_pos(2*k_zone)].
void write_observation(const EnvState& s, const EnvParams& p, double* out);

struct Trajectory {
  Tensor observations;  // (T, obs_dim)
  Tensor actions;       // (T, act_dim)
  int task_id = 0;
  int64_t length() const { return observations.data ? observations.dim(0) : 0; }
};

struct GenAudit {
  int resampled_layouts = 0;
  int delivered = 0;
};

// Expert demonstrations with randomized layouts; lengths land inside
// [demo_len_min, demo_len_max] (out-of-band layouts are resampled and
// counted). Every delivered trajectory satisfies check_success.
std::vector<Trajectory> generate_demos(const TaskSpec& task, int n,
                                       RngStream& rng, const EnvParams& p,
                                       GenAudit* audit = nullptr);

// Repeats each observation (and action, to keep packed supervision aligned)
// alpha times. Test-time prompts only.
Trajectory dilate_trajectory(const Trajectory& traj, int alpha);

// Per-context remapping of object types / zones onto observation slots. The
// same permutation must cover every trajectory in a packed context plus the
// rollout episode, so task identity is only decodable from demonstrations.
struct SlotPermutation {
  std::vector<int> obj_slot_of_type;
  std::vector<int> zone_slot_of_zone;
};

SlotPermutation identity_permutation(const EnvParams& p);
SlotPermutation random_permutation(RngStream& rng, const EnvParams& p);

// Canonical observations -> permuted observations.
Tensor permute_observations(const Tensor& obs, const SlotPermutation& perm,
                            const EnvParams& p);
void permute_observation_row(const double* in, const SlotPermutation& perm,
                             const EnvParams& p, double* out);

// ---- demo container ----

struct DemoFile {
  EnvParams env;
  std::vector<int> train_tasks;
  std::vector<int> test_tasks;
  std::vector<Trajectory> trajectories;  // grouped by task, generation order
  uint64_t seed = 0;

  std::vector<const Trajectory*> demos_of(int task_id) const;
};

void save_demos(const std::string& path, const DemoFile& demos);
DemoFile load_demos(const std::string& path);
// JSON-lines manifest: one record per trajectory (task_id, length, seed).
void write_manifest(const std::string& path, const DemoFile& demos);

}  // namespace icil::env

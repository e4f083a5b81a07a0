#pragma once

#include <map>
#include <string>
#include <vector>

#include "icil/tensor.hpp"

namespace icil::num {

struct ParamEntry {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
};

// Named parameter set. Iteration order is the map's lexicographic key order,
// which keeps optimizer sweeps and checkpoint layout deterministic.
class ParamStore {
 public:
  Tensor& create(const std::string& name, const Shape& shape);
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  Tensor& value(const std::string& name) { return entry(name).value; }

  void zero_grads();
  double grad_global_norm() const;
  // Scales all gradients so the global norm is at most max_norm.
  void clip_grad_global_norm(double max_norm);

  size_t size() const { return entries_.size(); }
  int64_t param_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, ParamEntry> entries_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled-weight-decay Adam step; t is 1-based. Gradients are zeroed after
// the update.
void adamw_step(ParamStore& params, const AdamWConfig& cfg, int64_t t);

// lr(t) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi t / T)); t > T clamps to
// lr_min (with a one-line warning on stderr).
double cosine_lr(int64_t t, int64_t total_steps, double lr_max, double lr_min);

// Binds ParamStore values to a tape as leaves and harvests gradients after
// backward(). One instance per forward graph.
class BoundParams {
 public:
  Tensor use(Tape& tape, ParamStore& store, const std::string& name);
  // Adds tape gradients into store.grad for every bound parameter.
  void harvest(const Tape& tape, double scale = 1.0);

 private:
  struct Binding {
    ParamEntry* entry;
    int node;
  };
  std::vector<Binding> bindings_;
  std::map<std::string, size_t> by_name_;
};

}  // namespace icil::num

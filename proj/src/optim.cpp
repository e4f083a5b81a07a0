#include "icil/optim.hpp"

#include <cmath>
#include <iostream>

namespace icil::num {

Tensor& ParamStore::create(const std::string& name, const Shape& shape) {
  if (entries_.count(name))
    throw std::logic_error("ParamStore: duplicate parameter '" + name + "'");
  ParamEntry e;
  e.value = Tensor::zeros(shape);
  e.grad = Tensor::zeros(shape);
  e.adam_m = Tensor::zeros(shape);
  e.adam_v = Tensor::zeros(shape);
  return entries_.emplace(name, std::move(e)).first->second.value;
}

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::logic_error("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::logic_error("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, e] : entries_)
    for (auto& g : *e.grad.data) g = 0.0;
}

double ParamStore::grad_global_norm() const {
  double ss = 0;
  for (const auto& [name, e] : entries_)
    for (double g : *e.grad.data) ss += g * g;
  return std::sqrt(ss);
}

void ParamStore::clip_grad_global_norm(double max_norm) {
  double norm = grad_global_norm();
  if (norm <= max_norm || norm == 0.0) return;
  double s = max_norm / norm;
  for (auto& [name, e] : entries_)
    for (auto& g : *e.grad.data) g *= s;
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.numel();
  return n;
}

void adamw_step(ParamStore& params, const AdamWConfig& cfg, int64_t t) {
  if (cfg.lr <= 0) throw config_error("adamw_step: lr must be positive");
  if (t < 1) throw std::logic_error("adamw_step: t is 1-based");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (auto& [name, e] : params) {
    const int64_t n = e.value.numel();
    double* th = e.value.ptr();
    double* g = e.grad.ptr();
    double* m = e.adam_m.ptr();
    double* v = e.adam_v.ptr();
    for (int64_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      th[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                         cfg.weight_decay * th[i]);
      g[i] = 0.0;
    }
  }
}

double cosine_lr(int64_t t, int64_t total_steps, double lr_max, double lr_min) {
  if (total_steps <= 0) throw config_error("cosine_lr: total_steps must be > 0");
  if (t < 0) throw config_error("cosine_lr: negative step");
  if (t > total_steps) {
    std::cerr << "[cosine_lr] step " << t << " beyond horizon " << total_steps
              << ", clamping to lr_min\n";
    return lr_min;
  }
  double c = std::cos(M_PI * double(t) / double(total_steps));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + c);
}

Tensor BoundParams::use(Tape& tape, ParamStore& store,
                        const std::string& name) {
  auto it = by_name_.find(name);
  if (it != by_name_.end()) {
    const Binding& b = bindings_[it->second];
    Tensor v = b.entry->value;
    v.node = b.node;
    return v;
  }
  ParamEntry& e = store.entry(name);
  Tensor v = tape.watch(e.value);
  by_name_[name] = bindings_.size();
  bindings_.push_back(Binding{&e, v.node});
  return v;
}

void BoundParams::harvest(const Tape& tape, double scale) {
  for (const Binding& b : bindings_) {
    if (!tape.grad_reached(b.node)) continue;
    Tensor tracked = b.entry->value;
    tracked.node = b.node;
    Tensor g = tape.grad(tracked);
    double* dst = b.entry->grad.ptr();
    const double* src = g.ptr();
    const int64_t n = b.entry->grad.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += scale * src[i];
  }
}

}  // namespace icil::num

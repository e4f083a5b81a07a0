#include "icil/longhorn.hpp"

#include <cmath>

#include "icil/parallel.hpp"

namespace icil::longhorn {

std::atomic<uint64_t> gate_range_violations{0};

Tensor compute_epsilon(const Tensor& beta, const Tensor& k) {
  const int64_t d = beta.numel(), m = k.numel();
  Tensor eps({d});
  double kk = num::dot(k.ptr(), k.ptr(), m);
  for (int64_t i = 0; i < d; ++i) eps[i] = beta[i] / (1.0 + beta[i] * kk);
  return eps;
}

void recurrence_step_inplace(Tensor& s, const double* x, const double* k,
                             const double* q, const double* beta, int64_t d,
                             int64_t m, double* r_out) {
  double kk = num::dot(k, k, m);
  double* sp = s.ptr();
  bool violated = false;
  for (int64_t i = 0; i < d; ++i) {
    double eps = beta[i] / (1.0 + beta[i] * kk);
    double ex = eps * x[i];
    double* row = sp + i * m;
    for (int64_t j = 0; j < m; ++j) {
      double ek2 = eps * k[j] * k[j];
      if (ek2 > 1.0) violated = true;
      row[j] = row[j] * (1.0 - ek2) + ex * k[j];
    }
    if (r_out) r_out[i] = num::dot(row, q, m);
  }
  if (violated) gate_range_violations.fetch_add(1, std::memory_order_relaxed);
}

std::pair<LonghornState, Tensor> longhorn_step(const LonghornState& s_prev,
                                               const StepInputs& in) {
  const int64_t d = in.x.numel(), m = in.k.numel();
  if (s_prev.s.shape != Shape{d, m})
    throw std::logic_error("longhorn_step: state/input shape mismatch");
  if (in.q.numel() != m || in.beta.numel() != d)
    throw std::logic_error("longhorn_step: input shape mismatch");
  LonghornState s{s_prev.s.clone()};
  Tensor r({d});
  recurrence_step_inplace(s.s, in.x.ptr(), in.k.ptr(), in.q.ptr(),
                          in.beta.ptr(), d, m, r.ptr());
  return {std::move(s), std::move(r)};
}

Tensor argmin_oracle(const Tensor& s_prev, const Tensor& x, const Tensor& k,
                     const Tensor& beta) {
  const int64_t d = x.numel(), m = k.numel();
  Tensor eps = compute_epsilon(beta, k);
  Tensor s({d, m});
  for (int64_t i = 0; i < d; ++i) {
    const double* prow = s_prev.ptr() + i * m;
    double* row = s.ptr() + i * m;
    double kts = num::dot(k.ptr(), prow, m);
    for (int64_t j = 0; j < m; ++j)
      row[j] = prow[j] - eps[i] * kts * k[j] + eps[i] * x[i] * k[j];
  }
  return s;
}

ScanElement combine(const ScanElement& first, const ScanElement& second) {
  const int64_t n = first.a.numel();
  ScanElement out{Tensor(first.a.shape), Tensor(first.b.shape)};
  for (int64_t i = 0; i < n; ++i) {
    out.a[i] = first.a[i] * second.a[i];
    out.b[i] = second.a[i] * first.b[i] + second.b[i];
  }
  return out;
}

std::vector<Tensor> scan_sequential(const std::vector<ScanElement>& elems,
                                    const Tensor& s0) {
  std::vector<Tensor> states;
  states.reserve(elems.size());
  Tensor s = s0.clone();
  const int64_t n = s0.numel();
  for (const auto& e : elems) {
    for (int64_t i = 0; i < n; ++i) s[i] = e.a[i] * s[i] + e.b[i];
    states.push_back(s.clone());
  }
  return states;
}

namespace {

// Three-pass chunked scan over contiguous (T, n) gate/injection arrays.
// Chunk boundaries depend only on (T, chunk); workers only split chunk loops.
void scan_chunked_raw(const double* A, const double* B, const double* s0,
                      int64_t T, int64_t n, int64_t chunk, int workers,
                      double* S) {
  if (chunk < 1) throw std::logic_error("scan_chunked: chunk_size < 1");
  const int64_t n_chunks = (T + chunk - 1) / chunk;

  // Pass 1: per-chunk aggregate elements (Ag, Bg).
  std::vector<double> Ag(size_t(n_chunks * n)), Bg(size_t(n_chunks * n));
  num::parallel_ranges(n_chunks, workers, [&](int64_t cb, int64_t ce) {
    for (int64_t c = cb; c < ce; ++c) {
      double* ag = Ag.data() + c * n;
      double* bg = Bg.data() + c * n;
      for (int64_t i = 0; i < n; ++i) {
        ag[i] = 1.0;
        bg[i] = 0.0;
      }
      const int64_t b = c * chunk, e = std::min(T, b + chunk);
      for (int64_t t = b; t < e; ++t) {
        const double* at = A + t * n;
        const double* bt = B + t * n;
        for (int64_t i = 0; i < n; ++i) {
          ag[i] *= at[i];
          bg[i] = at[i] * bg[i] + bt[i];
        }
      }
    }
  });

  // Pass 2: sequential carry across chunk aggregates.
  std::vector<double> carry(size_t((n_chunks + 1) * n));
  for (int64_t i = 0; i < n; ++i) carry[size_t(i)] = s0[i];
  for (int64_t c = 0; c < n_chunks; ++c) {
    const double* in = carry.data() + c * n;
    const double* ag = Ag.data() + c * n;
    const double* bg = Bg.data() + c * n;
    double* out = carry.data() + (c + 1) * n;
    for (int64_t i = 0; i < n; ++i) out[i] = ag[i] * in[i] + bg[i];
  }

  // Pass 3: replay each chunk from its carry-in.
  num::parallel_ranges(n_chunks, workers, [&](int64_t cb, int64_t ce) {
    std::vector<double> s(size_t(n), 0.0);
    for (int64_t c = cb; c < ce; ++c) {
      const double* in = carry.data() + c * n;
      for (int64_t i = 0; i < n; ++i) s[size_t(i)] = in[i];
      const int64_t b = c * chunk, e = std::min(T, b + chunk);
      for (int64_t t = b; t < e; ++t) {
        const double* at = A + t * n;
        const double* bt = B + t * n;
        double* st = S + t * n;
        for (int64_t i = 0; i < n; ++i) {
          s[size_t(i)] = at[i] * s[size_t(i)] + bt[i];
          st[i] = s[size_t(i)];
        }
      }
    }
  });
}

}  // namespace

std::vector<Tensor> scan_chunked(const std::vector<ScanElement>& elems,
                                 const Tensor& s0, int64_t chunk_size,
                                 int workers) {
  const int64_t T = int64_t(elems.size());
  std::vector<Tensor> states;
  if (T == 0) return states;
  const int64_t n = s0.numel();
  std::vector<double> A(size_t(T * n)), B(size_t(T * n)), S(size_t(T * n));
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t i = 0; i < n; ++i) {
      A[size_t(t * n + i)] = elems[size_t(t)].a[i];
      B[size_t(t * n + i)] = elems[size_t(t)].b[i];
    }
  }
  scan_chunked_raw(A.data(), B.data(), s0.ptr(), T, n, chunk_size, workers,
                   S.data());
  states.reserve(size_t(T));
  for (int64_t t = 0; t < T; ++t) {
    Tensor s(s0.shape);
    for (int64_t i = 0; i < n; ++i) s[i] = S[size_t(t * n + i)];
    states.push_back(std::move(s));
  }
  return states;
}

Tensor apply_beta_scale(const Tensor& beta, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw num::config_error("apply_beta_scale: gamma must lie in (0, 1]");
  Tensor out(beta.shape);
  for (int64_t i = 0; i < beta.numel(); ++i) out[i] = gamma * beta[i];
  return out;
}

Tensor longhorn_recurrence_seq(Tape* tape, const Tensor& X, const Tensor& K,
                               const Tensor& Q, const Tensor& Beta,
                               const Tensor& s0, int64_t chunk_size,
                               Tensor* final_state) {
  const int64_t T = X.dim(0), d = X.dim(1), m = K.dim(1);
  if (K.dim(0) != T || Q.dim(0) != T || Beta.dim(0) != T || Q.dim(1) != m ||
      Beta.dim(1) != d)
    throw std::logic_error("longhorn_recurrence_seq: shape mismatch");
  if (s0.shape != Shape{d, m})
    throw std::logic_error("longhorn_recurrence_seq: bad s0");
  const int64_t n = d * m;

  // Gates and effective learning rates.
  Tensor eps({T, d});
  for (int64_t t = 0; t < T; ++t) {
    const double* kt = K.ptr() + t * m;
    double kk = num::dot(kt, kt, m);
    const double* bt = Beta.ptr() + t * d;
    double* et = eps.ptr() + t * d;
    for (int64_t i = 0; i < d; ++i) et[i] = bt[i] / (1.0 + bt[i] * kk);
  }

  Tensor S({T, n});
  {
    std::vector<double> A(size_t(T * n)), B(size_t(T * n));
    bool violated = false;
    for (int64_t t = 0; t < T; ++t) {
      const double* kt = K.ptr() + t * m;
      const double* xt = X.ptr() + t * d;
      const double* et = eps.ptr() + t * d;
      double* at = A.data() + t * n;
      double* bt = B.data() + t * n;
      for (int64_t i = 0; i < d; ++i) {
        double ex = et[i] * xt[i];
        for (int64_t j = 0; j < m; ++j) {
          double ek2 = et[i] * kt[j] * kt[j];
          if (ek2 > 1.0) violated = true;
          at[i * m + j] = 1.0 - ek2;
          bt[i * m + j] = ex * kt[j];
        }
      }
    }
    if (violated)
      gate_range_violations.fetch_add(1, std::memory_order_relaxed);
    scan_chunked_raw(A.data(), B.data(), s0.ptr(), T, n, chunk_size, 1,
                     S.ptr());
  }

  Tensor R({T, d});
  for (int64_t t = 0; t < T; ++t) {
    const double* st = S.ptr() + t * n;
    const double* qt = Q.ptr() + t * m;
    double* rt = R.ptr() + t * d;
    for (int64_t i = 0; i < d; ++i) rt[i] = num::dot(st + i * m, qt, m);
  }
  num::check_finite(R, "longhorn_recurrence_seq");
  if (final_state) {
    Tensor fs({d, m});
    const double* last = S.ptr() + (T - 1) * n;
    for (int64_t i = 0; i < n; ++i) fs[i] = last[i];
    *final_state = std::move(fs);
  }

  bool track = X.node >= 0 || K.node >= 0 || Q.node >= 0 || Beta.node >= 0;
  if (tape && track) {
    Tensor Xv = X, Kv = K, Qv = Q, Bv = Beta, Sv = S, ev = eps, s0v = s0;
    R.node = tape->push(
        R.shape,
        [Xv, Kv, Qv, Bv, Sv, ev, s0v, T, d, m, n](Tape& tp, const Tensor& gR) {
          Tensor gX({T, d}), gK({T, m}), gQ({T, m}), gB({T, d});
          std::vector<double> gS(size_t(n), 0.0);
          for (int64_t t = T - 1; t >= 0; --t) {
            const double* st = Sv.ptr() + t * n;
            const double* sprev = t > 0 ? Sv.ptr() + (t - 1) * n : s0v.ptr();
            const double* xt = Xv.ptr() + t * d;
            const double* kt = Kv.ptr() + t * m;
            const double* qt = Qv.ptr() + t * m;
            const double* bt = Bv.ptr() + t * d;
            const double* et = ev.ptr() + t * d;
            const double* grt = gR.ptr() + t * d;
            double* gqt = gQ.ptr() + t * m;
            double* gxt = gX.ptr() + t * d;
            double* gkt = gK.ptr() + t * m;
            double* gbt = gB.ptr() + t * d;

            double kk = num::dot(kt, kt, m);
            double gkk = 0.0;
            for (int64_t i = 0; i < d; ++i) {
              const double* si = st + i * m;
              const double* pi = sprev + i * m;
              double* gsi = gS.data() + i * m;
              double gr = grt[i];
              // readout r_t = s_t q_t
              for (int64_t j = 0; j < m; ++j) {
                gsi[j] += gr * qt[j];
                gqt[j] += gr * si[j];
              }
              // update s_t = s_prev (1 - eps k^2) + eps x k
              double e = et[i];
              double geps = 0.0, gx = 0.0;
              for (int64_t j = 0; j < m; ++j) {
                double g = gsi[j];
                geps += g * (xt[i] * kt[j] - pi[j] * kt[j] * kt[j]);
                gx += g * kt[j];
                gkt[j] += g * e * (xt[i] - 2.0 * kt[j] * pi[j]);
                gsi[j] = g * (1.0 - e * kt[j] * kt[j]);  // flows to s_{t-1}
              }
              gxt[i] = e * gx;
              // eps_i = beta_i / (1 + beta_i kk)
              double denom = 1.0 + bt[i] * kk;
              double inv2 = 1.0 / (denom * denom);
              gbt[i] = geps * inv2;
              gkk -= geps * bt[i] * bt[i] * inv2;
            }
            for (int64_t j = 0; j < m; ++j) gkt[j] += 2.0 * kt[j] * gkk;
          }
          tp.accumulate(Xv.node, gX.ptr(), gX.numel());
          tp.accumulate(Kv.node, gK.ptr(), gK.numel());
          tp.accumulate(Qv.node, gQ.ptr(), gQ.numel());
          tp.accumulate(Bv.node, gB.ptr(), gB.numel());
        },
        "longhorn_recurrence_seq");
  }
  return R;
}

void LonghornNet::init_params(ParamStore& store, num::RngStream& rng) const {
  const int64_t dm = cfg_.d_model, d = cfg_.layer.d, m = cfg_.layer.m;
  for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
    std::string p = "blocks." + std::to_string(b);
    nets::init_gain(store, p + ".norm1.g", dm);
    nets::init_linear(store, rng, p + ".mixer.wx", d, dm);
    nets::init_linear(store, rng, p + ".mixer.wk", m, dm);
    nets::init_linear(store, rng, p + ".mixer.wq", m, dm);
    nets::init_linear(store, rng, p + ".mixer.wb", d, dm);
    nets::init_linear(store, rng, p + ".mixer.wo", dm, d);
    nets::init_gain(store, p + ".norm2.g", dm);
    nets::init_ffn(store, rng, p + ".ffn", dm, cfg_.layer.ffn_expansion);
  }
}

int64_t LonghornNet::param_count_formula() const {
  const int64_t dm = cfg_.d_model, d = cfg_.layer.d, m = cfg_.layer.m;
  int64_t mixer = nets::linear_param_count(d, dm)      // value proj
                  + 2 * nets::linear_param_count(m, dm)  // key, query
                  + nets::linear_param_count(d, dm)      // beta proj
                  + nets::linear_param_count(dm, d);     // readout proj
  int64_t per_block =
      mixer + nets::ffn_param_count(dm, cfg_.layer.ffn_expansion) + 2 * dm;
  return cfg_.n_blocks * per_block;
}

std::vector<LonghornState> LonghornNet::make_state() const {
  std::vector<LonghornState> s;
  for (int64_t b = 0; b < cfg_.n_blocks; ++b)
    s.push_back(LonghornState::zeros(cfg_.layer.d, cfg_.layer.m));
  return s;
}

Tensor LonghornNet::forward_seq(nets::ParamView pv, const Tensor& X,
                                std::vector<LonghornState>* states,
                                double gamma,
                                Tensor* readout_latents) const {
  if (pv.training() && gamma != 1.0)
    throw std::logic_error("beta scaling is inference-only");
  const int64_t d = cfg_.layer.d, m = cfg_.layer.m;
  Tensor h = X;
  for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
    std::string p = "blocks." + std::to_string(b);
    Tensor* cap =
        (readout_latents && b == cfg_.n_blocks - 1) ? readout_latents : nullptr;
    h = nets::block_forward(pv, p, h, [&](const Tensor& u) {
      Tensor x = nets::apply_linear(pv, p + ".mixer.wx", u);
      Tensor k = nets::apply_linear(pv, p + ".mixer.wk", u);
      Tensor q = nets::apply_linear(pv, p + ".mixer.wq", u);
      Tensor beta = num::sigmoid(pv.tape, nets::apply_linear(pv, p + ".mixer.wb", u));
      if (gamma != 1.0) beta = num::scale(pv.tape, beta, gamma);
      Tensor s0 = states ? (*states)[size_t(b)].s : Tensor::zeros({d, m});
      Tensor final_state;
      Tensor r = longhorn_recurrence_seq(pv.tape, x, k, q, beta, s0,
                                         cfg_.chunk_size,
                                         states ? &final_state : nullptr);
      if (states) (*states)[size_t(b)].s = final_state;
      if (cap) *cap = r;
      return nets::apply_linear(pv, p + ".mixer.wo", r);
    });
  }
  return h;
}

Tensor LonghornNet::step(ParamStore& store, const Tensor& x,
                         std::vector<LonghornState>& states, double gamma,
                         Tensor* readout_latent) const {
  nets::ParamView pv{&store, nullptr, nullptr};
  const int64_t d = cfg_.layer.d, m = cfg_.layer.m;
  Tensor h = x;
  for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
    std::string p = "blocks." + std::to_string(b);
    Tensor* cap =
        (readout_latent && b == cfg_.n_blocks - 1) ? readout_latent : nullptr;
    h = nets::block_forward(pv, p, h, [&](const Tensor& u) {
      Tensor xt = nets::apply_linear(pv, p + ".mixer.wx", u);
      Tensor kt = nets::apply_linear(pv, p + ".mixer.wk", u);
      Tensor qt = nets::apply_linear(pv, p + ".mixer.wq", u);
      Tensor beta = num::sigmoid(nullptr, nets::apply_linear(pv, p + ".mixer.wb", u));
      if (gamma != 1.0) beta = apply_beta_scale(beta, gamma);
      Tensor r({1, d});
      recurrence_step_inplace(states[size_t(b)].s, xt.ptr(), kt.ptr(),
                              qt.ptr(), beta.ptr(), d, m, r.ptr());
      if (cap) *cap = r;
      return nets::apply_linear(pv, p + ".mixer.wo", r);
    });
  }
  return h;
}

}  // namespace icil::longhorn

#include "icil/attention.hpp"

#include <cmath>

namespace icil::attn {

void AttentionConfig::validate() const {
  if (d_model % n_heads != 0)
    throw num::config_error("attention: d_model must be divisible by n_heads");
  if (n_blocks < 1 || n_heads < 1)
    throw num::config_error("attention: blocks/heads must be positive");
}

void rope_rotate(double* head_row, int64_t head_dim, int64_t pos, double base,
                 bool inverse) {
  for (int64_t i = 0; i + 1 < head_dim; i += 2) {
    double freq = std::pow(base, -double(i) / double(head_dim));
    double angle = double(pos) * freq;
    if (inverse) angle = -angle;
    double c = std::cos(angle), s = std::sin(angle);
    double a = head_row[i], b = head_row[i + 1];
    head_row[i] = a * c - b * s;
    head_row[i + 1] = a * s + b * c;
  }
}

namespace {

// Softmax attention of one query row against rows [0, len) of K/V blocks
// laid out with stride `stride` (shared by prefill, decode and training so
// every path produces bit-identical outputs).
void attend_row(const double* q, const double* K, const double* V,
                int64_t len, int64_t stride, int64_t dh, double inv_sqrt_dh,
                double* out, double* scratch, double* probs_out) {
  for (int64_t j = 0; j < len; ++j)
    scratch[j] = num::dot(q, K + j * stride, dh) * inv_sqrt_dh;
  double mx = scratch[0];
  for (int64_t j = 1; j < len; ++j) mx = std::max(mx, scratch[j]);
  double denom = 0;
  for (int64_t j = 0; j < len; ++j) {
    scratch[j] = std::exp(scratch[j] - mx);
    denom += scratch[j];
  }
  double inv = 1.0 / denom;
  for (int64_t i = 0; i < dh; ++i) out[i] = 0.0;
  for (int64_t j = 0; j < len; ++j) {
    double p = scratch[j] * inv;
    if (probs_out) probs_out[j] = p;
    const double* vj = V + j * stride;
    for (int64_t i = 0; i < dh; ++i) out[i] += p * vj[i];
  }
}

}  // namespace

Tensor attention_causal_seq(Tape* tape, const Tensor& qp, const Tensor& kp,
                            const Tensor& vp, const AttentionConfig& cfg,
                            int64_t pos_offset) {
  const int64_t T = qp.dim(0), dm = cfg.d_model, H = cfg.n_heads,
                dh = cfg.head_dim();
  if (qp.shape != kp.shape || qp.shape != vp.shape || qp.dim(1) != dm)
    throw std::logic_error("attention_causal_seq: shape mismatch");
  const double isd = 1.0 / std::sqrt(double(dh));

  // Rotated queries/keys, same row layout as the inputs.
  Tensor Qr = qp.clone(), Kr = kp.clone();
  if (cfg.rotary) {
    for (int64_t t = 0; t < T; ++t)
      for (int64_t h = 0; h < H; ++h) {
        rope_rotate(Qr.ptr() + t * dm + h * dh, dh, pos_offset + t,
                    cfg.rope_base);
        rope_rotate(Kr.ptr() + t * dm + h * dh, dh, pos_offset + t,
                    cfg.rope_base);
      }
  }

  const bool track =
      tape && (qp.node >= 0 || kp.node >= 0 || vp.node >= 0);
  // Probabilities are only materialized when a backward pass will need them.
  Tensor P;
  if (track) P = Tensor::zeros({H, T, T});

  Tensor Y({T, dm});
  std::vector<double> scratch(size_t(T), 0.0);
  for (int64_t t = 0; t < T; ++t)
    for (int64_t h = 0; h < H; ++h) {
      double* probs_row = track ? P.ptr() + (h * T + t) * T : nullptr;
      attend_row(Qr.ptr() + t * dm + h * dh, Kr.ptr() + h * dh,
                 vp.ptr() + h * dh, t + 1, dm, dh, isd,
                 Y.ptr() + t * dm + h * dh, scratch.data(), probs_row);
    }
  num::check_finite(Y, "attention_causal_seq");

  if (track) {
    Tensor qv = qp, kv = kp, vv = vp, Qrv = Qr, Krv = Kr, Pv = P;
    AttentionConfig c = cfg;
    Y.node = tape->push(
        Y.shape,
        [qv, kv, vv, Qrv, Krv, Pv, c, T, dm, H, dh, isd,
         pos_offset](Tape& tp, const Tensor& gY) {
          Tensor gq({T, dm}), gk({T, dm}), gv({T, dm});
          std::vector<double> gP(size_t(T), 0.0), gS(size_t(T), 0.0);
          for (int64_t h = 0; h < H; ++h) {
            const double* Ph = Pv.ptr() + h * T * T;
            for (int64_t t = 0; t < T; ++t) {
              const double* prow = Ph + t * T;
              const double* go = gY.ptr() + t * dm + h * dh;
              // dV and dP
              double dot_pg = 0;
              for (int64_t j = 0; j <= t; ++j) {
                const double* vj = vv.ptr() + j * dm + h * dh;
                gP[size_t(j)] = num::dot(go, vj, dh);
                dot_pg += prow[j] * gP[size_t(j)];
                double* gvj = gv.ptr() + j * dm + h * dh;
                double p = prow[j];
                for (int64_t i = 0; i < dh; ++i) gvj[i] += p * go[i];
              }
              // softmax backward, then scores -> q,k
              double* gqt = gq.ptr() + t * dm + h * dh;
              for (int64_t j = 0; j <= t; ++j) {
                gS[size_t(j)] = prow[j] * (gP[size_t(j)] - dot_pg);
                double g = gS[size_t(j)] * isd;
                if (g == 0.0) continue;
                const double* kj = Krv.ptr() + j * dm + h * dh;
                const double* qt = Qrv.ptr() + t * dm + h * dh;
                double* gkj = gk.ptr() + j * dm + h * dh;
                for (int64_t i = 0; i < dh; ++i) {
                  gqt[i] += g * kj[i];
                  gkj[i] += g * qt[i];
                }
              }
            }
          }
          // Undo the rotation on the gradients (rotation is orthogonal).
          if (c.rotary) {
            for (int64_t t = 0; t < T; ++t)
              for (int64_t h = 0; h < H; ++h) {
                rope_rotate(gq.ptr() + t * dm + h * dh, dh, pos_offset + t,
                            c.rope_base, /*inverse=*/true);
                rope_rotate(gk.ptr() + t * dm + h * dh, dh, pos_offset + t,
                            c.rope_base, /*inverse=*/true);
              }
          }
          tp.accumulate(qv.node, gq.ptr(), gq.numel());
          tp.accumulate(kv.node, gk.ptr(), gk.numel());
          tp.accumulate(vv.node, gv.ptr(), gv.numel());
        },
        "attention_causal_seq");
  }
  return Y;
}

void AttentionNet::init_params(ParamStore& store, RngStream& rng) const {
  const int64_t dm = cfg_.d_model;
  for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
    std::string p = "blocks." + std::to_string(b);
    nets::init_gain(store, p + ".norm1.g", dm);
    nets::init_linear(store, rng, p + ".mixer.wq", dm, dm);
    nets::init_linear(store, rng, p + ".mixer.wk", dm, dm);
    nets::init_linear(store, rng, p + ".mixer.wv", dm, dm);
    nets::init_linear(store, rng, p + ".mixer.wo", dm, dm);
    nets::init_gain(store, p + ".norm2.g", dm);
    nets::init_ffn(store, rng, p + ".ffn", dm, cfg_.ffn_expansion);
  }
}

int64_t AttentionNet::param_count_formula() const {
  const int64_t dm = cfg_.d_model;
  int64_t per_block = 4 * nets::linear_param_count(dm, dm) +
                      nets::ffn_param_count(dm, cfg_.ffn_expansion) + 2 * dm;
  return cfg_.n_blocks * per_block;
}

Tensor AttentionNet::forward_seq(ParamView pv, const Tensor& X, KVCache* cache,
                                 Tensor* ffn_latents) const {
  if (cache && cache->len != 0)
    throw std::logic_error("attention prefill requires an empty cache");
  const int64_t T = X.dim(0), dm = cfg_.d_model, H = cfg_.n_heads,
                dh = cfg_.head_dim();
  Tensor h = X;
  for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
    std::string p = "blocks." + std::to_string(b);
    Tensor* cap = (ffn_latents && b == cfg_.n_blocks - 1) ? ffn_latents : nullptr;
    h = nets::block_forward(
        pv, p, h,
        [&](const Tensor& u) {
          Tensor qp = nets::apply_linear(pv, p + ".mixer.wq", u);
          Tensor kp = nets::apply_linear(pv, p + ".mixer.wk", u);
          Tensor vp = nets::apply_linear(pv, p + ".mixer.wv", u);
          if (cache) {
            auto& kc = cache->k[size_t(b)];
            auto& vc = cache->v[size_t(b)];
            size_t base = kc.size();
            kc.resize(base + size_t(T * dm));
            vc.resize(base + size_t(T * dm));
            for (int64_t t = 0; t < T; ++t)
              for (int64_t i = 0; i < dm; ++i) {
                kc[base + size_t(t * dm + i)] = kp[t * dm + i];
                vc[base + size_t(t * dm + i)] = vp[t * dm + i];
              }
            if (cfg_.rotary)
              for (int64_t t = 0; t < T; ++t)
                for (int64_t hh = 0; hh < H; ++hh)
                  rope_rotate(kc.data() + base + size_t(t * dm + hh * dh), dh,
                              t, cfg_.rope_base);
          }
          Tensor att = attention_causal_seq(pv.tape, qp, kp, vp, cfg_, 0);
          return nets::apply_linear(pv, p + ".mixer.wo", att);
        },
        cap);
  }
  if (cache) cache->len += T;
  return h;
}

Tensor AttentionNet::decode(ParamStore& store, const Tensor& x, KVCache& cache,
                            Tensor* ffn_latent) const {
  const int64_t dm = cfg_.d_model, H = cfg_.n_heads, dh = cfg_.head_dim();
  const int64_t pos = cache.len;
  const double isd = 1.0 / std::sqrt(double(dh));
  ParamView pv{&store, nullptr, nullptr};
  Tensor h = x;  // (1, dm)
  for (int64_t b = 0; b < cfg_.n_blocks; ++b) {
    std::string p = "blocks." + std::to_string(b);
    Tensor* cap = (ffn_latent && b == cfg_.n_blocks - 1) ? ffn_latent : nullptr;
    h = nets::block_forward(
        pv, p, h,
        [&](const Tensor& u) {
          Tensor qp = nets::apply_linear(pv, p + ".mixer.wq", u);
          Tensor kp = nets::apply_linear(pv, p + ".mixer.wk", u);
          Tensor vp = nets::apply_linear(pv, p + ".mixer.wv", u);
          auto& kc = cache.k[size_t(b)];
          auto& vc = cache.v[size_t(b)];
          size_t base = kc.size();
          kc.resize(base + size_t(dm));
          vc.resize(base + size_t(dm));
          for (int64_t i = 0; i < dm; ++i) {
            kc[base + size_t(i)] = kp[i];
            vc[base + size_t(i)] = vp[i];
          }
          Tensor qr = qp.clone();
          if (cfg_.rotary)
            for (int64_t hh = 0; hh < H; ++hh) {
              rope_rotate(kc.data() + base + size_t(hh * dh), dh, pos,
                          cfg_.rope_base);
              rope_rotate(qr.ptr() + hh * dh, dh, pos, cfg_.rope_base);
            }
          Tensor att({1, dm});
          std::vector<double> scratch(size_t(pos + 1), 0.0);
          for (int64_t hh = 0; hh < H; ++hh)
            attend_row(qr.ptr() + hh * dh, kc.data() + hh * dh,
                       vc.data() + hh * dh, pos + 1, dm, dh, isd,
                       att.ptr() + hh * dh, scratch.data(), nullptr);
          num::check_finite(att, "attention_decode");
          return nets::apply_linear(pv, p + ".mixer.wo", att);
        },
        cap);
  }
  cache.len += 1;
  return h;
}

}  // namespace icil::attn

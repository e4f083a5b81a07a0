#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "icil/attention.hpp"
#include "icil/longhorn.hpp"
#include "testutil.hpp"

using namespace icil::attn;
using icil::num::ParamStore;
using icil::num::RngStream;
using icil::num::StreamId;
using icil::num::Tape;
using icil::num::Tensor;
using testutil::max_abs_diff;
using testutil::max_fd_rel_error;
using testutil::random_tensor;

namespace {

AttentionConfig small_cfg() {
  AttentionConfig c;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.d_model = 8;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  AttentionConfig c;
  c.d_model = 10;
  c.n_heads = 4;
  CHECK_THROWS_AS(c.validate(), icil::num::config_error);
}

TEST_CASE("rotary rotation is orthogonal and position-dependent") {
  RngStream rng(1, StreamId::Init);
  Tensor v = random_tensor(rng, {8});
  Tensor w = v.clone();
  rope_rotate(w.ptr(), 8, 17, 10000.0);
  double n0 = icil::num::dot(v.ptr(), v.ptr(), 8);
  double n1 = icil::num::dot(w.ptr(), w.ptr(), 8);
  CHECK(n1 == doctest::Approx(n0).epsilon(1e-12));
  rope_rotate(w.ptr(), 8, 17, 10000.0, /*inverse=*/true);
  CHECK(max_abs_diff(v, w) < 1e-12);

  Tensor a = v.clone(), b = v.clone();
  rope_rotate(a.ptr(), 8, 3, 10000.0);
  rope_rotate(b.ptr(), 8, 4, 10000.0);
  CHECK(max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("length-1 attention returns the value row") {
  AttentionConfig c = small_cfg();
  RngStream rng(2, StreamId::Init);
  Tensor q = random_tensor(rng, {1, 8});
  Tensor k = random_tensor(rng, {1, 8});
  Tensor v = random_tensor(rng, {1, 8});
  Tensor y = attention_causal_seq(nullptr, q, k, v, c, 0);
  CHECK(max_abs_diff(y, v) < 1e-14);  // softmax over one element is 1
}

TEST_CASE("softmax attention rows are convex combinations") {
  // Values all equal to 1 in one coordinate: output must be exactly 1 there
  // for every row, which pins row-stochasticity of the attention weights.
  AttentionConfig c = small_cfg();
  RngStream rng(3, StreamId::Init);
  const int64_t T = 13;
  Tensor q = random_tensor(rng, {T, 8});
  Tensor k = random_tensor(rng, {T, 8});
  Tensor v = Tensor::full({T, 8}, 1.0);
  Tensor y = attention_causal_seq(nullptr, q, k, v, c, 0);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(std::fabs(y[i] - 1.0) < 1e-12);
}

TEST_CASE("causality: perturbing a later token leaves earlier outputs bit-identical") {
  AttentionConfig c = small_cfg();
  RngStream rng(4, StreamId::Init);
  const int64_t T = 10, probe = 6;
  Tensor q = random_tensor(rng, {T, 8});
  Tensor k = random_tensor(rng, {T, 8});
  Tensor v = random_tensor(rng, {T, 8});
  Tensor y1 = attention_causal_seq(nullptr, q, k, v, c, 0);

  Tensor q2 = q.clone(), k2 = k.clone(), v2 = v.clone();
  for (int64_t i = 0; i < 8; ++i) {
    q2[probe * 8 + i] += 3.0;
    k2[probe * 8 + i] -= 2.0;
    v2[probe * 8 + i] *= -5.0;
  }
  Tensor y2 = attention_causal_seq(nullptr, q2, k2, v2, c, 0);
  for (int64_t t = 0; t < probe; ++t)
    for (int64_t i = 0; i < 8; ++i)
      CHECK(y1[t * 8 + i] == y2[t * 8 + i]);
}

TEST_CASE("prefill + decode equals prefill over the extended sequence") {
  AttentionConfig c = small_cfg();
  AttentionNet net(c);
  ParamStore ps;
  RngStream rng(5, StreamId::Init);
  net.init_params(ps, rng);

  RngStream drng(6, StreamId::Rollout);
  const int64_t T = 12;
  Tensor X = random_tensor(drng, {T, c.d_model});
  icil::nets::ParamView pv{&ps, nullptr, nullptr};

  // Reference: one full pass over all T tokens.
  Tensor full = net.forward_seq(pv, X, nullptr);

  // Prefill on the prefix, then decode token by token.
  const int64_t split = 5;
  Tensor prefix({split, c.d_model});
  for (int64_t i = 0; i < split * c.d_model; ++i) prefix[i] = X[i];
  KVCache cache = KVCache::make(c);
  Tensor pre = net.forward_seq(pv, prefix, &cache);
  for (int64_t i = 0; i < pre.numel(); ++i)
    CHECK(std::fabs(pre[i] - full[i]) < 1e-10);

  double worst = 0;
  for (int64_t t = split; t < T; ++t) {
    Tensor row({1, c.d_model});
    for (int64_t i = 0; i < c.d_model; ++i) row[i] = X[t * c.d_model + i];
    Tensor y = net.decode(ps, row, cache);
    for (int64_t i = 0; i < c.d_model; ++i)
      worst = std::max(worst, std::fabs(y[i] - full[t * c.d_model + i]));
  }
  CHECK(worst < 1e-10);
  CHECK(cache.len == T);

  // Decode from an empty cache equals a length-1 prefill.
  KVCache empty = KVCache::make(c);
  Tensor first({1, c.d_model});
  for (int64_t i = 0; i < c.d_model; ++i) first[i] = X[i];
  Tensor d0 = net.decode(ps, first, empty);
  KVCache fresh = KVCache::make(c);
  Tensor p0 = net.forward_seq(pv, first, &fresh);
  CHECK(max_abs_diff(d0, p0) < 1e-10);
}

TEST_CASE("gradcheck: attention op against finite differences") {
  AttentionConfig c;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.d_model = 6;
  RngStream rng(7, StreamId::Init);
  const int64_t T = 5;
  Tensor qv = random_tensor(rng, {T, 6});
  Tensor kv = random_tensor(rng, {T, 6});
  Tensor vv = random_tensor(rng, {T, 6});
  Tensor w = random_tensor(rng, {T, 6});

  auto run = [&](Tape* t, const Tensor& q, const Tensor& k, const Tensor& v) {
    Tensor y = attention_causal_seq(t, q, k, v, c, 2);
    return icil::num::sum(t, icil::num::mul(t, y, w));
  };
  Tape tape;
  Tensor q = tape.watch(qv), k = tape.watch(kv), v = tape.watch(vv);
  tape.backward(run(&tape, q, k, v));
  auto eval = [&]() { return run(nullptr, qv, kv, vv).item(); };
  CHECK(max_fd_rel_error(qv, tape.grad(q), eval) < 1e-4);
  CHECK(max_fd_rel_error(kv, tape.grad(k), eval) < 1e-4);
  CHECK(max_fd_rel_error(vv, tape.grad(v), eval) < 1e-4);
}

TEST_CASE("parameter budget within 10% of the longhorn stack") {
  AttentionConfig ac;
  ac.n_blocks = 4;
  ac.d_model = 64;
  ac.n_heads = 4;
  AttentionNet anet(ac);

  icil::longhorn::LonghornNetConfig lc;
  lc.n_blocks = 4;
  lc.d_model = 64;
  lc.layer.d = 64;
  lc.layer.m = 8;
  icil::longhorn::LonghornNet lnet(lc);

  ParamStore aps, lps;
  RngStream r1(8, StreamId::Init), r2(9, StreamId::Init);
  anet.init_params(aps, r1);
  lnet.init_params(lps, r2);
  CHECK(aps.param_count() == anet.param_count_formula());

  double ratio = double(aps.param_count()) / double(lps.param_count());
  INFO("attention=", aps.param_count(), " longhorn=", lps.param_count());
  CHECK(ratio > 0.9);
  CHECK(ratio < 1.1);
}

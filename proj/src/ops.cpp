#include <cmath>

#include "icil/tensor.hpp"

namespace icil::num {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::logic_error(msg);
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor add(Tape* t, const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), "add: shape mismatch");
  Tensor y(a.shape);
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
  check_finite(y, "add");
  if (t && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    y.node = t->push(
        y.shape,
        [an, bn, n](Tape& tp, const Tensor& gy) {
          tp.accumulate(an, gy.ptr(), n);
          tp.accumulate(bn, gy.ptr(), n);
        },
        "add");
  }
  return y;
}

Tensor sub(Tape* t, const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), "sub: shape mismatch");
  Tensor y(a.shape);
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
  check_finite(y, "sub");
  if (t && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    y.node = t->push(
        y.shape,
        [an, bn, n](Tape& tp, const Tensor& gy) {
          tp.accumulate(an, gy.ptr(), n);
          if (bn >= 0) {
            Tensor& gb = tp.grad_buf(bn);
            for (int64_t i = 0; i < n; ++i) gb[i] -= gy[i];
          }
        },
        "sub");
  }
  return y;
}

Tensor mul(Tape* t, const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), "mul: shape mismatch");
  Tensor y(a.shape);
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
  check_finite(y, "mul");
  if (t && (a.node >= 0 || b.node >= 0)) {
    Tensor av = a, bv = b;
    y.node = t->push(
        y.shape,
        [av, bv, n](Tape& tp, const Tensor& gy) {
          if (av.node >= 0) {
            Tensor& ga = tp.grad_buf(av.node);
            for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * bv[i];
          }
          if (bv.node >= 0) {
            Tensor& gb = tp.grad_buf(bv.node);
            for (int64_t i = 0; i < n; ++i) gb[i] += gy[i] * av[i];
          }
        },
        "mul");
  }
  return y;
}

Tensor scale(Tape* t, const Tensor& a, double c) {
  Tensor y(a.shape);
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * c;
  check_finite(y, "scale");
  if (t && a.node >= 0) {
    int an = a.node;
    y.node = t->push(
        y.shape,
        [an, c, n](Tape& tp, const Tensor& gy) {
          Tensor& ga = tp.grad_buf(an);
          for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * c;
        },
        "scale");
  }
  return y;
}

Tensor sigmoid(Tape* t, const Tensor& x) {
  Tensor y(x.shape);
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
  check_finite(y, "sigmoid");
  if (t && x.node >= 0) {
    int xn = x.node;
    Tensor yv = y;
    y.node = t->push(
        y.shape,
        [xn, yv, n](Tape& tp, const Tensor& gy) {
          Tensor& gx = tp.grad_buf(xn);
          for (int64_t i = 0; i < n; ++i)
            gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
        },
        "sigmoid");
  }
  return y;
}

Tensor gelu(Tape* t, const Tensor& x) {
  Tensor y(x.shape);
  const int64_t n = y.numel();
  for (int64_t i = 0; i < n; ++i)
    y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
  check_finite(y, "gelu");
  if (t && x.node >= 0) {
    Tensor xv = x;
    y.node = t->push(
        y.shape,
        [xv, n](Tape& tp, const Tensor& gy) {
          Tensor& gx = tp.grad_buf(xv.node);
          for (int64_t i = 0; i < n; ++i) {
            double v = xv[i];
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += gy[i] * (cdf + v * pdf);
          }
        },
        "gelu");
  }
  return y;
}

Tensor sum(Tape* t, const Tensor& x) {
  double s0 = 0;
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) s0 += x[i];
  Tensor y = Tensor::scalar(s0);
  check_finite(y, "sum");
  if (t && x.node >= 0) {
    int xn = x.node;
    y.node = t->push(
        y.shape,
        [xn, n](Tape& tp, const Tensor& gy) {
          Tensor& gx = tp.grad_buf(xn);
          for (int64_t i = 0; i < n; ++i) gx[i] += gy[0];
        },
        "sum");
  }
  return y;
}

Tensor linear(Tape* t, const Tensor& X, const Tensor& W, const Tensor* b) {
  require(X.rank() == 2 && W.rank() == 2, "linear: rank");
  require(X.dim(1) == W.dim(1), "linear: inner dim mismatch");
  const int64_t T = X.dim(0), in = X.dim(1), out = W.dim(0);
  if (b) require(b->rank() == 1 && b->dim(0) == out, "linear: bias shape");
  Tensor Y({T, out});
  const double* xp = X.ptr();
  const double* wp = W.ptr();
  double* yp = Y.ptr();
  for (int64_t r = 0; r < T; ++r)
    for (int64_t o = 0; o < out; ++o) {
      double v = dot(xp + r * in, wp + o * in, in);
      yp[r * out + o] = b ? v + (*b)[o] : v;
    }
  check_finite(Y, "linear");
  bool track = X.node >= 0 || W.node >= 0 || (b && b->node >= 0);
  if (t && track) {
    Tensor Xv = X, Wv = W;
    Tensor bv = b ? *b : Tensor{};
    Y.node = t->push(
        Y.shape,
        [Xv, Wv, bv, T, in, out](Tape& tp, const Tensor& gY) {
          const double* gy = gY.ptr();
          if (Xv.node >= 0) {
            Tensor& gX = tp.grad_buf(Xv.node);
            double* gx = gX.ptr();
            const double* wp2 = Wv.ptr();
            for (int64_t r = 0; r < T; ++r)
              for (int64_t o = 0; o < out; ++o) {
                double g = gy[r * out + o];
                if (g == 0.0) continue;
                const double* wrow = wp2 + o * in;
                double* xrow = gx + r * in;
                for (int64_t i = 0; i < in; ++i) xrow[i] += g * wrow[i];
              }
          }
          if (Wv.node >= 0) {
            Tensor& gW = tp.grad_buf(Wv.node);
            double* gw = gW.ptr();
            const double* xp2 = Xv.ptr();
            for (int64_t r = 0; r < T; ++r)
              for (int64_t o = 0; o < out; ++o) {
                double g = gy[r * out + o];
                if (g == 0.0) continue;
                const double* xrow = xp2 + r * in;
                double* wrow = gw + o * in;
                for (int64_t i = 0; i < in; ++i) wrow[i] += g * xrow[i];
              }
          }
          if (bv.data && bv.node >= 0) {
            Tensor& gb = tp.grad_buf(bv.node);
            for (int64_t r = 0; r < T; ++r)
              for (int64_t o = 0; o < out; ++o) gb[o] += gy[r * out + o];
          }
        },
        "linear");
  }
  return Y;
}

Tensor matmul(Tape* t, const Tensor& A, const Tensor& B) {
  require(A.rank() == 2 && B.rank() == 2, "matmul: rank");
  require(A.dim(1) == B.dim(0), "matmul: inner dim mismatch");
  const int64_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  Tensor C({n, m});
  const double* ap = A.ptr();
  const double* bp = B.ptr();
  double* cp = C.ptr();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      double a = ap[i * k + kk];
      if (a == 0.0) continue;
      const double* brow = bp + kk * m;
      double* crow = cp + i * m;
      for (int64_t j = 0; j < m; ++j) crow[j] += a * brow[j];
    }
  check_finite(C, "matmul");
  if (t && (A.node >= 0 || B.node >= 0)) {
    Tensor Av = A, Bv = B;
    C.node = t->push(
        C.shape,
        [Av, Bv, n, k, m](Tape& tp, const Tensor& gC) {
          const double* gc = gC.ptr();
          if (Av.node >= 0) {
            Tensor& gA = tp.grad_buf(Av.node);
            double* ga = gA.ptr();
            const double* bp2 = Bv.ptr();
            // dA = gC B^T
            for (int64_t i = 0; i < n; ++i)
              for (int64_t kk = 0; kk < k; ++kk)
                ga[i * k + kk] += dot(gc + i * m, bp2 + kk * m, m);
          }
          if (Bv.node >= 0) {
            Tensor& gB = tp.grad_buf(Bv.node);
            double* gb = gB.ptr();
            const double* ap2 = Av.ptr();
            // dB = A^T gC
            for (int64_t i = 0; i < n; ++i)
              for (int64_t kk = 0; kk < k; ++kk) {
                double a = ap2[i * k + kk];
                if (a == 0.0) continue;
                const double* gcr = gc + i * m;
                double* gbr = gb + kk * m;
                for (int64_t j = 0; j < m; ++j) gbr[j] += a * gcr[j];
              }
          }
        },
        "matmul");
  }
  return C;
}

Tensor rmsnorm(Tape* t, const Tensor& X, const Tensor& g) {
  require(X.rank() == 2 && g.rank() == 1 && X.dim(1) == g.dim(0),
          "rmsnorm: shapes");
  const int64_t T = X.dim(0), n = X.dim(1);
  constexpr double kEps = 1e-8;
  Tensor Y({T, n});
  Tensor inv_rms({T});
  for (int64_t r = 0; r < T; ++r) {
    const double* xr = X.ptr() + r * n;
    double ms = dot(xr, xr, n) / double(n);
    double ir = 1.0 / std::sqrt(ms + kEps);
    inv_rms[r] = ir;
    double* yr = Y.ptr() + r * n;
    for (int64_t i = 0; i < n; ++i) yr[i] = xr[i] * ir * g[i];
  }
  check_finite(Y, "rmsnorm");
  if (t && (X.node >= 0 || g.node >= 0)) {
    Tensor Xv = X, gv = g, irv = inv_rms;
    Y.node = t->push(
        Y.shape,
        [Xv, gv, irv, T, n](Tape& tp, const Tensor& gY) {
          const double* gy = gY.ptr();
          for (int64_t r = 0; r < T; ++r) {
            const double* xr = Xv.ptr() + r * n;
            const double* gyr = gy + r * n;
            double ir = irv[r];
            if (gv.node >= 0) {
              Tensor& gg = tp.grad_buf(gv.node);
              for (int64_t i = 0; i < n; ++i) gg[i] += gyr[i] * xr[i] * ir;
            }
            if (Xv.node >= 0) {
              // y_i = g_i x_i r with r = (mean(x^2)+eps)^{-1/2}
              // dx_j = g_j gy_j r - (r^3 / n) x_j * sum_i gy_i g_i x_i
              double s = 0;
              for (int64_t i = 0; i < n; ++i) s += gyr[i] * gv[i] * xr[i];
              double c = ir * ir * ir * s / double(n);
              Tensor& gX = tp.grad_buf(Xv.node);
              double* gxr = gX.ptr() + r * n;
              for (int64_t j = 0; j < n; ++j)
                gxr[j] += gyr[j] * gv[j] * ir - c * xr[j];
            }
          }
        },
        "rmsnorm");
  }
  return Y;
}

Tensor row_select(Tape* t, const Tensor& table, int64_t row) {
  require(table.rank() == 2, "row_select: rank");
  require(row >= 0 && row < table.dim(0), "row_select: row out of range");
  const int64_t n = table.dim(1);
  Tensor y({n});
  for (int64_t i = 0; i < n; ++i) y[i] = table[row * n + i];
  if (t && table.node >= 0) {
    int tn = table.node;
    y.node = t->push(
        y.shape,
        [tn, row, n](Tape& tp, const Tensor& gy) {
          Tensor& gT = tp.grad_buf(tn);
          double* gp = gT.ptr() + row * n;
          for (int64_t i = 0; i < n; ++i) gp[i] += gy[i];
        },
        "row_select");
  }
  return y;
}

Tensor broadcast_rows(Tape* t, const Tensor& v, int64_t rows) {
  require(v.rank() == 1, "broadcast_rows: rank");
  const int64_t n = v.dim(0);
  Tensor Y({rows, n});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t i = 0; i < n; ++i) Y[r * n + i] = v[i];
  if (t && v.node >= 0) {
    int vn = v.node;
    Y.node = t->push(
        Y.shape,
        [vn, rows, n](Tape& tp, const Tensor& gY) {
          Tensor& gv = tp.grad_buf(vn);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < n; ++i) gv[i] += gY[r * n + i];
        },
        "broadcast_rows");
  }
  return Y;
}

Tensor concat_cols(Tape* t, const Tensor& A, const Tensor& B) {
  require(A.rank() == 2 && B.rank() == 2 && A.dim(0) == B.dim(0),
          "concat_cols: shapes");
  const int64_t T = A.dim(0), a = A.dim(1), b = B.dim(1);
  Tensor Y({T, a + b});
  for (int64_t r = 0; r < T; ++r) {
    double* yr = Y.ptr() + r * (a + b);
    const double* ar = A.ptr() + r * a;
    const double* br = B.ptr() + r * b;
    for (int64_t i = 0; i < a; ++i) yr[i] = ar[i];
    for (int64_t i = 0; i < b; ++i) yr[a + i] = br[i];
  }
  if (t && (A.node >= 0 || B.node >= 0)) {
    int an = A.node, bn = B.node;
    Y.node = t->push(
        Y.shape,
        [an, bn, T, a, b](Tape& tp, const Tensor& gY) {
          if (an >= 0) {
            Tensor& gA = tp.grad_buf(an);
            for (int64_t r = 0; r < T; ++r)
              for (int64_t i = 0; i < a; ++i)
                gA[r * a + i] += gY[r * (a + b) + i];
          }
          if (bn >= 0) {
            Tensor& gB = tp.grad_buf(bn);
            for (int64_t r = 0; r < T; ++r)
              for (int64_t i = 0; i < b; ++i)
                gB[r * b + i] += gY[r * (a + b) + a + i];
          }
        },
        "concat_cols");
  }
  return Y;
}

Tensor masked_sse(Tape* t, const Tensor& pred, const Tensor& target,
                  const Tensor& mask) {
  require(pred.shape == target.shape, "masked_sse: pred/target shape");
  require(pred.rank() == 2 && mask.rank() == 1 && mask.dim(0) == pred.dim(0),
          "masked_sse: mask shape");
  const int64_t T = pred.dim(0), n = pred.dim(1);
  double s = 0;
  for (int64_t r = 0; r < T; ++r) {
    if (mask[r] == 0.0) continue;
    const double* pr = pred.ptr() + r * n;
    const double* yr = target.ptr() + r * n;
    for (int64_t i = 0; i < n; ++i) {
      double d = pr[i] - yr[i];
      s += d * d;
    }
  }
  Tensor y = Tensor::scalar(s);
  check_finite(y, "masked_sse");
  if (t && pred.node >= 0) {
    Tensor pv = pred, tv = target, mv = mask;
    y.node = t->push(
        y.shape,
        [pv, tv, mv, T, n](Tape& tp, const Tensor& gy) {
          Tensor& gp = tp.grad_buf(pv.node);
          double g = gy[0];
          for (int64_t r = 0; r < T; ++r) {
            if (mv[r] == 0.0) continue;
            double* gr = gp.ptr() + r * n;
            const double* pr = pv.ptr() + r * n;
            const double* yr = tv.ptr() + r * n;
            for (int64_t i = 0; i < n; ++i)
              gr[i] += g * 2.0 * (pr[i] - yr[i]);
          }
        },
        "masked_sse");
  }
  return y;
}

Tensor rng_draw(RngStream& stream, const std::string& dist,
                const Shape& shape) {
  Tensor t(shape);
  const int64_t n = t.numel();
  if (dist == "uniform") {
    for (int64_t i = 0; i < n; ++i) t[i] = stream.uniform();
  } else if (dist == "normal") {
    for (int64_t i = 0; i < n; ++i) t[i] = stream.normal();
  } else {
    throw config_error("rng_draw: unknown distribution '" + dist + "'");
  }
  return t;
}

}  // namespace icil::num

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "icil/rng.hpp"

namespace icil::num {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// When set, every op output (and every gradient buffer during backward) is
// checked for NaN/Inf and the offending op is named in the thrown error.
extern bool debug_checks;

// Dense row-major float64 tensor. Copies share the buffer; forward values are
// immutable once an op has consumed them. `node` ties the value to a Tape.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  int node = -1;  // tape node id, -1 = untracked

  Tensor() = default;
  explicit Tensor(Shape s);

  static Tensor zeros(const Shape& s) { return Tensor(s); }
  static Tensor full(const Shape& s, double v);
  static Tensor from(const Shape& s, std::vector<double> vals);
  static Tensor scalar(double v) { return from({1}, {v}); }

  int64_t numel() const { return data ? int64_t(data->size()) : 0; }
  int64_t dim(int i) const { return shape[size_t(i)]; }
  int rank() const { return int(shape.size()); }
  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& operator[](int64_t i) { return (*data)[size_t(i)]; }
  double operator[](int64_t i) const { return (*data)[size_t(i)]; }
  double item() const;
  Tensor clone() const;
};

bool all_finite(const Tensor& t);

// Fixed-order 4-accumulator dot product. Every matrix/vector contraction in
// the library goes through this so that full-sequence and step-by-step code
// paths produce bit-identical partial sums.
inline double dot(const double* a, const double* b, int64_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Reverse-mode tape. Nodes are recorded in forward order (which is already a
// topological order); backward() walks them exactly once in reverse.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Tensor& gy)>;

  // Registers a gradient-accumulating leaf (parameters).
  Tensor watch(const Tensor& value);

  // Records an op that produced `out_shape`; returns the node id.
  int push(const Shape& out_shape, BackFn back, const char* op);

  // Lazily allocated gradient buffer for a node.
  Tensor& grad_buf(int node);
  bool grad_reached(int node) const;

  // Gradient of a tracked tensor after backward(); zeros if unreached.
  Tensor grad(const Tensor& t) const;

  // Seeds d(loss)/d(loss)=1 and runs the reverse sweep. Single use: the tape
  // is consumed and a second call is a contract violation.
  void backward(const Tensor& loss);

  // += g into node's buffer (no-op for node < 0).
  void accumulate(int node, const double* g, int64_t n);

  size_t size() const { return recs_.size(); }
  const char* op_name(int node) const { return recs_[size_t(node)].op; }
  bool consumed() const { return consumed_; }

 private:
  struct Rec {
    Shape shape;
    BackFn back;
    const char* op;
    Tensor grad;  // empty until reached
  };
  std::vector<Rec> recs_;
  bool consumed_ = false;
};

// ---- primitive ops (tape optional; pass nullptr for inference) ----

Tensor add(Tape* t, const Tensor& a, const Tensor& b);
Tensor sub(Tape* t, const Tensor& a, const Tensor& b);
Tensor mul(Tape* t, const Tensor& a, const Tensor& b);
Tensor scale(Tape* t, const Tensor& a, double c);
Tensor sigmoid(Tape* t, const Tensor& x);
Tensor gelu(Tape* t, const Tensor& x);
Tensor sum(Tape* t, const Tensor& x);

// Y = X W^T (+ b). X: (T, in), W: (out, in), b: (out) or nullptr.
Tensor linear(Tape* t, const Tensor& X, const Tensor& W, const Tensor* b);

// C = A B. A: (n, k), B: (k, m).
Tensor matmul(Tape* t, const Tensor& A, const Tensor& B);

// Row-wise RMS normalization with learned gain. X: (T, n), g: (n).
Tensor rmsnorm(Tape* t, const Tensor& X, const Tensor& g);

// Row `row` of a (R, n) table -> (n,).
Tensor row_select(Tape* t, const Tensor& table, int64_t row);

// v: (n) -> (T, n) with every row equal to v.
Tensor broadcast_rows(Tape* t, const Tensor& v, int64_t rows);

// (T, a) ++ (T, b) -> (T, a+b)
Tensor concat_cols(Tape* t, const Tensor& A, const Tensor& B);

// Sum of squared errors over masked rows. pred/target: (T, n), mask: (T)
// with entries 0/1; target and mask are constants (no gradient).
Tensor masked_sse(Tape* t, const Tensor& pred, const Tensor& target,
                  const Tensor& mask);

// Fills a tensor with draws from `stream`. dist: "uniform" in [0,1) or
// "normal".
Tensor rng_draw(RngStream& stream, const std::string& dist, const Shape& shape);

void check_finite(const Tensor& t, const char* op);

}  // namespace icil::num

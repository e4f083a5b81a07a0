#include "icil/tensor.hpp"

#include <cmath>
#include <sstream>

namespace icil::num {

bool debug_checks = false;

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
  data = std::make_shared<std::vector<double>>(size_t(shape_numel(shape)), 0.0);
}

Tensor Tensor::full(const Shape& s, double v) {
  Tensor t(s);
  for (auto& x : *t.data) x = v;
  return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> vals) {
  if (shape_numel(s) != int64_t(vals.size()))
    throw std::logic_error("Tensor::from: shape/data mismatch");
  Tensor t;
  t.shape = s;
  t.data = std::make_shared<std::vector<double>>(std::move(vals));
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item(): tensor is not scalar");
  return (*data)[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  return t;
}

bool all_finite(const Tensor& t) {
  for (double v : *t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void check_finite(const Tensor& t, const char* op) {
  if (debug_checks && !all_finite(t))
    throw numeric_error(std::string("non-finite value produced by op '") + op +
                        "'");
}

Tensor Tape::watch(const Tensor& value) {
  Tensor v = value;
  v.node = push(v.shape, BackFn{}, "leaf");
  return v;
}

int Tape::push(const Shape& out_shape, BackFn back, const char* op) {
  recs_.push_back(Rec{out_shape, std::move(back), op, Tensor{}});
  return int(recs_.size()) - 1;
}

Tensor& Tape::grad_buf(int node) {
  Rec& r = recs_.at(size_t(node));
  if (!r.grad.data) r.grad = Tensor::zeros(r.shape);
  return r.grad;
}

bool Tape::grad_reached(int node) const {
  return node >= 0 && recs_.at(size_t(node)).grad.data != nullptr;
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.node < 0) throw std::logic_error("grad(): tensor is not tracked");
  const Rec& r = recs_.at(size_t(t.node));
  if (!r.grad.data) return Tensor::zeros(r.shape);
  return r.grad;
}

void Tape::accumulate(int node, const double* g, int64_t n) {
  if (node < 0) return;
  Tensor& buf = grad_buf(node);
  double* p = buf.ptr();
  for (int64_t i = 0; i < n; ++i) p[i] += g[i];
}

void Tape::backward(const Tensor& loss) {
  if (consumed_)
    throw std::logic_error("Tape::backward called twice; tape is consumed");
  if (loss.node < 0)
    throw std::logic_error("Tape::backward: loss is not on this tape");
  if (loss.numel() != 1)
    throw std::logic_error("Tape::backward: loss must be scalar");
  consumed_ = true;
  grad_buf(loss.node)[0] = 1.0;
  for (int i = int(recs_.size()) - 1; i >= 0; --i) {
    Rec& r = recs_[size_t(i)];
    if (!r.grad.data) continue;  // not on any path to the loss
    if (debug_checks && !all_finite(r.grad))
      throw numeric_error(std::string("non-finite gradient at node ") +
                          std::to_string(i) + " (op '" + r.op + "')");
    if (r.back) r.back(*this, r.grad);
  }
}

}  // namespace icil::num

#include "flower/tensor.hpp"

#include <stdexcept>

namespace flower::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tensor::Tensor(int rows, int cols, bool tracked) : d_(std::make_shared<Data>()) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("tensor: negative dimension");
  d_->rows = rows;
  d_->cols = cols;
  d_->v.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  d_->tracked = tracked;
  if (tracked) d_->g.assign(d_->v.size(), 0.0);
}

Tensor Tensor::from(int rows, int cols, std::vector<double> values, bool tracked) {
  if (values.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("tensor: value count does not match shape");
  Tensor t(rows, cols, tracked);
  t.d_->v = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, bool tracked) {
  return from(1, 1, {value}, tracked);
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return d_->v[0];
}

void Tensor::zero_grad() {
  if (d_->tracked) d_->g.assign(d_->v.size(), 0.0);
}

Tensor Tensor::detached_copy() const {
  Tensor t(rows(), cols(), false);
  t.d_->v = d_->v;
  return t;
}

Tape::Tape() : prev_(g_active_tape) {
  g_active_tape = this;
}

Tape::~Tape() {
  g_active_tape = prev_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> pull) {
  entries_.push_back(std::move(pull));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.tracked()) throw std::invalid_argument("backward: loss is not tracked on a tape");
  if (used_) throw std::logic_error("backward: tape already consumed");
  used_ = true;
  const_cast<Tensor&>(loss).grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

bool recording(const Tensor& a) {
  return Tape::active() != nullptr && a.tracked();
}

bool recording(const Tensor& a, const Tensor& b) {
  return Tape::active() != nullptr && (a.tracked() || b.tracked());
}

}  // namespace flower::ad

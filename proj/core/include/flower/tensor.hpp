#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace flower::ad {

// Dense 2D tensor of doubles with an optional gradient buffer. Copies are
// shallow (shared storage); the tape keeps operands alive through its
// recorded closures. Vectors are stored as n x 1 or 1 x n, scalars as 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols, bool tracked = false);

  static Tensor from(int rows, int cols, std::vector<double> values, bool tracked = false);
  static Tensor scalar(double value, bool tracked = false);
  static Tensor identity(int n);

  bool defined() const { return d_ != nullptr; }
  int rows() const { return d_->rows; }
  int cols() const { return d_->cols; }
  int size() const { return d_->rows * d_->cols; }
  bool tracked() const { return d_->tracked; }

  double& at(int r, int c) { return d_->v[static_cast<std::size_t>(r) * d_->cols + c]; }
  double at(int r, int c) const { return d_->v[static_cast<std::size_t>(r) * d_->cols + c]; }

  std::vector<double>& values() { return d_->v; }
  const std::vector<double>& values() const { return d_->v; }
  std::vector<double>& grad() { return d_->g; }
  const std::vector<double>& grad() const { return d_->g; }

  // Value of a 1x1 tensor.
  double item() const;

  void zero_grad();

  // Deep copy of the values, never tracked.
  Tensor detached_copy() const;

  // Identity of the underlying storage, for aliasing checks in tests.
  const void* data_id() const { return d_.get(); }

 private:
  struct Data {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;
    std::vector<double> g;  // same length as v when tracked, else empty
    bool tracked = false;
  };
  std::shared_ptr<Data> d_;
};

// Reverse-mode tape. Thread-confined: constructing a Tape makes it the active
// tape for the current thread, destruction restores the previous one.
// Operations record pull-back closures in execution order; backward() replays
// them once, in reverse.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> pull);

  // Seeds the gradient of a scalar loss with 1 and propagates backwards.
  // Gradients accumulate additively into every tracked tensor touched by the
  // recorded operations.
  void backward(const Tensor& loss);

  std::size_t num_entries() const { return entries_.size(); }

 private:
  std::vector<std::function<void()>> entries_;
  Tape* prev_ = nullptr;
  bool used_ = false;
};

// True when the active tape should record an op over these operands.
bool recording(const Tensor& a);
bool recording(const Tensor& a, const Tensor& b);

}  // namespace flower::ad

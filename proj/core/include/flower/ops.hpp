#pragma once

#include <functional>
#include <vector>

#include "flower/rng.hpp"
#include "flower/tensor.hpp"

namespace flower::ad {

enum class Mode { kTrain, kEval };

// All operations below are differentiable: when a tape is active and an
// operand is tracked, the matching pull-back is recorded.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// Repeats a 1 x n row vector m times; gradient is the column sum.
Tensor broadcast_rows(const Tensor& row, int m);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
// 1 / sqrt(a + shift), elementwise.
Tensor rsqrt_shift(const Tensor& a, double shift);

// Numerically stabilized softmax per row (row-max subtraction).
Tensor rowwise_softmax(const Tensor& a);

// Softmax over the entries listed in `index_set`; all other entries are 0.
// `scores` may have any shape; indices are flat positions.
Tensor indexed_softmax(const Tensor& scores, const std::vector<int>& index_set);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int first, int count);
Tensor slice_rows(const Tensor& a, int first, int count);
// Gathers rows a[idx[0]], a[idx[1]], ... (duplicates allowed).
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);

// Column means: m x n -> 1 x n.
Tensor mean_rows(const Tensor& a);
Tensor sum_all(const Tensor& a);

// Train mode zeroes entries independently with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is the identity. rate must be in [0, 1).
Tensor dropout(const Tensor& a, double rate, Rng& rng, Mode mode);

struct GruParams {
  Tensor wz, uz, bz;  // update gate
  Tensor wr, ur, br;  // reset gate
  Tensor wh, uh, bh;  // candidate
};

// out = (1 - z) * hidden + z * htilde with
//   z = sigmoid(input Wz + hidden Uz + bz)
//   r = sigmoid(input Wr + hidden Ur + br)
//   htilde = tanh(input Wh + (r * hidden) Uh + bh)
Tensor gru_cell(const Tensor& hidden, const Tensor& input, const GruParams& p);

struct BatchNormState {
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-feature normalization over the row axis. Train mode uses batch
// statistics (and updates the running ones when update_running is set);
// eval mode uses the running statistics.
Tensor batch_norm(const Tensor& a, BatchNormState& bn, Mode mode, bool update_running = true);

// Central finite-difference check of reverse-mode gradients. `f` must
// recompute the scalar loss from the current values of `points` and be free
// of side effects. Returns the max relative error over all coordinates with
// denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& points,
                  double h = 1e-5);

}  // namespace flower::ad

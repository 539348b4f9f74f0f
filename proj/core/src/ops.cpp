#include "flower/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace flower::ad {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap vmap(const Tensor& t) { return {t.values().data(), t.rows(), t.cols()}; }
MatMap vmap(Tensor& t) { return {t.values().data(), t.rows(), t.cols()}; }
MatMap gmap(Tensor& t) { return {t.grad().data(), t.rows(), t.cols()}; }

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

Tensor make_output(int rows, int cols, bool tracked) { return Tensor(rows, cols, tracked); }

// Elementwise unary op with local derivative computed from input and output.
Tensor unary_op(const Tensor& a, const std::function<double(double)>& fwd,
                const std::function<double(double, double)>& dfdx /* (x, y) -> dy/dx */) {
  const bool rec = recording(a);
  Tensor out = make_output(a.rows(), a.cols(), rec);
  for (int i = 0; i < a.size(); ++i) out.values()[i] = fwd(a.values()[i]);
  if (rec) {
    Tape::active()->record([a = a, out, dfdx]() mutable {
      for (int i = 0; i < a.size(); ++i)
        a.grad()[i] += out.grad()[i] * dfdx(a.values()[i], out.values()[i]);
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree " + shape_str(a) + " vs " +
                                shape_str(b));
  const bool rec = recording(a, b);
  Tensor out = make_output(a.rows(), b.cols(), rec);
  vmap(out).noalias() = vmap(a) * vmap(b);
  if (rec) {
    Tape::active()->record([a = a, b = b, out]() mutable {
      if (a.tracked()) gmap(a).noalias() += gmap(out) * vmap(b).transpose();
      if (b.tracked()) gmap(b).noalias() += vmap(a).transpose() * gmap(out);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const bool rec = recording(a);
  Tensor out = make_output(a.cols(), a.rows(), rec);
  vmap(out) = vmap(a).transpose();
  if (rec) {
    Tape::active()->record([a = a, out]() mutable { gmap(a) += gmap(out).transpose(); });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool rec = recording(a, b);
  Tensor out = make_output(a.rows(), a.cols(), rec);
  vmap(out) = vmap(a) + vmap(b);
  if (rec) {
    Tape::active()->record([a = a, b = b, out]() mutable {
      if (a.tracked()) gmap(a) += gmap(out);
      if (b.tracked()) gmap(b) += gmap(out);
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool rec = recording(a, b);
  Tensor out = make_output(a.rows(), a.cols(), rec);
  vmap(out) = vmap(a) - vmap(b);
  if (rec) {
    Tape::active()->record([a = a, b = b, out]() mutable {
      if (a.tracked()) gmap(a) += gmap(out);
      if (b.tracked()) gmap(b) -= gmap(out);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool rec = recording(a, b);
  Tensor out = make_output(a.rows(), a.cols(), rec);
  for (int i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (rec) {
    Tape::active()->record([a = a, b = b, out]() mutable {
      for (int i = 0; i < a.size(); ++i) {
        if (a.tracked()) a.grad()[i] += out.grad()[i] * b.values()[i];
        if (b.tracked()) b.grad()[i] += out.grad()[i] * a.values()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  const bool rec = recording(a);
  Tensor out = make_output(a.rows(), a.cols(), rec);
  for (int i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * c;
  if (rec) {
    Tape::active()->record([a = a, out, c]() mutable {
      for (int i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  const bool rec = recording(a);
  Tensor out = make_output(a.rows(), a.cols(), rec);
  for (int i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + c;
  if (rec) {
    Tape::active()->record([a = a, out]() mutable {
      for (int i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

Tensor broadcast_rows(const Tensor& row, int m) {
  if (row.rows() != 1) throw std::invalid_argument("broadcast_rows: expected a 1xN row vector");
  const bool rec = recording(row);
  Tensor out = make_output(m, row.cols(), rec);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < row.cols(); ++c) out.at(r, c) = row.at(0, c);
  if (rec) {
    Tape::active()->record([row = row, out, m]() mutable {
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < row.cols(); ++c) row.grad()[c] += out.grad()[r * row.cols() + c];
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor rsqrt_shift(const Tensor& a, double shift) {
  return unary_op(
      a, [shift](double x) { return 1.0 / std::sqrt(x + shift); },
      [](double, double y) { return -0.5 * y * y * y; });
}

Tensor rowwise_softmax(const Tensor& a) {
  for (double x : a.values())
    if (std::isnan(x)) throw std::runtime_error("rowwise_softmax: NaN input");
  const bool rec = recording(a);
  Tensor out = make_output(a.rows(), a.cols(), rec);
  const int n = a.cols();
  for (int r = 0; r < a.rows(); ++r) {
    double mx = a.at(r, 0);
    for (int c = 1; c < n; ++c) mx = std::max(mx, a.at(r, c));
    double denom = 0.0;
    for (int c = 0; c < n; ++c) {
      out.at(r, c) = std::exp(a.at(r, c) - mx);
      denom += out.at(r, c);
    }
    for (int c = 0; c < n; ++c) out.at(r, c) /= denom;
  }
  if (rec) {
    Tape::active()->record([a = a, out]() mutable {
      const int n = a.cols();
      for (int r = 0; r < a.rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < n; ++c) dot += out.grad()[r * n + c] * out.at(r, c);
        for (int c = 0; c < n; ++c)
          a.grad()[r * n + c] += out.at(r, c) * (out.grad()[r * n + c] - dot);
      }
    });
  }
  return out;
}

Tensor indexed_softmax(const Tensor& scores, const std::vector<int>& index_set) {
  if (index_set.empty()) throw std::invalid_argument("indexed_softmax: empty index set");
  const bool rec = recording(scores);
  Tensor out = make_output(scores.rows(), scores.cols(), rec);
  double mx = scores.values()[index_set[0]];
  for (int i : index_set) mx = std::max(mx, scores.values()[i]);
  double denom = 0.0;
  for (int i : index_set) {
    out.values()[i] = std::exp(scores.values()[i] - mx);
    denom += out.values()[i];
  }
  for (int i : index_set) out.values()[i] /= denom;
  if (rec) {
    Tape::active()->record([scores = scores, out, index_set]() mutable {
      double dot = 0.0;
      for (int i : index_set) dot += out.grad()[i] * out.values()[i];
      for (int i : index_set) scores.grad()[i] += out.values()[i] * (out.grad()[i] - dot);
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int cols = parts[0].cols();
  int rows = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    any_tracked = any_tracked || p.tracked();
  }
  const bool rec = Tape::active() != nullptr && any_tracked;
  Tensor out = make_output(rows, cols, rec);
  int r0 = 0;
  for (const Tensor& p : parts) {
    for (int r = 0; r < p.rows(); ++r)
      for (int c = 0; c < cols; ++c) out.at(r0 + r, c) = p.at(r, c);
    r0 += p.rows();
  }
  if (rec) {
    Tape::active()->record([parts = parts, out]() mutable {
      const int cols = out.cols();
      int r0 = 0;
      for (Tensor& p : parts) {
        if (p.tracked())
          for (int i = 0; i < p.size(); ++i) p.grad()[i] += out.grad()[r0 * cols + i];
        r0 += p.rows();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int rows = parts[0].rows();
  int cols = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    any_tracked = any_tracked || p.tracked();
  }
  const bool rec = Tape::active() != nullptr && any_tracked;
  Tensor out = make_output(rows, cols, rec);
  int c0 = 0;
  for (const Tensor& p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p.cols(); ++c) out.at(r, c0 + c) = p.at(r, c);
    c0 += p.cols();
  }
  if (rec) {
    Tape::active()->record([parts = parts, out]() mutable {
      int c0 = 0;
      for (Tensor& p : parts) {
        if (p.tracked())
          for (int r = 0; r < p.rows(); ++r)
            for (int c = 0; c < p.cols(); ++c)
              p.grad()[r * p.cols() + c] += out.grad()[r * out.cols() + c0 + c];
        c0 += p.cols();
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int first, int count) {
  if (first < 0 || count < 0 || first + count > a.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  const bool rec = recording(a);
  Tensor out = make_output(a.rows(), count, rec);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < count; ++c) out.at(r, c) = a.at(r, first + c);
  if (rec) {
    Tape::active()->record([a = a, out, first, count]() mutable {
      for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < count; ++c) a.grad()[r * a.cols() + first + c] += out.grad()[r * count + c];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int first, int count) {
  if (first < 0 || count < 0 || first + count > a.rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i) idx[i] = first + i;
  return gather_rows(a, idx);
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  for (int i : idx)
    if (i < 0 || i >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
  const bool rec = recording(a);
  Tensor out = make_output(static_cast<int>(idx.size()), a.cols(), rec);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < a.cols(); ++c) out.at(static_cast<int>(r), c) = a.at(idx[r], c);
  if (rec) {
    Tape::active()->record([a = a, out, idx]() mutable {
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < a.cols(); ++c)
          a.grad()[idx[r] * a.cols() + c] += out.grad()[r * a.cols() + c];
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows: empty tensor");
  const bool rec = recording(a);
  Tensor out = make_output(1, a.cols(), rec);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out.at(0, c) += a.at(r, c);
  for (int c = 0; c < a.cols(); ++c) out.at(0, c) /= a.rows();
  if (rec) {
    Tape::active()->record([a = a, out]() mutable {
      const double inv = 1.0 / a.rows();
      for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) a.grad()[r * a.cols() + c] += out.grad()[c] * inv;
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  const bool rec = recording(a);
  Tensor out = make_output(1, 1, rec);
  double s = 0.0;
  for (double x : a.values()) s += x;
  out.values()[0] = s;
  if (rec) {
    Tape::active()->record([a = a, out]() mutable {
      for (int i = 0; i < a.size(); ++i) a.grad()[i] += out.grad()[0];
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng, Mode mode) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return a;
  Tensor mask(a.rows(), a.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int i = 0; i < a.size(); ++i)
    mask.values()[i] = rng.next_double() < rate ? 0.0 : keep_scale;
  return mul(a, mask);
}

Tensor gru_cell(const Tensor& hidden, const Tensor& input, const GruParams& p) {
  require_same_shape(hidden, input, "gru_cell");
  const int n = hidden.rows();
  Tensor z = sigmoid(add(add(matmul(input, p.wz), matmul(hidden, p.uz)), broadcast_rows(p.bz, n)));
  Tensor r = sigmoid(add(add(matmul(input, p.wr), matmul(hidden, p.ur)), broadcast_rows(p.br, n)));
  Tensor cand = tanh_op(
      add(add(matmul(input, p.wh), matmul(mul(r, hidden), p.uh)), broadcast_rows(p.bh, n)));
  // (1 - z) * h + z * cand == h + z * (cand - h)
  return add(hidden, mul(z, sub(cand, hidden)));
}

Tensor batch_norm(const Tensor& a, BatchNormState& bn, Mode mode, bool update_running) {
  const int n = a.rows();
  const int d = a.cols();
  if (n == 0) throw std::invalid_argument("batch_norm: empty batch");
  if (bn.gamma.cols() != d)
    throw std::invalid_argument("batch_norm: feature width mismatch");
  if (mode == Mode::kTrain) {
    Tensor mu = mean_rows(a);
    Tensor centered = sub(a, broadcast_rows(mu, n));
    Tensor var = mean_rows(mul(centered, centered));
    if (update_running) {
      // Running variance uses the unbiased estimate, matching common practice.
      const double m = bn.momentum;
      const double bias_fix = n > 1 ? static_cast<double>(n) / (n - 1) : 1.0;
      for (int c = 0; c < d; ++c) {
        bn.running_mean[c] = (1.0 - m) * bn.running_mean[c] + m * mu.at(0, c);
        bn.running_var[c] = (1.0 - m) * bn.running_var[c] + m * var.at(0, c) * bias_fix;
      }
    }
    Tensor inv_std = rsqrt_shift(var, bn.eps);
    Tensor normalized = mul(centered, broadcast_rows(inv_std, n));
    return add(mul(normalized, broadcast_rows(bn.gamma, n)), broadcast_rows(bn.beta, n));
  }
  Tensor shift(1, d);
  Tensor scale_row(1, d);
  for (int c = 0; c < d; ++c) {
    const double s = bn.gamma.at(0, c) / std::sqrt(bn.running_var[c] + bn.eps);
    scale_row.at(0, c) = s;
    shift.at(0, c) = bn.beta.at(0, c) - bn.running_mean[c] * s;
  }
  return add(mul(a, broadcast_rows(scale_row, n)), broadcast_rows(shift, n));
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& points, double h) {
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : points) const_cast<Tensor&>(p).zero_grad();
  {
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
  }
  for (const Tensor& p : points) analytic.push_back(p.grad());

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    Tensor& p = const_cast<Tensor&>(points[pi]);
    for (int i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.values()[i] = saved + h;
      const double up = f().item();
      p.values()[i] = saved - h;
      const double down = f().item();
      p.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace flower::ad

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "prism/errors.hpp"
#include "prism/rng.hpp"

namespace prism {

// Row-major dense types, templated on scalar: float for training, double for
// gradient checking.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using ColVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;

// Shift-invariant row softmax; rows with -inf entries get exactly zero
// probability there.
template <typename Scalar>
void softmax_rows_inplace(Mat<Scalar>& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    Scalar m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& x) {
  Mat<Scalar> y = x;
  softmax_rows_inplace(y);
  return y;
}

template <typename Scalar>
struct LayerNormCache {
  ColVec<Scalar> mean;  // per row
  ColVec<Scalar> rstd;  // per row
};

// y = (x - mean) * rstd * gain + bias, per row.
template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const RowVec<Scalar>& gain,
                       const RowVec<Scalar>& bias, Scalar eps,
                       LayerNormCache<Scalar>* cache = nullptr) {
  const Eigen::Index n = x.cols();
  Mat<Scalar> y(x.rows(), n);
  ColVec<Scalar> mean = x.rowwise().mean();
  ColVec<Scalar> rstd(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Scalar var = (x.row(i).array() - mean(i)).square().sum() / static_cast<Scalar>(n);
    rstd(i) = Scalar(1) / std::sqrt(var + eps);
    y.row(i) = (((x.row(i).array() - mean(i)) * rstd(i)) * gain.array() + bias.array()).matrix();
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename Scalar>
void layer_norm_backward(const Mat<Scalar>& x, const LayerNormCache<Scalar>& cache,
                         const RowVec<Scalar>& gain, const Mat<Scalar>& dy, Mat<Scalar>& dx,
                         RowVec<Scalar>& dgain, RowVec<Scalar>& dbias) {
  const Eigen::Index n = x.cols();
  dx.resize(x.rows(), n);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    RowVec<Scalar> xhat = ((x.row(i).array() - cache.mean(i)) * cache.rstd(i)).matrix();
    RowVec<Scalar> dyg = (dy.row(i).array() * gain.array()).matrix();
    dgain += (dy.row(i).array() * xhat.array()).matrix();
    dbias += dy.row(i);
    Scalar m1 = dyg.mean();
    Scalar m2 = (dyg.array() * xhat.array()).mean();
    dx.row(i) = (cache.rstd(i) * (dyg.array() - m1 - xhat.array() * m2)).matrix();
  }
}

// tanh-approximate GELU, elementwise.
template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + Scalar(0.044715) * x * x * x)));
}

template <typename Scalar>
Scalar gelu_grad_scalar(Scalar x) {
  const Scalar c = Scalar(0.7978845608028654);
  Scalar u = c * (x + Scalar(0.044715) * x * x * x);
  Scalar t = std::tanh(u);
  Scalar du = c * (Scalar(1) + Scalar(3) * Scalar(0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * du;
}

template <typename Scalar>
Mat<Scalar> gelu(const Mat<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return gelu_scalar(v); });
}

template <typename Scalar>
Mat<Scalar> gelu_backward(const Mat<Scalar>& x, const Mat<Scalar>& dy) {
  return (x.unaryExpr([](Scalar v) { return gelu_grad_scalar(v); }).array() * dy.array()).matrix();
}

// Mean over positions whose target is not pad_id of -log softmax(logits)[target].
// Fused log-softmax; pad positions contribute nothing to value or gradient.
template <typename Scalar>
Scalar masked_cross_entropy(const Mat<Scalar>& logits, std::span<const std::int32_t> targets,
                            std::int32_t pad_id, Mat<Scalar>* dlogits = nullptr) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw ValidationError("cross entropy: logits rows != targets");
  }
  std::int64_t n_active = 0;
  for (auto t : targets) {
    if (t != pad_id) ++n_active;
  }
  if (n_active == 0) throw ValidationError("cross entropy: all targets are pad, mean undefined");

  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  Scalar total = 0;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n_active);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    std::int32_t t = targets[static_cast<std::size_t>(i)];
    if (t == pad_id) continue;
    if (t < 0 || t >= logits.cols()) throw ValidationError("cross entropy: target out of range");
    auto row = logits.row(i);
    Scalar m = row.maxCoeff();
    Scalar lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(t);
    if (dlogits) {
      dlogits->row(i) = ((row.array() - lse).exp() * inv_n).matrix();
      (*dlogits)(i, t) -= inv_n;
    }
  }
  return total * inv_n;
}

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double max_rel_error = 0;
  std::vector<GradCheckEntry> worst;  // offenders above tolerance, worst first

  bool passed() const { return failed == 0 && checked > 0; }
};

// Central finite differences against a reverse-mode gradient, in double.
// `value` evaluates the objective at the current parameters; `analytic_grads`
// holds the reverse-mode gradient for each parameter block named in `params`.
// Large blocks are subsampled (at least `min_samples` entries each).
struct GradCheckBlock {
  std::string name;
  double* data;
  const double* grad;
  std::size_t size;
};

inline GradCheckReport grad_check(const std::function<double()>& value,
                                  std::span<const GradCheckBlock> params, double rel_tol = 1e-3,
                                  double step = 1e-4, std::size_t min_samples = 200,
                                  std::uint64_t seed = 0) {
  GradCheckReport report;
  Rng rng(mix_seed(seed, 0x67726164));
  for (const auto& block : params) {
    std::vector<std::size_t> indices;
    if (block.size <= min_samples) {
      indices.resize(block.size);
      for (std::size_t i = 0; i < block.size; ++i) indices[i] = i;
    } else {
      for (std::size_t i = 0; i < min_samples; ++i) {
        indices.push_back(static_cast<std::size_t>(rng.below(block.size)));
      }
    }
    for (std::size_t idx : indices) {
      double saved = block.data[idx];
      block.data[idx] = saved + step;
      double up = value();
      block.data[idx] = saved - step;
      double down = value();
      block.data[idx] = saved;
      double numeric = (up - down) / (2 * step);
      double analytic = block.grad[idx];
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      double rel = std::abs(numeric - analytic) / denom;
      report.checked++;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (rel > rel_tol) {
        report.failed++;
        report.worst.push_back({block.name, idx, analytic, numeric, rel});
      }
    }
  }
  std::sort(report.worst.begin(), report.worst.end(),
            [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.rel_error > b.rel_error; });
  if (report.worst.size() > 10) report.worst.resize(10);
  return report;
}

}  // namespace prism

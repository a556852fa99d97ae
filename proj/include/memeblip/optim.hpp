// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memeblip/errors.hpp"
#include "memeblip/ndcore.hpp"
#include "memeblip/param_store.hpp"

namespace memeblip {

enum class Reduction { Mean, Sum };

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  nd::Matrix<Scalar> grad;        // dL/dlogits
  std::vector<double> per_row;    // unreduced loss of each row
};

/// Softmax cross-entropy with max subtraction. Mean reduction divides both
/// loss and gradient by the batch size.
template <typename Scalar>
LossResult<Scalar> cross_entropy(const nd::Matrix<Scalar>& logits, std::span<const int> labels,
                                 Reduction reduction = Reduction::Mean) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index k = logits.cols();
  if (n < 1) throw DataError("cross_entropy: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(n) + " rows");
  }
  LossResult<Scalar> out;
  out.grad.resize(n, k);
  const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
  double total = 0.0;
  out.per_row.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " at row " +
                      std::to_string(i) + " is outside [0," + std::to_string(k) + ")");
    }
    const double peak = static_cast<double>(logits.row(i).maxCoeff());
    double denom = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) denom += std::exp(static_cast<double>(logits(i, j)) - peak);
    const double log_denom = std::log(denom);
    const double row_loss = log_denom + peak - static_cast<double>(logits(i, y));
    out.per_row[static_cast<std::size_t>(i)] = row_loss;
    total += row_loss;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(logits(i, j)) - peak - log_denom);
      out.grad(i, j) = static_cast<Scalar>((p - (j == y ? 1.0 : 0.0)) * scale);
    }
  }
  out.loss = total * scale;
  return out;
}

/// Row-wise softmax probability of `cls`.
template <typename Scalar>
std::vector<double> class_probability(const nd::Matrix<Scalar>& logits, Eigen::Index cls) {
  std::vector<double> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = static_cast<double>(logits.row(i).maxCoeff());
    double denom = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      denom += std::exp(static_cast<double>(logits(i, j)) - peak);
    }
    out[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(logits(i, cls)) - peak) / denom;
  }
  return out;
}

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// First and second moments per parameter plus the step counter.
template <typename Scalar>
struct OptimState {
  AdamWHyper hyper;
  std::int64_t step = 0;
  std::vector<nd::Matrix<Scalar>> m;
  std::vector<nd::Matrix<Scalar>> v;

  static OptimState for_params(const ParamStore<Scalar>& params, AdamWHyper hyper) {
    OptimState s;
    s.hyper = hyper;
    for (const auto& e : params) {
      s.m.push_back(nd::Matrix<Scalar>::Zero(e.value.rows(), e.value.cols()));
      s.v.push_back(nd::Matrix<Scalar>::Zero(e.value.rows(), e.value.cols()));
    }
    return s;
  }
};

/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + lambda * theta)
/// Both terms are scaled by the scheduled rate.
template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, OptimState<Scalar>& state, double lr) {
  if (!params.grads_ready()) throw StateError("adamw_step: gradients not populated for this step");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw StateError("adamw_step: optimizer state does not match parameter set");
  }
  state.step += 1;
  const auto& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(h.beta1);
  const auto b2 = static_cast<Scalar>(h.beta2);
  const auto inv_bc1 = static_cast<Scalar>(1.0 / bc1);
  const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
  const auto eps = static_cast<Scalar>(h.eps);
  const auto decay = static_cast<Scalar>(h.weight_decay);
  const auto rate = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.rows() != e.value.rows() || m.cols() != e.value.cols()) {
      throw StateError("adamw_step: moment shape mismatch for " + e.name);
    }
    m = b1 * m + (Scalar(1) - b1) * e.grad;
    v = b2 * v + (Scalar(1) - b2) * e.grad.cwiseAbs2();
    const auto m_hat = (m.array() * inv_bc1);
    const auto v_hat = (v.array() * inv_bc2);
    e.value.array() -= rate * (m_hat / (v_hat.sqrt() + eps) + decay * e.value.array());
  }
  params.mark_grads_ready(false);
}

/// Linear warmup from 0 over the warmup steps, then cosine annealing to 0.
struct LrSchedule {
  double base_lr = 5e-5;
  std::int64_t warmup_epochs = 3;
  std::int64_t total_epochs = 12;
  std::int64_t steps_per_epoch = 1;

  std::int64_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }
  std::int64_t total_steps() const { return total_epochs * steps_per_epoch; }

  void validate() const {
    if (!(base_lr >= 0.0)) throw ConfigError("schedule: base_lr must be >= 0");
    if (warmup_epochs < 0) throw ConfigError("schedule: warmup_epochs must be >= 0");
    if (warmup_epochs >= total_epochs) {
      throw ConfigError("schedule: warmup_epochs must be < total_epochs");
    }
    if (steps_per_epoch < 1) throw ConfigError("schedule: steps_per_epoch must be >= 1");
  }
};

inline double lr_at(const LrSchedule& s, std::int64_t step) {
  s.validate();
  if (step < 0 || step >= s.total_steps()) {
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0," +
                      std::to_string(s.total_steps()) + ")");
  }
  const std::int64_t warm = s.warmup_steps();
  if (step < warm) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  }
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(s.total_steps() - warm);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
double global_grad_norm(const ParamStore<Scalar>& params) {
  double sq = 0.0;
  for (const auto& e : params) sq += e.grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

/// Scales every gradient by max_norm / total when the global L2 norm exceeds
/// max_norm. Returns the applied factor (1 when untouched).
template <typename Scalar>
double clip_global_norm(ParamStore<Scalar>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_global_norm: max_norm must be > 0");
  const double total = global_grad_norm(params);
  if (!(total > max_norm)) return 1.0;
  double scale = max_norm / total;
  for (auto& e : params) e.grad *= static_cast<Scalar>(scale);
  // Rounding in low precision can leave the result a few ulps above the
  // bound; shrink once more so the post-clip norm never exceeds it.
  const double after = global_grad_norm(params);
  if (after > max_norm) {
    const double extra =
        max_norm / after * (1.0 - 4.0 * static_cast<double>(Eigen::NumTraits<Scalar>::epsilon()));
    for (auto& e : params) e.grad *= static_cast<Scalar>(extra);
    scale *= extra;
  }
  return scale;
}

}  // namespace memeblip

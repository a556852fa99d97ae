// SPDX-License-Identifier: Apache-2.0
//
// Dense differentiable primitives for the fusion head. Every activation is a
// row-major Eigen matrix with one sample per row. Each primitive has a forward
// pass that optionally retains the context its backward pass needs, and an
// analytic backward pass that consumes that context.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

#include "memeblip/errors.hpp"
#include "memeblip/rng.hpp"

namespace memeblip::nd {

template <typename Scalar>
using Matrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row vector stored as a 1 x d matrix; biases and LayerNorm affines use it.
template <typename Scalar>
using RowParam = Matrix<Scalar>;

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Returns the retained context or raises StateError when the forward pass
/// ran without retention.
template <typename Ctx>
const Ctx& require(const std::optional<Ctx>& ctx, const char* primitive) {
  if (!ctx) {
    throw StateError(std::string("backward of ") + primitive +
                     " called without saved forward context");
  }
  return *ctx;
}

// ---------------------------------------------------------------------------
// linear: out = x W^T + b

template <typename Scalar>
struct LinearCtx {
  Matrix<Scalar> input;
};

/// `bias` may be empty (0 x 0) for a bias-free map.
template <typename Scalar>
Matrix<Scalar> linear_fwd(const Matrix<Scalar>& x, const Matrix<Scalar>& weight,
                          const Matrix<Scalar>& bias,
                          std::optional<LinearCtx<Scalar>>* ctx = nullptr) {
  if (x.cols() != weight.cols()) {
    throw DimensionError("linear: input x " + shape_str(x.rows(), x.cols()) +
                         " does not match weight W " +
                         shape_str(weight.rows(), weight.cols()));
  }
  const bool has_bias = bias.size() != 0;
  if (has_bias && (bias.rows() != 1 || bias.cols() != weight.rows())) {
    throw DimensionError("linear: bias b " + shape_str(bias.rows(), bias.cols()) +
                         " does not match weight W " +
                         shape_str(weight.rows(), weight.cols()));
  }
  Matrix<Scalar> out = x * weight.transpose();
  if (has_bias) out.rowwise() += bias.row(0);
  if (ctx) *ctx = LinearCtx<Scalar>{x};
  return out;
}

/// Accumulates into grad_weight (and grad_bias when non-null); returns dL/dx.
template <typename Scalar>
Matrix<Scalar> linear_bwd(const Matrix<Scalar>& upstream,
                          const std::optional<LinearCtx<Scalar>>& ctx,
                          const Matrix<Scalar>& weight,
                          Matrix<Scalar>& grad_weight,
                          Matrix<Scalar>* grad_bias) {
  const auto& saved = require(ctx, "linear");
  grad_weight.noalias() += upstream.transpose() * saved.input;
  if (grad_bias) grad_bias->row(0) += upstream.colwise().sum();
  return upstream * weight;
}

// ---------------------------------------------------------------------------
// layernorm over the feature axis, population variance

template <typename Scalar>
struct LayerNormCtx {
  Matrix<Scalar> normalized;  // (x - mean) * inv_std, before the affine
  Vector<Scalar> inv_std;
};

template <typename Scalar>
Matrix<Scalar> layernorm_normalize(const Matrix<Scalar>& x, Scalar eps,
                                   Vector<Scalar>* inv_std_out = nullptr) {
  const Eigen::Index d = x.cols();
  Matrix<Scalar> xhat(x.rows(), d);
  if (inv_std_out) inv_std_out->resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() / static_cast<Scalar>(d);
    const auto centered = (x.row(i).array() - mean).eval();
    const Scalar var = centered.square().sum() / static_cast<Scalar>(d);
    const Scalar inv_std = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std;
    if (inv_std_out) (*inv_std_out)(i) = inv_std;
  }
  return xhat;
}

template <typename Scalar>
Matrix<Scalar> layernorm_fwd(const Matrix<Scalar>& x, const Matrix<Scalar>& gamma,
                             const Matrix<Scalar>& beta, Scalar eps,
                             std::optional<LayerNormCtx<Scalar>>* ctx = nullptr) {
  if (x.cols() < 1) throw DimensionError("layernorm: feature width must be >= 1");
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols()) {
    throw DimensionError("layernorm: gamma " + shape_str(gamma.rows(), gamma.cols()) +
                         " / beta " + shape_str(beta.rows(), beta.cols()) +
                         " do not match input x " + shape_str(x.rows(), x.cols()));
  }
  if (!(eps > Scalar(0))) throw ConfigError("layernorm: eps must be > 0");
  Vector<Scalar> inv_std;
  Matrix<Scalar> xhat = layernorm_normalize(x, eps, &inv_std);
  Matrix<Scalar> out =
      (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (ctx) *ctx = LayerNormCtx<Scalar>{std::move(xhat), std::move(inv_std)};
  return out;
}

/// Full Jacobian-vector product of the row-wise normalization.
template <typename Scalar>
Matrix<Scalar> layernorm_bwd(const Matrix<Scalar>& upstream,
                             const std::optional<LayerNormCtx<Scalar>>& ctx,
                             const Matrix<Scalar>& gamma,
                             Matrix<Scalar>& grad_gamma,
                             Matrix<Scalar>& grad_beta) {
  const auto& saved = require(ctx, "layernorm");
  const auto& xhat = saved.normalized;
  grad_gamma.row(0) += (upstream.array() * xhat.array()).colwise().sum().matrix();
  grad_beta.row(0) += upstream.colwise().sum();

  const Eigen::Index d = upstream.cols();
  const Scalar inv_d = Scalar(1) / static_cast<Scalar>(d);
  Matrix<Scalar> dxhat = upstream.array().rowwise() * gamma.row(0).array();
  Matrix<Scalar> dx(upstream.rows(), d);
  for (Eigen::Index i = 0; i < upstream.rows(); ++i) {
    const Scalar sum_g = dxhat.row(i).sum();
    const Scalar sum_gx = dxhat.row(i).dot(xhat.row(i));
    dx.row(i) = (saved.inv_std(i) * inv_d) *
                (static_cast<Scalar>(d) * dxhat.row(i).array() - sum_g -
                 xhat.row(i).array() * sum_gx)
                    .matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// elementwise activations

template <typename Scalar>
struct ActivationCtx {
  Matrix<Scalar> input;
};

template <typename Scalar>
Matrix<Scalar> relu_fwd(const Matrix<Scalar>& x,
                        std::optional<ActivationCtx<Scalar>>* ctx = nullptr) {
  if (ctx) *ctx = ActivationCtx<Scalar>{x};
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> relu_bwd(const Matrix<Scalar>& upstream,
                        const std::optional<ActivationCtx<Scalar>>& ctx) {
  const auto& saved = require(ctx, "relu");
  return (saved.input.array() > Scalar(0)).select(upstream, Scalar(0));
}

enum class GeluMode { Exact, Tanh };

template <typename Scalar>
Scalar gelu_scalar(Scalar x, GeluMode mode = GeluMode::Exact) {
  using std::erf;
  using std::tanh;
  if (mode == GeluMode::Exact) {
    return x * Scalar(0.5) * (Scalar(1) + erf(x / std::numbers::sqrt2_v<Scalar>));
  }
  const Scalar k = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  return Scalar(0.5) * x * (Scalar(1) + tanh(k * (x + Scalar(0.044715) * x * x * x)));
}

template <typename Scalar>
Scalar gelu_grad_scalar(Scalar x, GeluMode mode = GeluMode::Exact) {
  if (mode == GeluMode::Exact) {
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
    const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> /
                       std::numbers::sqrt2_v<Scalar>;
    return cdf + x * pdf;
  }
  const Scalar k = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
  const Scalar c = Scalar(0.044715);
  const Scalar inner = k * (x + c * x * x * x);
  const Scalar t = std::tanh(inner);
  const Scalar dinner = k * (Scalar(1) + Scalar(3) * c * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * dinner;
}

template <typename Scalar>
Matrix<Scalar> gelu_fwd(const Matrix<Scalar>& x, GeluMode mode = GeluMode::Exact,
                        std::optional<ActivationCtx<Scalar>>* ctx = nullptr) {
  if (ctx) *ctx = ActivationCtx<Scalar>{x};
  return x.unaryExpr([mode](Scalar v) { return gelu_scalar(v, mode); });
}

template <typename Scalar>
Matrix<Scalar> gelu_bwd(const Matrix<Scalar>& upstream,
                        const std::optional<ActivationCtx<Scalar>>& ctx,
                        GeluMode mode = GeluMode::Exact) {
  const auto& saved = require(ctx, "gelu");
  return upstream.cwiseProduct(
      saved.input.unaryExpr([mode](Scalar v) { return gelu_grad_scalar(v, mode); }));
}

// ---------------------------------------------------------------------------
// inverted dropout

enum class Mode { Train, Eval };

template <typename Scalar>
struct DropoutCtx {
  Matrix<Scalar> mask;  // 0 for dropped, 1/(1-p) for kept
};

inline void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError(std::string(what) + ": dropout probability must be in [0,1), got " +
                      std::to_string(p));
  }
}

/// Draws one uniform per element in row-major order when training with p > 0.
/// The returned mask is all ones otherwise.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> dropout_fwd(
    const Matrix<Scalar>& x, double p, Mode mode, Rng& rng,
    std::optional<DropoutCtx<Scalar>>* ctx = nullptr) {
  check_probability(p, "dropout");
  Matrix<Scalar> mask = Matrix<Scalar>::Ones(x.rows(), x.cols());
  if (mode == Mode::Train && p > 0.0) {
    const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = rng.uniform() < p ? Scalar(0) : keep_scale;
    }
  }
  Matrix<Scalar> out = x.cwiseProduct(mask);
  if (ctx) *ctx = DropoutCtx<Scalar>{mask};
  return {std::move(out), std::move(mask)};
}

template <typename Scalar>
Matrix<Scalar> dropout_bwd(const Matrix<Scalar>& upstream,
                           const std::optional<DropoutCtx<Scalar>>& ctx) {
  return upstream.cwiseProduct(require(ctx, "dropout").mask);
}

// ---------------------------------------------------------------------------
// elementwise product and row L2 normalization

template <typename Scalar>
struct MulCtx {
  Matrix<Scalar> lhs;
  Matrix<Scalar> rhs;
};

template <typename Scalar>
Matrix<Scalar> mul_fwd(const Matrix<Scalar>& a, const Matrix<Scalar>& b,
                       std::optional<MulCtx<Scalar>>* ctx = nullptr) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("mul: operand a " + shape_str(a.rows(), a.cols()) +
                         " does not match operand b " + shape_str(b.rows(), b.cols()));
  }
  if (ctx) *ctx = MulCtx<Scalar>{a, b};
  return a.cwiseProduct(b);
}

template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> mul_bwd(
    const Matrix<Scalar>& upstream, const std::optional<MulCtx<Scalar>>& ctx) {
  const auto& saved = require(ctx, "mul");
  return {upstream.cwiseProduct(saved.rhs), upstream.cwiseProduct(saved.lhs)};
}

template <typename Scalar>
struct L2NormCtx {
  Matrix<Scalar> output;
  Vector<Scalar> norms;
};

template <typename Scalar>
Matrix<Scalar> l2norm_fwd(const Matrix<Scalar>& x,
                          std::optional<L2NormCtx<Scalar>>* ctx = nullptr) {
  Vector<Scalar> norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > Scalar(0))) {
      throw NormalizationError("l2norm: row " + std::to_string(i) +
                               " has zero norm and cannot be normalized");
    }
  }
  Matrix<Scalar> out = x.array().colwise() / norms.array();
  if (ctx) *ctx = L2NormCtx<Scalar>{out, std::move(norms)};
  return out;
}

/// dx = (dy - y (y . dy)) / |x|
template <typename Scalar>
Matrix<Scalar> l2norm_bwd(const Matrix<Scalar>& upstream,
                          const std::optional<L2NormCtx<Scalar>>& ctx) {
  const auto& saved = require(ctx, "l2norm");
  const Vector<Scalar> proj = upstream.cwiseProduct(saved.output).rowwise().sum();
  Matrix<Scalar> dx = upstream - (saved.output.array().colwise() * proj.array()).matrix();
  return dx.array().colwise() / saved.norms.array();
}

}  // namespace memeblip::nd

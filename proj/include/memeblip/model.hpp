// SPDX-License-Identifier: Apache-2.0
//
// The fusion head: per-modality projection stacks, residual adapters with a
// beta-mix, L2 normalization, Hadamard fusion, the pre-output dense block and
// the MLP classifier. Wiring depends on HeadConfig::ablation.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "memeblip/config.hpp"
#include "memeblip/errors.hpp"
#include "memeblip/ndcore.hpp"
#include "memeblip/param_store.hpp"
#include "memeblip/rng.hpp"

namespace memeblip {

using nd::Mode;

enum class Modality { Image, Text };

inline const char* projection_prefix(Modality m) {
  return m == Modality::Image ? "proj_img" : "proj_txt";
}
inline const char* adapter_prefix(Modality m) {
  return m == Modality::Image ? "adapter_img" : "adapter_txt";
}

/// Hand-enumerated manifest of trainable parameters for a configuration, in
/// ParamStore order.
std::vector<std::pair<std::string, Shape>> parameter_manifest(const HeadConfig& cfg);

/// Frozen random maps used by the minimal scenario in place of the
/// projections. Not trainable and never stored in a ParamStore.
template <typename Scalar>
struct FrozenMaps {
  nd::Matrix<Scalar> image;  // [shared_dim, img_dim]
  nd::Matrix<Scalar> text;   // [shared_dim, txt_dim]
};

template <typename Scalar>
void fill_fan_in_uniform(nd::Matrix<Scalar>& w, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
}

/// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)) in manifest order, biases and
/// LayerNorm shifts zero, LayerNorm scales one, adapter alpha from config.
template <typename Scalar>
ParamStore<Scalar> init_params(const HeadConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore<Scalar> store;
  for (auto& [name, shape] : parameter_manifest(cfg)) {
    auto& entry = store.add(name, shape);
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() &&
             name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".gamma")) {
      entry.value.setOnes();
    } else if (ends_with(".alpha")) {
      entry.value.setConstant(static_cast<Scalar>(cfg.adapter_alpha_init));
    } else if (shape.size() == 2) {
      fill_fan_in_uniform(entry.value, rng);
    }
  }
  return store;
}

template <typename Scalar>
FrozenMaps<Scalar> make_frozen_maps(const HeadConfig& cfg) {
  Rng rng(derive_seed(cfg.init_seed, Stream::Frozen));
  FrozenMaps<Scalar> maps{nd::Matrix<Scalar>(cfg.shared_dim, cfg.img_dim),
                          nd::Matrix<Scalar>(cfg.shared_dim, cfg.txt_dim)};
  fill_fan_in_uniform(maps.image, rng);
  fill_fan_in_uniform(maps.text, rng);
  return maps;
}

/// Configuration, trainable parameters and (for the minimal scenario) the
/// frozen maps, all derived from the config's init_seed.
template <typename Scalar>
struct HeadModel {
  HeadConfig config;
  ParamStore<Scalar> params;
  std::optional<FrozenMaps<Scalar>> frozen;
};

template <typename Scalar>
HeadModel<Scalar> make_head(const HeadConfig& cfg) {
  Rng rng(derive_seed(cfg.init_seed, Stream::Init));
  HeadModel<Scalar> head{cfg, init_params<Scalar>(cfg, rng), std::nullopt};
  if (!uses_trainable_projection(cfg.ablation)) head.frozen = make_frozen_maps<Scalar>(cfg);
  return head;
}

// ---------------------------------------------------------------------------
// traces

template <typename Scalar>
struct ProjectionLayerTrace {
  std::optional<nd::LinearCtx<Scalar>> linear;
  std::optional<nd::LayerNormCtx<Scalar>> norm;
  std::optional<nd::ActivationCtx<Scalar>> relu;
  std::optional<nd::DropoutCtx<Scalar>> dropout;
};

template <typename Scalar>
struct AdapterTrace {
  std::optional<nd::LayerNormCtx<Scalar>> norm_in;
  std::optional<nd::LinearCtx<Scalar>> down;
  std::optional<nd::ActivationCtx<Scalar>> gelu;
  std::optional<nd::LinearCtx<Scalar>> up;
  std::optional<nd::DropoutCtx<Scalar>> dropout;
  nd::Matrix<Scalar> branch;  // dropout output, multiplied by alpha
  std::optional<nd::LayerNormCtx<Scalar>> norm_out;
};

template <typename Scalar>
struct BranchTrace {
  std::vector<ProjectionLayerTrace<Scalar>> projection;
  std::optional<AdapterTrace<Scalar>> adapter;
  std::optional<nd::L2NormCtx<Scalar>> l2norm;
};

template <typename Scalar>
struct DenseTrace {
  std::optional<nd::LinearCtx<Scalar>> linear;
  std::optional<nd::LayerNormCtx<Scalar>> norm;
  std::optional<nd::ActivationCtx<Scalar>> relu;
  std::optional<nd::DropoutCtx<Scalar>> dropout;
};

template <typename Scalar>
struct ClassifierTrace {
  std::optional<nd::LayerNormCtx<Scalar>> norm;
  std::optional<nd::LinearCtx<Scalar>> hidden;
  std::optional<nd::ActivationCtx<Scalar>> gelu;
  std::optional<nd::DropoutCtx<Scalar>> dropout;
  std::optional<nd::LinearCtx<Scalar>> output;
};

/// Retained activations of one training-mode forward. Consumed exactly once
/// by backward_head.
template <typename Scalar>
struct ForwardTrace {
  BranchTrace<Scalar> image;
  BranchTrace<Scalar> text;
  std::optional<nd::MulCtx<Scalar>> fuse;
  std::optional<DenseTrace<Scalar>> preout;
  ClassifierTrace<Scalar> classifier;
  bool consumed = false;
};

template <typename Scalar>
struct ForwardResult {
  nd::Matrix<Scalar> logits;
  std::optional<ForwardTrace<Scalar>> trace;
};

// ---------------------------------------------------------------------------
// forward building blocks

namespace detail {

template <typename T>
std::optional<T>* slot(std::optional<T>& field, bool retain) {
  return retain ? &field : nullptr;
}

template <typename Scalar>
Scalar eps_of(const HeadConfig& cfg) {
  return static_cast<Scalar>(cfg.layernorm_eps);
}

inline nd::GeluMode gelu_mode(const HeadConfig& cfg) {
  return cfg.gelu_tanh ? nd::GeluMode::Tanh : nd::GeluMode::Exact;
}

}  // namespace detail

/// layer 0: Dropout(ReLU(LayerNorm(W0 x + b0)))
/// layer l: Dropout(ReLU(LayerNorm(Wl x + bl))) + x
template <typename Scalar>
nd::Matrix<Scalar> project(const nd::Matrix<Scalar>& x, Modality modality,
                           const ParamStore<Scalar>& params, const HeadConfig& cfg,
                           Mode mode, Rng& rng,
                           std::vector<ProjectionLayerTrace<Scalar>>* trace = nullptr) {
  const int expected = modality == Modality::Image ? cfg.img_dim : cfg.txt_dim;
  if (x.cols() != expected) {
    throw DimensionError(std::string(projection_prefix(modality)) + ": input width " +
                         std::to_string(x.cols()) + " does not match expected " +
                         std::to_string(expected));
  }
  if (!uses_trainable_projection(cfg.ablation)) {
    throw ConfigError("project: scenario " + std::string(to_string(cfg.ablation)) +
                      " has no trainable projection");
  }
  const bool retain = trace != nullptr;
  if (trace) trace->assign(static_cast<std::size_t>(cfg.proj_layers), {});
  nd::Matrix<Scalar> current = x;
  for (int l = 0; l < cfg.proj_layers; ++l) {
    const std::string base =
        std::string(projection_prefix(modality)) + "." + std::to_string(l);
    ProjectionLayerTrace<Scalar> scratch;
    auto& t = trace ? (*trace)[static_cast<std::size_t>(l)] : scratch;
    auto pre = nd::linear_fwd(current, params.value(base + ".W"), params.value(base + ".b"),
                              detail::slot(t.linear, retain));
    auto normed = nd::layernorm_fwd(pre, params.value(base + ".ln.gamma"),
                                    params.value(base + ".ln.beta"),
                                    detail::eps_of<Scalar>(cfg), detail::slot(t.norm, retain));
    auto act = nd::relu_fwd(normed, detail::slot(t.relu, retain));
    auto dropped = nd::dropout_fwd(act, cfg.dropout_proj, mode, rng,
                                   detail::slot(t.dropout, retain))
                       .first;
    if (l == 0) {
      current = std::move(dropped);
    } else {
      current = dropped + current;
    }
  }
  return current;
}

/// y = LayerNorm(x + alpha * Dropout(W2 GELU(W1 LayerNorm(x))))
template <typename Scalar>
nd::Matrix<Scalar> adapt(const nd::Matrix<Scalar>& x, Modality modality,
                         const ParamStore<Scalar>& params, const HeadConfig& cfg, Mode mode,
                         Rng& rng, AdapterTrace<Scalar>* trace = nullptr) {
  if (!uses_adapter(cfg.ablation)) {
    throw ConfigError("adapt: scenario " + std::string(to_string(cfg.ablation)) +
                      " has no adapter");
  }
  const std::string base = adapter_prefix(modality);
  const bool retain = trace != nullptr;
  AdapterTrace<Scalar> scratch;
  auto& t = trace ? *trace : scratch;
  const nd::Matrix<Scalar> no_bias;
  auto xn = nd::layernorm_fwd(x, params.value(base + ".ln_in.gamma"),
                              params.value(base + ".ln_in.beta"), detail::eps_of<Scalar>(cfg),
                              detail::slot(t.norm_in, retain));
  auto down = nd::linear_fwd(xn, params.value(base + ".W1"), no_bias,
                             detail::slot(t.down, retain));
  auto act = nd::gelu_fwd(down, detail::gelu_mode(cfg), detail::slot(t.gelu, retain));
  auto up = nd::linear_fwd(act, params.value(base + ".W2"), no_bias, detail::slot(t.up, retain));
  auto branch = nd::dropout_fwd(up, cfg.dropout_adapter, mode, rng,
                                detail::slot(t.dropout, retain))
                    .first;
  const Scalar alpha = params.value(base + ".alpha")(0, 0);
  nd::Matrix<Scalar> residual = x + alpha * branch;
  if (retain) t.branch = std::move(branch);
  return nd::layernorm_fwd(residual, params.value(base + ".ln_out.gamma"),
                           params.value(base + ".ln_out.beta"), detail::eps_of<Scalar>(cfg),
                           detail::slot(t.norm_out, retain));
}

/// beta * adapted + (1 - beta) * projected; beta = 0 and beta = 1 return the
/// corresponding operand bit-exactly.
template <typename Scalar>
nd::Matrix<Scalar> mix(const nd::Matrix<Scalar>& projected, const nd::Matrix<Scalar>& adapted,
                       double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ConfigError("mix: beta must be in [0,1], got " + std::to_string(beta));
  }
  if (projected.rows() != adapted.rows() || projected.cols() != adapted.cols()) {
    throw DimensionError("mix: projected " + nd::shape_str(projected.rows(), projected.cols()) +
                         " does not match adapted " +
                         nd::shape_str(adapted.rows(), adapted.cols()));
  }
  if (beta == 0.0) return projected;
  if (beta == 1.0) return adapted;
  const auto b = static_cast<Scalar>(beta);
  return b * adapted + (Scalar(1) - b) * projected;
}

/// Hadamard fusion followed by the optional pre-output block and the
/// classifier. Inputs must have unit-norm rows.
template <typename Scalar>
nd::Matrix<Scalar> fuse_and_head(const nd::Matrix<Scalar>& image, const nd::Matrix<Scalar>& text,
                                 const ParamStore<Scalar>& params, const HeadConfig& cfg,
                                 Mode mode, Rng& rng, ForwardTrace<Scalar>* trace = nullptr) {
  const double tol = 1e-4;
  for (const auto* m : {&image, &text}) {
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      const double n = static_cast<double>(m->row(i).norm());
      if (!(std::abs(n - 1.0) <= tol)) {
        throw ContractError("fuse_and_head: input row " + std::to_string(i) +
                            " has norm " + std::to_string(n) + ", expected unit norm");
      }
    }
  }
  const bool retain = trace != nullptr;
  nd::Matrix<Scalar> z =
      nd::mul_fwd(image, text, trace ? detail::slot(trace->fuse, true) : nullptr);

  if (uses_preout(cfg.ablation)) {
    DenseTrace<Scalar> scratch;
    if (trace) trace->preout.emplace();
    auto& t = trace ? *trace->preout : scratch;
    auto pre = nd::linear_fwd(z, params.value("preout.W"), params.value("preout.b"),
                              detail::slot(t.linear, retain));
    auto normed = nd::layernorm_fwd(pre, params.value("preout.ln.gamma"),
                                    params.value("preout.ln.beta"), detail::eps_of<Scalar>(cfg),
                                    detail::slot(t.norm, retain));
    auto act = nd::relu_fwd(normed, detail::slot(t.relu, retain));
    z = nd::dropout_fwd(act, cfg.dropout_preout, mode, rng, detail::slot(t.dropout, retain))
            .first;
  }

  ClassifierTrace<Scalar> scratch;
  auto& c = trace ? trace->classifier : scratch;
  if (uses_mlp_classifier(cfg.ablation)) {
    auto h = nd::layernorm_fwd(z, params.value("classifier.ln.gamma"),
                               params.value("classifier.ln.beta"), detail::eps_of<Scalar>(cfg),
                               detail::slot(c.norm, retain));
    if (cfg.classifier_hidden > 0) {
      h = nd::linear_fwd(h, params.value("classifier.hidden.W"),
                         params.value("classifier.hidden.b"), detail::slot(c.hidden, retain));
    }
    h = nd::gelu_fwd(h, detail::gelu_mode(cfg), detail::slot(c.gelu, retain));
    z = nd::dropout_fwd(h, cfg.dropout_cls, mode, rng, detail::slot(c.dropout, retain)).first;
  }
  return nd::linear_fwd(z, params.value("classifier.W"), params.value("classifier.b"),
                        detail::slot(c.output, retain));
}

/// One modality up to (and including) L2 normalization.
template <typename Scalar>
nd::Matrix<Scalar> encode_branch(const nd::Matrix<Scalar>& x, Modality modality,
                                 const HeadModel<Scalar>& head, Mode mode, Rng& rng,
                                 BranchTrace<Scalar>* trace) {
  const auto& cfg = head.config;
  nd::Matrix<Scalar> mixed;
  if (!uses_trainable_projection(cfg.ablation)) {
    const int expected = modality == Modality::Image ? cfg.img_dim : cfg.txt_dim;
    if (x.cols() != expected) {
      throw DimensionError(std::string(modality == Modality::Image ? "image" : "text") +
                           " embedding width " + std::to_string(x.cols()) +
                           " does not match expected " + std::to_string(expected));
    }
    if (!head.frozen) throw StateError("minimal scenario requires frozen maps");
    const auto& map = modality == Modality::Image ? head.frozen->image : head.frozen->text;
    mixed = x * map.transpose();
  } else {
    auto projected = project(x, modality, head.params, cfg, mode, rng,
                             trace ? &trace->projection : nullptr);
    if (uses_adapter(cfg.ablation)) {
      if (trace) trace->adapter.emplace();
      auto adapted = adapt(projected, modality, head.params, cfg, mode, rng,
                           trace ? &*trace->adapter : nullptr);
      mixed = mix(projected, adapted, cfg.mix_beta);
    } else {
      mixed = std::move(projected);
    }
  }
  return nd::l2norm_fwd(mixed, trace ? detail::slot(trace->l2norm, true) : nullptr);
}

/// Full pipeline. The trace is retained only in training mode. Dropout masks
/// are drawn from `rng` in a fixed order: image branch, text branch,
/// pre-output block, classifier.
template <typename Scalar>
ForwardResult<Scalar> forward(const nd::Matrix<Scalar>& image, const nd::Matrix<Scalar>& text,
                              const HeadModel<Scalar>& head, Mode mode, Rng& rng) {
  if (image.rows() != text.rows()) {
    throw DimensionError("forward: image batch has " + std::to_string(image.rows()) +
                         " rows but text batch has " + std::to_string(text.rows()));
  }
  ForwardResult<Scalar> result;
  ForwardTrace<Scalar>* trace = nullptr;
  if (mode == Mode::Train) trace = &result.trace.emplace();
  auto v = encode_branch(image, Modality::Image, head, mode, rng, trace ? &trace->image : nullptr);
  auto u = encode_branch(text, Modality::Text, head, mode, rng, trace ? &trace->text : nullptr);
  result.logits = fuse_and_head(v, u, head.params, head.config, mode, rng, trace);
  return result;
}

// ---------------------------------------------------------------------------
// backward

namespace detail {

template <typename Scalar>
void projection_bwd(nd::Matrix<Scalar> grad, Modality modality,
                    std::vector<ProjectionLayerTrace<Scalar>>& trace,
                    ParamStore<Scalar>& params, const HeadConfig& cfg) {
  for (int l = cfg.proj_layers - 1; l >= 0; --l) {
    const std::string base = std::string(projection_prefix(modality)) + "." + std::to_string(l);
    auto& t = trace[static_cast<std::size_t>(l)];
    auto g = nd::dropout_bwd(grad, t.dropout);
    g = nd::relu_bwd(g, t.relu);
    auto& ln_gamma = params.at(base + ".ln.gamma");
    auto& ln_beta = params.at(base + ".ln.beta");
    g = nd::layernorm_bwd(g, t.norm, ln_gamma.value, ln_gamma.grad, ln_beta.grad);
    auto& w = params.at(base + ".W");
    auto& b = params.at(base + ".b");
    if (l == 0) {
      // Encoder inputs are frozen; only parameter gradients are needed.
      const auto& saved = nd::require(t.linear, "linear");
      w.grad.noalias() += g.transpose() * saved.input;
      b.grad.row(0) += g.colwise().sum();
    } else {
      grad += nd::linear_bwd(g, t.linear, w.value, w.grad, &b.grad);
    }
  }
}

template <typename Scalar>
nd::Matrix<Scalar> adapter_bwd(const nd::Matrix<Scalar>& grad, Modality modality,
                               AdapterTrace<Scalar>& t, ParamStore<Scalar>& params,
                               nd::GeluMode gelu_mode) {
  const std::string base = adapter_prefix(modality);
  auto& g_out = params.at(base + ".ln_out.gamma");
  auto& b_out = params.at(base + ".ln_out.beta");
  nd::Matrix<Scalar> d_residual =
      nd::layernorm_bwd(grad, t.norm_out, g_out.value, g_out.grad, b_out.grad);
  auto& alpha = params.at(base + ".alpha");
  alpha.grad(0, 0) += d_residual.cwiseProduct(t.branch).sum();
  nd::Matrix<Scalar> g = alpha.value(0, 0) * d_residual;
  g = nd::dropout_bwd(g, t.dropout);
  auto& w2 = params.at(base + ".W2");
  g = nd::linear_bwd(g, t.up, w2.value, w2.grad, static_cast<nd::Matrix<Scalar>*>(nullptr));
  g = nd::gelu_bwd(g, t.gelu, gelu_mode);
  auto& w1 = params.at(base + ".W1");
  g = nd::linear_bwd(g, t.down, w1.value, w1.grad, static_cast<nd::Matrix<Scalar>*>(nullptr));
  auto& g_in = params.at(base + ".ln_in.gamma");
  auto& b_in = params.at(base + ".ln_in.beta");
  return d_residual + nd::layernorm_bwd(g, t.norm_in, g_in.value, g_in.grad, b_in.grad);
}

}  // namespace detail

/// Accumulates dL/dtheta for every trainable parameter given dL/dlogits.
/// Input gradients are discarded. The trace is consumed.
template <typename Scalar>
void backward_head(ForwardTrace<Scalar>& trace, const nd::Matrix<Scalar>& logits_grad,
                   HeadModel<Scalar>& head) {
  if (trace.consumed) throw StateError("backward_head: forward trace already consumed");
  trace.consumed = true;
  auto& params = head.params;
  const auto& cfg = head.config;
  const auto gelu_mode = detail::gelu_mode(cfg);

  auto& cls_w = params.at("classifier.W");
  auto& cls_b = params.at("classifier.b");
  nd::Matrix<Scalar> g =
      nd::linear_bwd(logits_grad, trace.classifier.output, cls_w.value, cls_w.grad, &cls_b.grad);

  if (uses_mlp_classifier(cfg.ablation)) {
    g = nd::dropout_bwd(g, trace.classifier.dropout);
    g = nd::gelu_bwd(g, trace.classifier.gelu, gelu_mode);
    if (cfg.classifier_hidden > 0) {
      auto& hw = params.at("classifier.hidden.W");
      auto& hb = params.at("classifier.hidden.b");
      g = nd::linear_bwd(g, trace.classifier.hidden, hw.value, hw.grad, &hb.grad);
    }
    auto& lg = params.at("classifier.ln.gamma");
    auto& lb = params.at("classifier.ln.beta");
    g = nd::layernorm_bwd(g, trace.classifier.norm, lg.value, lg.grad, lb.grad);
  }

  if (uses_preout(cfg.ablation)) {
    if (!trace.preout) throw StateError("backward_head: missing pre-output context");
    auto& t = *trace.preout;
    g = nd::dropout_bwd(g, t.dropout);
    g = nd::relu_bwd(g, t.relu);
    auto& lg = params.at("preout.ln.gamma");
    auto& lb = params.at("preout.ln.beta");
    g = nd::layernorm_bwd(g, t.norm, lg.value, lg.grad, lb.grad);
    auto& w = params.at("preout.W");
    auto& b = params.at("preout.b");
    g = nd::linear_bwd(g, t.linear, w.value, w.grad, &b.grad);
  }

  if (!uses_trainable_projection(cfg.ablation)) {
    params.mark_grads_ready();
    return;
  }

  auto [d_image, d_text] = nd::mul_bwd(g, trace.fuse);
  const std::pair<Modality, BranchTrace<Scalar>*> branches[] = {
      {Modality::Image, &trace.image}, {Modality::Text, &trace.text}};
  nd::Matrix<Scalar>* grads[] = {&d_image, &d_text};
  for (int k = 0; k < 2; ++k) {
    auto [modality, bt] = branches[k];
    nd::Matrix<Scalar> d_mixed = nd::l2norm_bwd(*grads[k], bt->l2norm);
    nd::Matrix<Scalar> d_projected;
    if (uses_adapter(cfg.ablation)) {
      if (!bt->adapter) throw StateError("backward_head: missing adapter context");
      const auto beta = static_cast<Scalar>(cfg.mix_beta);
      nd::Matrix<Scalar> d_adapted = beta * d_mixed;
      d_projected = (Scalar(1) - beta) * d_mixed;
      d_projected += detail::adapter_bwd(d_adapted, modality, *bt->adapter, params, gelu_mode);
    } else {
      d_projected = std::move(d_mixed);
    }
    detail::projection_bwd(std::move(d_projected), modality, bt->projection, params, cfg);
  }
  params.mark_grads_ready();
}

}  // namespace memeblip

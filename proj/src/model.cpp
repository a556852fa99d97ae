// SPDX-License-Identifier: Apache-2.0
#include "memeblip/model.hpp"

namespace memeblip {

std::vector<std::pair<std::string, Shape>> parameter_manifest(const HeadConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::int64_t d = cfg.shared_dim;
  const auto layernorm = [&](const std::string& base) {
    out.emplace_back(base + ".gamma", Shape{d});
    out.emplace_back(base + ".beta", Shape{d});
  };

  if (uses_trainable_projection(cfg.ablation)) {
    for (auto modality : {Modality::Image, Modality::Text}) {
      const std::int64_t in = modality == Modality::Image ? cfg.img_dim : cfg.txt_dim;
      for (int l = 0; l < cfg.proj_layers; ++l) {
        const std::string base = std::string(projection_prefix(modality)) + "." + std::to_string(l);
        out.emplace_back(base + ".W", Shape{d, l == 0 ? in : d});
        out.emplace_back(base + ".b", Shape{d});
        layernorm(base + ".ln");
      }
    }
  }
  if (uses_adapter(cfg.ablation)) {
    const std::int64_t bottleneck = cfg.adapter_bottleneck();
    for (auto modality : {Modality::Image, Modality::Text}) {
      const std::string base = adapter_prefix(modality);
      layernorm(base + ".ln_in");
      out.emplace_back(base + ".W1", Shape{bottleneck, d});
      out.emplace_back(base + ".W2", Shape{d, bottleneck});
      out.emplace_back(base + ".alpha", Shape{1});
      layernorm(base + ".ln_out");
    }
  }
  if (uses_preout(cfg.ablation)) {
    out.emplace_back("preout.W", Shape{d, d});
    out.emplace_back("preout.b", Shape{d});
    layernorm("preout.ln");
  }
  std::int64_t cls_in = d;
  if (uses_mlp_classifier(cfg.ablation)) {
    layernorm("classifier.ln");
    if (cfg.classifier_hidden > 0) {
      out.emplace_back("classifier.hidden.W", Shape{cfg.classifier_hidden, d});
      out.emplace_back("classifier.hidden.b", Shape{cfg.classifier_hidden});
      cls_in = cfg.classifier_hidden;
    }
  }
  out.emplace_back("classifier.W", Shape{cfg.num_classes, cls_in});
  out.emplace_back("classifier.b", Shape{cfg.num_classes});
  return out;
}

}  // namespace memeblip

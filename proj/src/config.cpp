// SPDX-License-Identifier: Apache-2.0
#include "memeblip/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "memeblip/errors.hpp"

namespace memeblip {

std::string_view to_string(Ablation ablation) noexcept {
  switch (ablation) {
    case Ablation::Full: return "full";
    case Ablation::NoMlp: return "no_mlp";
    case Ablation::NoMlpPreout: return "no_mlp_preout";
    case Ablation::NoMlpPreoutAdapter: return "no_mlp_preout_adapter";
    case Ablation::Minimal: return "minimal";
  }
  return "full";
}

Ablation parse_ablation(std::string_view text) {
  for (auto a : kAllAblations) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("unknown ablation '" + std::string(text) +
                    "' (expected full, no_mlp, no_mlp_preout, "
                    "no_mlp_preout_adapter or minimal)");
}

int HeadConfig::adapter_bottleneck() const {
  return std::max(16, static_cast<int>(std::floor(shared_dim / adapter_reduction)));
}

namespace {

void check_prob(const char* field, double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError(std::string(field) + " must be in [0,1), got " + format_double(p));
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void HeadConfig::validate() const {
  if (img_dim < 1) throw ConfigError("img_dim must be >= 1");
  if (txt_dim < 1) throw ConfigError("txt_dim must be >= 1");
  if (shared_dim < 1) throw ConfigError("shared_dim must be >= 1");
  if (proj_layers < 1) throw ConfigError("proj_layers must be >= 1");
  if (!(adapter_reduction > 1.0)) throw ConfigError("adapter_reduction must be > 1");
  if (!(mix_beta >= 0.0 && mix_beta <= 1.0)) {
    throw ConfigError("mix_beta must be in [0,1], got " + format_double(mix_beta));
  }
  check_prob("dropout_proj", dropout_proj);
  check_prob("dropout_adapter", dropout_adapter);
  check_prob("dropout_preout", dropout_preout);
  check_prob("dropout_cls", dropout_cls);
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (classifier_hidden < 0) throw ConfigError("classifier_hidden must be >= 0");
  if (!(layernorm_eps > 0.0)) throw ConfigError("layernorm_eps must be > 0");
  if (!std::isfinite(adapter_alpha_init)) throw ConfigError("adapter_alpha_init must be finite");
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("key-value line " + std::to_string(line_no) + " has no '='");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw FormatError("key-value line " + std::to_string(line_no) + " has an empty key");
    }
    kv[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string s(trim(text));
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(std::string(key) + ": expected a real number, got '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(std::string_view key, std::string_view text) {
  const auto s = trim(text);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view text) {
  const auto s = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(std::string(key) + ": expected an unsigned integer, got '" +
                      std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const auto s = trim(text);
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError(std::string(key) + ": expected a boolean, got '" + std::string(s) + "'");
}

KeyValues to_key_values(const HeadConfig& cfg) {
  return {
      {"img_dim", std::to_string(cfg.img_dim)},
      {"txt_dim", std::to_string(cfg.txt_dim)},
      {"shared_dim", std::to_string(cfg.shared_dim)},
      {"proj_layers", std::to_string(cfg.proj_layers)},
      {"adapter_reduction", format_double(cfg.adapter_reduction)},
      {"adapter_alpha_init", format_double(cfg.adapter_alpha_init)},
      {"mix_beta", format_double(cfg.mix_beta)},
      {"dropout_proj", format_double(cfg.dropout_proj)},
      {"dropout_adapter", format_double(cfg.dropout_adapter)},
      {"dropout_preout", format_double(cfg.dropout_preout)},
      {"dropout_cls", format_double(cfg.dropout_cls)},
      {"num_classes", std::to_string(cfg.num_classes)},
      {"classifier_hidden", std::to_string(cfg.classifier_hidden)},
      {"layernorm_eps", format_double(cfg.layernorm_eps)},
      {"gelu_tanh", cfg.gelu_tanh ? "true" : "false"},
      {"ablation", std::string(to_string(cfg.ablation))},
      {"init_seed", std::to_string(cfg.init_seed)},
  };
}

KeyValues apply_key_values(HeadConfig& cfg, const KeyValues& kv) {
  KeyValues rest;
  for (const auto& [k, v] : kv) {
    if (k == "img_dim") cfg.img_dim = static_cast<int>(parse_int(k, v));
    else if (k == "txt_dim") cfg.txt_dim = static_cast<int>(parse_int(k, v));
    else if (k == "shared_dim") cfg.shared_dim = static_cast<int>(parse_int(k, v));
    else if (k == "proj_layers") cfg.proj_layers = static_cast<int>(parse_int(k, v));
    else if (k == "adapter_reduction") cfg.adapter_reduction = parse_double(k, v);
    else if (k == "adapter_alpha_init") cfg.adapter_alpha_init = parse_double(k, v);
    else if (k == "mix_beta") cfg.mix_beta = parse_double(k, v);
    else if (k == "dropout_proj") cfg.dropout_proj = parse_double(k, v);
    else if (k == "dropout_adapter") cfg.dropout_adapter = parse_double(k, v);
    else if (k == "dropout_preout") cfg.dropout_preout = parse_double(k, v);
    else if (k == "dropout_cls") cfg.dropout_cls = parse_double(k, v);
    else if (k == "num_classes") cfg.num_classes = static_cast<int>(parse_int(k, v));
    else if (k == "classifier_hidden") cfg.classifier_hidden = static_cast<int>(parse_int(k, v));
    else if (k == "layernorm_eps") cfg.layernorm_eps = parse_double(k, v);
    else if (k == "gelu_tanh") cfg.gelu_tanh = parse_bool(k, v);
    else if (k == "ablation") cfg.ablation = parse_ablation(v);
    else if (k == "init_seed") cfg.init_seed = parse_u64(k, v);
    else rest.emplace(k, v);
  }
  return rest;
}

}  // namespace memeblip

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace memeblip {

/// Module-removal scenarios, ordered from the full head to the minimal one.
/// Each scenario removes everything the previous one removed plus one more
/// component.
enum class Ablation : std::uint8_t {
  Full,
  NoMlp,
  NoMlpPreout,
  NoMlpPreoutAdapter,
  Minimal,
};

inline constexpr Ablation kAllAblations[] = {
    Ablation::Full, Ablation::NoMlp, Ablation::NoMlpPreout,
    Ablation::NoMlpPreoutAdapter, Ablation::Minimal};

std::string_view to_string(Ablation ablation) noexcept;
Ablation parse_ablation(std::string_view text);

constexpr bool uses_mlp_classifier(Ablation a) noexcept { return a == Ablation::Full; }
constexpr bool uses_preout(Ablation a) noexcept {
  return a == Ablation::Full || a == Ablation::NoMlp;
}
constexpr bool uses_adapter(Ablation a) noexcept {
  return a == Ablation::Full || a == Ablation::NoMlp || a == Ablation::NoMlpPreout;
}
constexpr bool uses_trainable_projection(Ablation a) noexcept {
  return a != Ablation::Minimal;
}

/// Architectural hyperparameters. Together with init_seed this fully
/// determines parameter names, shapes, and initial values.
struct HeadConfig {
  int img_dim = 1408;
  int txt_dim = 768;
  int shared_dim = 1024;
  int proj_layers = 2;
  double adapter_reduction = 1.5;
  double adapter_alpha_init = 0.1;
  double mix_beta = 0.2;
  double dropout_proj = 0.1;
  double dropout_adapter = 0.1;
  double dropout_preout = 0.1;
  double dropout_cls = 0.2;
  int num_classes = 2;
  int classifier_hidden = 0;  // 0 disables the optional hidden affine layer
  double layernorm_eps = 1e-5;
  bool gelu_tanh = false;
  Ablation ablation = Ablation::Full;
  std::uint64_t init_seed = 0;

  /// max(16, floor(shared_dim / adapter_reduction))
  int adapter_bottleneck() const;

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  bool operator==(const HeadConfig&) const = default;
};

/// Flat `key = value` text, one entry per line, `#` starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);

/// Doubles are written with round-trip precision so a parsed echo reproduces
/// the exact configuration.
std::string format_double(double value);
double parse_double(std::string_view key, std::string_view text);
std::int64_t parse_int(std::string_view key, std::string_view text);
std::uint64_t parse_u64(std::string_view key, std::string_view text);
bool parse_bool(std::string_view key, std::string_view text);

KeyValues to_key_values(const HeadConfig& cfg);
/// Applies recognized keys onto `cfg`; unknown keys are returned untouched.
KeyValues apply_key_values(HeadConfig& cfg, const KeyValues& kv);

}  // namespace memeblip

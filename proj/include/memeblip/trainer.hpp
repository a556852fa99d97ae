// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "memeblip/checkpoint.hpp"
#include "memeblip/config.hpp"
#include "memeblip/dataio.hpp"
#include "memeblip/metrics.hpp"
#include "memeblip/model.hpp"
#include "memeblip/optim.hpp"
#include "memeblip/real.hpp"

namespace memeblip {

/// Multiplies one parameter's gradient at one global step before it is
/// logged and clipped. Used to validate the spike diagnostics.
struct SpikeInjection {
  std::int64_t step = 0;
  std::string param;
  double factor = 1000.0;
};

struct TrainConfig {
  int epochs = 12;
  double base_lr = 5e-5;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  int warmup_epochs = 3;
  int batch_size = 64;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Reduction reduction = Reduction::Mean;
  /// Stop after this many completed epochs (the schedule still spans
  /// `epochs`). Used to produce resumable mid-run checkpoints.
  std::optional<int> stop_after_epoch;
  std::optional<SpikeInjection> inject;
  bool log_grad_std = true;

  void validate() const;
};

KeyValues to_key_values(const TrainConfig& cfg);
KeyValues apply_key_values(TrainConfig& cfg, const KeyValues& kv);

struct EpochLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double val_auroc = 0.0;
  double val_f1 = 0.0;
  double lr = 0.0;               // rate used by the epoch's last step
  double max_clipped_norm = 0.0; // largest post-clip global gradient norm

  bool operator==(const EpochLogRow&) const = default;
};

struct GradStdRow {
  int epoch = 0;
  std::int64_t step = 0;
  std::string param;
  double grad_std = 0.0;

  bool operator==(const GradStdRow&) const = default;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLogRow> epochs;
  std::vector<GradStdRow> grad_std;
};

/// Resumes from `last`; `best` restores selection state when available.
struct ResumeState {
  Checkpoint last;
  std::optional<Checkpoint> best;
};

/// Per step: forward (train mode), cross-entropy, backward, clipping, AdamW
/// with the warmup-cosine rate. Per epoch: validation metrics and best
/// checkpoint selection by validation AUROC (earliest epoch wins ties).
/// The seed drives initialization, frozen maps, batch order and dropout.
TrainResult train(const Dataset& ds, const HeadConfig& head_cfg, const TrainConfig& cfg,
                  std::uint64_t seed, const ResumeState* resume = nullptr);

/// Eval-mode forward, argmax predictions and class-1 softmax scores.
EvalReport evaluate(const HeadModel<Real>& head, const Dataset& ds, Split split);
EvalReport evaluate(const Checkpoint& ckpt, const Dataset& ds, Split split);

/// Logits of the given records in eval mode.
nd::Matrix<Real> predict_logits(const HeadModel<Real>& head, const Dataset& ds,
                                const std::vector<std::size_t>& rows);

struct SeedRun {
  std::uint64_t seed = 0;
  EvalReport test;
  TrainResult result;
};

struct SeedStudy {
  std::vector<EvalReport> reports;  // one per seed, test split
  SeedAggregate aggregate;
};

SeedStudy run_seeds(const Dataset& ds, const HeadConfig& head_cfg, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// gradient diagnostics

std::string grad_std_csv_header();
std::string to_csv(const std::vector<GradStdRow>& rows);
std::vector<GradStdRow> parse_grad_std_csv(std::string_view text);

std::string epoch_log_csv(const std::vector<EpochLogRow>& rows);

struct GradEpochSummary {
  int epoch = 0;
  std::string param;
  double mean = 0.0;
  double max = 0.0;
};

struct GradSpike {
  std::string param;
  int epoch = 0;
  double max = 0.0;
  double baseline = 0.0;  // median of the parameter's step-level stds
};

struct GradDiagnosis {
  std::vector<GradEpochSummary> summary;
  std::vector<GradSpike> spikes;
  std::set<std::string> flagged;

  std::string csv() const;
};

/// Summarizes step-level grad_std per (epoch, parameter) and flags any
/// parameter whose per-epoch max exceeds `multiple` times its median.
GradDiagnosis grad_diagnose(const std::vector<GradStdRow>& log, double multiple = 10.0);

}  // namespace memeblip

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "memeblip/config.hpp"
#include "memeblip/dataio.hpp"
#include "memeblip/metrics.hpp"
#include "memeblip/trainer.hpp"

namespace memeblip {

struct AblationRun {
  Ablation scenario = Ablation::Full;
  std::vector<EvalReport> reports;
  SeedAggregate aggregate;
};

struct AblationStudy {
  std::vector<AblationRun> runs;  // in kAllAblations order

  /// One row per scenario: mean and std of acc, auroc and macro_f1 as
  /// fractions at full precision.
  std::string csv() const;
  /// Aligned text table, one row per scenario with "mean ± std" percentages.
  std::string table() const;
};

/// Human-readable scenario label for tables.
std::string scenario_label(Ablation a);

/// Runs every scenario with the same dataset, split and seed list so batch
/// order and dropout streams are paired across scenarios. `parallel` bounds
/// the number of scenarios trained concurrently (1 = sequential).
AblationStudy run_study(const Dataset& ds, const HeadConfig& base, const TrainConfig& cfg,
                        int parallel = 1);

}  // namespace memeblip

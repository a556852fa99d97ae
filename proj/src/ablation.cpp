// SPDX-License-Identifier: Apache-2.0
#include "memeblip/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <thread>

namespace memeblip {

std::string scenario_label(Ablation a) {
  switch (a) {
    case Ablation::Full: return "All modules (baseline)";
    case Ablation::NoMlp: return "Remove MLP classifier";
    case Ablation::NoMlpPreout: return "w/o MLP + Pre-Output";
    case Ablation::NoMlpPreoutAdapter: return "w/o MLP + Pre + Adapter";
    case Ablation::Minimal: return "Remove All Modules";
  }
  return "";
}

AblationStudy run_study(const Dataset& ds, const HeadConfig& base, const TrainConfig& cfg,
                        int parallel) {
  cfg.validate();
  base.validate();
  constexpr std::size_t kCount = std::size(kAllAblations);
  AblationStudy study;
  study.runs.resize(kCount);
  std::vector<std::exception_ptr> errors(kCount);

  const auto run_one = [&](std::size_t i) {
    try {
      HeadConfig head = base;
      head.ablation = kAllAblations[i];
      auto seeds = run_seeds(ds, head, cfg);
      study.runs[i] = AblationRun{kAllAblations[i], std::move(seeds.reports), seeds.aggregate};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const int workers = std::clamp(parallel, 1, static_cast<int>(kCount));
  if (workers == 1) {
    for (std::size_t i = 0; i < kCount; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < kCount; i = next++) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return study;
}

std::string AblationStudy::csv() const {
  std::string out = "scenario,acc_mean,acc_std,auroc_mean,auroc_std,macro_f1_mean,macro_f1_std\n";
  char buf[256];
  for (const auto& run : runs) {
    const auto& a = run.aggregate;
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", a.accuracy.mean,
                  a.accuracy.std, a.auroc.mean, a.auroc.std, a.macro_f1.mean, a.macro_f1.std);
    out += std::string(to_string(run.scenario)) + buf;
  }
  return out;
}

std::string AblationStudy::table() const {
  std::size_t width = std::string("Scenario").size();
  for (const auto& run : runs) width = std::max(width, scenario_label(run.scenario).size());
  const auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  constexpr std::size_t kCol = 16;
  std::string out = pad("Scenario", width) + " | " + pad("ACC (%)", kCol) + " | " +
                    pad("AUROC (%)", kCol) + " | " + "F1 (%)\n";
  out += std::string(width, '-') + "-+-" + std::string(kCol, '-') + "-+-" +
         std::string(kCol, '-') + "-+-" + std::string(kCol, '-') + "\n";
  for (const auto& run : runs) {
    // "±" is two bytes in UTF-8 but one column wide.
    out += pad(scenario_label(run.scenario), width) + " | " +
           pad(format_mean_std(run.aggregate.accuracy), kCol + 1) + " | " +
           pad(format_mean_std(run.aggregate.auroc), kCol + 1) + " | " +
           format_mean_std(run.aggregate.macro_f1) + "\n";
  }
  return out;
}

}  // namespace memeblip

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace memeblip {

/// Binary confusion counts with class 1 as the positive class.
struct Confusion {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const Confusion&) const = default;
};

Confusion confusion(std::span<const int> preds, std::span<const int> truth);

double accuracy(std::span<const int> preds, std::span<const int> truth);

/// Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie), computed from
/// mid-ranks. Throws DataError when only one class is present.
double auroc(std::span<const double> scores, std::span<const int> truth);

/// Unweighted mean of the two per-class F1 scores. Zero denominators count
/// as 0 and increment `zero_division` when given.
double macro_f1(std::span<const int> preds, std::span<const int> truth,
                int* zero_division = nullptr);

/// Binary F1 with `positive` as the positive class.
double binary_f1(const Confusion& c, int positive, int* zero_division = nullptr);

struct EvalReport {
  std::string split;
  std::uint64_t seed = 0;
  std::int64_t n = 0;
  double accuracy = 0.0;
  double auroc = 0.0;
  double macro_f1 = 0.0;
  double balanced_accuracy = 0.0;
  Confusion confusion;

  bool operator==(const EvalReport&) const = default;
};

EvalReport make_report(std::span<const int> preds, std::span<const double> scores,
                       std::span<const int> truth);

/// `key = value` block, one metric per line.
std::string to_text_block(const EvalReport& r);
std::string csv_header();
/// Columns: seed, split, acc, auroc, macro_f1, tp, tn, fp, fn
std::string to_csv_row(const EvalReport& r);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
  double min = 0.0;
  double max = 0.0;
};

struct SeedAggregate {
  std::int64_t runs = 0;
  MetricSummary accuracy;
  MetricSummary auroc;
  MetricSummary macro_f1;

  bool operator==(const SeedAggregate&) const = default;
};

inline bool operator==(const MetricSummary& a, const MetricSummary& b) {
  return a.mean == b.mean && a.std == b.std && a.min == b.min && a.max == b.max;
}

MetricSummary summarize(std::span<const double> values);

/// Runs are aggregated in ascending seed order so the result does not depend
/// on the order they were produced in.
SeedAggregate aggregate(std::span<const EvalReport> runs);

/// Percent with two decimals, rounding half up: "76.90 ± 0.55".
std::string format_mean_std(const MetricSummary& s);
std::string format_percent(double fraction);

}  // namespace memeblip

// SPDX-License-Identifier: Apache-2.0
#include "memeblip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "memeblip/errors.hpp"

namespace memeblip {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DataError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                    std::to_string(b) + ")");
  }
  if (a == 0) throw DataError(std::string(what) + ": empty input");
}

double safe_ratio(double num, double den, int* zero_division) {
  if (den == 0.0) {
    if (zero_division) ++*zero_division;
    return 0.0;
  }
  return num / den;
}

}  // namespace

Confusion confusion(std::span<const int> preds, std::span<const int> truth) {
  check_lengths(preds.size(), truth.size(), "confusion");
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i];
    const int t = truth[i];
    if ((p != 0 && p != 1) || (t != 0 && t != 1)) {
      throw DataError("confusion: labels must be 0 or 1 (index " + std::to_string(i) + ")");
    }
    if (p == 1 && t == 1) ++c.tp;
    else if (p == 0 && t == 0) ++c.tn;
    else if (p == 1) ++c.fp;
    else ++c.fn;
  }
  return c;
}

double accuracy(std::span<const int> preds, std::span<const int> truth) {
  const auto c = confusion(preds, truth);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double auroc(std::span<const double> scores, std::span<const int> truth) {
  check_lengths(scores.size(), truth.size(), "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::int64_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // 1-based mid-rank of the tie group [i, j]
    const double mid = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      const int t = truth[order[k]];
      if (t != 0 && t != 1) throw DataError("auroc: labels must be 0 or 1");
      if (t == 1) {
        rank_sum_pos += mid;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DataError("auroc: undefined with a single class present (" + std::to_string(n_pos) +
                    " positives, " + std::to_string(n_neg) + " negatives)");
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double binary_f1(const Confusion& c, int positive, int* zero_division) {
  const double tp = static_cast<double>(positive == 1 ? c.tp : c.tn);
  const double fp = static_cast<double>(positive == 1 ? c.fp : c.fn);
  const double fn = static_cast<double>(positive == 1 ? c.fn : c.fp);
  const double precision = safe_ratio(tp, tp + fp, zero_division);
  const double recall = safe_ratio(tp, tp + fn, zero_division);
  return safe_ratio(2.0 * precision * recall, precision + recall, zero_division);
}

double macro_f1(std::span<const int> preds, std::span<const int> truth, int* zero_division) {
  const auto c = confusion(preds, truth);
  return 0.5 * (binary_f1(c, 0, zero_division) + binary_f1(c, 1, zero_division));
}

EvalReport make_report(std::span<const int> preds, std::span<const double> scores,
                       std::span<const int> truth) {
  EvalReport r;
  r.confusion = confusion(preds, truth);
  r.n = r.confusion.total();
  r.accuracy = static_cast<double>(r.confusion.tp + r.confusion.tn) / static_cast<double>(r.n);
  r.macro_f1 = macro_f1(preds, truth);
  const auto& c = r.confusion;
  const double tpr = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn), nullptr);
  const double tnr = safe_ratio(static_cast<double>(c.tn), static_cast<double>(c.tn + c.fp), nullptr);
  r.balanced_accuracy = 0.5 * (tpr + tnr);
  try {
    r.auroc = auroc(scores, truth);
  } catch (const DataError&) {
    r.auroc = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

std::string to_text_block(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "split = %s\nseed = %llu\nn = %lld\naccuracy = %.17g\nauroc = %.17g\n"
                "macro_f1 = %.17g\nbalanced_accuracy = %.17g\ntp = %lld\ntn = %lld\n"
                "fp = %lld\nfn = %lld\n",
                r.split.c_str(), static_cast<unsigned long long>(r.seed),
                static_cast<long long>(r.n), r.accuracy, r.auroc, r.macro_f1,
                r.balanced_accuracy, static_cast<long long>(r.confusion.tp),
                static_cast<long long>(r.confusion.tn), static_cast<long long>(r.confusion.fp),
                static_cast<long long>(r.confusion.fn));
  return buf;
}

std::string csv_header() { return "seed,split,acc,auroc,macro_f1,tp,tn,fp,fn"; }

std::string to_csv_row(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%s,%.17g,%.17g,%.17g,%lld,%lld,%lld,%lld",
                static_cast<unsigned long long>(r.seed), r.split.c_str(), r.accuracy, r.auroc,
                r.macro_f1, static_cast<long long>(r.confusion.tp),
                static_cast<long long>(r.confusion.tn), static_cast<long long>(r.confusion.fp),
                static_cast<long long>(r.confusion.fn));
  return buf;
}

MetricSummary summarize(std::span<const double> values) {
  if (values.empty()) throw DataError("summarize: no values");
  MetricSummary s;
  double sum = 0.0;
  s.min = values[0];
  s.max = values[0];
  for (double v : values) {
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

SeedAggregate aggregate(std::span<const EvalReport> runs) {
  if (runs.empty()) throw DataError("aggregate: no runs");
  std::vector<const EvalReport*> ordered;
  for (const auto& r : runs) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const EvalReport* a, const EvalReport* b) { return a->seed < b->seed; });
  std::vector<double> acc, auc, f1;
  for (const auto* r : ordered) {
    acc.push_back(r->accuracy);
    auc.push_back(r->auroc);
    f1.push_back(r->macro_f1);
  }
  SeedAggregate a;
  a.runs = static_cast<std::int64_t>(runs.size());
  a.accuracy = summarize(acc);
  a.auroc = summarize(auc);
  a.macro_f1 = summarize(f1);
  return a;
}

std::string format_percent(double fraction) {
  if (!std::isfinite(fraction)) return "nan";
  const double hundredths = std::floor(fraction * 10000.0 + 0.5 + 1e-7);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", hundredths / 100.0);
  return buf;
}

std::string format_mean_std(const MetricSummary& s) {
  return format_percent(s.mean) + " ± " + format_percent(s.std);
}

}  // namespace memeblip

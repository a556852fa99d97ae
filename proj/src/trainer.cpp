// SPDX-License-Identifier: Apache-2.0
#include "memeblip/trainer.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "memeblip/errors.hpp"

namespace memeblip {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw ConfigError("warmup_epochs must be in [0, epochs)");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(base_lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (stop_after_epoch && (*stop_after_epoch < 0 || *stop_after_epoch > epochs)) {
    throw ConfigError("stop_after_epoch must be in [0, epochs]");
  }
}

KeyValues to_key_values(const TrainConfig& cfg) {
  std::string seeds;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (i) seeds += ",";
    seeds += std::to_string(cfg.seeds[i]);
  }
  return {
      {"epochs", std::to_string(cfg.epochs)},
      {"lr", format_double(cfg.base_lr)},
      {"weight_decay", format_double(cfg.weight_decay)},
      {"clip_norm", format_double(cfg.clip_norm)},
      {"warmup_epochs", std::to_string(cfg.warmup_epochs)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"seeds", seeds},
      {"adam_beta1", format_double(cfg.adam_beta1)},
      {"adam_beta2", format_double(cfg.adam_beta2)},
      {"adam_eps", format_double(cfg.adam_eps)},
      {"loss_reduction", cfg.reduction == Reduction::Mean ? "mean" : "sum"},
  };
}

KeyValues apply_key_values(TrainConfig& cfg, const KeyValues& kv) {
  KeyValues rest;
  for (const auto& [k, v] : kv) {
    if (k == "epochs") cfg.epochs = static_cast<int>(parse_int(k, v));
    else if (k == "lr") cfg.base_lr = parse_double(k, v);
    else if (k == "weight_decay") cfg.weight_decay = parse_double(k, v);
    else if (k == "clip_norm") cfg.clip_norm = parse_double(k, v);
    else if (k == "warmup_epochs") cfg.warmup_epochs = static_cast<int>(parse_int(k, v));
    else if (k == "batch_size") cfg.batch_size = static_cast<int>(parse_int(k, v));
    else if (k == "adam_beta1") cfg.adam_beta1 = parse_double(k, v);
    else if (k == "adam_beta2") cfg.adam_beta2 = parse_double(k, v);
    else if (k == "adam_eps") cfg.adam_eps = parse_double(k, v);
    else if (k == "loss_reduction") {
      if (v == "mean") cfg.reduction = Reduction::Mean;
      else if (v == "sum") cfg.reduction = Reduction::Sum;
      else throw ConfigError("loss_reduction must be mean or sum");
    } else if (k == "seeds") {
      cfg.seeds.clear();
      std::string item;
      std::istringstream ss(v);
      while (std::getline(ss, item, ',')) cfg.seeds.push_back(parse_u64(k, item));
    } else {
      rest.emplace(k, v);
    }
  }
  return rest;
}

namespace {

struct SplitMatrices {
  nd::Matrix<Real> img;
  nd::Matrix<Real> txt;
  std::vector<int> labels;
};

SplitMatrices gather(const Dataset& ds, const std::vector<std::size_t>& rows) {
  SplitMatrices m{nd::Matrix<Real>(static_cast<Eigen::Index>(rows.size()), ds.img_dim),
                  nd::Matrix<Real>(static_cast<Eigen::Index>(rows.size()), ds.txt_dim),
                  {}};
  m.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = ds.records[rows[i]];
    const auto ii = static_cast<Eigen::Index>(i);
    for (int k = 0; k < ds.img_dim; ++k) m.img(ii, k) = static_cast<Real>(r.img[static_cast<std::size_t>(k)]);
    for (int k = 0; k < ds.txt_dim; ++k) m.txt(ii, k) = static_cast<Real>(r.txt[static_cast<std::size_t>(k)]);
    m.labels.push_back(r.label);
  }
  return m;
}

template <typename Rows>
SplitMatrices select(const SplitMatrices& src, const Rows& rows) {
  SplitMatrices m{nd::Matrix<Real>(static_cast<Eigen::Index>(rows.size()), src.img.cols()),
                  nd::Matrix<Real>(static_cast<Eigen::Index>(rows.size()), src.txt.cols()),
                  {}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto r = static_cast<Eigen::Index>(rows[i]);
    m.img.row(ii) = src.img.row(r);
    m.txt.row(ii) = src.txt.row(r);
    m.labels.push_back(src.labels[rows[i]]);
  }
  return m;
}

void check_dims(const Dataset& ds, const HeadConfig& cfg) {
  if (ds.img_dim != cfg.img_dim || ds.txt_dim != cfg.txt_dim) {
    throw DimensionError("dataset dims (" + std::to_string(ds.img_dim) + ", " +
                         std::to_string(ds.txt_dim) + ") do not match head config (" +
                         std::to_string(cfg.img_dim) + ", " + std::to_string(cfg.txt_dim) + ")");
  }
}

double element_std(const nd::Matrix<Real>& g) {
  const double n = static_cast<double>(g.size());
  const double mean = g.template cast<double>().sum() / n;
  const double var = (g.template cast<double>().array() - mean).square().sum() / n;
  return std::sqrt(var);
}

constexpr Eigen::Index kEvalBatch = 256;

EvalReport evaluate_matrices(const HeadModel<Real>& head, const SplitMatrices& data) {
  std::vector<int> preds;
  std::vector<double> scores;
  preds.reserve(data.labels.size());
  scores.reserve(data.labels.size());
  Rng unused(0);
  for (Eigen::Index start = 0; start < data.img.rows(); start += kEvalBatch) {
    const Eigen::Index len = std::min(kEvalBatch, data.img.rows() - start);
    const nd::Matrix<Real> img = data.img.middleRows(start, len);
    const nd::Matrix<Real> txt = data.txt.middleRows(start, len);
    const auto logits = forward(img, txt, head, Mode::Eval, unused).logits;
    const auto p1 = class_probability(logits, 1);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index best = 0;
      logits.row(i).maxCoeff(&best);
      preds.push_back(static_cast<int>(best));
      scores.push_back(p1[static_cast<std::size_t>(i)]);
    }
  }
  return make_report(preds, scores, data.labels);
}

}  // namespace

nd::Matrix<Real> predict_logits(const HeadModel<Real>& head, const Dataset& ds,
                                const std::vector<std::size_t>& rows) {
  check_dims(ds, head.config);
  const auto data = gather(ds, rows);
  Rng unused(0);
  return forward(data.img, data.txt, head, Mode::Eval, unused).logits;
}

EvalReport evaluate(const HeadModel<Real>& head, const Dataset& ds, Split split) {
  check_dims(ds, head.config);
  const auto rows = ds.indices_of(split);
  if (rows.empty()) {
    throw DataError("evaluate: split '" + std::string(to_string(split)) + "' is empty");
  }
  auto report = evaluate_matrices(head, gather(ds, rows));
  report.split = std::string(to_string(split));
  return report;
}

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& ds, Split split) {
  return evaluate(head_from_checkpoint(ckpt), ds, split);
}

TrainResult train(const Dataset& ds, const HeadConfig& head_cfg, const TrainConfig& cfg,
                  std::uint64_t seed, const ResumeState* resume) {
  cfg.validate();
  check_dims(ds, head_cfg);
  const auto train_rows = ds.indices_of(Split::Train);
  const auto val_rows = ds.indices_of(Split::Val);
  if (train_rows.empty()) throw DataError("train: the train split is empty");
  if (val_rows.empty()) throw DataError("train: the val split is empty");
  {
    std::size_t positives = 0;
    for (auto r : val_rows) positives += ds.records[r].label == 1;
    if (positives == 0 || positives == val_rows.size()) {
      throw DataError("train: the val split contains a single class; validation AUROC is undefined");
    }
  }

  const SplitMatrices train_data = gather(ds, train_rows);
  const SplitMatrices val_data = gather(ds, val_rows);

  TrainResult result;
  HeadModel<Real> head;
  OptimState<Real> optim;
  int start_epoch = 0;
  const AdamWHyper hyper{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
  if (resume) {
    const auto& last = resume->last;
    if (last.head.img_dim != head_cfg.img_dim || last.head.txt_dim != head_cfg.txt_dim) {
      throw DimensionError("resume checkpoint dims do not match the head config");
    }
    head = head_from_checkpoint(last);
    optim = last.optim;
    start_epoch = last.epoch;
    result.best = resume->best ? *resume->best : last;
    result.best.best_val_auroc = last.best_val_auroc;
    result.best.best_epoch = last.best_epoch;
  } else {
    HeadConfig cfg_seeded = head_cfg;
    cfg_seeded.init_seed = seed;
    head = make_head<Real>(cfg_seeded);
    optim = OptimState<Real>::for_params(head.params, hyper);
    result.best.head = head.config;
    result.best.best_epoch = -1;
    result.best.best_val_auroc = -1.0;
  }
  optim.hyper = hyper;

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>((train_rows.size() + batch - 1) / batch);
  const LrSchedule schedule{cfg.base_lr, cfg.warmup_epochs, cfg.epochs, steps_per_epoch};
  const int end_epoch = cfg.stop_after_epoch ? *cfg.stop_after_epoch : cfg.epochs;

  double best_auroc = result.best.best_val_auroc;
  int best_epoch = result.best.best_epoch;

  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const auto plan = batches(train_rows.size(), batch, seed, static_cast<std::uint64_t>(epoch));
    std::vector<double> sample_loss(train_rows.size(), 0.0);
    EpochLogRow row;
    row.epoch = epoch;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const std::int64_t step = epoch * steps_per_epoch + static_cast<std::int64_t>(b);
      const auto data = select(train_data, plan[b]);
      Rng dropout_rng(derive_seed(seed, Stream::Dropout, static_cast<std::uint64_t>(step)));
      auto fwd = forward(data.img, data.txt, head, Mode::Train, dropout_rng);
      const auto loss = cross_entropy(fwd.logits, std::span<const int>(data.labels), cfg.reduction);
      for (std::size_t i = 0; i < plan[b].size(); ++i) sample_loss[plan[b][i]] = loss.per_row[i];
      head.params.zero_grad();
      backward_head(*fwd.trace, loss.grad, head);

      if (cfg.inject && cfg.inject->step == step) {
        head.params.grad(cfg.inject->param) *= static_cast<Real>(cfg.inject->factor);
      }
      if (cfg.log_grad_std) {
        for (const auto& e : head.params) {
          result.grad_std.push_back(GradStdRow{epoch, step, e.name, element_std(e.grad)});
        }
      }
      clip_global_norm(head.params, cfg.clip_norm);
      const double clipped = global_grad_norm(head.params);
      assert(clipped <= cfg.clip_norm);
      row.max_clipped_norm = std::max(row.max_clipped_norm, clipped);
      row.lr = lr_at(schedule, step);
      adamw_step(head.params, optim, row.lr);
    }
    // summed in dataset order, independent of batch order
    double loss_sum = 0.0;
    for (double l : sample_loss) loss_sum += l;
    row.train_loss = loss_sum / static_cast<double>(train_rows.size());

    const EvalReport val = evaluate_matrices(head, val_data);
    row.val_acc = val.accuracy;
    row.val_auroc = val.auroc;
    row.val_f1 = val.macro_f1;
    result.epochs.push_back(row);

    const bool improved = val.auroc > best_auroc;
    if (improved) {
      best_auroc = val.auroc;
      best_epoch = epoch;
    }
    Checkpoint snapshot;
    snapshot.head = head.config;
    snapshot.params = head.params;
    snapshot.optim = optim;
    snapshot.epoch = epoch + 1;
    snapshot.best_epoch = best_epoch;
    snapshot.best_val_auroc = best_auroc;
    if (improved) result.best = snapshot;
    result.last = std::move(snapshot);
  }
  if (start_epoch >= end_epoch) {
    // Nothing ran; hand back the starting state.
    result.last.head = head.config;
    result.last.params = head.params;
    result.last.optim = optim;
    result.last.epoch = start_epoch;
    result.last.best_epoch = best_epoch;
    result.last.best_val_auroc = best_auroc;
    if (best_epoch < 0) result.best = result.last;
  }
  result.best.best_epoch = best_epoch;
  result.best.best_val_auroc = best_auroc;
  return result;
}

SeedStudy run_seeds(const Dataset& ds, const HeadConfig& head_cfg, const TrainConfig& cfg) {
  cfg.validate();
  SeedStudy study;
  for (auto seed : cfg.seeds) {
    const auto result = train(ds, head_cfg, cfg, seed);
    auto report = evaluate(result.best, ds, Split::Test);
    report.seed = seed;
    study.reports.push_back(report);
  }
  std::stable_sort(study.reports.begin(), study.reports.end(),
                   [](const EvalReport& a, const EvalReport& b) { return a.seed < b.seed; });
  study.aggregate = aggregate(study.reports);
  return study;
}

// ---------------------------------------------------------------------------
// logs and diagnostics

std::string grad_std_csv_header() { return "epoch,step,param,grad_std"; }

std::string to_csv(const std::vector<GradStdRow>& rows) {
  std::string out = grad_std_csv_header() + "\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.grad_std);
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + r.param + "," + buf + "\n";
  }
  return out;
}

std::vector<GradStdRow> parse_grad_std_csv(std::string_view text) {
  std::vector<GradStdRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != grad_std_csv_header()) throw FormatError("grad_std CSV: unexpected header '" + line + "'");
      continue;
    }
    std::vector<std::string> cols;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (cols.size() != 4) {
      throw FormatError("grad_std CSV line " + std::to_string(line_no) + ": expected 4 columns");
    }
    GradStdRow r;
    try {
      r.epoch = static_cast<int>(parse_int("epoch", cols[0]));
      r.step = parse_int("step", cols[1]);
      r.param = cols[2];
      r.grad_std = parse_double("grad_std", cols[3]);
    } catch (const ConfigError& e) {
      throw FormatError("grad_std CSV line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!(r.grad_std >= 0.0)) {
      throw FormatError("grad_std CSV line " + std::to_string(line_no) + ": negative grad_std");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string epoch_log_csv(const std::vector<EpochLogRow>& rows) {
  std::string out = "epoch,train_loss,val_acc,val_auroc,val_f1,lr,max_grad_norm\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.train_loss, r.val_acc, r.val_auroc, r.val_f1, r.lr, r.max_clipped_norm);
    out += buf;
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

GradDiagnosis grad_diagnose(const std::vector<GradStdRow>& log, double multiple) {
  if (log.empty()) throw DataError("grad_diagnose: empty log");
  if (!(multiple > 0.0)) throw ConfigError("grad_diagnose: multiple must be > 0");

  // Keep first-seen parameter order for stable output.
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> all;
  std::map<std::pair<std::string, int>, std::vector<double>> per_epoch;
  for (const auto& r : log) {
    auto [it, inserted] = all.try_emplace(r.param);
    if (inserted) order.push_back(r.param);
    it->second.push_back(r.grad_std);
    per_epoch[{r.param, r.epoch}].push_back(r.grad_std);
  }

  GradDiagnosis out;
  for (const auto& param : order) {
    const double baseline = median(all[param]);
    for (const auto& [key, values] : per_epoch) {
      if (key.first != param) continue;
      GradEpochSummary s;
      s.epoch = key.second;
      s.param = param;
      double sum = 0.0;
      for (double v : values) {
        sum += v;
        s.max = std::max(s.max, v);
      }
      s.mean = sum / static_cast<double>(values.size());
      out.summary.push_back(s);
      if (s.max > multiple * baseline) {
        out.spikes.push_back(GradSpike{param, s.epoch, s.max, baseline});
        out.flagged.insert(param);
      }
    }
  }
  return out;
}

std::string GradDiagnosis::csv() const {
  std::string out = "epoch,param,mean_grad_std,max_grad_std,spike\n";
  char buf[128];
  for (const auto& s : summary) {
    bool spike = false;
    for (const auto& k : spikes) spike |= (k.param == s.param && k.epoch == s.epoch);
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%d\n", s.mean, s.max, spike ? 1 : 0);
    out += std::to_string(s.epoch) + "," + s.param + buf;
  }
  return out;
}

}  // namespace memeblip

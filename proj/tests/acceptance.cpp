// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Runs against the library alone.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "memeblip/checkpoint.hpp"
#include "memeblip/dataio.hpp"
#include "memeblip/errors.hpp"
#include "memeblip/metrics.hpp"
#include "memeblip/trainer.hpp"
#include "test_util.hpp"

using namespace memeblip;
using memeblip::testing::MatD;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const char* name, bool pass, const std::string& detail) {
  std::printf("%s %-24s %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void criterion(const char* name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(name, false, std::string("threw: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

void gradient_oracle() {
  const auto t0 = Clock::now();
  HeadConfig cfg = memeblip::testing::tiny_config(Ablation::Full);
  auto head = make_head<double>(cfg);
  memeblip::testing::randomize(head.params, 101);
  Rng data(102);
  MatD img = memeblip::testing::random_matrix(4, 8, data);
  MatD txt = memeblip::testing::random_matrix(4, 6, data);
  const auto check = memeblip::testing::check_head_gradients(head, img, txt, {0, 1, 1, 0}, 1e-5);
  const double secs = seconds_since(t0);
  const bool all = check.checked == head.params.total_elements();
  report("gradient_oracle", all && check.max_rel_error < 1e-4 && secs < 10.0 &&
                                cfg.adapter_bottleneck() == 16,
         fmt("max rel err %.3e (%s) over %lld elements, bottleneck %d, %.2fs",
             check.max_rel_error, check.worst_param.c_str(),
             static_cast<long long>(check.checked), cfg.adapter_bottleneck(), secs));
}

void shape_manifest() {
  const std::vector<std::pair<std::string, Shape>> expected = {
      {"proj_img.0.W", {1024, 1408}}, {"proj_img.0.b", {1024}},
      {"proj_img.0.ln.gamma", {1024}}, {"proj_img.0.ln.beta", {1024}},
      {"proj_img.1.W", {1024, 1024}}, {"proj_img.1.b", {1024}},
      {"proj_img.1.ln.gamma", {1024}}, {"proj_img.1.ln.beta", {1024}},
      {"proj_txt.0.W", {1024, 768}}, {"proj_txt.0.b", {1024}},
      {"proj_txt.0.ln.gamma", {1024}}, {"proj_txt.0.ln.beta", {1024}},
      {"proj_txt.1.W", {1024, 1024}}, {"proj_txt.1.b", {1024}},
      {"proj_txt.1.ln.gamma", {1024}}, {"proj_txt.1.ln.beta", {1024}},
      {"adapter_img.ln_in.gamma", {1024}}, {"adapter_img.ln_in.beta", {1024}},
      {"adapter_img.W1", {682, 1024}}, {"adapter_img.W2", {1024, 682}},
      {"adapter_img.alpha", {1}},
      {"adapter_img.ln_out.gamma", {1024}}, {"adapter_img.ln_out.beta", {1024}},
      {"adapter_txt.ln_in.gamma", {1024}}, {"adapter_txt.ln_in.beta", {1024}},
      {"adapter_txt.W1", {682, 1024}}, {"adapter_txt.W2", {1024, 682}},
      {"adapter_txt.alpha", {1}},
      {"adapter_txt.ln_out.gamma", {1024}}, {"adapter_txt.ln_out.beta", {1024}},
      {"preout.W", {1024, 1024}}, {"preout.b", {1024}},
      {"preout.ln.gamma", {1024}}, {"preout.ln.beta", {1024}},
      {"classifier.ln.gamma", {1024}}, {"classifier.ln.beta", {1024}},
      {"classifier.W", {2, 1024}}, {"classifier.b", {2}},
  };
  const HeadConfig cfg;
  const auto manifest = parameter_manifest(cfg);
  Rng rng(1);
  const auto store = init_params<float>(cfg, rng);
  bool store_matches = store.size() == expected.size();
  for (std::size_t i = 0; store_matches && i < expected.size(); ++i) {
    store_matches = store[i].name == expected[i].first && store[i].shape == expected[i].second;
  }
  report("shape_manifest",
         manifest == expected && store_matches && cfg.adapter_bottleneck() == 682,
         fmt("%zu tensors, %lld elements, bottleneck %d", manifest.size(),
             static_cast<long long>(store.total_elements()), cfg.adapter_bottleneck()));
}

double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / static_cast<double>(pairs);
}

void metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  int exact = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(199);
    const bool coarse = t % 2 == 0;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      s[i] = coarse ? static_cast<double>(rng.below(6)) / 5.0 : rng.uniform();
    }
    y[0] = 0;
    y[1] = 1;
    exact += auroc(s, y) == pairwise_auroc(s, y);
  }

  // tp 2, tn 3, fp 1, fn 2
  const std::vector<int> truth{1, 1, 0, 0, 0, 0, 1, 1};
  const std::vector<int> preds{1, 1, 0, 0, 0, 1, 0, 0};
  const Confusion c = confusion(preds, truth);
  const double f1_pos = 2.0 * 2 / (2.0 * 2 + 1 + 2);
  const double f1_neg = 2.0 * 3 / (2.0 * 3 + 2 + 1);
  const bool conf_ok = c.tp == 2 && c.tn == 3 && c.fp == 1 && c.fn == 2;
  const bool acc_ok = accuracy(preds, truth) == 5.0 / 8.0;
  const bool f1_ok = macro_f1(preds, truth) == (f1_pos + f1_neg) / 2.0;
  const std::vector<int> perfect_preds = truth;
  const bool perfect_ok = accuracy(perfect_preds, truth) == 1.0 && macro_f1(perfect_preds, truth) == 1.0;
  const double secs = seconds_since(t0);
  report("metric_oracles", exact == 100 && conf_ok && acc_ok && f1_ok && perfect_ok && secs < 5.0,
         fmt("auroc exact %d/100, accuracy %.6f, macro_f1 %.12f, %.3fs", exact,
             accuracy(preds, truth), macro_f1(preds, truth), secs));
}

ParamStore<double> scalar_param(double theta, double grad) {
  ParamStore<double> p;
  auto& e = p.add("theta", {1});
  e.value(0, 0) = theta;
  e.grad(0, 0) = grad;
  p.mark_grads_ready();
  return p;
}

void optimizer_fidelity() {
  auto p = scalar_param(1.0, 1.0);
  auto s = OptimState<double>::for_params(p, {0.9, 0.999, 1e-8, 0.0});
  adamw_step(p, s, 0.1);
  const double m_hat = (1.0 - 0.9) * 1.0 / (1.0 - 0.9);
  const double v_hat = (1.0 - 0.999) * 1.0 / (1.0 - 0.999);
  const double hand = 1.0 - 0.1 * (m_hat / (std::sqrt(v_hat) + 1e-8));
  const double got = p.value("theta")(0, 0);
  const double step_err = std::abs(got - hand);

  double worst_decay = 0.0;
  for (double lr : {1.0, 0.1, 5e-5}) {
    for (double lambda : {1e-4, 0.01, 0.5}) {
      const double theta = 2.75;
      auto q = scalar_param(theta, 0.0);
      auto st = OptimState<double>::for_params(q, {0.9, 0.999, 1e-8, lambda});
      adamw_step(q, st, lr);
      const double ratio = q.value("theta")(0, 0) / theta;
      const double ulps = std::abs(ratio - (1.0 - lr * lambda)) /
                          std::numeric_limits<double>::epsilon();
      worst_decay = std::max(worst_decay, ulps);
    }
  }
  report("optimizer_fidelity", step_err < 1e-9 && worst_decay <= 2.0,
         fmt("theta' %.12f (hand err %.1e), decay-only factor within %.1f ulp", got, step_err,
             worst_decay));
}

Dataset synthetic(std::size_t n, int img, int txt, double sep, std::uint64_t seed,
                  double noise = 0.0) {
  Dataset ds = synth({n, img, txt, sep, noise, seed});
  split_dataset(ds, {}, seed);
  return ds;
}

HeadConfig small_head(int img = 24, int txt = 12, int shared = 16) {
  HeadConfig cfg;
  cfg.img_dim = img;
  cfg.txt_dim = txt;
  cfg.shared_dim = shared;
  return cfg;
}

void schedule() {
  const LrSchedule s{5e-5, 3, 12, 10};
  const double at0 = lr_at(s, 0);
  const double at_warm = lr_at(s, 30);
  const double at_mid = lr_at(s, 30 + 45);
  const bool anchors = std::abs(at0) <= 1e-12 && std::abs(at_warm - 5e-5) <= 1e-12 &&
                       std::abs(at_mid - 2.5e-5) <= 1e-12;

  // Sum reduction keeps raw gradient norms well above the clip bound.
  const Dataset ds = synthetic(400, 32, 16, 3.0, 11);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.reduction = Reduction::Sum;
  cfg.base_lr = 1e-3;
  const auto result = train(ds, small_head(32, 16, 16), cfg, 1);
  double worst = 0.0;
  for (const auto& row : result.epochs) worst = std::max(worst, row.max_clipped_norm);
  report("schedule", anchors && worst <= 1.0 && result.epochs.size() == 2,
         fmt("lr(0)=%g lr(warmup)=%.3e lr(mid)=%.3e, max post-clip norm %.17g", at0, at_warm,
             at_mid, worst));
}

void learning_sanity() {
  const auto t0 = Clock::now();
  const Dataset ds = synthetic(2000, 1408, 768, 6.0, 42);
  const HeadConfig full;
  HeadConfig minimal;
  minimal.ablation = Ablation::Minimal;
  const TrainConfig cfg;  // 12 epochs, batch 64, lr 5e-5
  int full_ok = 0;
  int minimal_lower = 0;
  std::string accs;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto f = train(ds, full, cfg, seed);
    const auto m = train(ds, minimal, cfg, seed);
    const double fa = evaluate(f.best, ds, Split::Test).accuracy;
    const double ma = evaluate(m.best, ds, Split::Test).accuracy;
    full_ok += fa >= 0.95;
    minimal_lower += ma < fa;
    accs += fmt(" %.3f/%.3f", fa, ma);
  }
  const double secs = seconds_since(t0);
  report("learning_sanity", full_ok == 3 && minimal_lower >= 2 && secs < 300.0,
         fmt("full/minimal test acc:%s, minimal lower in %d/3, lr %.0e, %.1fs", accs.c_str(),
             minimal_lower, cfg.base_lr, secs));
}

void determinism() {
  const Dataset ds = synthetic(300, 24, 12, 2.0, 5);
  const HeadConfig head = small_head();  // default dropouts keep the dropout stream live
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 32;
  cfg.base_lr = 1e-3;
  const auto a = train(ds, head, cfg, 9);
  const auto b = train(ds, head, cfg, 9);
  const bool same = epoch_log_csv(a.epochs) == epoch_log_csv(b.epochs) &&
                    encode_checkpoint(a.last) == encode_checkpoint(b.last) &&
                    encode_checkpoint(a.best) == encode_checkpoint(b.best) &&
                    to_csv(a.grad_std) == to_csv(b.grad_std);

  TrainConfig first = cfg;
  first.stop_after_epoch = 2;
  const auto part = train(ds, head, first, 9);
  ResumeState resume{decode_checkpoint(encode_checkpoint(part.last)),
                     decode_checkpoint(encode_checkpoint(part.best))};
  const auto rest = train(ds, head, cfg, 9, &resume);
  std::vector<EpochLogRow> joined = part.epochs;
  joined.insert(joined.end(), rest.epochs.begin(), rest.epochs.end());
  const bool resumed = epoch_log_csv(joined) == epoch_log_csv(a.epochs) &&
                       encode_checkpoint(rest.last) == encode_checkpoint(a.last) &&
                       encode_checkpoint(rest.best) == encode_checkpoint(a.best);
  report("determinism_resumption", same && resumed,
         fmt("repeat identical: %s, resume after epoch 2 of 5 identical: %s", same ? "yes" : "no",
             resumed ? "yes" : "no"));
}

void diagnostics() {
  const Dataset ds = synthetic(320, 24, 12, 2.0, 17, 0.1);
  const HeadConfig head = small_head();
  std::vector<std::string> candidates;
  for (const auto& [name, shape] : parameter_manifest(head)) {
    if (std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>()) >= 2) candidates.push_back(name);
  }
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 32;
  cfg.base_lr = 1e-3;
  const std::int64_t steps_per_epoch = (static_cast<std::int64_t>(ds.indices_of(Split::Train).size()) +
                                        cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  int caught = 0;
  int clean_false_flags = 0;
  int injected_false_flags = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng pick(derive_seed(seed, Stream::Synth, 99));
    TrainConfig spiked = cfg;
    spiked.inject = SpikeInjection{static_cast<std::int64_t>(pick.below(total_steps)),
                                   candidates[pick.below(candidates.size())], 1000.0};
    const auto clean = train(ds, head, cfg, seed);
    const auto bad = train(ds, head, spiked, seed);
    const auto dc = grad_diagnose(clean.grad_std);
    const auto db = grad_diagnose(bad.grad_std);
    clean_false_flags += static_cast<int>(dc.flagged.size());
    caught += db.flagged.count(spiked.inject->param) == 1;
    injected_false_flags += static_cast<int>(db.flagged.size()) - (db.flagged.count(spiked.inject->param) ? 1 : 0);
  }
  report("diagnostics", caught == 10 && clean_false_flags == 0 && injected_false_flags == 0,
         fmt("spike flagged %d/10, extra flags in spiked runs %d, flags in clean runs %d "
             "(%zu candidate tensors, %lld steps)",
             caught, injected_false_flags, clean_false_flags, candidates.size(),
             static_cast<long long>(total_steps)));
}

template <class E>
bool throws_kind(const std::function<void()>& f, ErrorKind kind) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind && dynamic_cast<const E*>(&e) != nullptr;
  }
  return false;
}

void format_conformance() {
  const std::string dir = MEMEBLIP_FIXTURE_DIR;
  const std::string small = read_file(dir + "/small.mbe2");
  bool data_rt = encode_dataset(decode_dataset(small)) == small;
  data_rt = data_rt && encode_dataset(parse_jsonl(read_file(dir + "/small.jsonl"))) == small;
  const Dataset syn = synthetic(200, 16, 8, 3.0, 3);
  const std::string syn_bytes = encode_dataset(syn);
  data_rt = data_rt && encode_dataset(decode_dataset(syn_bytes)) == syn_bytes &&
            encode_dataset(parse_jsonl(format_jsonl(syn))) == syn_bytes;

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 32;
  const auto result = train(syn, small_head(16, 8, 8), cfg, 3);
  const std::string ck = encode_checkpoint(result.last);
  const bool ckpt_rt = encode_checkpoint(decode_checkpoint(ck)) == ck;

  const auto dataset = [&](const char* name) {
    return [&, name] { decode_dataset(read_file(dir + "/" + name)); };
  };
  int kinds_ok = 0;
  kinds_ok += throws_kind<CorruptionError>(dataset("truncated.mbe2"), ErrorKind::Corruption);
  kinds_ok += throws_kind<FormatError>(dataset("bad_magic.mbe2"), ErrorKind::Format);
  kinds_ok += throws_kind<FormatError>(dataset("bad_version.mbe2"), ErrorKind::Format);
  kinds_ok += throws_kind<FormatError>(dataset("narrow_text.mbe2"), ErrorKind::Format);
  std::string v = ck, m = ck, sh = ck;
  v[4] = 7;
  m[0] = 'X';
  const std::string name = "proj_txt.1.W";
  const std::size_t dim0 = sh.find(name) + name.size() + 1;
  std::int64_t d = 9;
  std::memcpy(sh.data() + dim0, &d, sizeof d);
  kinds_ok += throws_kind<VersionError>([&] { decode_checkpoint(v); }, ErrorKind::Version);
  kinds_ok += throws_kind<FormatError>([&] { decode_checkpoint(m); }, ErrorKind::Format);
  kinds_ok += throws_kind<ShapeError>([&] { decode_checkpoint(sh); }, ErrorKind::Shape);
  kinds_ok += throws_kind<CorruptionError>([&] { decode_checkpoint(ck.substr(0, ck.size() - 5)); },
                                           ErrorKind::Corruption);
  kinds_ok += throws_kind<CorruptionError>([&] { decode_checkpoint(ck + "!"); },
                                           ErrorKind::Corruption);
  report("format_conformance", data_rt && ckpt_rt && kinds_ok == 9,
         fmt("dataset round trip %s, checkpoint round trip %s, error kinds %d/9",
             data_rt ? "byte-exact" : "differs", ckpt_rt ? "byte-exact" : "differs", kinds_ok));
}

}  // namespace

int main() {
  criterion("gradient_oracle", gradient_oracle);
  criterion("shape_manifest", shape_manifest);
  criterion("metric_oracles", metric_oracles);
  criterion("optimizer_fidelity", optimizer_fidelity);
  criterion("schedule", schedule);
  criterion("learning_sanity", learning_sanity);
  criterion("determinism_resumption", determinism);
  criterion("diagnostics", diagnostics);
  criterion("format_conformance", format_conformance);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

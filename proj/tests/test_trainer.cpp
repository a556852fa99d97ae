// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>

#include "memeblip/checkpoint.hpp"
#include "memeblip/dataio.hpp"
#include "memeblip/errors.hpp"
#include "memeblip/trainer.hpp"

using namespace memeblip;

namespace {

Dataset small_data(double separation, std::size_t n = 240, std::uint64_t seed = 3) {
  Dataset ds = synth({n, 24, 12, separation, 0.0, seed});
  split_dataset(ds, {0.7, 0.15, 0.15}, seed);
  return ds;
}

HeadConfig small_head() {
  HeadConfig cfg;
  cfg.img_dim = 24;
  cfg.txt_dim = 12;
  cfg.shared_dim = 16;
  return cfg;
}

TrainConfig short_run(int epochs = 4) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 32;
  cfg.base_lr = 1e-3;
  cfg.seeds = {1};
  return cfg;
}

std::string bytes_of(const Checkpoint& c) { return encode_checkpoint(c); }

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
  Dataset ds = small_data(6.0);
  HeadConfig head = small_head();
  head.dropout_proj = head.dropout_adapter = head.dropout_preout = head.dropout_cls = 0.0;
  TrainConfig cfg = short_run(3);
  cfg.base_lr = 0.0;
  auto result = train(ds, head, cfg, 5);
  HeadConfig seeded = head;
  seeded.init_seed = 5;
  auto init = make_head<Real>(seeded);
  for (std::size_t i = 0; i < init.params.size(); ++i) {
    EXPECT_EQ(result.last.params[i].value, init.params[i].value) << init.params[i].name;
  }
  for (const auto& row : result.epochs) {
    EXPECT_EQ(row.train_loss, result.epochs[0].train_loss);
    EXPECT_EQ(row.val_auroc, result.epochs[0].val_auroc);
  }
}

TEST(Train, SameSeedIsBitIdentical) {
  Dataset ds = small_data(4.0);
  auto a = train(ds, small_head(), short_run(), 9);
  auto b = train(ds, small_head(), short_run(), 9);
  EXPECT_EQ(a.epochs, b.epochs);
  EXPECT_EQ(a.grad_std, b.grad_std);
  EXPECT_EQ(bytes_of(a.best), bytes_of(b.best));
  EXPECT_EQ(bytes_of(a.last), bytes_of(b.last));
  auto c = train(ds, small_head(), short_run(), 10);
  EXPECT_NE(bytes_of(a.last), bytes_of(c.last));
}

TEST(Train, ResumptionEqualsUninterruptedRun) {
  Dataset ds = small_data(2.0);
  TrainConfig cfg = short_run(5);
  auto full = train(ds, small_head(), cfg, 4);

  TrainConfig first_half = cfg;
  first_half.stop_after_epoch = 3;
  auto partial = train(ds, small_head(), first_half, 4);
  ASSERT_EQ(partial.epochs.size(), 3u);

  ResumeState resume{decode_checkpoint(bytes_of(partial.last)),
                     decode_checkpoint(bytes_of(partial.best))};
  auto rest = train(ds, small_head(), cfg, 4, &resume);
  ASSERT_EQ(rest.epochs.size(), 2u);
  EXPECT_EQ(rest.epochs[0], full.epochs[3]);
  EXPECT_EQ(rest.epochs[1], full.epochs[4]);
  EXPECT_EQ(bytes_of(rest.last), bytes_of(full.last));
  EXPECT_EQ(bytes_of(rest.best), bytes_of(full.best));
}

TEST(Train, BestCheckpointMatchesLog) {
  Dataset ds = small_data(1.5);
  auto r = train(ds, small_head(), short_run(5), 2);
  double best = -1.0;
  int best_epoch = -1;
  for (const auto& row : r.epochs) {
    if (row.val_auroc > best) {
      best = row.val_auroc;
      best_epoch = row.epoch;
    }
  }
  EXPECT_EQ(r.best.best_val_auroc, best);
  EXPECT_EQ(r.best.best_epoch, best_epoch);
  EXPECT_EQ(r.best.epoch, best_epoch + 1);
  EXPECT_EQ(evaluate(r.best, ds, Split::Val).auroc, best);
}

TEST(Train, ClippedNormNeverExceedsBound) {
  Dataset ds = small_data(6.0);
  TrainConfig cfg = short_run(2);
  cfg.clip_norm = 0.05;
  auto r = train(ds, small_head(), cfg, 1);
  for (const auto& row : r.epochs) {
    EXPECT_LE(row.max_clipped_norm, cfg.clip_norm);
    EXPECT_GT(row.max_clipped_norm, 0.0);
  }
}

TEST(Train, SeparableDataIsLearned) {
  Dataset ds = small_data(6.0, 400);
  auto r = train(ds, small_head(), short_run(15), 1);
  EXPECT_GE(evaluate(r.last, ds, Split::Train).accuracy, 0.99);
  EXPECT_GE(evaluate(r.best, ds, Split::Test).accuracy, 0.95);
}

TEST(Train, NoSeparationStaysNearChance) {
  Dataset ds = small_data(0.0, 2000, 8);
  TrainConfig cfg = short_run(3);
  double mean = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    mean += evaluate(train(ds, small_head(), cfg, seed).best, ds, Split::Test).accuracy / 3.0;
  }
  EXPECT_GE(mean, 0.40);
  EXPECT_LE(mean, 0.60);
}

TEST(Train, RejectsUnusableSplits) {
  Dataset ds = synth({40, 24, 12, 6.0, 0.0, 1});
  EXPECT_THROW(train(ds, small_head(), short_run(), 1), DataError);
  HeadConfig wrong = small_head();
  wrong.img_dim = 25;
  Dataset split = small_data(6.0);
  EXPECT_THROW(train(split, wrong, short_run(), 1), DimensionError);
  TrainConfig bad = short_run();
  bad.warmup_epochs = 4;
  EXPECT_THROW(train(split, small_head(), bad, 1), ConfigError);
}

TEST(Evaluate, MemorizesTinySet) {
  Dataset ds = synth({40, 24, 12, 1.0, 0.0, 11});
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    ds.records[i].split = i < 32 ? Split::Train : Split::Val;
  }
  ds.records[32].label = 0;
  ds.records[33].label = 1;
  HeadConfig head = small_head();
  head.dropout_proj = head.dropout_adapter = head.dropout_preout = head.dropout_cls = 0.0;
  TrainConfig cfg = short_run(40);
  cfg.batch_size = 8;
  cfg.weight_decay = 0.0;
  auto r = train(ds, head, cfg, 1);
  EXPECT_EQ(evaluate(r.last, ds, Split::Train).accuracy, 1.0);
}

TEST(Evaluate, EmptySplitAndRepeatability) {
  Dataset ds = small_data(6.0);
  auto r = train(ds, small_head(), short_run(2), 1);
  EXPECT_EQ(evaluate(r.last, ds, Split::Test), evaluate(r.last, ds, Split::Test));
  for (auto& rec : ds.records) {
    if (rec.split == Split::Test) rec.split = Split::Train;
  }
  EXPECT_THROW(evaluate(r.last, ds, Split::Test), DataError);
}

TEST(RunSeeds, OrderFreeAndSingleSeed) {
  Dataset ds = small_data(6.0);
  TrainConfig cfg = short_run(2);
  cfg.seeds = {3, 1, 2};
  auto a = run_seeds(ds, small_head(), cfg);
  cfg.seeds = {2, 3, 1};
  auto b = run_seeds(ds, small_head(), cfg);
  EXPECT_EQ(a.aggregate, b.aggregate);
  EXPECT_EQ(a.reports, b.reports);
  EXPECT_EQ(a.reports.front().seed, 1u);

  cfg.seeds = {2};
  auto one = run_seeds(ds, small_head(), cfg);
  EXPECT_EQ(one.aggregate.accuracy.std, 0.0);
  EXPECT_EQ(one.aggregate.accuracy.mean, one.reports[0].accuracy);
  EXPECT_EQ(one.reports[0], a.reports[1]);
}

TEST(RunSeeds, SeparableSeedsAgree) {
  Dataset ds = small_data(6.0, 400);
  TrainConfig cfg = short_run(15);
  cfg.seeds = {1, 2, 3};
  EXPECT_LT(run_seeds(ds, small_head(), cfg).aggregate.accuracy.std, 0.05);
}

TEST(Checkpoint, RoundTripPreservesLogits) {
  Dataset ds = small_data(6.0);
  auto r = train(ds, small_head(), short_run(2), 1);
  const std::string bytes = bytes_of(r.last);
  Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(bytes_of(back), bytes);
  const auto rows = ds.indices_of(Split::Val);
  EXPECT_EQ(predict_logits(head_from_checkpoint(back), ds, rows),
            predict_logits(head_from_checkpoint(r.last), ds, rows));

  const auto path = std::filesystem::temp_directory_path() / "memeblip_ckpt_test.mbck";
  save_checkpoint(r.last, path);
  EXPECT_EQ(bytes_of(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MinimalRoundTripRegeneratesFrozenMaps) {
  Dataset ds = small_data(6.0);
  HeadConfig head = small_head();
  head.ablation = Ablation::Minimal;
  auto r = train(ds, head, short_run(2), 4);
  EXPECT_EQ(r.last.params.names(), (std::vector<std::string>{"classifier.W", "classifier.b"}));
  Checkpoint back = decode_checkpoint(bytes_of(r.last));
  const auto rows = ds.indices_of(Split::Test);
  EXPECT_EQ(predict_logits(head_from_checkpoint(back), ds, rows),
            predict_logits(head_from_checkpoint(r.last), ds, rows));
}

TEST(Checkpoint, TamperedShapeNamesParameter) {
  Dataset ds = small_data(6.0);
  auto r = train(ds, small_head(), short_run(2), 1);
  std::string bytes = bytes_of(r.last);
  const std::string name = "proj_txt.1.W";
  const auto pos = bytes.find(name);
  ASSERT_NE(pos, std::string::npos);
  const std::size_t dim0 = pos + name.size() + 1;
  std::int64_t d = 0;
  std::memcpy(&d, bytes.data() + dim0, sizeof d);
  EXPECT_EQ(d, 16);
  d = 17;
  std::memcpy(bytes.data() + dim0, &d, sizeof d);
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptionKinds) {
  Dataset ds = small_data(6.0);
  auto r = train(ds, small_head(), short_run(2), 1);
  const std::string bytes = bytes_of(r.last);
  std::string v = bytes;
  v[4] = 7;
  EXPECT_THROW(decode_checkpoint(v), VersionError);
  std::string m = bytes;
  m[0] = 'X';
  EXPECT_THROW(decode_checkpoint(m), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CorruptionError);
  EXPECT_THROW(decode_checkpoint(bytes + "z"), CorruptionError);
  std::string w = bytes;
  w[8] = sizeof(Real) == 4 ? 8 : 4;
  EXPECT_THROW(decode_checkpoint(w), FormatError);
}

TEST(GradDiagnose, ConstantGradientsHaveNoSpikes) {
  std::vector<GradStdRow> log;
  for (int step = 0; step < 20; ++step) {
    for (const char* p : {"a", "b"}) log.push_back({step / 5, step, p, 0.0});
  }
  auto d = grad_diagnose(log);
  EXPECT_TRUE(d.flagged.empty());
  EXPECT_EQ(d.summary.size(), 8u);
  for (const auto& s : d.summary) EXPECT_EQ(s.max, 0.0);
  EXPECT_THROW(grad_diagnose({}), DataError);
}

TEST(GradDiagnose, InjectedSpikeFlagsOnlyTarget) {
  Dataset ds = small_data(2.0);
  TrainConfig cfg = short_run(3);
  cfg.inject = SpikeInjection{11, "adapter_txt.W2", 1000.0};
  auto r = train(ds, small_head(), cfg, 6);
  const std::size_t steps = 3 * ((ds.indices_of(Split::Train).size() + 31) / 32);
  HeadConfig seeded = small_head();
  EXPECT_EQ(r.grad_std.size(), steps * parameter_manifest(seeded).size());
  auto d = grad_diagnose(r.grad_std);
  EXPECT_EQ(d.flagged, (std::set<std::string>{"adapter_txt.W2"}));
  ASSERT_EQ(d.spikes.size(), 1u);
  EXPECT_EQ(d.spikes[0].epoch, 11 / static_cast<int>(steps / 3));

  auto clean = train(ds, small_head(), short_run(3), 6);
  EXPECT_TRUE(grad_diagnose(clean.grad_std).flagged.empty());
}

TEST(GradDiagnose, CsvRoundTrip) {
  std::vector<GradStdRow> log{{0, 0, "x", 0.125}, {0, 1, "x", 1e-7}, {1, 2, "y", 3.0}};
  EXPECT_EQ(parse_grad_std_csv(to_csv(log)), log);
  EXPECT_THROW(parse_grad_std_csv("bad header\n"), FormatError);
  auto csv = grad_diagnose(log).csv();
  EXPECT_EQ(csv.rfind("epoch,param,mean_grad_std,max_grad_std,spike\n", 0), 0u);
}

TEST(TrainConfig, KeyValueRoundTrip) {
  TrainConfig cfg = short_run();
  cfg.seeds = {4, 8, 15};
  cfg.reduction = Reduction::Sum;
  TrainConfig back;
  EXPECT_TRUE(apply_key_values(back, to_key_values(cfg)).empty());
  EXPECT_EQ(to_key_values(back), to_key_values(cfg));
}

TEST(EpochLog, Header) {
  EXPECT_EQ(epoch_log_csv({}), "epoch,train_loss,val_acc,val_auroc,val_f1,lr,max_grad_norm\n");
}

// SPDX-License-Identifier: Apache-2.0
//
// memeblip: command-line front end for the fusion head.
//
// Every setting is a `key = value` pair. Values resolve in order
//   built-in default < --config file < MEMEBLIP_<KEY> environment < --key flag
// so one file can drive several subcommands and CI can override single keys.
#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeblip/ablation.hpp"
#include "memeblip/checkpoint.hpp"
#include "memeblip/dataio.hpp"
#include "memeblip/errors.hpp"
#include "memeblip/metrics.hpp"
#include "memeblip/trainer.hpp"
#include "memeblip/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace memeblip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

// ---------------------------------------------------------------------------
// settings

struct Setting {
  std::string key;
  std::string fallback;
  std::string value;
  CLI::Option* option = nullptr;
};

class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {}

  void add(const std::string& key, const std::string& fallback, const std::string& help) {
    auto& s = items_.emplace_back(std::make_unique<Setting>());
    s->key = key;
    s->fallback = fallback;
    std::string names = "--" + key;
    if (key.find('_') != std::string::npos) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      names += ",--" + dashed;
    }
    s->option = app_->add_option(names, s->value, help)
                    ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    if (!fallback.empty()) s->option->default_str(fallback);
  }

  void add_all(const KeyValues& defaults, const std::set<std::string>& skip,
               const std::string& help) {
    for (const auto& [k, v] : defaults) {
      if (!skip.count(k)) add(k, v, help);
    }
  }

  bool knows(const std::string& key) const {
    return std::any_of(items_.begin(), items_.end(),
                       [&](const auto& s) { return s->key == key; });
  }

  KeyValues resolve(const KeyValues& file) const {
    KeyValues out;
    for (const auto& s : items_) {
      std::string v = s->fallback;
      if (auto it = file.find(s->key); it != file.end()) v = it->second;
      std::string env = "MEMEBLIP_" + s->key;
      std::transform(env.begin(), env.end(), env.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      if (const char* e = std::getenv(env.c_str())) v = e;
      if (s->option->count() > 0) v = s->value;
      out[s->key] = v;
    }
    return out;
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::unique_ptr<Setting>> items_;
};

const std::string& need(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end() || it->second.empty()) throw ConfigError("--" + key + " is required");
  return it->second;
}

std::optional<std::string> maybe(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

KeyValues only(const KeyValues& kv, const KeyValues& reference) {
  KeyValues out;
  for (const auto& [k, v] : kv) {
    if (reference.count(k)) out[k] = v;
  }
  return out;
}

HeadConfig head_from(const KeyValues& kv) {
  HeadConfig cfg;
  apply_key_values(cfg, only(kv, to_key_values(HeadConfig{})));
  cfg.validate();
  return cfg;
}

TrainConfig train_from(const KeyValues& kv) {
  TrainConfig cfg;
  apply_key_values(cfg, only(kv, to_key_values(TrainConfig{})));
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// output and manifests

struct Run {
  std::string command;
  std::vector<std::string> argv;
  KeyValues config;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::vector<std::string> outputs;
  std::chrono::system_clock::time_point started = std::chrono::system_clock::now();
  std::chrono::steady_clock::time_point clock = std::chrono::steady_clock::now();

  std::string input(const std::string& path) {
    std::string bytes = read_file(path);
    inputs.emplace_back(path, digest_hex(bytes));
    return bytes;
  }
};

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const Run& run, const fs::path& path) {
  json inputs = json::array();
  for (const auto& [p, d] : run.inputs) inputs.push_back({{"path", p}, {"digest", d}});
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run.clock).count();
  json doc = {
      {"tool", "memeblip"},
      {"version", kVersion},
      {"command", run.command},
      {"argv", run.argv},
      {"config", run.config},
      {"config_text", format_key_values(run.config)},
      {"inputs", inputs},
      {"outputs", run.outputs},
      {"started_at", utc_timestamp(run.started)},
      {"wall_clock_seconds", seconds},
  };
  write_file(path, doc.dump(2) + "\n");
}

json to_json(const EvalReport& r) {
  const auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"split", r.split},
          {"seed", r.seed},
          {"n", r.n},
          {"accuracy", r.accuracy},
          {"auroc", num(r.auroc)},
          {"macro_f1", r.macro_f1},
          {"balanced_accuracy", r.balanced_accuracy},
          {"confusion",
           {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp},
            {"fn", r.confusion.fn}}}};
}

json to_json(const MetricSummary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
}

json to_json(const EpochLogRow& r) {
  return {{"epoch", r.epoch},         {"train_loss", r.train_loss},
          {"val_acc", r.val_acc},     {"val_auroc", r.val_auroc},
          {"val_f1", r.val_f1},       {"lr", r.lr},
          {"max_grad_norm", r.max_clipped_norm}};
}

std::string shape_text(const Shape& s) { return to_string(s); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// commands

bool has_param(const HeadConfig& head, const std::string& name) {
  for (const auto& [n, s] : parameter_manifest(head)) {
    if (n == name) return true;
  }
  return false;
}

json cmd_synth(const KeyValues& kv, Run& run) {
  SyntheticSpec spec;
  spec.n = static_cast<std::size_t>(parse_u64("n", need(kv, "n")));
  spec.img_dim = static_cast<int>(parse_int("img_dim", need(kv, "img_dim")));
  spec.txt_dim = static_cast<int>(parse_int("txt_dim", need(kv, "txt_dim")));
  spec.class_separation = parse_double("separation", need(kv, "separation"));
  spec.label_noise = parse_double("noise", need(kv, "noise"));
  spec.seed = parse_u64("seed", need(kv, "seed"));
  const std::string out = need(kv, "out");
  spec.validate();
  Dataset ds = synth(spec);
  if (auto fractions = maybe(kv, "split_seed")) {
    split_dataset(ds, {}, parse_u64("split_seed", *fractions));
  }
  const std::string bytes = encode_dataset(ds);
  write_file(out, bytes);
  run.outputs.push_back(out);
  write_manifest(run, out + ".manifest.json");
  return {{"out", out}, {"count", ds.records.size()}, {"digest", digest_hex(bytes)}};
}

json split_counts(const Dataset& ds) {
  json counts = json::object();
  for (auto s : {Split::Train, Split::Val, Split::Test}) {
    int pos = 0;
    const auto rows = ds.indices_of(s);
    for (auto r : rows) pos += ds.records[r].label;
    counts[std::string(to_string(s))] = {{"n", rows.size()}, {"positive", pos}};
  }
  return counts;
}

json cmd_split(const KeyValues& kv, Run& run) {
  const std::string data = need(kv, "data");
  const std::string out = need(kv, "out");
  SplitFractions f{parse_double("train_frac", need(kv, "train_frac")),
                   parse_double("val_frac", need(kv, "val_frac")),
                   parse_double("test_frac", need(kv, "test_frac"))};
  Dataset ds = decode_dataset(run.input(data));
  std::vector<std::string> warnings;
  split_dataset(ds, f, parse_u64("seed", need(kv, "seed")), &warnings);
  for (const auto& w : warnings) std::cerr << "memeblip: warning: " << w << "\n";
  write_dataset(ds, out);
  run.outputs.push_back(out);
  write_manifest(run, out + ".manifest.json");
  return {{"out", out}, {"splits", split_counts(ds)}, {"warnings", warnings}};
}

json cmd_import(const KeyValues& kv, Run& run) {
  const std::string in = need(kv, "jsonl");
  const std::string out = need(kv, "out");
  const Dataset ds = parse_jsonl(run.input(in), static_cast<int>(parse_int("img_dim", need(kv, "img_dim"))),
                                 static_cast<int>(parse_int("txt_dim", need(kv, "txt_dim"))));
  write_dataset(ds, out);
  run.outputs.push_back(out);
  write_manifest(run, out + ".manifest.json");
  return {{"out", out}, {"count", ds.records.size()}, {"img_dim", ds.img_dim}, {"txt_dim", ds.txt_dim}};
}

json cmd_export(const KeyValues& kv, Run& run) {
  const std::string data = need(kv, "data");
  const std::string out = need(kv, "out");
  const Dataset ds = decode_dataset(run.input(data));
  write_jsonl(ds, out);
  run.outputs.push_back(out);
  write_manifest(run, out + ".manifest.json");
  return {{"out", out}, {"count", ds.records.size()}};
}

json cmd_train(const KeyValues& kv, Run& run) {
  const std::string data = need(kv, "data");
  const fs::path out_dir = need(kv, "out_dir");
  const std::uint64_t seed = parse_u64("seed", need(kv, "seed"));
  HeadConfig head = head_from(kv);
  TrainConfig cfg = train_from(kv);
  cfg.seeds = {seed};
  if (auto s = maybe(kv, "stop_after_epoch")) {
    cfg.stop_after_epoch = static_cast<int>(parse_int("stop_after_epoch", *s));
  }
  cfg.log_grad_std = parse_bool("log_grad_std", need(kv, "log_grad_std"));
  if (auto step = maybe(kv, "inject_step")) {
    cfg.inject = SpikeInjection{parse_int("inject_step", *step), need(kv, "inject_param"),
                                parse_double("inject_factor", need(kv, "inject_factor"))};
    if (!has_param(head, cfg.inject->param)) {
      throw ConfigError("--inject_param: no trainable parameter named '" + cfg.inject->param + "'");
    }
  }
  cfg.validate();

  const Dataset ds = decode_dataset(run.input(data));
  std::optional<ResumeState> resume;
  if (auto path = maybe(kv, "resume")) {
    resume.emplace();
    resume->last = decode_checkpoint(run.input(*path));
    if (auto best = maybe(kv, "resume_best")) resume->best = decode_checkpoint(run.input(*best));
    HeadConfig expected = head;
    expected.init_seed = seed;
    if (!(resume->last.head == expected)) {
      throw ConfigError("--resume: checkpoint was trained with a different head config or seed");
    }
  }

  const TrainResult result = train(ds, head, cfg, seed, resume ? &*resume : nullptr);

  ensure_dir(out_dir);
  const auto save = [&](const std::string& name, const std::string& bytes) {
    write_file(out_dir / name, bytes);
    run.outputs.push_back((out_dir / name).string());
  };
  save("best.mbck", encode_checkpoint(result.best));
  save("last.mbck", encode_checkpoint(result.last));
  save("epochs.csv", epoch_log_csv(result.epochs));
  if (cfg.log_grad_std) save("grad_std.csv", to_csv(result.grad_std));

  json doc = {{"seed", seed},
              {"best_epoch", result.best.best_epoch},
              {"best_val_auroc", result.best.best_val_auroc},
              {"epochs", json::array()},
              {"test", nullptr}};
  for (const auto& row : result.epochs) doc["epochs"].push_back(to_json(row));
  if (!ds.indices_of(Split::Test).empty()) {
    auto report = evaluate(result.best, ds, Split::Test);
    report.seed = seed;
    doc["test"] = to_json(report);
  }
  write_manifest(run, out_dir / "manifest.json");
  doc["outputs"] = run.outputs;
  return doc;
}

json cmd_eval(const KeyValues& kv, Run& run) {
  const Checkpoint ckpt = decode_checkpoint(run.input(need(kv, "checkpoint")));
  const Dataset ds = decode_dataset(run.input(need(kv, "data")));
  Split split;
  try {
    split = parse_split(need(kv, "split"));
  } catch (const DataError& e) {
    throw ConfigError(std::string("--split: ") + e.what());
  }
  auto report = evaluate(ckpt, ds, split);
  report.seed = ckpt.head.init_seed;
  json doc = to_json(report);
  if (auto out = maybe(kv, "out")) {
    write_file(*out, doc.dump(2) + "\n");
    run.outputs.push_back(*out);
    write_manifest(run, *out + ".manifest.json");
  }
  return doc;
}

json cmd_ablate(const KeyValues& kv, Run& run) {
  const fs::path out_dir = need(kv, "out_dir");
  const HeadConfig head = head_from(kv);
  const TrainConfig cfg = train_from(kv);
  const int parallel = static_cast<int>(parse_int("parallel", need(kv, "parallel")));
  if (parallel < 1) throw ConfigError("--parallel must be >= 1");
  const Dataset ds = decode_dataset(run.input(need(kv, "data")));
  const AblationStudy study = run_study(ds, head, cfg, parallel);

  ensure_dir(out_dir);
  write_file(out_dir / "study.csv", study.csv());
  write_file(out_dir / "study.txt", study.table());
  run.outputs = {(out_dir / "study.csv").string(), (out_dir / "study.txt").string()};
  write_manifest(run, out_dir / "manifest.json");

  json doc = {{"scenarios", json::array()}, {"outputs", run.outputs}};
  for (const auto& r : study.runs) {
    json reports = json::array();
    for (const auto& rep : r.reports) reports.push_back(to_json(rep));
    doc["scenarios"].push_back({{"scenario", to_string(r.scenario)},
                                {"label", scenario_label(r.scenario)},
                                {"reports", reports},
                                {"accuracy", to_json(r.aggregate.accuracy)},
                                {"auroc", to_json(r.aggregate.auroc)},
                                {"macro_f1", to_json(r.aggregate.macro_f1)}});
  }
  doc["table"] = study.table();
  return doc;
}

json cmd_diagnose(const KeyValues& kv, Run& run) {
  const auto log = parse_grad_std_csv(run.input(need(kv, "log")));
  const auto d = grad_diagnose(log, parse_double("multiple", need(kv, "multiple")));
  json spikes = json::array();
  for (const auto& s : d.spikes) {
    spikes.push_back({{"param", s.param}, {"epoch", s.epoch}, {"max", s.max},
                      {"baseline", s.baseline}});
  }
  if (auto out = maybe(kv, "out")) {
    write_file(*out, d.csv());
    run.outputs.push_back(*out);
    write_manifest(run, *out + ".manifest.json");
  }
  return {{"rows", log.size()},
          {"flagged", std::vector<std::string>(d.flagged.begin(), d.flagged.end())},
          {"spikes", spikes}};
}

json inspect_dataset(const std::string& bytes, bool validate) {
  const DatasetHeader h = decode_header(bytes);
  json doc = {{"kind", "dataset"},
              {"version", h.version},
              {"count", h.count},
              {"img_dim", h.img_dim},
              {"txt_dim", h.txt_dim},
              {"digest", digest_hex(bytes)}};
  if (validate) {
    const Dataset ds = decode_dataset(bytes);
    validate_dataset(ds);
    doc["splits"] = split_counts(ds);
    doc["valid"] = true;
  }
  return doc;
}

json inspect_checkpoint(const std::string& bytes, bool validate) {
  const Checkpoint ckpt = decode_checkpoint(bytes);
  json params = json::array();
  for (const auto& e : ckpt.params) {
    const std::string_view raw(reinterpret_cast<const char*>(e.value.data()),
                               static_cast<std::size_t>(e.value.size()) * sizeof(Real));
    params.push_back({{"name", e.name}, {"shape", e.shape}, {"digest", digest_hex(raw)}});
  }
  json doc = {{"kind", "checkpoint"},
              {"version", ckpt.version},
              {"epoch", ckpt.epoch},
              {"best_epoch", ckpt.best_epoch},
              {"best_val_auroc", ckpt.best_val_auroc},
              {"optimizer_step", ckpt.optim.step},
              {"head", to_key_values(ckpt.head)},
              {"params", params},
              {"total_elements", ckpt.params.total_elements()},
              {"digest", digest_hex(bytes)}};
  if (validate) {
    const auto head = head_from_checkpoint(ckpt);
    for (const auto& e : head.params) {
      if (!nd::all_finite(e.value)) {
        throw DataError("parameter " + e.name + " contains non-finite values");
      }
    }
    doc["valid"] = true;
  }
  return doc;
}

json cmd_inspect(const std::string& path, bool validate, Run& run) {
  const std::string bytes = run.input(path);
  const std::string_view magic = std::string_view(bytes).substr(0, 4);
  if (magic == std::string_view(kDatasetMagic.data(), 4)) return inspect_dataset(bytes, validate);
  if (magic == std::string_view(kCheckpointMagic.data(), 4)) {
    return inspect_checkpoint(bytes, validate);
  }
  throw FormatError(path + ": unrecognized file (expected a dataset or checkpoint)");
}

// ---------------------------------------------------------------------------
// human-readable rendering

std::string percent(double v) { return std::isnan(v) ? "n/a" : format_percent(v) + "%"; }

void print_report(const json& r) {
  std::cout << "split     " << r["split"].get<std::string>() << " (n=" << r["n"] << ")\n"
            << "accuracy  " << percent(r["accuracy"].get<double>()) << "\n"
            << "auroc     " << (r["auroc"].is_null() ? "n/a" : percent(r["auroc"].get<double>()))
            << "\n"
            << "macro_f1  " << percent(r["macro_f1"].get<double>()) << "\n"
            << "confusion tp=" << r["confusion"]["tp"] << " tn=" << r["confusion"]["tn"]
            << " fp=" << r["confusion"]["fp"] << " fn=" << r["confusion"]["fn"] << "\n";
}

void print_human(const std::string& command, const json& doc) {
  if (command == "synth" || command == "import" || command == "export") {
    std::cout << "wrote " << doc["count"] << " records to " << doc["out"].get<std::string>()
              << "\n";
  } else if (command == "split") {
    std::cout << "wrote " << doc["out"].get<std::string>() << "\n";
    for (const auto& [name, c] : doc["splits"].items()) {
      std::cout << "  " << name << ": " << c["n"] << " records, " << c["positive"]
                << " positive\n";
    }
  } else if (command == "train") {
    std::printf("%-6s %-10s %-8s %-9s %-8s %-10s\n", "epoch", "loss", "val_acc", "val_auroc",
                "val_f1", "lr");
    for (const auto& r : doc["epochs"]) {
      std::printf("%-6d %-10.5f %-8.4f %-9.4f %-8.4f %-10.3g\n", r["epoch"].get<int>(),
                  r["train_loss"].get<double>(), r["val_acc"].get<double>(),
                  r["val_auroc"].get<double>(), r["val_f1"].get<double>(),
                  r["lr"].get<double>());
    }
    std::cout << "best epoch " << doc["best_epoch"] << " (val auroc "
              << doc["best_val_auroc"].get<double>() << ")\n";
    if (!doc["test"].is_null()) print_report(doc["test"]);
    for (const auto& o : doc["outputs"]) std::cout << "wrote " << o.get<std::string>() << "\n";
  } else if (command == "eval") {
    print_report(doc);
  } else if (command == "ablate") {
    std::cout << doc["table"].get<std::string>();
  } else if (command == "diagnose") {
    std::cout << doc["rows"] << " log rows\n";
    if (doc["flagged"].empty()) std::cout << "no spikes\n";
    for (const auto& s : doc["spikes"]) {
      std::cout << "spike: " << s["param"].get<std::string>() << " epoch " << s["epoch"]
                << " max " << s["max"].get<double>() << " (median "
                << s["baseline"].get<double>() << ")\n";
    }
  } else if (command == "inspect") {
    if (doc["kind"] == "dataset") {
      std::cout << "dataset v" << doc["version"] << ": " << doc["count"] << " records, img_dim "
                << doc["img_dim"] << ", txt_dim " << doc["txt_dim"] << "\n";
      if (doc.contains("splits")) {
        for (const auto& [name, c] : doc["splits"].items()) {
          std::cout << "  " << name << ": " << c["n"] << " (" << c["positive"] << " positive)\n";
        }
      }
    } else {
      std::cout << "checkpoint v" << doc["version"] << ": epoch " << doc["epoch"]
                << ", best epoch " << doc["best_epoch"] << ", step " << doc["optimizer_step"]
                << ", ablation " << doc["head"]["ablation"].get<std::string>() << "\n";
      for (const auto& p : doc["params"]) {
        std::printf("  %-28s %-14s %s\n", p["name"].get<std::string>().c_str(),
                    shape_text(p["shape"].get<Shape>()).c_str(),
                    p["digest"].get<std::string>().c_str());
      }
      std::cout << "  total elements " << doc["total_elements"] << "\n";
    }
    if (doc.value("valid", false)) std::cout << "valid\n";
  }
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
      return kExitUsage;
    case ErrorKind::Data:
    case ErrorKind::Format:
    case ErrorKind::Corruption:
    case ErrorKind::Shape:
    case ErrorKind::Version:
    case ErrorKind::Dimension:
    case ErrorKind::Normalization:
    case ErrorKind::Io:
      return kExitData;
    case ErrorKind::State:
    case ErrorKind::Contract:
      return kExitInternal;
  }
  return kExitInternal;
}

int fail(int code, const std::string& kind, const std::string& message, bool as_json) {
  std::cerr << "memeblip: error: " << message << "\n";
  if (as_json) {
    std::cout << json{{"ok", false},
                      {"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}
                     .dump(2)
              << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fusion-head training and evaluation on precomputed image/text embeddings",
               "memeblip"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  std::string config_path;
  app.add_flag("--json", as_json, "Print one JSON document instead of text");
  app.add_option("--config", config_path, "key = value settings file");
  app.set_version_flag("--version", std::string(kVersion));

  const KeyValues head_defaults = to_key_values(HeadConfig{});
  const KeyValues train_defaults = to_key_values(TrainConfig{});
  std::map<std::string, std::unique_ptr<Settings>> settings;
  const auto command = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    return settings.emplace(name, std::make_unique<Settings>(sub)).first->second.get();
  };

  auto* s = command("synth", "Generate a synthetic two-class embedding dataset");
  s->add("n", "2000", "number of records");
  s->add("img_dim", "1408", "image embedding width");
  s->add("txt_dim", "768", "text embedding width");
  s->add("separation", "6", "distance between class means");
  s->add("noise", "0", "label flip probability in [0,1]");
  s->add("seed", "0", "generator seed");
  s->add("split_seed", "", "also assign a stratified 85/5/10 split with this seed");
  s->add("out", "", "output dataset path");

  s = command("split", "Assign stratified train/val/test splits");
  s->add("data", "", "input dataset");
  s->add("out", "", "output dataset");
  s->add("train_frac", "0.85", "train fraction");
  s->add("val_frac", "0.05", "validation fraction");
  s->add("test_frac", "0.10", "test fraction");
  s->add("seed", "0", "split seed");

  s = command("import", "Convert JSON lines to the binary dataset format");
  s->add("jsonl", "", "input JSON lines file");
  s->add("out", "", "output dataset");
  s->add("img_dim", "0", "expected image width (0 = from the first record)");
  s->add("txt_dim", "0", "expected text width (0 = from the first record)");

  s = command("export", "Convert a binary dataset to JSON lines");
  s->add("data", "", "input dataset");
  s->add("out", "", "output JSON lines file");

  s = command("train", "Train one seed and write checkpoints and logs");
  s->add("data", "", "split dataset");
  s->add("out_dir", "", "output directory");
  s->add("seed", "1", "training seed (initialization, batch order, dropout)");
  s->add_all(head_defaults, {"init_seed"}, "head setting");
  s->add_all(train_defaults, {"seeds"}, "training setting");
  s->add("stop_after_epoch", "", "stop after this many epochs (schedule still spans epochs)");
  s->add("resume", "", "continue from this last-epoch checkpoint");
  s->add("resume_best", "", "best checkpoint of the interrupted run");
  s->add("log_grad_std", "true", "write the per-step grad_std log");
  s->add("inject_step", "", "fault injection: global step");
  s->add("inject_param", "", "fault injection: parameter name");
  s->add("inject_factor", "1000", "fault injection: gradient multiplier");

  s = command("eval", "Evaluate a checkpoint on one split");
  s->add("checkpoint", "", "checkpoint file");
  s->add("data", "", "dataset");
  s->add("split", "test", "train, val or test");
  s->add("out", "", "also write the report as JSON");

  s = command("ablate", "Run every ablation scenario over the seed list");
  s->add("data", "", "split dataset");
  s->add("out_dir", "", "output directory");
  s->add("parallel", "1", "scenarios trained concurrently");
  s->add_all(head_defaults, {"init_seed", "ablation"}, "head setting");
  s->add_all(train_defaults, {}, "training setting");

  s = command("diagnose", "Summarize a grad_std log and report spikes");
  s->add("log", "", "grad_std CSV written by train");
  s->add("multiple", "10", "spike threshold as a multiple of the parameter median");
  s->add("out", "", "also write the per-epoch summary CSV");

  auto* inspect = app.add_subcommand("inspect", "Describe or validate a dataset or checkpoint");
  std::string inspect_path;
  bool validate = false;
  inspect->add_option("path", inspect_path, "dataset or checkpoint file")->required();
  inspect->add_flag("--validate", validate, "fully decode and check the file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitUsage, "usage", e.what(), as_json);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Run run;
  run.command = name;
  run.argv.assign(argv, argv + argc);
  try {
    json doc;
    if (name == "inspect") {
      doc = cmd_inspect(inspect_path, validate, run);
    } else {
      KeyValues file;
      if (!config_path.empty()) {
        file = parse_key_values(run.input(config_path));
        for (const auto& [k, v] : file) {
          const bool known = std::any_of(settings.begin(), settings.end(),
                                         [&](const auto& e) { return e.second->knows(k); });
          if (!known) throw ConfigError(config_path + ": unknown key '" + k + "'");
        }
      }
      run.config = settings.at(name)->resolve(file);
      if (name == "synth") doc = cmd_synth(run.config, run);
      else if (name == "split") doc = cmd_split(run.config, run);
      else if (name == "import") doc = cmd_import(run.config, run);
      else if (name == "export") doc = cmd_export(run.config, run);
      else if (name == "train") doc = cmd_train(run.config, run);
      else if (name == "eval") doc = cmd_eval(run.config, run);
      else if (name == "ablate") doc = cmd_ablate(run.config, run);
      else if (name == "diagnose") doc = cmd_diagnose(run.config, run);
    }
    if (as_json) {
      doc["ok"] = true;
      doc["command"] = name;
      std::cout << doc.dump(2) << "\n";
    } else {
      print_human(name, doc);
    }
    return kExitOk;
  } catch (const Error& e) {
    return fail(exit_code_for(e.kind()), to_string(e.kind()), e.what(), as_json);
  } catch (const std::exception& e) {
    return fail(kExitInternal, "internal", e.what(), as_json);
  }
}

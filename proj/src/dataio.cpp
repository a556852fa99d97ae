// SPDX-License-Identifier: Apache-2.0
#include "memeblip/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "memeblip/errors.hpp"
#include "memeblip/rng.hpp"
#include "memeblip/wire.hpp"

namespace memeblip {

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(text) + "' (expected train, val or test)");
}

std::vector<std::size_t> Dataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xE) extra = 2;
    else if ((c >> 3) == 0x1E) extra = 3;
    else return false;
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += extra + 1;
  }
  return true;
}

std::string record_label(std::size_t index, const std::string& id) {
  return "record " + std::to_string(index) + " ('" + id + "')";
}

/// Parses `count` records starting at `pos`; `override_index` optionally
/// substitutes one record's img/txt widths. Returns the record list when the
/// stream frames exactly to the end, or the failing offset otherwise.
struct FrameResult {
  bool ok = false;
  std::size_t fail_offset = 0;
  std::size_t fail_record = 0;
  std::string reason;
  bool truncated = false;
};

struct WidthOverride {
  std::size_t record;
  std::size_t img;
  std::size_t txt;
};

FrameResult frame_records(std::string_view bytes, std::size_t pos, std::uint32_t count,
                          std::uint32_t img_dim, std::uint32_t txt_dim,
                          std::optional<WidthOverride> override_width,
                          std::vector<EmbeddingRecord>* out) {
  wire::Reader in(bytes, pos);
  FrameResult res;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::size_t start = in.offset();
    res.fail_record = r;
    res.fail_offset = start;
    std::size_t img_w = img_dim;
    std::size_t txt_w = txt_dim;
    if (override_width && override_width->record == r) {
      img_w = override_width->img;
      txt_w = override_width->txt;
    }
    const std::size_t fixed = 2 + 2 + 4 * (img_w + txt_w);
    if (in.remaining() < 2) {
      res.truncated = true;
      res.reason = "truncated record header";
      return res;
    }
    const std::uint16_t id_len = in.u16();
    if (in.remaining() < id_len + fixed - 2) {
      res.truncated = true;
      res.fail_offset = in.offset();
      res.reason = "truncated record payload";
      return res;
    }
    std::string id(in.bytes(id_len));
    const std::uint8_t label = in.u8();
    const std::uint8_t split = in.u8();
    if (id.empty() || !valid_utf8(id)) {
      res.reason = "invalid id";
      return res;
    }
    if (label > 1) {
      res.reason = "label byte " + std::to_string(label) + " is not 0 or 1";
      return res;
    }
    if (split > 2) {
      res.reason = "split byte " + std::to_string(split) + " is not 0, 1 or 2";
      return res;
    }
    EmbeddingRecord rec;
    rec.id = std::move(id);
    rec.label = label;
    rec.split = static_cast<Split>(split);
    rec.img.resize(img_w);
    rec.txt.resize(txt_w);
    for (auto& v : rec.img) v = in.f32();
    for (auto& v : rec.txt) v = in.f32();
    const auto finite = [](float v) { return std::isfinite(v); };
    if (!std::all_of(rec.img.begin(), rec.img.end(), finite) ||
        !std::all_of(rec.txt.begin(), rec.txt.end(), finite)) {
      res.reason = "non-finite embedding value";
      return res;
    }
    if (out) out->push_back(std::move(rec));
  }
  if (in.remaining() != 0) {
    res.fail_record = count;
    res.fail_offset = in.offset();
    res.reason = std::to_string(in.remaining()) + " trailing bytes after the last record";
    return res;
  }
  res.ok = true;
  return res;
}

constexpr std::size_t kHeaderBytes = 20;

}  // namespace

void validate_dataset(const Dataset& ds) {
  if (ds.img_dim < 1 || ds.txt_dim < 1) throw FormatError("dataset dims must be >= 1");
  if (ds.records.empty()) throw DataError("dataset has no records");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (r.img.size() != static_cast<std::size_t>(ds.img_dim)) {
      throw FormatError(record_label(i, r.id) + ": image vector width " +
                        std::to_string(r.img.size()) + " does not match img_dim " +
                        std::to_string(ds.img_dim));
    }
    if (r.txt.size() != static_cast<std::size_t>(ds.txt_dim)) {
      throw FormatError(record_label(i, r.id) + ": text vector width " +
                        std::to_string(r.txt.size()) + " does not match txt_dim " +
                        std::to_string(ds.txt_dim));
    }
    if (r.label != 0 && r.label != 1) {
      throw DataError(record_label(i, r.id) + ": label " + std::to_string(r.label) +
                      " is not 0 or 1");
    }
    if (r.id.empty() || r.id.size() > 0xFFFF || !valid_utf8(r.id)) {
      throw DataError("record " + std::to_string(i) + ": id must be non-empty UTF-8 of at most 65535 bytes");
    }
    if (!seen.insert(r.id).second) {
      throw DataError(record_label(i, r.id) + ": duplicate id");
    }
    const auto finite = [](float v) { return std::isfinite(v); };
    if (!std::all_of(r.img.begin(), r.img.end(), finite) ||
        !std::all_of(r.txt.begin(), r.txt.end(), finite)) {
      throw DataError(record_label(i, r.id) + ": non-finite embedding value");
    }
  }
}

std::string encode_dataset(const Dataset& ds) {
  validate_dataset(ds);
  wire::Writer out;
  out.bytes(std::string_view(kDatasetMagic.data(), kDatasetMagic.size()));
  out.u32(kDatasetVersion);
  out.u32(static_cast<std::uint32_t>(ds.records.size()));
  out.u32(static_cast<std::uint32_t>(ds.img_dim));
  out.u32(static_cast<std::uint32_t>(ds.txt_dim));
  for (const auto& r : ds.records) {
    out.u16(static_cast<std::uint16_t>(r.id.size()));
    out.bytes(r.id);
    out.u8(static_cast<std::uint8_t>(r.label));
    out.u8(static_cast<std::uint8_t>(r.split));
    for (float v : r.img) out.f32(v);
    for (float v : r.txt) out.f32(v);
  }
  return out.take();
}

DatasetHeader decode_header(std::string_view bytes) {
  DatasetHeader h;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic.data(), 4) != 0) {
    throw FormatError("not a dataset file: bad magic");
  }
  if (bytes.size() < kHeaderBytes) {
    throw CorruptionError("dataset header truncated", bytes.size());
  }
  wire::Reader in(bytes);
  std::memcpy(h.magic.data(), in.bytes(4).data(), 4);
  h.version = in.u32();
  if (h.version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(h.version) +
                      " (expected " + std::to_string(kDatasetVersion) + ")");
  }
  h.count = in.u32();
  h.img_dim = in.u32();
  h.txt_dim = in.u32();
  if (h.count < 1) throw FormatError("dataset header count must be >= 1");
  if (h.img_dim < 1 || h.txt_dim < 1) throw FormatError("dataset header dims must be >= 1");
  if (h.img_dim > (1u << 24) || h.txt_dim > (1u << 24)) {
    throw FormatError("dataset header dims are implausibly large");
  }
  return h;
}

Dataset decode_dataset(std::string_view bytes) {
  const DatasetHeader h = decode_header(bytes);
  std::vector<EmbeddingRecord> records;
  records.reserve(std::min<std::size_t>(h.count, 1u << 20));
  const FrameResult res =
      frame_records(bytes, kHeaderBytes, h.count, h.img_dim, h.txt_dim, std::nullopt, &records);
  if (!res.ok) {
    // Look for a single record whose payload width disagrees with the header
    // and would explain the misframing. Image and text floats are adjacent on
    // disk, so only their combined width can be recovered. The final record
    // is excluded: a short final record is indistinguishable from truncation.
    // Misframing surfaces at most a record or two after the culprit.
    const std::size_t last = std::min<std::size_t>(res.fail_record, h.count - 1);
    const long long expected = static_cast<long long>(h.img_dim) + h.txt_dim;
    for (std::size_t r = last >= 2 ? last - 2 : 0; r <= last && r + 1 < h.count; ++r) {
      for (int delta = -8; delta <= 8; ++delta) {
        const long long txt = static_cast<long long>(h.txt_dim) + delta;
        if (delta == 0 || txt < 0) continue;
        WidthOverride o{r, h.img_dim, static_cast<std::size_t>(txt)};
        if (frame_records(bytes, kHeaderBytes, h.count, h.img_dim, h.txt_dim, o, nullptr).ok) {
          throw FormatError("record " + std::to_string(r) + ": embedding payload is " +
                            std::to_string(expected + delta) +
                            " floats wide but the header declares img_dim " +
                            std::to_string(h.img_dim) + " + txt_dim " +
                            std::to_string(h.txt_dim) + " = " + std::to_string(expected));
        }
      }
    }
    if (res.truncated) {
      throw CorruptionError("dataset payload truncated in record " +
                                std::to_string(res.fail_record) + ": " + res.reason,
                            res.fail_offset);
    }
    throw CorruptionError("dataset record " + std::to_string(res.fail_record) + ": " + res.reason,
                          res.fail_offset);
  }
  Dataset ds{static_cast<int>(h.img_dim), static_cast<int>(h.txt_dim), std::move(records)};
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (!seen.insert(ds.records[i].id).second) {
      throw DataError(record_label(i, ds.records[i].id) + ": duplicate id");
    }
  }
  return ds;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file(path, encode_dataset(ds));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

// ---------------------------------------------------------------------------
// JSON lines

Dataset parse_jsonl(std::string_view text, int img_dim, int txt_dim) {
  Dataset ds{img_dim, txt_dim, {}};
  std::size_t line_no = 0;
  std::istringstream lines{std::string(text)};
  std::string line;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::size_t index = ds.records.size();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    EmbeddingRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      rec.label = j.at("label").get<int>();
      rec.split = j.contains("split") ? parse_split(j.at("split").get<std::string>()) : Split::Train;
      for (double v : j.at("img").get<std::vector<double>>()) rec.img.push_back(static_cast<float>(v));
      for (double v : j.at("txt").get<std::vector<double>>()) rec.txt.push_back(static_cast<float>(v));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("jsonl record " + std::to_string(index) + " (line " +
                        std::to_string(line_no) + "): " + e.what());
    }
    if (ds.img_dim == 0) ds.img_dim = static_cast<int>(rec.img.size());
    if (ds.txt_dim == 0) ds.txt_dim = static_cast<int>(rec.txt.size());
    ds.records.push_back(std::move(rec));
  }
  validate_dataset(ds);
  return ds;
}

std::string format_jsonl(const Dataset& ds) {
  validate_dataset(ds);
  std::string out;
  char buf[32];
  const auto append_array = [&](const std::vector<float>& values) {
    out += '[';
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out += ',';
      if (values[i] == 0.0f && std::signbit(values[i])) {
        out += "-0.0";  // "-0" would parse back as integer zero
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(values[i]));
      out += buf;
    }
    out += ']';
  };
  for (const auto& r : ds.records) {
    out += "{\"id\":" + nlohmann::json(r.id).dump() + ",\"label\":" + std::to_string(r.label) +
           ",\"split\":\"" + std::string(to_string(r.split)) + "\",\"img\":";
    append_array(r.img);
    out += ",\"txt\":";
    append_array(r.txt);
    out += "}\n";
  }
  return out;
}

Dataset read_jsonl(const std::filesystem::path& path, int img_dim, int txt_dim) {
  return parse_jsonl(read_file(path), img_dim, txt_dim);
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  write_file(path, format_jsonl(ds));
}

// ---------------------------------------------------------------------------
// splitting and batching

void split_dataset(Dataset& ds, SplitFractions f, std::uint64_t seed,
                   std::vector<std::string>* warnings) {
  const double sum = f.train + f.val + f.test;
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < ds.records.size(); ++i) by_label[ds.records[i].label].push_back(i);

  std::vector<std::pair<std::uint64_t, std::vector<std::size_t>>> groups;
  std::vector<std::size_t> pooled;
  for (auto& [label, members] : by_label) {
    if (members.size() < 3) {
      if (warnings) {
        warnings->push_back("class " + std::to_string(label) + " has only " +
                            std::to_string(members.size()) +
                            " members; split unstratified for this class");
      }
      pooled.insert(pooled.end(), members.begin(), members.end());
    } else {
      groups.emplace_back(static_cast<std::uint64_t>(label), std::move(members));
    }
  }
  if (!pooled.empty()) groups.emplace_back(~std::uint64_t{0}, std::move(pooled));

  for (auto& [key, members] : groups) {
    Rng rng(derive_seed(seed, Stream::Split, key));
    rng.shuffle(members);
    const auto n = static_cast<double>(members.size());
    const auto n_val = static_cast<std::size_t>(std::floor(f.val * n + 0.5));
    const auto n_test =
        std::min(members.size() - n_val, static_cast<std::size_t>(std::floor(f.test * n + 0.5)));
    const std::size_t n_train = members.size() - n_val - n_test;
    for (std::size_t k = 0; k < members.size(); ++k) {
      auto& rec = ds.records[members[k]];
      rec.split = k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
    }
  }
}

std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size,
                                              std::uint64_t shuffle_seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(shuffle_seed, Stream::Shuffle, epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic data

void SyntheticSpec::validate() const {
  if (n < 1) throw ConfigError("synth: n must be >= 1");
  if (img_dim < 1 || txt_dim < 1) throw ConfigError("synth: dims must be >= 1");
  if (!(class_separation >= 0.0) || !std::isfinite(class_separation)) {
    throw ConfigError("synth: separation must be a finite value >= 0");
  }
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) {
    throw ConfigError("synth: noise must be a probability in [0,1]");
  }
}

Dataset synth(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, Stream::Synth));
  const auto unit_direction = [&](int dim) {
    std::vector<double> d(static_cast<std::size_t>(dim));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : d) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : d) v /= norm;
    return d;
  };
  const auto img_dir = unit_direction(spec.img_dim);
  const auto txt_dir = unit_direction(spec.txt_dim);

  std::vector<int> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = static_cast<int>(i % 2);
  rng.shuffle(labels);

  Dataset ds{spec.img_dim, spec.txt_dim, {}};
  ds.records.reserve(spec.n);
  const int width = std::max<int>(6, static_cast<int>(std::to_string(spec.n).size()));
  for (std::size_t i = 0; i < spec.n; ++i) {
    EmbeddingRecord rec;
    std::string digits = std::to_string(i);
    rec.id = "s" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(digits.size(), width), '0') + digits;
    const double sign = labels[i] == 1 ? 0.5 : -0.5;
    const double offset = sign * spec.class_separation;
    rec.img.resize(static_cast<std::size_t>(spec.img_dim));
    rec.txt.resize(static_cast<std::size_t>(spec.txt_dim));
    for (std::size_t k = 0; k < rec.img.size(); ++k) {
      rec.img[k] = static_cast<float>(offset * img_dir[k] + rng.normal());
    }
    for (std::size_t k = 0; k < rec.txt.size(); ++k) {
      rec.txt[k] = static_cast<float>(offset * txt_dir[k] + rng.normal());
    }
    rec.label = labels[i];
    if (spec.label_noise > 0.0 && rng.bernoulli(spec.label_noise)) rec.label = 1 - rec.label;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::string digest_hex(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace memeblip

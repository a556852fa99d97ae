// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace memeblip {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view text);

/// One sample: frozen-encoder image and text embeddings plus its label
/// (0 benign, 1 harmful).
struct EmbeddingRecord {
  std::string id;
  std::vector<float> img;
  std::vector<float> txt;
  int label = 0;
  Split split = Split::Train;

  bool operator==(const EmbeddingRecord&) const = default;
};

struct Dataset {
  int img_dim = 0;
  int txt_dim = 0;
  std::vector<EmbeddingRecord> records;

  bool operator==(const Dataset&) const = default;

  std::vector<std::size_t> indices_of(Split split) const;
};

inline constexpr std::array<char, 4> kDatasetMagic = {'M', 'B', 'E', '2'};
inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetHeader {
  std::array<char, 4> magic = kDatasetMagic;
  std::uint32_t version = kDatasetVersion;
  std::uint32_t count = 0;
  std::uint32_t img_dim = 0;
  std::uint32_t txt_dim = 0;
};

/// Checks widths, labels, id uniqueness and finiteness. Throws FormatError or
/// DataError naming the first offending record.
void validate_dataset(const Dataset& ds);

/// Binary layout, little-endian:
///   "MBE2" | u32 version | u32 count | u32 img_dim | u32 txt_dim
///   per record: u16 id_len | id bytes | u8 label | u8 split | f32[img_dim] | f32[txt_dim]
std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);
DatasetHeader decode_header(std::string_view bytes);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// JSON-lines interchange: one object per line with keys id, label, split,
/// img, txt. Dimensions come from the first record unless given.
Dataset parse_jsonl(std::string_view text, int img_dim = 0, int txt_dim = 0);
std::string format_jsonl(const Dataset& ds);
Dataset read_jsonl(const std::filesystem::path& path, int img_dim = 0, int txt_dim = 0);
void write_jsonl(const Dataset& ds, const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.85;
  double val = 0.05;
  double test = 0.10;
};

/// Stratified by label with a seeded shuffle per class; val and test sizes are
/// rounded and train takes the remainder. Classes with fewer than three
/// members are pooled and split unstratified; a warning is appended for each.
void split_dataset(Dataset& ds, SplitFractions fractions, std::uint64_t seed,
                   std::vector<std::string>* warnings = nullptr);

/// Positions into `count` items for one epoch. The shuffle is keyed by
/// (shuffle_seed, epoch); the last partial batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t count, std::size_t batch_size,
                                              std::uint64_t shuffle_seed, std::uint64_t epoch);

struct SyntheticSpec {
  std::size_t n = 2000;
  int img_dim = 1408;
  int txt_dim = 768;
  double class_separation = 6.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class-conditional Gaussians: unit-variance noise around class means
/// +-separation/2 along a random unit direction per modality. Labels alternate
/// before shuffling (balanced within one) and are then flipped with
/// probability label_noise. All records are tagged train.
Dataset synth(const SyntheticSpec& spec);

/// FNV-1a 64-bit digest of a byte string, hex encoded.
std::string digest_hex(std::string_view bytes);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace memeblip

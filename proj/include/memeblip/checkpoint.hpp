// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "memeblip/config.hpp"
#include "memeblip/model.hpp"
#include "memeblip/optim.hpp"
#include "memeblip/real.hpp"

namespace memeblip {

inline constexpr std::array<char, 4> kCheckpointMagic = {'M', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training bit-exactly: configuration echo,
/// parameters, optimizer moments and the selection bookkeeping.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  HeadConfig head;
  ParamStore<Real> params;
  OptimState<Real> optim;
  std::int32_t epoch = 0;  // completed epochs
  std::int32_t best_epoch = -1;
  double best_val_auroc = -1.0;
};

/// Layout (little-endian):
///   "MBCK" | u32 version | u8 scalar bytes | str head-config text
///   | u32 epoch | i32 best_epoch | f64 best_val_auroc
///   | i64 optimizer step | f64 beta1 | f64 beta2 | f64 eps | f64 weight_decay
///   | u32 param count | per param: str name | u8 rank | i64 dims[rank]
///   | per param: values | per param: first moment | per param: second moment
/// where `str` is a u32 length followed by bytes.
std::string encode_checkpoint(const Checkpoint& ckpt);

/// Raises VersionError, ShapeError (naming the parameter), FormatError or
/// CorruptionError.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

HeadModel<Real> head_from_checkpoint(const Checkpoint& ckpt);

}  // namespace memeblip

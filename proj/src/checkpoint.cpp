// SPDX-License-Identifier: Apache-2.0
#include "memeblip/checkpoint.hpp"

#include <cstring>

#include "memeblip/dataio.hpp"
#include "memeblip/wire.hpp"

namespace memeblip {

namespace {

void put_scalar(wire::Writer& out, Real v) {
  if constexpr (sizeof(Real) == 4) {
    out.f32(static_cast<float>(v));
  } else {
    out.f64(static_cast<double>(v));
  }
}

Real get_scalar(wire::Reader& in) {
  if constexpr (sizeof(Real) == 4) {
    return static_cast<Real>(in.f32());
  } else {
    return static_cast<Real>(in.f64());
  }
}

void put_matrix(wire::Writer& out, const nd::Matrix<Real>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) put_scalar(out, m.data()[i]);
}

void get_matrix(wire::Reader& in, nd::Matrix<Real>& m) {
  const std::size_t need = static_cast<std::size_t>(m.size()) * sizeof(Real);
  if (in.remaining() < need) {
    throw CorruptionError("checkpoint payload truncated", in.offset() + in.remaining());
  }
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_scalar(in);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  wire::Writer out;
  out.bytes(std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size()));
  out.u32(kCheckpointVersion);
  out.u8(static_cast<std::uint8_t>(sizeof(Real)));
  out.str(format_key_values(to_key_values(ckpt.head)));
  out.u32(static_cast<std::uint32_t>(ckpt.epoch));
  out.u32(static_cast<std::uint32_t>(ckpt.best_epoch));
  out.f64(ckpt.best_val_auroc);
  out.u64(static_cast<std::uint64_t>(ckpt.optim.step));
  out.f64(ckpt.optim.hyper.beta1);
  out.f64(ckpt.optim.hyper.beta2);
  out.f64(ckpt.optim.hyper.eps);
  out.f64(ckpt.optim.hyper.weight_decay);
  out.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& e : ckpt.params) {
    out.str(e.name);
    out.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) out.u64(static_cast<std::uint64_t>(d));
  }
  if (ckpt.optim.m.size() != ckpt.params.size() || ckpt.optim.v.size() != ckpt.params.size()) {
    throw StateError("checkpoint: optimizer state does not match parameter set");
  }
  for (const auto& e : ckpt.params) put_matrix(out, e.value);
  for (const auto& m : ckpt.optim.m) put_matrix(out, m);
  for (const auto& v : ckpt.optim.v) put_matrix(out, v);
  return out.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) {
    throw FormatError("not a checkpoint file: bad magic");
  }
  wire::Reader in(bytes, 4);
  Checkpoint ckpt;
  ckpt.version = in.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(ckpt.version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto scalar_bytes = in.u8();
  if (scalar_bytes != sizeof(Real)) {
    throw FormatError("checkpoint stores " + std::to_string(scalar_bytes * 8) +
                      "-bit reals but this build trains with " +
                      std::to_string(sizeof(Real) * 8) + "-bit reals");
  }
  const KeyValues kv = parse_key_values(in.str());
  const KeyValues unknown = apply_key_values(ckpt.head, kv);
  if (!unknown.empty()) {
    throw FormatError("checkpoint head config has unknown key '" + unknown.begin()->first + "'");
  }
  ckpt.head.validate();
  ckpt.epoch = static_cast<std::int32_t>(in.u32());
  ckpt.best_epoch = static_cast<std::int32_t>(in.u32());
  ckpt.best_val_auroc = in.f64();
  ckpt.optim.step = static_cast<std::int64_t>(in.u64());
  ckpt.optim.hyper.beta1 = in.f64();
  ckpt.optim.hyper.beta2 = in.f64();
  ckpt.optim.hyper.eps = in.f64();
  ckpt.optim.hyper.weight_decay = in.f64();

  const auto manifest = parameter_manifest(ckpt.head);
  const std::uint32_t count = in.u32();
  if (count != manifest.size()) {
    throw ShapeError("checkpoint lists " + std::to_string(count) + " parameters but its config implies " +
                     std::to_string(manifest.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    const auto rank = in.u8();
    Shape shape;
    for (int k = 0; k < rank; ++k) shape.push_back(static_cast<std::int64_t>(in.u64()));
    const auto& [expected_name, expected_shape] = manifest[i];
    if (name != expected_name) {
      throw ShapeError("checkpoint parameter " + std::to_string(i) + " is '" + name +
                       "' but the config implies '" + expected_name + "'");
    }
    if (shape != expected_shape) {
      throw ShapeError("checkpoint parameter " + name + " has shape " + to_string(shape) +
                       " but the config implies " + to_string(expected_shape));
    }
    ckpt.params.add(std::move(name), std::move(shape));
  }
  for (auto& e : ckpt.params) get_matrix(in, e.value);
  ckpt.optim.m.reserve(count);
  ckpt.optim.v.reserve(count);
  for (auto& e : ckpt.params) {
    ckpt.optim.m.emplace_back(e.value.rows(), e.value.cols());
    get_matrix(in, ckpt.optim.m.back());
  }
  for (auto& e : ckpt.params) {
    ckpt.optim.v.emplace_back(e.value.rows(), e.value.cols());
    get_matrix(in, ckpt.optim.v.back());
  }
  if (in.remaining() != 0) {
    throw CorruptionError("checkpoint has " + std::to_string(in.remaining()) + " trailing bytes",
                          in.offset());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

HeadModel<Real> head_from_checkpoint(const Checkpoint& ckpt) {
  HeadModel<Real> head{ckpt.head, ckpt.params, std::nullopt};
  if (!uses_trainable_projection(ckpt.head.ablation)) {
    head.frozen = make_frozen_maps<Real>(ckpt.head);
  }
  return head;
}

}  // namespace memeblip

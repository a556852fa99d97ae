// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "memeblip/errors.hpp"
#include "memeblip/ndcore.hpp"

namespace memeblip {

using Shape = std::vector<std::int64_t>;

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

/// Ordered, named collection of trainable tensors with paired gradient
/// buffers. Rank-1 parameters are stored as 1 x d matrices and scalars as
/// 1 x 1; `shape` keeps the logical shape.
template <typename Scalar>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    nd::Matrix<Scalar> value;
    nd::Matrix<Scalar> grad;
  };

  Entry& add(std::string name, Shape shape) {
    if (index_.count(name)) throw StateError("duplicate parameter " + name);
    if (shape.empty() || shape.size() > 2) {
      throw ShapeError("parameter " + name + " must have rank 1 or 2");
    }
    for (auto d : shape) {
      if (d < 1) throw ShapeError("parameter " + name + " has non-positive dimension");
    }
    const Eigen::Index rows = shape.size() == 2 ? shape[0] : 1;
    const Eigen::Index cols = shape.size() == 2 ? shape[1] : shape[0];
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(shape),
                             nd::Matrix<Scalar>::Zero(rows, cols),
                             nd::Matrix<Scalar>::Zero(rows, cols)});
    return entries_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter " + name);
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  nd::Matrix<Scalar>& value(const std::string& name) { return at(name).value; }
  const nd::Matrix<Scalar>& value(const std::string& name) const { return at(name).value; }
  nd::Matrix<Scalar>& grad(const std::string& name) { return at(name).grad; }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
    grads_ready_ = false;
  }

  /// Set by a backward pass once every gradient buffer holds this step's
  /// gradient; cleared by zero_grad and by the optimizer step.
  void mark_grads_ready(bool ready = true) { grads_ready_ = ready; }
  bool grads_ready() const { return grads_ready_; }

  std::size_t size() const { return entries_.size(); }
  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += element_count(e.shape);
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  bool grads_ready_ = false;
};

}  // namespace memeblip

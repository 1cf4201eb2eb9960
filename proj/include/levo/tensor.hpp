#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "levo/error.hpp"

namespace levo {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape);

// Dense row-major tensor. Training runs in float; the double instantiation is
// used by the gradient-check harness.
template <typename T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;

  BasicTensor() = default;
  explicit BasicTensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(numel(shape)), fill) {}
  BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    check(static_cast<std::int64_t>(data.size()) == numel(shape), ErrorCode::kShapeMismatch,
          "tensor data size does not match shape " + shape_str(shape));
  }

  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::int64_t cols() const { return shape.size() < 2 ? 1 : size() / rows(); }

  T* row(std::int64_t r) { return data.data() + r * cols(); }
  const T* row(std::int64_t r) const { return data.data() + r * cols(); }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    return out;
  }
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Ordered name -> tensor map plus the set of names excluded from updates.
template <typename T>
class BasicParamStore {
 public:
  void add(const std::string& name, BasicTensor<T> t) {
    check(!tensors_.contains(name), ErrorCode::kInvalidArgument, "duplicate parameter name: " + name);
    t.requires_grad = true;
    tensors_.emplace(name, std::move(t));
  }
  void set(const std::string& name, BasicTensor<T> t) { tensors_[name] = std::move(t); }

  bool contains(const std::string& name) const { return tensors_.contains(name); }
  BasicTensor<T>& at(const std::string& name) {
    auto it = tensors_.find(name);
    check(it != tensors_.end(), ErrorCode::kInvalidArgument, "unknown parameter: " + name);
    return it->second;
  }
  const BasicTensor<T>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    check(it != tensors_.end(), ErrorCode::kInvalidArgument, "unknown parameter: " + name);
    return it->second;
  }

  const std::map<std::string, BasicTensor<T>>& tensors() const { return tensors_; }
  std::map<std::string, BasicTensor<T>>& tensors() { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  void freeze(const std::string& name) { frozen_.insert(name); }
  void unfreeze(const std::string& name) { frozen_.erase(name); }
  void unfreeze_all() { frozen_.clear(); }
  // Freezes every parameter whose name starts with `prefix`.
  void freeze_prefix(const std::string& prefix) {
    for (const auto& [name, _] : tensors_)
      if (name.rfind(prefix, 0) == 0) frozen_.insert(name);
  }
  bool is_frozen(const std::string& name) const { return frozen_.contains(name); }
  const std::set<std::string>& frozen() const { return frozen_; }

 private:
  std::map<std::string, BasicTensor<T>> tensors_;
  std::set<std::string> frozen_;
};

using ParamStore = BasicParamStore<float>;
using ParamStore64 = BasicParamStore<double>;

template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

// FNV-1a over the raw bytes of every tensor whose name starts with `prefix`
// (names included). Used to assert bit-exact freezing.
std::uint64_t checksum(const ParamStore& params, const std::string& prefix = "");

}  // namespace levo

#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "contifuse/common.hpp"

namespace contifuse {

/// Dense row-major tensor with value semantics.  The last dimension is
/// contiguous; copies are deep.  Indexing overloads cover ranks 1..4, which is
/// all this codebase uses (vectors, matrices, CHW maps, stacked SCHW states).
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Dim> dims) : dims_(std::move(dims)) {
    data_.assign(static_cast<std::size_t>(count(dims_)), T(0));
  }

  Tensor(std::initializer_list<Dim> dims) : Tensor(std::vector<Dim>(dims)) {}

  static Tensor full(std::vector<Dim> dims, T value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<Dim>& dims() const { return dims_; }
  Dim dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const { return dims_.size(); }
  Dim numel() const { return static_cast<Dim>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](Dim i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Dim i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(Dim i) { return data_[std::size_t(i)]; }
  const T& operator()(Dim i) const { return data_[std::size_t(i)]; }

  T& operator()(Dim i, Dim j) { return data_[std::size_t(i * dims_[1] + j)]; }
  const T& operator()(Dim i, Dim j) const {
    return data_[std::size_t(i * dims_[1] + j)];
  }

  T& operator()(Dim i, Dim j, Dim k) {
    return data_[std::size_t((i * dims_[1] + j) * dims_[2] + k)];
  }
  const T& operator()(Dim i, Dim j, Dim k) const {
    return data_[std::size_t((i * dims_[1] + j) * dims_[2] + k)];
  }

  T& operator()(Dim i, Dim j, Dim k, Dim l) {
    return data_[std::size_t(((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l)];
  }
  const T& operator()(Dim i, Dim j, Dim k, Dim l) const {
    return data_[std::size_t(((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void zero() { fill(T(0)); }

  /// Reinterprets the same elements under new dimensions.  Element count must
  /// be preserved; storage is untouched.
  void reshape(std::vector<Dim> dims) {
    require(count(dims) == numel(), "reshape: element count mismatch");
    dims_ = std::move(dims);
  }

  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(dims_);
    for (Dim i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[std::size_t(i)]);
    return out;
  }

 private:
  static Dim count(const std::vector<Dim>& dims) {
    Dim n = 1;
    for (Dim d : dims) {
      require(d >= 0, "tensor dimensions must be non-negative");
      n *= d;
    }
    return n;
  }

  std::vector<Dim> dims_;
  std::vector<T> data_;
};

}  // namespace contifuse

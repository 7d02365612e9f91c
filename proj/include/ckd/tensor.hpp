#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ckd {

// Dense row-major tensor over float or double. Rank 1 and 2 cover everything
// the engine needs. Entries must stay finite; the graph re-checks after every
// op so NaN/Inf surfaces with the op name instead of propagating.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    std::size_t n = 1;
    for (std::size_t d : dims_) {
      if (d == 0) throw std::runtime_error("tensor: zero dimension");
      n *= d;
    }
    if (dims_.empty() || n != data_.size()) {
      throw std::runtime_error("tensor: dims/data size mismatch (" +
                               shape_string() + " vs " +
                               std::to_string(data_.size()) + " values)");
    }
    check_finite("tensor");
  }

  static Tensor zeros(std::vector<std::size_t> dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return Tensor(std::move(dims), std::vector<T>(n, T(0)));
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<T> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<T> v) {
    return Tensor({r, c}, std::move(v));
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t numel() const { return data_.size(); }

  // Matrix view: rank-1 tensors count as a single row.
  std::size_t rows() const { return dims_.size() == 1 ? 1 : dims_[0]; }
  std::size_t cols() const {
    return dims_.size() == 1 ? dims_[0] : dims_[dims_.size() - 1];
  }

  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  bool is_scalar() const { return data_.size() == 1; }

  std::string shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims_.size(); ++i)
      os << (i ? "x" : "") << dims_[i];
    os << "]";
    return os.str();
  }

  void check_finite(const std::string& context) const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::runtime_error(context + ": non-finite value");
      }
    }
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(dims_, std::move(out));
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

}  // namespace ckd

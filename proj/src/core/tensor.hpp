#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace rankseg {

// Dense row-major tensor of doubles, rank <= 4. The whole pipeline runs in
// double precision; desk-scale sizes keep memory trivial and the gradient
// checks honest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0)
      : dims_(std::move(dims)), data_(numel_of(dims_), fill) {}

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.dims_); }

  static std::size_t numel_of(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return dims.empty() ? 0 : n;
  }

  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Index helpers for the common layouts.
  double& at3(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
  }
  double at3(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
  }
  double& at2(int r, int c) {
    return data_[static_cast<std::size_t>(r) * dims_[1] + c];
  }
  double at2(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * dims_[1] + c];
  }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const;
  double max_abs() const;

  std::string dims_str() const;

 private:
  std::vector<int> dims_;
  std::vector<double> data_;
};

}  // namespace rankseg

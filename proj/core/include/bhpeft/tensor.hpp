#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bhpeft {

/// Dense row-major array of 64-bit reals. Immutable by convention once built
/// (operations return fresh tensors), which makes sharing across threads safe.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor filled(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Extent of dimension i.
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  /// Row/column counts; requires rank 2.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Rank-2 element access.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Exact elementwise equality (shape and every bit pattern via value compare;
/// NaN never appears in valid tensors).
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Plain (non-recorded) kernels shared by the tape and by evaluation code.
// matmul accumulates along k in increasing order; this ordering is part of
// the reproducibility contract.
Tensor tmatmul(const Tensor& a, const Tensor& b);
Tensor tmatmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor tmatmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor ttranspose(const Tensor& a);
Tensor tadd(const Tensor& a, const Tensor& b);
Tensor tsub(const Tensor& a, const Tensor& b);
Tensor tmul(const Tensor& a, const Tensor& b);
Tensor tscale(const Tensor& a, double c);

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace bhpeft

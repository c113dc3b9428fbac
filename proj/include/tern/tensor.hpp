#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tern {

// Numeric mode for model math: f64 for gradient checks and determinism tests,
// f32 for training. In f32 mode every op result is rounded through float, so
// stored values always carry 32-bit precision.
enum class Precision { f64, f32 };

inline double quantized(double x, Precision p) {
  return p == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

// Dense row-major tensor. No views, no broadcasting beyond what the ops in
// autodiff.hpp implement explicitly.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> shape_in, std::vector<double> data_in);

  static Tensor zeros(std::vector<int> shape_in);
  static Tensor full(std::vector<int> shape_in, double v);
  static Tensor row(std::vector<double> v);  // shape {1, n}
  static Tensor matrix(int r, int c, std::vector<double> v);
  static Tensor scalar(double v);  // shape {1, 1}

  long long numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Rank-2 accessors.
  int rows() const;
  int cols() const;
  double& at(int r, int c);
  double at(int r, int c) const;

  bool all_finite() const;
};

void quantize(Tensor& t, Precision p);

// Throws NumericError naming `what` if any element is non-finite.
void ensure_finite(const Tensor& t, const std::string& what);

// Softmax along `axis`, computed with max-subtraction. Every slice along the
// axis sums to 1. Invalid axis -> ArgumentError.
Tensor softmax(const Tensor& x, int axis);

// Layer normalization over the last axis: (x - mean) / sqrt(var + eps), then
// scaled by gain and shifted by bias (both of last-axis size; population
// variance). Shape mismatch -> ArgumentError.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

}  // namespace tern

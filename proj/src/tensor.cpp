#include "tern/tensor.hpp"

#include <cmath>
#include <numeric>

#include "tern/error.hpp"

namespace tern {

namespace {

long long shape_numel(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ArgumentError("tensor shape dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
  if (shape_numel(shape) != static_cast<long long>(data.size())) {
    throw ArgumentError("tensor data size does not match shape");
  }
}

Tensor Tensor::zeros(std::vector<int> shape_in) {
  const long long n = shape_numel(shape_in);
  return Tensor(std::move(shape_in), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape_in, double v) {
  const long long n = shape_numel(shape_in);
  return Tensor(std::move(shape_in), std::vector<double>(static_cast<size_t>(n), v));
}

Tensor Tensor::row(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::matrix(int r, int c, std::vector<double> v) {
  return Tensor({r, c}, std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

long long Tensor::numel() const { return static_cast<long long>(data.size()); }

int Tensor::rows() const {
  if (rank() != 2) throw ArgumentError("rows(): tensor is not rank 2");
  return shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ArgumentError("cols(): tensor is not rank 2");
  return shape[1];
}

double& Tensor::at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }

double Tensor::at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void quantize(Tensor& t, Precision p) {
  if (p != Precision::f32) return;
  for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

void ensure_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ArgumentError("softmax: axis " + std::to_string(axis) + " invalid for rank " +
                        std::to_string(x.rank()));
  }
  const int n = x.shape[axis];
  long long inner = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
  long long outer = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape[i];

  Tensor out = x;
  for (long long o = 0; o < outer; ++o) {
    for (long long in = 0; in < inner; ++in) {
      const long long base = o * n * inner + in;
      double mx = x.data[base];
      for (int k = 1; k < n; ++k) mx = std::max(mx, x.data[base + k * inner]);
      double sum = 0.0;
      for (int k = 0; k < n; ++k) {
        const double e = std::exp(x.data[base + k * inner] - mx);
        out.data[base + k * inner] = e;
        sum += e;
      }
      for (int k = 0; k < n; ++k) out.data[base + k * inner] /= sum;
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int d = x.shape.back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ArgumentError("layer_norm: gain/bias size must match last-axis size " +
                        std::to_string(d));
  }
  Tensor out = x;
  const long long rows = x.numel() / d;
  for (long long r = 0; r < rows; ++r) {
    const double* xp = x.data.data() + r * d;
    double* op = out.data.data() + r * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xp[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i) {
      op[i] = gain.data[i] * (xp[i] - mean) * inv + bias.data[i];
    }
  }
  return out;
}

}  // namespace tern

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace modeplan {

// Dense row-major float64 tensor. The autodiff graph works on flat 2-D views;
// higher-rank shapes ([K, A, H, 4], ...) are bookkeeping for I/O and callers.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (int64_t(data.size()) != numel_of(shape))
      throw std::runtime_error("tensor data does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const {
    int64_t n = numel();
    return shape.empty() || shape[0] == 0 ? 0 : int(n / shape[0]);
  }

  double& at(int r, int c) { return data[size_t(r) * cols() + c]; }
  double at(int r, int c) const { return data[size_t(r) * cols() + c]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline void softmax_inplace(double* x, int n) {
  double m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - m);
    z += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= z;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p = logits;
  if (!p.empty()) softmax_inplace(p.data(), int(p.size()));
  return p;
}

inline int argmax(const double* x, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

}  // namespace modeplan

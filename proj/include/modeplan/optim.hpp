#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/tensor.hpp"

namespace modeplan {

// Named parameter block with matching gradient storage. `no_decay` exempts
// biases, layernorm affines and embeddings from weight decay.
struct ParamBlock {
  std::string name;
  Tensor value;
  Tensor grad;
  bool no_decay = false;
};

class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols, bool no_decay = false) {
    ParamBlock b;
    b.name = name;
    b.value = Tensor({rows, cols});
    b.grad = Tensor({rows, cols});
    b.no_decay = no_decay;
    blocks_.push_back(std::move(b));
    return int(blocks_.size()) - 1;
  }

  ParamBlock& operator[](int i) { return blocks_[size_t(i)]; }
  const ParamBlock& operator[](int i) const { return blocks_[size_t(i)]; }
  int size() const { return int(blocks_.size()); }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (blocks_[size_t(i)].name == name) return i;
    return -1;
  }

  void zero_grads() {
    for (auto& b : blocks_) b.grad.fill(0.0);
  }

  void scale_grads(double s) {
    for (auto& b : blocks_)
      for (double& g : b.grad.data) g *= s;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& b : blocks_) n += b.value.numel();
    return n;
  }

  double grad_norm() const {
    double acc = 0.0;
    for (const auto& b : blocks_)
      for (double g : b.grad.data) acc += g * g;
    return std::sqrt(acc);
  }

  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

 private:
  std::vector<ParamBlock> blocks_;
};

// AdamW state: moment buffers (lazily sized to the store) plus the
// optimizer constants.
struct OptimState {
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  double lr_base = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adamw_step(ParamStore& params, OptimState& state, double lr_now) {
  if (state.m.empty()) {
    for (int i = 0; i < params.size(); ++i) {
      state.m.emplace_back(params[i].value.shape);
      state.v.emplace_back(params[i].value.shape);
    }
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (int i = 0; i < params.size(); ++i) {
    ParamBlock& b = params[i];
    double wd = b.no_decay ? 0.0 : state.weight_decay;
    Tensor& m = state.m[size_t(i)];
    Tensor& v = state.v[size_t(i)];
    for (size_t j = 0; j < b.value.data.size(); ++j) {
      double g = b.grad.data[j];
      if (!std::isfinite(g))
        throw std::runtime_error("adamw_step: non-finite gradient in block " +
                                 b.name);
      m.data[j] = state.beta1 * m.data[j] + (1.0 - state.beta1) * g;
      v.data[j] = state.beta2 * v.data[j] + (1.0 - state.beta2) * g * g;
      double mhat = m.data[j] / bc1;
      double vhat = v.data[j] / bc2;
      b.value.data[j] -=
          lr_now * (mhat / (std::sqrt(vhat) + state.eps) + wd * b.value.data[j]);
    }
  }
}

// Cosine decay from base_lr at epoch 0 to exactly 0 at epoch == total_epochs.
inline double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs <= 0) throw std::runtime_error("cosine_lr: total_epochs = 0");
  if (epoch >= total_epochs) return 0.0;
  if (epoch <= 0) return base_lr;
  return base_lr * 0.5 *
         (1.0 + std::cos(M_PI * double(epoch) / double(total_epochs)));
}

}  // namespace modeplan

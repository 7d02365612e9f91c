#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

#include "ckd/graph.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

// Adam with decoupled-from-nothing, classic L2: the penalty is added to the
// raw gradient before the moment updates. One moment pair per parameter.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::shared_ptr<ParameterStore<T>> params, T lr, T l2,
                T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), l2_(l2), beta1_(beta1),
        beta2_(beta2), eps_(eps) {
    if (!params_) throw std::runtime_error("adam: no parameter store");
    for (const auto& [name, value] : *params_) {
      m_.emplace(name, Tensor<T>::zeros(value.dims()));
      v_.emplace(name, Tensor<T>::zeros(value.dims()));
    }
  }

  // Applies one update from a full gradient map (one entry per parameter,
  // as produced by ValueGraph::gradients).
  void step(const std::map<std::string, Tensor<T>>& grads) {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (auto& [name, theta] : *params_) {
      auto git = grads.find(name);
      if (git == grads.end())
        throw std::runtime_error("adam: missing gradient for '" + name + "'");
      const Tensor<T>& g = git->second;
      Tensor<T>& m = m_.at(name);
      Tensor<T>& v = v_.at(name);
      for (std::size_t i = 0; i < theta.numel(); ++i) {
        const T gi = g[i] + l2_ * theta[i];
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * gi;
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * gi * gi;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        theta[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::shared_ptr<ParameterStore<T>> params_;
  T lr_, l2_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace ckd

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mapfuse/common.hpp"
#include "mapfuse/tensor.hpp"

namespace mapfuse::nn {

template <typename Scalar>
struct ParamTensor {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // same shape as value; backward accumulates into it

  ParamTensor() = default;
  ParamTensor(std::string n, Tensor<Scalar> v)
      : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<Scalar>::zeros_like(value);
  }
};

// Ordered, name-addressable parameter collection. Iteration order is the
// insertion order and is part of the checkpoint contract.
template <typename Scalar>
class NetworkParams {
 public:
  ParamTensor<Scalar>& add(std::string name, Tensor<Scalar> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), std::move(value));
    return items_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  ParamTensor<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter: " + name);
    return items_[it->second];
  }
  const ParamTensor<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter: " + name);
    return items_[it->second];
  }

  std::size_t size() const { return items_.size(); }
  ParamTensor<Scalar>& operator[](std::size_t i) { return items_[i]; }
  const ParamTensor<Scalar>& operator[](std::size_t i) const { return items_[i]; }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grads() {
    for (auto& p : items_) p.grad.data.setZero();
  }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

  template <typename T>
  NetworkParams<T> cast() const {
    NetworkParams<T> out;
    for (const auto& p : items_) out.add(p.name, p.value.template cast<T>());
    return out;
  }

 private:
  std::vector<ParamTensor<Scalar>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Kaiming fan-in initialization for a leaky-ReLU network.
template <typename Scalar>
void init_conv_weight(Tensor<Scalar>& w, std::mt19937_64& rng, double slope) {
  const double fan_in =
      static_cast<double>(w.dim[1] * w.dim[2] * w.dim[3]);
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w.data[i] = static_cast<Scalar>(dist(rng));
}

}  // namespace mapfuse::nn

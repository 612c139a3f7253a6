#pragma once

#include <string>
#include <vector>

#include "rap/ops.hpp"
#include "rap/rng.hpp"
#include "rap/tensor.hpp"

namespace rap {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using NamedTensors = std::vector<NamedTensor<T>>;

// Uniform(-bound, bound) leaf requiring grad.
template <typename T>
Tensor<T> uniform_parameter(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

// conv3x3 (no bias) -> batch norm -> ReLU -> 2x2 max pool.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(std::string name, int in_channels, int out_channels, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, BnMode mode);

  void collect(NamedTensors<T>& params, NamedTensors<T>& buffers);
  std::size_t parameter_count() const { return weight_.numel() + gamma_.numel() + beta_.numel(); }
  int out_channels() const { return static_cast<int>(gamma_.numel()); }

 private:
  std::string name_;
  Tensor<T> weight_;
  Tensor<T> gamma_;
  Tensor<T> beta_;
  BatchNormStats<T> stats_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  void collect(NamedTensors<T>& params);
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::string name_;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

// Copies values by name from `src` into `dst`; every name in `dst` must exist
// in `src` with the same element count.
template <typename D, typename S>
void assign_by_name(NamedTensors<D>& dst, const NamedTensors<S>& src) {
  for (auto& d : dst) {
    const NamedTensor<S>* match = nullptr;
    for (const auto& s : src) {
      if (s.name == d.name) {
        match = &s;
        break;
      }
    }
    if (!match) throw ShapeError("assign_by_name: no tensor named '" + d.name + "'");
    if (match->tensor.shape() != d.tensor.shape()) {
      throw ShapeError("assign_by_name: '" + d.name + "' has shape " + shape_str(match->tensor.shape()) +
                       ", expected " + shape_str(d.tensor.shape()));
    }
    auto out = d.tensor.data();
    auto in = match->tensor.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<D>(in[i]);
  }
}

}  // namespace rap

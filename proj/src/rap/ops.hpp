#pragma once

// Differentiable tensor operations. Feature maps are NHWC, matrices are
// row-major [rows, cols]. Every op validates shapes and throws ShapeError
// naming itself and the offending shapes; there is no implicit broadcasting
// apart from mul_spatial.

#include <span>
#include <vector>

#include "rap/tensor.hpp"

namespace rap {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

// att [B,H,W] (or [B,H*W]) times x [B,H,W,C]; every channel sees the same map.
template <typename T> Tensor<T> mul_spatial(const Tensor<T>& att, const Tensor<T>& x);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

// 3x3, stride 1, zero "same" padding. x [B,H,W,Cin], w [3,3,Cin,Cout].
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w);

// a [M,K] x b [K,N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x [B,I] w [I,O] + bias [O]
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// 2x2 window, stride 2; odd trailing rows/columns are dropped.
template <typename T> Tensor<T> max_pool2x2(const Tensor<T>& x);
// [B,H,W,C] -> [B,C]
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

enum class BnMode {
  kTrain,          // batch statistics, running statistics updated
  kTrainNoUpdate,  // batch statistics, running statistics untouched
  kEval,           // running statistics
};

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

inline constexpr double kBnMomentum = 0.9;
inline constexpr double kBnEpsilon = 1e-5;

// Normalizes over every axis but the last (channels).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, BnMode mode);

// Concatenate two matrices [B,p] and [B,q] along columns.
template <typename T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);

// Mean cross-entropy of softmax(logits [B,N]) against integer labels.
template <typename T> Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// out[i,j] = ||a_i - b_j||^2 for a [M,D], b [N,D].
template <typename T> Tensor<T> sq_distance(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Sum over all entries of the N(mean, sigma^2) log-density at `sample`.
// The sample is a constant: gradient flows to `mean` only.
template <typename T>
Tensor<T> gaussian_log_prob(const Tensor<T>& mean, const Tensor<T>& sample, T sigma);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Rows [begin, begin+count) along the leading axis.
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::int64_t begin, std::int64_t count);

// Row-wise softmax of a [B,N] matrix, values only.
template <typename T> std::vector<T> softmax_rows(const Tensor<T>& logits);

}  // namespace rap

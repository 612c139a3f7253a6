#include "rap/metalearner.hpp"

#include <string>

namespace rap {
namespace {

template <typename V>
std::vector<int> argmax_impl(std::span<const V> values, std::size_t rows, std::size_t cols) {
  std::vector<int> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (values[r * cols + c] > values[r * cols + best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy_of(const std::vector<int>& predicted, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

std::vector<int> argmax_rows(std::span<const float> values, std::size_t rows, std::size_t cols) {
  return argmax_impl(values, rows, cols);
}
std::vector<int> argmax_rows(std::span<const double> values, std::size_t rows, std::size_t cols) {
  return argmax_impl(values, rows, cols);
}

template <typename T>
PrototypeSet<T> compute_prototypes(const Tensor<T>& support_embeddings, std::span<const int> support_labels, int N,
                                   int K) {
  if (support_embeddings.rank() != 2 || support_embeddings.dim(0) != static_cast<std::int64_t>(support_labels.size())) {
    throw ShapeError("compute_prototypes: " + std::to_string(support_labels.size()) + " labels for embeddings " +
                     shape_str(support_embeddings.shape()));
  }
  std::vector<int> counts(static_cast<std::size_t>(N), 0);
  for (int y : support_labels) {
    if (y < 0 || y >= N) throw DataError("compute_prototypes: label " + std::to_string(y) + " outside 0.." + std::to_string(N - 1));
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int n = 0; n < N; ++n) {
    if (counts[static_cast<std::size_t>(n)] != K) {
      throw DataError("compute_prototypes: class " + std::to_string(n) + " has " +
                      std::to_string(counts[static_cast<std::size_t>(n)]) + " support embeddings, expected " +
                      std::to_string(K));
    }
  }
  // prototypes = A * support with A[n, i] = 1/K for label(i) == n.
  const auto S = static_cast<std::int64_t>(support_labels.size());
  Tensor<T> avg(Shape{N, S});
  auto a = avg.data();
  for (std::int64_t i = 0; i < S; ++i) {
    a[static_cast<std::size_t>(support_labels[static_cast<std::size_t>(i)] * S + i)] = T(1) / static_cast<T>(K);
  }
  PrototypeSet<T> out;
  out.prototypes = matmul(avg, support_embeddings);
  out.class_ids.resize(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) out.class_ids[static_cast<std::size_t>(n)] = n;
  return out;
}

template <typename T>
EpisodePrediction<T> protonet_loss(const Tensor<T>& query_embeddings, std::span<const int> query_labels,
                                   const PrototypeSet<T>& protos) {
  EpisodePrediction<T> out;
  out.logits = scale(sq_distance(query_embeddings, protos.prototypes), T(-1));
  out.loss = softmax_cross_entropy(out.logits, query_labels);
  out.predicted = argmax_rows(std::span<const T>(out.logits.data()), static_cast<std::size_t>(out.logits.dim(0)),
                              static_cast<std::size_t>(out.logits.dim(1)));
  out.accuracy = accuracy_of(out.predicted, query_labels);
  return out;
}

template <typename T>
EpisodePrediction<T> protonet_episode(const Tensor<T>& embeddings, std::span<const int> support_labels,
                                      std::span<const int> query_labels, int N, int K) {
  const auto S = static_cast<std::int64_t>(support_labels.size());
  const auto Q = static_cast<std::int64_t>(query_labels.size());
  if (embeddings.rank() != 2 || embeddings.dim(0) != S + Q) {
    throw ShapeError("protonet_episode: embeddings " + shape_str(embeddings.shape()) + " for " +
                     std::to_string(S) + " support and " + std::to_string(Q) + " query rows");
  }
  auto protos = compute_prototypes(slice_rows(embeddings, 0, S), support_labels, N, K);
  return protonet_loss(slice_rows(embeddings, S, Q), query_labels, protos);
}

template <typename T>
HeadResult<T> LinearHead<T>::loss(const Tensor<T>& embeddings, std::span<const int> labels) {
  HeadResult<T> out;
  out.logits = fc_.forward(embeddings);
  out.loss = softmax_cross_entropy(out.logits, labels);
  const auto pred = argmax_rows(std::span<const T>(out.logits.data()), static_cast<std::size_t>(out.logits.dim(0)),
                                static_cast<std::size_t>(out.logits.dim(1)));
  out.accuracy = accuracy_of(pred, labels);
  return out;
}

#define RAP_INSTANTIATE_META(T)                                                                                   \
  template PrototypeSet<T> compute_prototypes(const Tensor<T>&, std::span<const int>, int, int);                 \
  template EpisodePrediction<T> protonet_loss(const Tensor<T>&, std::span<const int>, const PrototypeSet<T>&);   \
  template EpisodePrediction<T> protonet_episode(const Tensor<T>&, std::span<const int>, std::span<const int>,    \
                                                 int, int);                                                      \
  template class LinearHead<T>;

RAP_INSTANTIATE_META(float)
RAP_INSTANTIATE_META(double)

}  // namespace rap

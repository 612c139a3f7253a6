#pragma once

#include <span>
#include <vector>

#include "rap/nn.hpp"

namespace rap {

template <typename T>
struct PrototypeSet {
  Tensor<T> prototypes;  // [N, D]
  std::vector<int> class_ids;
};

template <typename T>
struct EpisodePrediction {
  Tensor<T> logits;  // [Q*N, N], negative squared distances
  std::vector<int> predicted;
  Tensor<T> loss;  // scalar mean cross-entropy
  double accuracy = 0.0;
};

// Support labels are episode-local class indices 0..N-1; each must occur
// exactly K times.
template <typename T>
PrototypeSet<T> compute_prototypes(const Tensor<T>& support_embeddings, std::span<const int> support_labels, int N,
                                   int K);

template <typename T>
EpisodePrediction<T> protonet_loss(const Tensor<T>& query_embeddings, std::span<const int> query_labels,
                                   const PrototypeSet<T>& protos);

// Embeddings stacked as [support (N*K rows); query (N*Q rows)].
template <typename T>
EpisodePrediction<T> protonet_episode(const Tensor<T>& embeddings, std::span<const int> support_labels,
                                      std::span<const int> query_labels, int N, int K);

std::vector<int> argmax_rows(std::span<const float> values, std::size_t rows, std::size_t cols);
std::vector<int> argmax_rows(std::span<const double> values, std::size_t rows, std::size_t cols);

template <typename T>
struct HeadResult {
  Tensor<T> logits;
  Tensor<T> loss;
  double accuracy = 0.0;
};

// Softmax classifier over a learned affine map of embeddings.
template <typename T>
class LinearHead {
 public:
  LinearHead(int embedding_dim, int num_classes, Rng& rng) : fc_("head.fc", embedding_dim, num_classes, rng) {}

  HeadResult<T> loss(const Tensor<T>& embeddings, std::span<const int> labels);
  Tensor<T> logits(const Tensor<T>& embeddings) const { return fc_.forward(embeddings); }
  void collect(NamedTensors<T>& params) { fc_.collect(params); }
  Linear<T>& fc() { return fc_; }

 private:
  Linear<T> fc_;
};

}  // namespace rap

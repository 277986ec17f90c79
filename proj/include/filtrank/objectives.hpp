#pragma once

#include <span>
#include <vector>

#include "filtrank/embedding.hpp"
#include "filtrank/graph.hpp"

namespace filtrank {

/// ||f||^2. Throws NonFiniteValue on NaN/Inf input.
double aesthetic_score(std::span<const float> f);

template <EmbeddingKind K>
double aesthetic_score(const Embedding<K>& f) {
  return aesthetic_score(std::span<const float>(f.values));
}

template <EmbeddingKind K>
struct PairLossInput {
  Embedding<K> positive;
  Embedding<K> negative;
};

struct PairLossGradient {
  double loss = 0.0;
  std::vector<double> d_positive;  // -2 f_p
  std::vector<double> d_negative;  // +2 f_n
};

/// -(||f_p||^2 - ||f_n||^2). Throws DimMismatch when sizes differ.
double paircomp_loss(std::span<const float> positive, std::span<const float> negative);
PairLossGradient paircomp_gradient(std::span<const float> positive, std::span<const float> negative);

template <EmbeddingKind K>
double paircomp_loss(const PairLossInput<K>& in) {
  return paircomp_loss(in.positive.values, in.negative.values);
}

/// -log softmax(logits)[label]; label must be in [0, logits.size()).
double softmax_xent(std::span<const double> logits, int label);
std::vector<double> softmax_xent_gradient(std::span<const double> logits, int label);

struct MultiTaskInput {
  PairLossInput<EmbeddingKind::Fused> pair;
  std::vector<double> logits;  // kNumCategories scores for the reference image
  int label = 0;
};

/// paircomp_loss(pair) + lambda * softmax_xent(logits, label).
double multitask_loss(const MultiTaskInput& in, double lambda = 1.0);

// Graph builders used by the trainer.

/// Batch PairComp loss: -mean(sign * (||f_left||^2 - ||f_right||^2)), with
/// sign[i] = +1 when the left image of pair i is preferred and -1 otherwise.
template <typename T>
ad::NodeId append_paircomp_loss(ad::Graph<T>& g, ad::NodeId f_left, ad::NodeId f_right, ad::NodeId sign);

/// pair_loss + lambda * softmax_xent(logits, labels)
template <typename T>
ad::NodeId append_multitask_loss(ad::Graph<T>& g, ad::NodeId pair_loss, ad::NodeId logits, ad::NodeId labels,
                                 double lambda);

}  // namespace filtrank

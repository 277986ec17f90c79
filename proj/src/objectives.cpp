#include "filtrank/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "filtrank/error.hpp"

namespace filtrank {

double aesthetic_score(std::span<const float> f) {
  double acc = 0.0;
  for (float v : f) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "embedding contains NaN/Inf");
    acc += static_cast<double>(v) * v;
  }
  return acc;
}

namespace {

void check_pair(std::span<const float> p, std::span<const float> n) {
  if (p.size() != n.size()) {
    throw Error(ErrorCode::DimMismatch, std::to_string(p.size()) + " vs " + std::to_string(n.size()));
  }
}

}  // namespace

double paircomp_loss(std::span<const float> positive, std::span<const float> negative) {
  check_pair(positive, negative);
  return -(aesthetic_score(positive) - aesthetic_score(negative));
}

PairLossGradient paircomp_gradient(std::span<const float> positive, std::span<const float> negative) {
  PairLossGradient g;
  g.loss = paircomp_loss(positive, negative);
  g.d_positive.resize(positive.size());
  g.d_negative.resize(negative.size());
  for (std::size_t i = 0; i < positive.size(); ++i) {
    g.d_positive[i] = -2.0 * positive[i];
    g.d_negative[i] = 2.0 * negative[i];
  }
  return g;
}

double softmax_xent(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return std::log(sum) + mx - logits[static_cast<std::size_t>(label)];
}

std::vector<double> softmax_xent_gradient(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  std::vector<double> g(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    g[k] = std::exp(logits[k] - mx) / sum - (static_cast<int>(k) == label ? 1.0 : 0.0);
  }
  return g;
}

double multitask_loss(const MultiTaskInput& in, double lambda) {
  if (in.label < 0 || in.label >= kNumCategories) {
    throw Error(ErrorCode::LabelOutOfRange, "category " + std::to_string(in.label));
  }
  return paircomp_loss(in.pair) + lambda * softmax_xent(in.logits, in.label);
}

template <typename T>
ad::NodeId append_paircomp_loss(ad::Graph<T>& g, ad::NodeId f_left, ad::NodeId f_right, ad::NodeId sign) {
  const auto d = g.mul(g.sub(g.sq_norm(f_left), g.sq_norm(f_right)), sign);
  return g.scale(g.mean(d), -1.0);
}

template <typename T>
ad::NodeId append_multitask_loss(ad::Graph<T>& g, ad::NodeId pair_loss, ad::NodeId logits, ad::NodeId labels,
                                 double lambda) {
  return g.add(pair_loss, g.scale(g.softmax_xent(logits, labels), lambda));
}

template ad::NodeId append_paircomp_loss<float>(ad::Graph<float>&, ad::NodeId, ad::NodeId, ad::NodeId);
template ad::NodeId append_paircomp_loss<double>(ad::Graph<double>&, ad::NodeId, ad::NodeId, ad::NodeId);
template ad::NodeId append_multitask_loss<float>(ad::Graph<float>&, ad::NodeId, ad::NodeId, ad::NodeId, double);
template ad::NodeId append_multitask_loss<double>(ad::Graph<double>&, ad::NodeId, ad::NodeId, ad::NodeId, double);

}  // namespace filtrank

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "filtrank/rng.hpp"
#include "filtrank/tensor.hpp"

namespace filtrank::ad {

using NodeId = int;

enum class OpKind {
  Input,
  Parameter,
  Conv2d,
  MaxPool,
  Relu,
  FullyConnected,
  SoftmaxXent,
  SqNorm,
  Sub,
  Add,
  Mul,
  Concat,
  Spp,
  Lrn,
  Mean,
  Scale,
};

std::string_view to_string(OpKind kind);

struct ConvAttrs {
  int stride = 1;
  int pad = 0;
};

/// Max pooling with Caffe's ceil-mode output size; windows are clipped at
/// the border.
struct PoolAttrs {
  int window = 3;
  int stride = 2;
};

/// Cross-channel local response normalization.
struct LrnAttrs {
  int size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;
};

/// Named tensors with gradient slots. Graph parameter nodes read values
/// straight from here, so every graph built over one store shares weights.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };

  void add(std::string name, Tensor<T> value);
  bool contains(std::string_view name) const { return find(name).has_value(); }
  std::optional<std::size_t> find(std::string_view name) const;

  Tensor<T>& value(std::string_view name);
  const Tensor<T>& value(std::string_view name) const;
  Tensor<T>& grad(std::string_view name);
  const Tensor<T>& grad(std::string_view name) const;

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
    }
    return true;
  }

 private:
  Entry& at(std::string_view name);
  const Entry& at(std::string_view name) const;

  std::vector<Entry> entries_;
};

template <typename T>
using TensorMap = std::map<std::string, Tensor<T>, std::less<>>;

/// Static-topology computation graph with per-call shapes.
///
/// Nodes are appended in topological order by the builder methods. forward()
/// re-evaluates every node from the supplied inputs; backward() propagates
/// from a scalar loss and overwrites the gradient slots of every parameter in
/// the store. A node consumed by several others receives the contributions
/// summed in forward consumer order, which makes the result independent of
/// how the backward sweep interleaves the consumers.
template <typename T>
class Graph {
 public:
  explicit Graph(ParameterStore<T>* params = nullptr) : params_(params) {}

  NodeId input(std::string name);
  /// Returns the existing node when the parameter is already in the graph.
  NodeId parameter(const std::string& name);

  NodeId conv2d(NodeId x, NodeId weight, NodeId bias, ConvAttrs attrs);
  NodeId maxpool(NodeId x, PoolAttrs attrs);
  NodeId relu(NodeId x);
  NodeId lrn(NodeId x, LrnAttrs attrs);
  NodeId fully_connected(NodeId x, NodeId weight, NodeId bias);
  /// Mean cross-entropy of softmax(logits[N,K]) against integer labels[N].
  NodeId softmax_xent(NodeId logits, NodeId labels);
  /// Rank-1 input: total sum of squares, shape [1]. Otherwise per-row over
  /// the leading dimension, shape [N].
  NodeId sq_norm(NodeId x);
  NodeId sub(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// Feature-axis concatenation of [N, ...] tensors into [N, A + B].
  NodeId concat(NodeId a, NodeId b);
  /// Spatial pyramid max pooling with l x l bins for l = 1..levels.
  NodeId spp(NodeId x, int levels);
  NodeId mean(NodeId x);
  NodeId scale(NodeId x, double factor);

  void forward(const TensorMap<T>& inputs);
  void backward(NodeId loss);

  const Tensor<T>& value(NodeId id) const;
  const Tensor<T>& grad(NodeId id) const;
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }
  ParameterStore<T>* parameters() const noexcept { return params_; }

  /// Record which side of every non-differentiable point (relu sign, pool
  /// argmax) forward() lands on; exposed as a hash for gradient checking.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  std::uint64_t kink_signature() const noexcept { return kink_hash_; }

 private:
  struct Node {
    OpKind kind = OpKind::Input;
    std::vector<NodeId> inputs;
    std::string name;  // input / parameter name
    ConvAttrs conv;
    PoolAttrs pool;
    LrnAttrs lrn;
    int levels = 0;
    double factor = 1.0;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::uint32_t> argmax;  // maxpool / spp routing
    Tensor<T> aux;                      // lrn scale, softmax probabilities
    std::vector<NodeId> consumers;
    std::vector<Tensor<T>> slots;  // per-consumer gradient buffers
  };

  static Node make_node(OpKind kind, std::vector<NodeId> inputs) {
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    return n;
  }
  NodeId push(Node node);
  Tensor<T>& val(NodeId id);
  Tensor<T>& grad_target(NodeId input, NodeId consumer);
  void eval(NodeId id);
  void adjoint(NodeId id);
  void mix_kink(std::uint64_t v);

  ParameterStore<T>* params_;
  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> param_nodes_;
  bool track_kinks_ = false;
  std::uint64_t kink_hash_ = 0;
  std::vector<T> scratch_;
  std::vector<T> scratch2_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose stencil crossed a kink
};

/// Central finite-difference check of parameter gradients.
///
/// Samples `samples` coordinates uniformly over all parameters and compares
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|). Coordinates whose
/// +-h stencil changes the kink signature are skipped and re-drawn.
GradCheckResult grad_check(Graph<double>& graph, NodeId loss, const TensorMap<double>& inputs,
                           double step, std::size_t samples, Rng& rng);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace filtrank::ad

#include "filtrank/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace filtrank::ad {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool: return "maxpool";
    case OpKind::Relu: return "relu";
    case OpKind::FullyConnected: return "fully_connected";
    case OpKind::SoftmaxXent: return "softmax_xent";
    case OpKind::SqNorm: return "sq_norm";
    case OpKind::Sub: return "sub";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Concat: return "concat";
    case OpKind::Spp: return "spp";
    case OpKind::Lrn: return "lrn";
    case OpKind::Mean: return "mean";
    case OpKind::Scale: return "scale";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ParameterStore

template <typename T>
void ParameterStore<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate parameter " + name);
  Tensor<T> grad(value.shape());
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
}

template <typename T>
std::optional<std::size_t> ParameterStore<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
typename ParameterStore<T>::Entry& ParameterStore<T>::at(std::string_view name) {
  const auto i = find(name);
  if (!i) throw Error(ErrorCode::ShapeMismatch, "no parameter " + std::string(name));
  return entries_[*i];
}

template <typename T>
const typename ParameterStore<T>::Entry& ParameterStore<T>::at(std::string_view name) const {
  const auto i = find(name);
  if (!i) throw Error(ErrorCode::ShapeMismatch, "no parameter " + std::string(name));
  return entries_[*i];
}

template <typename T>
Tensor<T>& ParameterStore<T>::value(std::string_view name) { return at(name).value; }
template <typename T>
const Tensor<T>& ParameterStore<T>::value(std::string_view name) const { return at(name).value; }
template <typename T>
Tensor<T>& ParameterStore<T>::grad(std::string_view name) { return at(name).grad; }
template <typename T>
const Tensor<T>& ParameterStore<T>::grad(std::string_view name) const { return at(name).grad; }

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) {
    e.grad.resize(e.value.shape());
    e.grad.fill(T{0});
  }
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(OpKind kind, const std::string& msg) {
  throw Error(ErrorCode::ShapeMismatch, std::string(to_string(kind)) + ": " + msg);
}

int pool_extent(int in, int window, int stride) {
  int out = static_cast<int>(std::ceil(static_cast<double>(in - window) / stride)) + 1;
  if (out > 0 && (out - 1) * stride >= in) --out;
  return out;
}

}  // namespace

template <typename T>
NodeId Graph<T>::push(Node node) {
  const auto id = static_cast<NodeId>(nodes_.size());
  for (NodeId in : node.inputs) {
    if (in < 0 || in >= id) throw Error(ErrorCode::ShapeMismatch, "graph input out of order");
    auto& cons = nodes_[in].consumers;
    if (std::find(cons.begin(), cons.end(), id) == cons.end()) cons.push_back(id);
  }
  nodes_.push_back(std::move(node));
  return id;
}

template <typename T>
NodeId Graph<T>::input(std::string name) {
  Node n = make_node(OpKind::Input, {});
  n.name = std::move(name);
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::parameter(const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
  if (!params_ || !params_->contains(name)) {
    throw Error(ErrorCode::ShapeMismatch, "unknown parameter " + name);
  }
  Node n = make_node(OpKind::Parameter, {});
  n.name = name;
  const NodeId id = push(std::move(n));
  param_nodes_.emplace(name, id);
  return id;
}

template <typename T>
NodeId Graph<T>::conv2d(NodeId x, NodeId weight, NodeId bias, ConvAttrs attrs) {
  Node n = make_node(OpKind::Conv2d, {x, weight, bias});
  n.conv = attrs;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::maxpool(NodeId x, PoolAttrs attrs) {
  Node n = make_node(OpKind::MaxPool, {x});
  n.pool = attrs;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::relu(NodeId x) { return push(make_node(OpKind::Relu, {x})); }

template <typename T>
NodeId Graph<T>::lrn(NodeId x, LrnAttrs attrs) {
  Node n = make_node(OpKind::Lrn, {x});
  n.lrn = attrs;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::fully_connected(NodeId x, NodeId weight, NodeId bias) {
  return push(make_node(OpKind::FullyConnected, {x, weight, bias}));
}

template <typename T>
NodeId Graph<T>::softmax_xent(NodeId logits, NodeId labels) {
  return push(make_node(OpKind::SoftmaxXent, {logits, labels}));
}

template <typename T>
NodeId Graph<T>::sq_norm(NodeId x) { return push(make_node(OpKind::SqNorm, {x})); }
template <typename T>
NodeId Graph<T>::sub(NodeId a, NodeId b) { return push(make_node(OpKind::Sub, {a, b})); }
template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) { return push(make_node(OpKind::Add, {a, b})); }
template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) { return push(make_node(OpKind::Mul, {a, b})); }
template <typename T>
NodeId Graph<T>::concat(NodeId a, NodeId b) { return push(make_node(OpKind::Concat, {a, b})); }

template <typename T>
NodeId Graph<T>::spp(NodeId x, int levels) {
  if (levels < 1) throw Error(ErrorCode::ShapeMismatch, "spp levels must be >= 1");
  Node n = make_node(OpKind::Spp, {x});
  n.levels = levels;
  return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::mean(NodeId x) { return push(make_node(OpKind::Mean, {x})); }

template <typename T>
NodeId Graph<T>::scale(NodeId x, double factor) {
  Node n = make_node(OpKind::Scale, {x});
  n.factor = factor;
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Graph<T>::val(NodeId id) {
  Node& n = nodes_[id];
  if (n.kind == OpKind::Parameter) return params_->value(n.name);
  return n.value;
}

template <typename T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.kind == OpKind::Parameter) return params_->value(n.name);
  return n.value;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(NodeId id) const { return nodes_.at(id).grad; }

template <typename T>
void Graph<T>::mix_kink(std::uint64_t v) {
  kink_hash_ = (kink_hash_ ^ v) * 0x100000001B3ULL;
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
void Graph<T>::forward(const TensorMap<T>& inputs) {
  kink_hash_ = 0xCBF29CE484222325ULL;
  for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
    Node& n = nodes_[id];
    if (n.kind == OpKind::Input) {
      const auto it = inputs.find(n.name);
      if (it == inputs.end()) throw Error(ErrorCode::ShapeMismatch, "missing input '" + n.name + "'");
      n.value = it->second;
    } else if (n.kind != OpKind::Parameter) {
      eval(id);
    }
    for (T v : val(id).values()) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteValue,
                    std::string(to_string(n.kind)) + " node " + std::to_string(id) +
                        (n.name.empty() ? "" : " '" + n.name + "'"));
      }
    }
  }
}

template <typename T>
void Graph<T>::eval(NodeId id) {
  Node& n = nodes_[id];
  Tensor<T>& out = n.value;

  switch (n.kind) {
    case OpKind::Conv2d: {
      const Tensor<T>& x = val(n.inputs[0]);
      const Tensor<T>& w = val(n.inputs[1]);
      const Tensor<T>& b = val(n.inputs[2]);
      if (x.rank() != 4 || w.rank() != 4 || b.size() != w.dim(0) || w.dim(1) != x.dim(1)) {
        shape_error(n.kind, "x " + to_string(x.shape()) + " w " + to_string(w.shape()) + " b " +
                                to_string(b.shape()));
      }
      const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1));
      const int H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
      const int O = static_cast<int>(w.dim(0)), KH = static_cast<int>(w.dim(2)), KW = static_cast<int>(w.dim(3));
      const int s = n.conv.stride, p = n.conv.pad;
      if (H + 2 * p < KH || W + 2 * p < KW) {
        shape_error(n.kind, "kernel larger than padded input " + to_string(x.shape()));
      }
      const int HO = (H + 2 * p - KH) / s + 1, WO = (W + 2 * p - KW) / s + 1;
      const std::size_t cols = static_cast<std::size_t>(N) * HO * WO;
      const std::size_t rows = static_cast<std::size_t>(C) * KH * KW;

      scratch_.resize(rows * cols);
      T* col = scratch_.data();
      for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < KH; ++ky) {
          for (int kx = 0; kx < KW; ++kx) {
            T* dst = col + ((static_cast<std::size_t>(c) * KH + ky) * KW + kx) * cols;
            for (int b_ = 0; b_ < N; ++b_) {
              const T* src = x.data() + (static_cast<std::size_t>(b_) * C + c) * H * W;
              for (int oy = 0; oy < HO; ++oy) {
                const int iy = oy * s - p + ky;
                for (int ox = 0; ox < WO; ++ox) {
                  const int ix = ox * s - p + kx;
                  *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? src[iy * W + ix] : T{0};
                }
              }
            }
          }
        }
      }
      scratch2_.resize(static_cast<std::size_t>(O) * cols);
      MapMat<T> ytmp(scratch2_.data(), O, static_cast<Eigen::Index>(cols));
      ytmp.noalias() = CMapMat<T>(w.data(), O, static_cast<Eigen::Index>(rows)) *
                       CMapMat<T>(col, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));

      out.resize({static_cast<std::size_t>(N), static_cast<std::size_t>(O), static_cast<std::size_t>(HO),
                  static_cast<std::size_t>(WO)});
      const std::size_t plane = static_cast<std::size_t>(HO) * WO;
      for (int b_ = 0; b_ < N; ++b_) {
        for (int o = 0; o < O; ++o) {
          const T* src = scratch2_.data() + o * cols + b_ * plane;
          T* dst = out.data() + (static_cast<std::size_t>(b_) * O + o) * plane;
          const T bias = b[o];
          for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
        }
      }
      break;
    }

    case OpKind::MaxPool: {
      const Tensor<T>& x = val(n.inputs[0]);
      if (x.rank() != 4) shape_error(n.kind, "expects NCHW, got " + to_string(x.shape()));
      const int H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
      const int k = n.pool.window, s = n.pool.stride;
      const int HO = pool_extent(H, k, s), WO = pool_extent(W, k, s);
      if (HO < 1 || WO < 1) shape_error(n.kind, "input " + to_string(x.shape()) + " too small");
      const std::size_t planes = x.dim(0) * x.dim(1);
      out.resize({x.dim(0), x.dim(1), static_cast<std::size_t>(HO), static_cast<std::size_t>(WO)});
      n.argmax.resize(out.size());
      for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = x.data() + pl * H * W;
        for (int oy = 0; oy < HO; ++oy) {
          const int y0 = oy * s, y1 = std::min(y0 + k, H);
          for (int ox = 0; ox < WO; ++ox) {
            const int x0 = ox * s, x1 = std::min(x0 + k, W);
            int best = y0 * W + x0;
            for (int yy = y0; yy < y1; ++yy) {
              for (int xx = x0; xx < x1; ++xx) {
                if (src[yy * W + xx] > src[best]) best = yy * W + xx;
              }
            }
            const std::size_t o = (pl * HO + oy) * WO + ox;
            out[o] = src[best];
            n.argmax[o] = static_cast<std::uint32_t>(best);
            if (track_kinks_) mix_kink(static_cast<std::uint64_t>(best) + o * 131);
          }
        }
      }
      break;
    }

    case OpKind::Relu: {
      const Tensor<T>& x = val(n.inputs[0]);
      out.resize(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
      if (track_kinks_) {
        std::uint64_t word = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          word = (word << 1) | (x[i] > T{0} ? 1u : 0u);
          if ((i & 63) == 63) {
            mix_kink(word);
            word = 0;
          }
        }
        mix_kink(word);
      }
      break;
    }

    case OpKind::Lrn: {
      const Tensor<T>& x = val(n.inputs[0]);
      if (x.rank() != 4) shape_error(n.kind, "expects NCHW, got " + to_string(x.shape()));
      const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1));
      const std::size_t plane = x.dim(2) * x.dim(3);
      const int size = n.lrn.size, pre = (size - 1) / 2;
      const T a_over_n = static_cast<T>(n.lrn.alpha / size);
      out.resize(x.shape());
      n.aux.resize(x.shape());
      for (int b_ = 0; b_ < N; ++b_) {
        const T* xs = x.data() + static_cast<std::size_t>(b_) * C * plane;
        T* sc = n.aux.data() + static_cast<std::size_t>(b_) * C * plane;
        T* ys = out.data() + static_cast<std::size_t>(b_) * C * plane;
        for (int c = 0; c < C; ++c) {
          const int lo = std::max(0, c - pre), hi = std::min(C - 1, c + size - 1 - pre);
          for (std::size_t i = 0; i < plane; ++i) {
            T acc{0};
            for (int cc = lo; cc <= hi; ++cc) acc += xs[cc * plane + i] * xs[cc * plane + i];
            const T scale = static_cast<T>(n.lrn.k) + a_over_n * acc;
            sc[c * plane + i] = scale;
            ys[c * plane + i] = xs[c * plane + i] * std::pow(scale, static_cast<T>(-n.lrn.beta));
          }
        }
      }
      break;
    }

    case OpKind::FullyConnected: {
      const Tensor<T>& x = val(n.inputs[0]);
      const Tensor<T>& w = val(n.inputs[1]);
      const Tensor<T>& b = val(n.inputs[2]);
      if (x.rank() < 1 || w.rank() != 2) shape_error(n.kind, "bad ranks");
      const std::size_t N = x.dim(0), din = x.size() / std::max<std::size_t>(N, 1);
      if (w.dim(1) != din || b.size() != w.dim(0)) {
        shape_error(n.kind, "x " + to_string(x.shape()) + " w " + to_string(w.shape()) + " b " +
                                to_string(b.shape()));
      }
      const std::size_t dout = w.dim(0);
      out.resize({N, dout});
      MapMat<T> y(out.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(dout));
      y.noalias() = CMapMat<T>(x.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(din)) *
                    CMapMat<T>(w.data(), static_cast<Eigen::Index>(dout), static_cast<Eigen::Index>(din)).transpose();
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t c = 0; c < dout; ++c) out[r * dout + c] += b[c];
      }
      break;
    }

    case OpKind::SoftmaxXent: {
      const Tensor<T>& z = val(n.inputs[0]);
      const Tensor<T>& labels = val(n.inputs[1]);
      if (z.rank() != 2 || labels.size() != z.dim(0)) {
        shape_error(n.kind, "logits " + to_string(z.shape()) + " labels " + to_string(labels.shape()));
      }
      const std::size_t N = z.dim(0), K = z.dim(1);
      n.aux.resize(z.shape());
      double total = 0.0;
      for (std::size_t r = 0; r < N; ++r) {
        const T lab = labels[r];
        if (lab < T{0} || lab >= static_cast<T>(K) || std::floor(lab) != lab) {
          throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(static_cast<double>(lab)) +
                                                      " for " + std::to_string(K) + " classes");
        }
        const T* zr = z.data() + r * K;
        const T mx = *std::max_element(zr, zr + K);
        T sum{0};
        for (std::size_t k = 0; k < K; ++k) sum += std::exp(zr[k] - mx);
        for (std::size_t k = 0; k < K; ++k) n.aux[r * K + k] = std::exp(zr[k] - mx) / sum;
        total += static_cast<double>(std::log(sum) + mx - zr[static_cast<std::size_t>(lab)]);
      }
      out.resize({1});
      out[0] = static_cast<T>(total / static_cast<double>(N));
      break;
    }

    case OpKind::SqNorm: {
      const Tensor<T>& x = val(n.inputs[0]);
      const std::size_t rows = x.rank() <= 1 ? 1 : x.dim(0);
      const std::size_t width = x.size() / std::max<std::size_t>(rows, 1);
      out.resize({rows});
      for (std::size_t r = 0; r < rows; ++r) {
        T acc{0};
        for (std::size_t i = 0; i < width; ++i) acc += x[r * width + i] * x[r * width + i];
        out[r] = acc;
      }
      break;
    }

    case OpKind::Sub:
    case OpKind::Add:
    case OpKind::Mul: {
      const Tensor<T>& a = val(n.inputs[0]);
      const Tensor<T>& b = val(n.inputs[1]);
      if (a.shape() != b.shape()) shape_error(n.kind, to_string(a.shape()) + " vs " + to_string(b.shape()));
      out.resize(a.shape());
      if (n.kind == OpKind::Sub) {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
      } else if (n.kind == OpKind::Add) {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
      } else {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      }
      break;
    }

    case OpKind::Concat: {
      const Tensor<T>& a = val(n.inputs[0]);
      const Tensor<T>& b = val(n.inputs[1]);
      if (a.rank() < 1 || b.rank() < 1 || a.dim(0) != b.dim(0)) {
        shape_error(n.kind, to_string(a.shape()) + " vs " + to_string(b.shape()));
      }
      const std::size_t N = a.dim(0), da = a.size() / N, db = b.size() / N;
      out.resize({N, da + db});
      for (std::size_t r = 0; r < N; ++r) {
        std::copy_n(a.data() + r * da, da, out.data() + r * (da + db));
        std::copy_n(b.data() + r * db, db, out.data() + r * (da + db) + da);
      }
      break;
    }

    case OpKind::Spp: {
      const Tensor<T>& x = val(n.inputs[0]);
      if (x.rank() != 4) shape_error(n.kind, "expects NCHW, got " + to_string(x.shape()));
      const std::size_t N = x.dim(0), C = x.dim(1);
      const int H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
      std::size_t bins = 0;
      for (int l = 1; l <= n.levels; ++l) bins += static_cast<std::size_t>(l) * l;
      out.resize({N, C * bins});
      n.argmax.resize(out.size());
      std::size_t o = 0;
      for (std::size_t b_ = 0; b_ < N; ++b_) {
        for (int l = 1; l <= n.levels; ++l) {
          for (std::size_t c = 0; c < C; ++c) {
            const T* src = x.data() + (b_ * C + c) * H * W;
            for (int by = 0; by < l; ++by) {
              const int y0 = by * H / l, y1 = ((by + 1) * H + l - 1) / l;
              for (int bx = 0; bx < l; ++bx) {
                const int x0 = bx * W / l, x1 = ((bx + 1) * W + l - 1) / l;
                int best = y0 * W + x0;
                for (int yy = y0; yy < y1; ++yy) {
                  for (int xx = x0; xx < x1; ++xx) {
                    if (src[yy * W + xx] > src[best]) best = yy * W + xx;
                  }
                }
                out[o] = src[best];
                n.argmax[o] = static_cast<std::uint32_t>(best);
                if (track_kinks_) mix_kink(static_cast<std::uint64_t>(best) + o * 131);
                ++o;
              }
            }
          }
        }
      }
      break;
    }

    case OpKind::Mean: {
      const Tensor<T>& x = val(n.inputs[0]);
      if (x.empty()) shape_error(n.kind, "empty input");
      T acc{0};
      for (T v : x.values()) acc += v;
      out.resize({1});
      out[0] = acc / static_cast<T>(x.size());
      break;
    }

    case OpKind::Scale: {
      const Tensor<T>& x = val(n.inputs[0]);
      out.resize(x.shape());
      const T f = static_cast<T>(n.factor);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * f;
      break;
    }

    case OpKind::Input:
    case OpKind::Parameter:
      break;
  }
}

// ---------------------------------------------------------------------------
// Backward

template <typename T>
Tensor<T>& Graph<T>::grad_target(NodeId input, NodeId consumer) {
  Node& in = nodes_[input];
  if (in.consumers.size() <= 1) return in.grad;
  const auto it = std::find(in.consumers.begin(), in.consumers.end(), consumer);
  return in.slots[static_cast<std::size_t>(it - in.consumers.begin())];
}

template <typename T>
void Graph<T>::backward(NodeId loss) {
  if (loss < 0 || loss >= static_cast<NodeId>(nodes_.size())) {
    throw Error(ErrorCode::LossNotScalar, "loss node out of range");
  }
  if (value(loss).size() != 1) {
    throw Error(ErrorCode::LossNotScalar, "loss has shape " + to_string(value(loss).shape()));
  }

  // Only nodes that (transitively) depend on a parameter need adjoints.
  std::vector<char> needs(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    needs[i] = n.kind == OpKind::Parameter;
    for (NodeId in : n.inputs) needs[i] |= needs[in];
    const Shape& shape = value(static_cast<NodeId>(i)).shape();
    if (needs[i]) {
      n.grad.resize(shape);
      n.grad.fill(T{0});
      n.slots.resize(n.consumers.size() > 1 ? n.consumers.size() : 0);
      for (auto& s : n.slots) {
        s.resize(shape);
        s.fill(T{0});
      }
    } else {
      n.grad = Tensor<T>();
      n.slots.clear();
    }
  }
  if (!needs[loss]) {
    if (params_) params_->zero_grad();
    return;
  }
  // The loss itself may have downstream consumers; its seed goes to the
  // folded gradient directly.
  for (auto& s : nodes_[loss].slots) s.fill(T{0});

  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!needs[id]) continue;
    if (!n.slots.empty()) {
      // fold per-consumer contributions in forward consumer order
      std::copy(n.slots[0].values().begin(), n.slots[0].values().end(), n.grad.values().begin());
      for (std::size_t s = 1; s < n.slots.size(); ++s) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += n.slots[s][i];
      }
    }
    if (id == loss) n.grad[0] = T{1};
    adjoint(id);
  }

  if (params_) {
    params_->zero_grad();
    for (const auto& [name, id] : param_nodes_) {
      if (needs[id] && !nodes_[id].grad.empty()) params_->grad(name) = nodes_[id].grad;
    }
  }
}

template <typename T>
void Graph<T>::adjoint(NodeId id) {
  Node& n = nodes_[id];
  const Tensor<T>& g = n.grad;

  auto wants = [&](int k) {
    const NodeId in = n.inputs[k];
    return !nodes_[in].grad.empty();
  };

  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
      break;

    case OpKind::Conv2d: {
      const Tensor<T>& x = val(n.inputs[0]);
      const Tensor<T>& w = val(n.inputs[1]);
      const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1));
      const int H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
      const int O = static_cast<int>(w.dim(0)), KH = static_cast<int>(w.dim(2)), KW = static_cast<int>(w.dim(3));
      const int s = n.conv.stride, p = n.conv.pad;
      const int HO = static_cast<int>(n.value.dim(2)), WO = static_cast<int>(n.value.dim(3));
      const std::size_t plane = static_cast<std::size_t>(HO) * WO;
      const std::size_t cols = static_cast<std::size_t>(N) * plane;
      const std::size_t rows = static_cast<std::size_t>(C) * KH * KW;
      const auto ecols = static_cast<Eigen::Index>(cols);
      const auto erows = static_cast<Eigen::Index>(rows);

      // gather dY into [O, N*HO*WO]
      scratch2_.resize(static_cast<std::size_t>(O) * cols);
      for (int b_ = 0; b_ < N; ++b_) {
        for (int o = 0; o < O; ++o) {
          std::copy_n(g.data() + (static_cast<std::size_t>(b_) * O + o) * plane, plane,
                      scratch2_.data() + o * cols + b_ * plane);
        }
      }
      CMapMat<T> dy(scratch2_.data(), O, ecols);

      if (wants(2)) {
        Tensor<T>& db = grad_target(n.inputs[2], id);
        // plain loop: Eigen's vectorized sum depends on buffer alignment
        for (int o = 0; o < O; ++o) {
          const T* r = scratch2_.data() + o * cols;
          T acc{0};
          for (std::size_t i = 0; i < cols; ++i) acc += r[i];
          db[o] += acc;
        }
      }

      scratch_.resize(rows * cols);
      if (wants(1)) {
        // rebuild im2col
        T* col = scratch_.data();
        for (int c = 0; c < C; ++c) {
          for (int ky = 0; ky < KH; ++ky) {
            for (int kx = 0; kx < KW; ++kx) {
              T* dst = col + ((static_cast<std::size_t>(c) * KH + ky) * KW + kx) * cols;
              for (int b_ = 0; b_ < N; ++b_) {
                const T* src = x.data() + (static_cast<std::size_t>(b_) * C + c) * H * W;
                for (int oy = 0; oy < HO; ++oy) {
                  const int iy = oy * s - p + ky;
                  for (int ox = 0; ox < WO; ++ox) {
                    const int ix = ox * s - p + kx;
                    *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? src[iy * W + ix] : T{0};
                  }
                }
              }
            }
          }
        }
        Tensor<T>& dw = grad_target(n.inputs[1], id);
        MapMat<T>(dw.data(), O, erows).noalias() += dy * CMapMat<T>(col, erows, ecols).transpose();
      }

      if (wants(0)) {
        MapMat<T> dcol(scratch_.data(), erows, ecols);
        dcol.noalias() = CMapMat<T>(w.data(), O, erows).transpose() * dy;
        Tensor<T>& dx = grad_target(n.inputs[0], id);
        const T* col = scratch_.data();
        for (int c = 0; c < C; ++c) {
          for (int ky = 0; ky < KH; ++ky) {
            for (int kx = 0; kx < KW; ++kx) {
              const T* src = col + ((static_cast<std::size_t>(c) * KH + ky) * KW + kx) * cols;
              for (int b_ = 0; b_ < N; ++b_) {
                T* dst = dx.data() + (static_cast<std::size_t>(b_) * C + c) * H * W;
                for (int oy = 0; oy < HO; ++oy) {
                  const int iy = oy * s - p + ky;
                  for (int ox = 0; ox < WO; ++ox, ++src) {
                    const int ix = ox * s - p + kx;
                    if (iy >= 0 && iy < H && ix >= 0 && ix < W) dst[iy * W + ix] += *src;
                  }
                }
              }
            }
          }
        }
      }
      break;
    }

    case OpKind::MaxPool: {
      if (!wants(0)) break;
      const Tensor<T>& x = val(n.inputs[0]);
      Tensor<T>& dx = grad_target(n.inputs[0], id);
      const std::size_t in_plane = x.dim(2) * x.dim(3);
      const std::size_t out_plane = n.value.dim(2) * n.value.dim(3);
      for (std::size_t o = 0; o < g.size(); ++o) {
        dx[(o / out_plane) * in_plane + n.argmax[o]] += g[o];
      }
      break;
    }

    case OpKind::Relu: {
      if (!wants(0)) break;
      const Tensor<T>& x = val(n.inputs[0]);
      Tensor<T>& dx = grad_target(n.inputs[0], id);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > T{0}) dx[i] += g[i];
      }
      break;
    }

    case OpKind::Lrn: {
      if (!wants(0)) break;
      const Tensor<T>& x = val(n.inputs[0]);
      Tensor<T>& dx = grad_target(n.inputs[0], id);
      const int N = static_cast<int>(x.dim(0)), C = static_cast<int>(x.dim(1));
      const std::size_t plane = x.dim(2) * x.dim(3);
      const int size = n.lrn.size, pre = (size - 1) / 2;
      const T beta = static_cast<T>(n.lrn.beta);
      const T coef = static_cast<T>(2.0 * n.lrn.alpha * n.lrn.beta / size);
      // ratio_c = dy_c * y_c / scale_c
      scratch_.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) scratch_[i] = g[i] * n.value[i] / n.aux[i];
      for (int b_ = 0; b_ < N; ++b_) {
        const std::size_t base = static_cast<std::size_t>(b_) * C * plane;
        for (int c = 0; c < C; ++c) {
          // channels whose window contains c
          const int lo = std::max(0, c - (size - 1 - pre)), hi = std::min(C - 1, c + pre);
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t at = base + c * plane + i;
            T acc{0};
            for (int cc = lo; cc <= hi; ++cc) acc += scratch_[base + cc * plane + i];
            dx[at] += g[at] * std::pow(n.aux[at], -beta) - coef * x[at] * acc;
          }
        }
      }
      break;
    }

    case OpKind::FullyConnected: {
      const Tensor<T>& x = val(n.inputs[0]);
      const Tensor<T>& w = val(n.inputs[1]);
      const auto N = static_cast<Eigen::Index>(x.dim(0));
      const auto din = static_cast<Eigen::Index>(w.dim(1));
      const auto dout = static_cast<Eigen::Index>(w.dim(0));
      CMapMat<T> dy(g.data(), N, dout);
      if (wants(2)) {
        Tensor<T>& db = grad_target(n.inputs[2], id);
        for (Eigen::Index c = 0; c < dout; ++c) {
          T acc{0};
          for (Eigen::Index r = 0; r < N; ++r) acc += dy(r, c);
          db[c] += acc;
        }
      }
      if (wants(1)) {
        Tensor<T>& dw = grad_target(n.inputs[1], id);
        MapMat<T>(dw.data(), dout, din).noalias() += dy.transpose() * CMapMat<T>(x.data(), N, din);
      }
      if (wants(0)) {
        Tensor<T>& dx = grad_target(n.inputs[0], id);
        MapMat<T>(dx.data(), N, din).noalias() += dy * CMapMat<T>(w.data(), dout, din);
      }
      break;
    }

    case OpKind::SoftmaxXent: {
      if (!wants(0)) break;
      const Tensor<T>& labels = val(n.inputs[1]);
      Tensor<T>& dz = grad_target(n.inputs[0], id);
      const std::size_t N = n.aux.dim(0), K = n.aux.dim(1);
      const T scale = g[0] / static_cast<T>(N);
      for (std::size_t r = 0; r < N; ++r) {
        const auto lab = static_cast<std::size_t>(labels[r]);
        for (std::size_t k = 0; k < K; ++k) {
          dz[r * K + k] += scale * (n.aux[r * K + k] - (k == lab ? T{1} : T{0}));
        }
      }
      break;
    }

    case OpKind::SqNorm: {
      if (!wants(0)) break;
      const Tensor<T>& x = val(n.inputs[0]);
      Tensor<T>& dx = grad_target(n.inputs[0], id);
      const std::size_t rows = g.size(), width = x.size() / rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const T gr = T{2} * g[r];
        for (std::size_t i = 0; i < width; ++i) dx[r * width + i] += gr * x[r * width + i];
      }
      break;
    }

    case OpKind::Sub:
    case OpKind::Add: {
      const T sign = n.kind == OpKind::Sub ? T{-1} : T{1};
      if (n.inputs[0] == n.inputs[1]) {
        if (wants(0)) {
          Tensor<T>& d = grad_target(n.inputs[0], id);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] + sign * g[i];
        }
        break;
      }
      if (wants(0)) {
        Tensor<T>& da = grad_target(n.inputs[0], id);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (wants(1)) {
        Tensor<T>& db = grad_target(n.inputs[1], id);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += sign * g[i];
      }
      break;
    }

    case OpKind::Mul: {
      const Tensor<T>& a = val(n.inputs[0]);
      const Tensor<T>& b = val(n.inputs[1]);
      if (wants(0)) {
        Tensor<T>& da = grad_target(n.inputs[0], id);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
      }
      if (wants(1)) {
        Tensor<T>& db = grad_target(n.inputs[1], id);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
      }
      break;
    }

    case OpKind::Concat: {
      const Tensor<T>& a = val(n.inputs[0]);
      const Tensor<T>& b = val(n.inputs[1]);
      const std::size_t N = a.dim(0), da = a.size() / N, db = b.size() / N;
      if (wants(0)) {
        Tensor<T>& ga = grad_target(n.inputs[0], id);
        for (std::size_t r = 0; r < N; ++r) {
          for (std::size_t i = 0; i < da; ++i) ga[r * da + i] += g[r * (da + db) + i];
        }
      }
      if (wants(1)) {
        Tensor<T>& gb = grad_target(n.inputs[1], id);
        for (std::size_t r = 0; r < N; ++r) {
          for (std::size_t i = 0; i < db; ++i) gb[r * db + i] += g[r * (da + db) + da + i];
        }
      }
      break;
    }

    case OpKind::Spp: {
      if (!wants(0)) break;
      const Tensor<T>& x = val(n.inputs[0]);
      Tensor<T>& dx = grad_target(n.inputs[0], id);
      const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
      std::size_t o = 0;
      for (std::size_t b_ = 0; b_ < N; ++b_) {
        for (int l = 1; l <= n.levels; ++l) {
          for (std::size_t c = 0; c < C; ++c) {
            for (int bin = 0; bin < l * l; ++bin, ++o) {
              dx[(b_ * C + c) * plane + n.argmax[o]] += g[o];
            }
          }
        }
      }
      break;
    }

    case OpKind::Mean: {
      if (!wants(0)) break;
      Tensor<T>& dx = grad_target(n.inputs[0], id);
      const T v = g[0] / static_cast<T>(dx.size());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += v;
      break;
    }

    case OpKind::Scale: {
      if (!wants(0)) break;
      Tensor<T>& dx = grad_target(n.inputs[0], id);
      const T f = static_cast<T>(n.factor);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * f;
      break;
    }
  }
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(Graph<double>& graph, NodeId loss, const TensorMap<double>& inputs,
                           double step, std::size_t samples, Rng& rng) {
  GradCheckResult result;
  ParameterStore<double>* params = graph.parameters();
  if (!params || params->scalar_count() == 0) return result;

  graph.set_track_kinks(true);
  graph.forward(inputs);
  graph.backward(loss);
  const std::uint64_t base_sig = graph.kink_signature();

  std::vector<Tensor<double>> analytic;
  for (const auto& e : params->entries()) analytic.push_back(e.grad);

  const std::size_t total = params->scalar_count();
  const std::size_t max_attempts = samples * 20;
  for (std::size_t attempt = 0; attempt < max_attempts && result.checked < samples; ++attempt) {
    auto flat = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    std::size_t e = 0;
    while (flat >= params->entries()[e].value.size()) flat -= params->entries()[e++].value.size();
    double& coord = params->entries()[e].value[flat];
    const double orig = coord;

    coord = orig + step;
    graph.forward(inputs);
    const double fp = graph.value(loss)[0];
    const bool same_p = graph.kink_signature() == base_sig;
    coord = orig - step;
    graph.forward(inputs);
    const double fm = graph.value(loss)[0];
    const bool same_m = graph.kink_signature() == base_sig;
    coord = orig;

    if (!same_p || !same_m) {
      ++result.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double an = analytic[e][flat];
    const double rel = std::fabs(an - numeric) / std::max(1e-8, std::fabs(an) + std::fabs(numeric));
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.checked;
  }

  graph.forward(inputs);
  graph.set_track_kinks(false);
  return result;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace filtrank::ad

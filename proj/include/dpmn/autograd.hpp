#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 arrays.
//
// A Tensor is a handle to a graph node. Operations build new nodes that
// remember their inputs and a backward closure; backward() walks the graph
// in reverse topological order and accumulates gradients into every node
// that requires them. Broadcasting is limited to scalar operands; all other
// shape changes go through explicit ops (expand, reshape, permute, ...).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dpmn::ag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b)) {}
  ShapeError(const std::string& op, const std::string& msg) : std::invalid_argument(op + ": " + msg) {}
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized to value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor constant(Shape shape, std::vector<double> values) {
    if (values.size() != ag::numel(shape)) throw ShapeError("constant", "buffer length does not match " + to_string(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = ag::numel(shape);
    Tensor t = constant(std::move(shape), std::vector<double>(n, 0.0));
    t.node_->requires_grad = requires_grad;
    return t;
  }
  static Tensor scalar(double v) { return constant({}, {v}); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  const std::vector<double>& values() const { return node_->value; }
  /// Direct buffer access for optimizers and checkpoint loading.
  std::vector<double>& mutable_values() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient buffer; zeros when nothing has been accumulated yet.
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  double item() const {
    if (numel() != 1) throw ShapeError("item", "tensor of shape " + to_string(shape()) + " is not a scalar");
    return node_->value[0];
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Records a result node. `backward` runs with the result's gradient and
/// must accumulate into the inputs that require it (see grad_of).
template <typename Backward>
Tensor make_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs, Backward&& backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    for (const auto& in : inputs) n->parents.push_back(in.node());
    Node* self = n.get();
    n->backward_fn = [self, fn = std::forward<Backward>(backward)]() { fn(self->grad); };
  }
  return Tensor(std::move(n));
}

/// Gradient buffer of an input inside a backward closure, or nullptr.
inline std::vector<double>* grad_of(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  t.node()->ensure_grad();
  return &t.node()->grad;
}

/// Accumulates d(loss)/d(leaf) into every reachable tensor that requires
/// gradients. Leaf gradients add up across calls; intermediate buffers are reset.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward", "loss must be a scalar, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

// ---------------------------------------------------------------- elementwise

namespace detail {

enum class Bcast { same, left_scalar, right_scalar };

inline Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (b.numel() == 1) return Bcast::right_scalar;
  if (a.numel() == 1) return Bcast::left_scalar;
  throw ShapeError(op, a.shape(), b.shape());
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const Bcast kind = broadcast_kind(op, a, b);
  const Shape shape = kind == Bcast::left_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto ia = [kind](std::size_t i) { return kind == Bcast::left_scalar ? 0 : i; };
  auto ib = [kind](std::size_t i) { return kind == Bcast::right_scalar ? 0 : i; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[ia(i)], bv[ib(i)]);
  return make_op(shape, std::move(out), {a, b}, [a, b, ia, ib, n, da, db](const std::vector<double>& g) {
    const auto& av = a.values();
    const auto& bv = b.values();
    if (auto* ga = grad_of(a))
      for (std::size_t i = 0; i < n; ++i) (*ga)[ia(i)] += g[i] * da(av[ia(i)], bv[ib(i)]);
    if (auto* gb = grad_of(b))
      for (std::size_t i = 0; i < n; ++i) (*gb)[ib(i)] += g[i] * db(av[ia(i)], bv[ib(i)]);
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_op(a.shape(), std::move(out), {a}, [a, deriv](const std::vector<double>& g) {
    if (auto* ga = grad_of(a)) {
      const auto& av = a.values();
      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g[i] * deriv(av[i]);
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}
inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}
inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}
inline Tensor log(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}
inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}
/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}
inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double x) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  });
}

// ------------------------------------------------------------- shape helpers

namespace detail {

/// (outer, axis, inner) decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer, len, inner;
};
inline AxisSplit split(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s.at(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline void check_axis(const char* op, const Tensor& a, std::size_t axis) {
  if (axis >= a.ndim()) throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
}

}  // namespace detail

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
  return make_op(std::move(shape), a.values(), {a}, [a](const std::vector<double>& g) {
    if (auto* ga = grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

/// Inserts a new axis of length n at `axis`, repeating the input along it.
inline Tensor expand(const Tensor& a, std::size_t axis, std::size_t n) {
  if (axis > a.ndim()) throw ShapeError("expand", "axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  Shape shape = a.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis; i < a.ndim(); ++i) inner *= a.shape()[i];
  std::vector<double> out(outer * n * inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * n + r) * inner));
  return make_op(std::move(shape), std::move(out), {a}, [a, outer, n, inner](const std::vector<double>& g) {
    if (auto* ga = grad_of(a))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t i = 0; i < inner; ++i) (*ga)[o * inner + i] += g[(o * n + r) * inner + i];
  });
}

inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const std::size_t nd = a.ndim();
  if (perm.size() != nd) throw ShapeError("permute", "permutation rank differs from tensor rank " + to_string(a.shape()));
  std::vector<int> used(nd, 0);
  Shape shape(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    if (perm[i] >= nd || used[perm[i]]++) throw ShapeError("permute", "invalid permutation");
    shape[i] = a.shape()[perm[i]];
  }
  std::vector<std::size_t> in_stride(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.shape()[i];
  // map[j] = input flat index of output flat index j
  const std::size_t n = a.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < nd; ++d) src += idx[d] * in_stride[perm[d]];
    map[j] = src;
    for (std::size_t d = nd; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = a.values()[map[j]];
  return make_op(std::move(shape), std::move(out), {a}, [a, map = std::move(map)](const std::vector<double>& g) {
    if (auto* ga = grad_of(a))
      for (std::size_t j = 0; j < g.size(); ++j) (*ga)[map[j]] += g[j];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  detail::check_axis("concat", parts[0], axis);
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.ndim() != shape.size()) throw ShapeError("concat", parts[0].shape(), p.shape());
    for (std::size_t d = 0; d < shape.size(); ++d)
      if (d != axis && p.shape()[d] != shape[d]) throw ShapeError("concat", parts[0].shape(), p.shape());
    shape[axis] += p.shape()[axis];
  }
  const auto sp = detail::split(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner), len * sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * sp.len + off) * sp.inner));
    off += len;
  }
  return make_op(shape, std::move(out), parts, [parts, offsets, axis, sp](const std::vector<double>& g) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto* gp = grad_of(parts[k]);
      if (!gp) continue;
      const std::size_t len = parts[k].shape()[axis];
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < len * sp.inner; ++i)
          (*gp)[o * len * sp.inner + i] += g[(o * sp.len + offsets[k]) * sp.inner + i];
    }
  });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::check_axis("slice", a, axis);
  if (begin > end || end > a.shape()[axis]) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + to_string(a.shape()));
  }
  const auto sp = detail::split(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t len = end - begin;
  std::vector<double> out(sp.outer * len * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>((o * sp.len + begin) * sp.inner), len * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner));
  return make_op(std::move(shape), std::move(out), {a}, [a, sp, begin, len](const std::vector<double>& g) {
    if (auto* ga = grad_of(a))
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < len * sp.inner; ++i) (*ga)[(o * sp.len + begin) * sp.inner + i] += g[o * len * sp.inner + i];
  });
}

/// Selects entries along `axis` by index (repeats allowed). Output axis length = indices.size().
inline Tensor index_select(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& indices) {
  detail::check_axis("index_select", a, axis);
  const auto sp = detail::split(a.shape(), axis);
  for (auto i : indices)
    if (i >= sp.len) throw ShapeError("index_select", "index " + std::to_string(i) + " out of range for " + to_string(a.shape()));
  Shape shape = a.shape();
  shape[axis] = indices.size();
  const std::size_t m = indices.size();
  std::vector<double> out(sp.outer * m * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>((o * sp.len + indices[r]) * sp.inner), sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * m + r) * sp.inner));
  return make_op(std::move(shape), std::move(out), {a}, [a, sp, indices, m](const std::vector<double>& g) {
    if (auto* ga = grad_of(a))
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t i = 0; i < sp.inner; ++i) (*ga)[(o * sp.len + indices[r]) * sp.inner + i] += g[(o * m + r) * sp.inner + i];
  });
}

/// Row lookup along the leading axis (embedding tables).
inline Tensor gather(const Tensor& a, const std::vector<std::size_t>& rows) { return index_select(a, 0, rows); }

// --------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a, std::size_t axis) {
  detail::check_axis("sum", a, axis);
  const auto sp = detail::split(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += a.values()[(o * sp.len + l) * sp.inner + i];
  return make_op(std::move(shape), std::move(out), {a}, [a, sp](const std::vector<double>& g) {
    if (auto* ga = grad_of(a))
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
          for (std::size_t i = 0; i < sp.inner; ++i) (*ga)[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
  });
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op({}, {s}, {a}, [a](const std::vector<double>& g) {
    if (auto* ga = grad_of(a))
      for (auto& x : *ga) x += g[0];
  });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  detail::check_axis("mean", a, axis);
  const std::size_t len = a.shape()[axis];
  if (len == 0) throw ShapeError("mean", "empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(len));
}

inline Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean_all", "empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

inline Tensor softmax(const Tensor& a, std::size_t axis) {
  detail::check_axis("softmax", a, axis);
  const auto sp = detail::split(a.shape(), axis);
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double m = -INFINITY;
      for (std::size_t l = 0; l < sp.len; ++l) m = std::max(m, av[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += (out[at(l)] = std::exp(av[at(l)] - m));
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= z;
    }
  }
  auto result = make_op(a.shape(), out, {a}, [a, sp, out](const std::vector<double>& g) {
    auto* ga = grad_of(a);
    if (!ga) return;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) dot += g[at(l)] * out[at(l)];
        for (std::size_t l = 0; l < sp.len; ++l) (*ga)[at(l)] += out[at(l)] * (g[at(l)] - dot);
      }
    }
  });
  return result;
}

// ------------------------------------------------------------ linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) throw ShapeError("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* br = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += x * br[j];
    }
  }
  return make_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const std::vector<double>& g) {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    if (auto* ga = grad_of(a)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* gr = g.data() + i * n;
          const double* br = bv + p * n;
          for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
          (*ga)[i * k + p] += s;
        }
    }
    if (auto* gb = grad_of(b)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = av[i * k + p];
          if (x == 0.0) continue;
          double* gbr = gb->data() + p * n;
          const double* gr = g.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) gbr[j] += x * gr[j];
        }
    }
  });
}

/// x W + b for x of shape [n, in], W [in, out], b [out] (bias repeated per row).
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (b.ndim() != 1 || w.ndim() != 2 || b.shape()[0] != w.shape()[1]) throw ShapeError("affine", w.shape(), b.shape());
  return add(matmul(x, w), expand(b, 0, x.shape().at(0)));
}

/// Causal dilated convolution. Input [B, C_in, T] (or [C_in, T]), kernels
/// [C_out, C_in, kw], optional bias [C_out]. Output at t reads inputs
/// t - (kw-1-j)*dilation for tap j; positions before 0 are zero padding.
inline Tensor dilated_conv1d(const Tensor& input, const Tensor& kernels, std::size_t dilation,
                             const Tensor& bias = Tensor()) {
  if (dilation < 1) throw ShapeError("dilated_conv1d", "dilation must be >= 1");
  const bool unbatched = input.ndim() == 2;
  if (!unbatched && input.ndim() != 3) throw ShapeError("dilated_conv1d", input.shape(), kernels.shape());
  if (kernels.ndim() != 3) throw ShapeError("dilated_conv1d", input.shape(), kernels.shape());
  const std::size_t bsz = unbatched ? 1 : input.shape()[0];
  const std::size_t cin = input.shape()[unbatched ? 0 : 1];
  const std::size_t tlen = input.shape()[unbatched ? 1 : 2];
  const std::size_t cout = kernels.shape()[0], kw = kernels.shape()[2];
  if (kernels.shape()[1] != cin) throw ShapeError("dilated_conv1d", input.shape(), kernels.shape());
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.shape()[0] != cout)) throw ShapeError("dilated_conv1d", kernels.shape(), bias.shape());

  std::vector<double> out(bsz * cout * tlen, 0.0);
  const double* x = input.values().data();
  const double* w = kernels.values().data();
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t o = 0; o < cout; ++o) {
      double* orow = out.data() + (b * cout + o) * tlen;
      if (has_bias) std::fill(orow, orow + tlen, bias.values()[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xrow = x + (b * cin + c) * tlen;
        for (std::size_t j = 0; j < kw; ++j) {
          const double wv = w[(o * cin + c) * kw + j];
          const std::size_t shift = (kw - 1 - j) * dilation;
          for (std::size_t t = shift; t < tlen; ++t) orow[t] += wv * xrow[t - shift];
        }
      }
    }
  Shape shape = unbatched ? Shape{cout, tlen} : Shape{bsz, cout, tlen};
  std::vector<Tensor> inputs{input, kernels};
  if (has_bias) inputs.push_back(bias);
  return make_op(std::move(shape), std::move(out), inputs,
                 [input, kernels, bias, has_bias, bsz, cin, tlen, cout, kw, dilation](const std::vector<double>& g) {
                   const double* x = input.values().data();
                   const double* w = kernels.values().data();
                   auto* gx = grad_of(input);
                   auto* gw = grad_of(kernels);
                   auto* gbias = has_bias ? grad_of(bias) : nullptr;
                   for (std::size_t b = 0; b < bsz; ++b)
                     for (std::size_t o = 0; o < cout; ++o) {
                       const double* grow = g.data() + (b * cout + o) * tlen;
                       if (gbias)
                         for (std::size_t t = 0; t < tlen; ++t) (*gbias)[o] += grow[t];
                       for (std::size_t c = 0; c < cin; ++c) {
                         const double* xrow = x + (b * cin + c) * tlen;
                         for (std::size_t j = 0; j < kw; ++j) {
                           const std::size_t shift = (kw - 1 - j) * dilation;
                           if (shift >= tlen) continue;
                           if (gw) {
                             double s = 0.0;
                             for (std::size_t t = shift; t < tlen; ++t) s += grow[t] * xrow[t - shift];
                             (*gw)[(o * cin + c) * kw + j] += s;
                           }
                           if (gx) {
                             const double wv = w[(o * cin + c) * kw + j];
                             double* gxrow = gx->data() + (b * cin + c) * tlen;
                             for (std::size_t t = shift; t < tlen; ++t) gxrow[t - shift] += wv * grow[t];
                           }
                         }
                       }
                     }
                 });
}

// ------------------------------------------------------------ gradient check

/// Worst coordinate error between backward() and the five-point central
/// difference of `loss_fn` over every entry of `params`. The error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
inline double grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, double eps = 1e-4) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> analytic = p.grad();
    auto& vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      auto at = [&](double step) {
        vals[i] = orig + step;
        return loss_fn().item();
      };
      const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      vals[i] = orig;
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

/// Single-input form: f maps x to a scalar tensor.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-4) {
  return grad_check([&] { return f(x); }, {x}, eps);
}

}  // namespace dpmn::ag

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

// Recorded computation over dense tensors with exact reverse-mode gradients.
// A graph is built once (append-only, so node order is already topological),
// then evaluated any number of times against leaf bindings and the current
// parameter store contents. Recording and backward are single-writer;
// evaluation of a frozen graph is side-effect free apart from cached values.

enum class OpKind {
  kInput,
  kParam,
  kConstant,
  kAdd,
  kMul,
  kAffine,  // a*x + b with host scalars
  kMatmul,
  kAddRow,  // matrix + broadcast row
  kMulRow,  // matrix * broadcast row
  kGather,  // row gather by index list (embedding lookup, row picks)
  kSoftmaxRow,
  kLayerNorm,
  kMaskedAttention,  // causally masked scaled dot-product attention
  kLog,
  kExp,
  kSum,
  kMean,
  kDropout,
  kReshape,
  kStackRows,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kAffine: return "affine";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kMulRow: return "mul_row";
    case OpKind::kGather: return "gather";
    case OpKind::kSoftmaxRow: return "softmax_row";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kMaskedAttention: return "masked_attention";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kDropout: return "dropout";
    case OpKind::kReshape: return "reshape";
    case OpKind::kStackRows: return "stack_rows";
  }
  return "?";
}

// Named, ordered parameter set shared between the graphs of a training run.
template <typename T>
class ParameterStore {
 public:
  void add(const std::string& name, Tensor<T> value) {
    if (values_.count(name))
      throw std::runtime_error("param store: duplicate parameter '" + name + "'");
    values_.emplace(name, std::move(value));
  }

  bool has(const std::string& name) const { return values_.count(name) != 0; }

  Tensor<T>& ref(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end())
      throw std::runtime_error("param store: unknown parameter '" + name + "'");
    return it->second;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end())
      throw std::runtime_error("param store: unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
  }

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& [k, v] : values_) n += v.numel();
    return n;
  }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  std::size_t size() const { return values_.size(); }

 private:
  std::map<std::string, Tensor<T>> values_;
};

template <typename T>
struct GraphNode {
  OpKind kind;
  std::vector<int> inputs;
  std::vector<std::size_t> dims;  // output shape, fixed at build time

  std::string name;                // input/param leaf name
  Tensor<T> literal;               // constant payload or dropout mask
  std::vector<std::int64_t> ids;   // gather row indices
  T mul_c = T(1), add_c = T(0);    // affine coefficients
  T eps = T(0);                    // layer_norm epsilon
  bool identity = false;           // dropout recorded in eval mode

  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> aux;  // op scratch kept for backward (attention probs, LN scale)
};

template <typename T>
class ValueGraph {
 public:
  explicit ValueGraph(std::shared_ptr<ParameterStore<T>> params = nullptr)
      : params_(std::move(params)) {}

  std::shared_ptr<ParameterStore<T>> params() const { return params_; }

  // ---- leaves ----

  int input(const std::string& name, std::vector<std::size_t> dims) {
    GraphNode<T> n;
    n.kind = OpKind::kInput;
    n.name = name;
    n.dims = std::move(dims);
    return push(std::move(n));
  }

  int param(const std::string& name) {
    if (!params_) throw std::runtime_error("graph: no parameter store attached");
    GraphNode<T> n;
    n.kind = OpKind::kParam;
    n.name = name;
    n.dims = params_->get(name).dims();
    return push(std::move(n));
  }

  int constant(Tensor<T> v) {
    v.check_finite("constant");
    GraphNode<T> n;
    n.kind = OpKind::kConstant;
    n.dims = v.dims();
    n.literal = std::move(v);
    return push(std::move(n));
  }

  // ---- elementwise and broadcast arithmetic ----

  int add(int a, int b) {
    require_same_shape(a, b, "add");
    return push(make(OpKind::kAdd, {a, b}, dims_of(a)));
  }

  int mul(int a, int b) {
    require_same_shape(a, b, "mul");
    return push(make(OpKind::kMul, {a, b}, dims_of(a)));
  }

  int affine(int x, T a, T b) {
    GraphNode<T> n = make(OpKind::kAffine, {x}, dims_of(x));
    n.mul_c = a;
    n.add_c = b;
    return push(std::move(n));
  }

  int add_row(int x, int r) { return row_broadcast(OpKind::kAddRow, x, r); }
  int mul_row(int x, int r) { return row_broadcast(OpKind::kMulRow, x, r); }

  int matmul(int a, int b) {
    const auto& da = dims_of(a);
    const auto& db = dims_of(b);
    if (da.size() != 2 || db.size() != 2)
      throw std::runtime_error(std::string("matmul: rank-2 operands required, got ") +
                               describe(a) + " and " + describe(b));
    if (da[1] != db[0])
      throw std::runtime_error("matmul: inner dimensions " + std::to_string(da[1]) +
                               " vs " + std::to_string(db[0]) + " between " +
                               describe(a) + " and " + describe(b));
    return push(make(OpKind::kMatmul, {a, b}, {da[0], db[1]}));
  }

  // ---- structured ops ----

  int gather(int table, std::vector<std::int64_t> ids) {
    const auto& dt = dims_of(table);
    if (dt.size() != 2)
      throw std::runtime_error(std::string("gather: rank-2 table required, got ") +
                               describe(table));
    if (ids.empty()) throw std::runtime_error("gather: empty index list");
    for (std::int64_t id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= dt[0])
        throw std::runtime_error("gather: index " + std::to_string(id) +
                                 " out of range for " + describe(table));
    }
    GraphNode<T> n = make(OpKind::kGather, {table}, {ids.size(), dt[1]});
    n.ids = std::move(ids);
    return push(std::move(n));
  }

  int softmax_row(int x) {
    return push(make(OpKind::kSoftmaxRow, {x}, dims_of(x)));
  }

  int layer_norm(int x, T eps = T(1e-5)) {
    GraphNode<T> n = make(OpKind::kLayerNorm, {x}, dims_of(x));
    n.eps = eps;
    return push(std::move(n));
  }

  int masked_attention(int q, int k, int v) {
    const auto& dq = dims_of(q);
    const auto& dk = dims_of(k);
    const auto& dv = dims_of(v);
    if (dq.size() != 2 || dk.size() != 2 || dv.size() != 2)
      throw std::runtime_error("masked_attention: rank-2 operands required");
    if (dq != dk || dq[0] != dv[0])
      throw std::runtime_error(std::string("masked_attention: shape mismatch between ") +
                               describe(q) + ", " + describe(k) + ", " + describe(v));
    return push(make(OpKind::kMaskedAttention, {q, k, v}, {dq[0], dv[1]}));
  }

  int log(int x) { return push(make(OpKind::kLog, {x}, dims_of(x))); }
  int exp(int x) { return push(make(OpKind::kExp, {x}, dims_of(x))); }

  int sum(int x) { return push(make(OpKind::kSum, {x}, {1})); }
  int mean(int x) { return push(make(OpKind::kMean, {x}, {1})); }

  // The keep mask is drawn once, at record time, from the run's RNG stream;
  // gradients flow through the fixed mask. In eval mode the node is identity.
  int dropout(int x, double rate, Rng& rng, bool train_mode) {
    if (rate < 0.0 || rate >= 1.0)
      throw std::runtime_error("dropout: rate must be in [0,1)");
    GraphNode<T> n = make(OpKind::kDropout, {x}, dims_of(x));
    if (!train_mode || rate == 0.0) {
      n.identity = true;
    } else {
      std::size_t count = 1;
      for (std::size_t d : n.dims) count *= d;
      std::vector<T> mask(count);
      const T keep = T(1) / T(1.0 - rate);
      for (std::size_t i = 0; i < count; ++i)
        mask[i] = rng.uniform() < rate ? T(0) : keep;
      n.literal = Tensor<T>(n.dims, std::move(mask));
    }
    return push(std::move(n));
  }

  int reshape(int x, std::vector<std::size_t> dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    std::size_t m = 1;
    for (std::size_t d : dims_of(x)) m *= d;
    if (n != m || dims.empty())
      throw std::runtime_error(std::string("reshape: element count mismatch for ") +
                               describe(x));
    return push(make(OpKind::kReshape, {x}, std::move(dims)));
  }

  int stack_rows(const std::vector<int>& rows) {
    if (rows.empty()) throw std::runtime_error("stack_rows: empty row list");
    std::size_t c = cols_of(rows[0]);
    for (int r : rows) {
      if (rows_of(r) != 1 || cols_of(r) != c)
        throw std::runtime_error(std::string("stack_rows: ") + describe(r) +
                                 " is not a row of width " + std::to_string(c));
    }
    return push(make(OpKind::kStackRows, rows, {rows.size(), c}));
  }

  // ---- outputs, evaluation, gradients ----

  void mark_output(int id, const std::string& name) {
    check_id(id);
    outputs_.emplace_back(id, name);
  }

  const std::vector<std::size_t>& dims_of(int id) const {
    check_id(id);
    return nodes_[id].dims;
  }

  std::size_t rows_of(int id) const {
    const auto& d = dims_of(id);
    return d.size() == 1 ? 1 : d[0];
  }

  std::size_t cols_of(int id) const {
    const auto& d = dims_of(id);
    return d.back();
  }

  const Tensor<T>& value_of(int id) const {
    check_id(id);
    if (nodes_[id].value.numel() == 0)
      throw std::runtime_error("graph: node value not evaluated yet");
    return nodes_[id].value;
  }

  const Tensor<T>& grad_of(int id) const {
    check_id(id);
    return nodes_[id].grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Forward pass. Deterministic: identical bindings and parameter values give
  // bitwise-identical outputs. Returns the tensors of all marked outputs.
  std::map<std::string, Tensor<T>> evaluate(
      const std::map<std::string, Tensor<T>>& bindings = {}) {
    forward(bindings);
    std::map<std::string, Tensor<T>> out;
    for (const auto& [id, name] : outputs_) out[name] = nodes_[id].value;
    return out;
  }

  // One reverse sweep from a scalar node; returns d(output)/d(p) for every
  // parameter in the store. Parameters the graph never touches get zeros.
  std::map<std::string, Tensor<T>> gradients(
      int scalar_output, const std::map<std::string, Tensor<T>>& bindings = {}) {
    check_id(scalar_output);
    forward(bindings);
    if (nodes_[scalar_output].value.numel() != 1)
      throw std::runtime_error("gradients: output " + describe(scalar_output) +
                               " is not scalar");
    for (auto& n : nodes_) {
      n.grad = Tensor<T>::zeros(n.dims);
    }
    nodes_[scalar_output].grad[0] = T(1);
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      backward_node(id);
    }
    std::map<std::string, Tensor<T>> out;
    if (params_) {
      for (const auto& [name, value] : *params_)
        out.emplace(name, Tensor<T>::zeros(value.dims()));
    }
    for (const auto& n : nodes_) {
      if (n.kind != OpKind::kParam) continue;
      auto it = out.find(n.name);
      for (std::size_t i = 0; i < n.grad.numel(); ++i)
        it->second[i] += n.grad[i];
    }
    return out;
  }

  // Central finite differences over every parameter entry; returns the worst
  // relative error against the reverse-mode gradient. 64-bit graphs only.
  double grad_check(int scalar_output, double step,
                    const std::map<std::string, Tensor<T>>& bindings = {}) {
    if (step <= 0) throw std::runtime_error("grad_check: step must be positive");
    if (!params_) throw std::runtime_error("grad_check: no parameter store");
    auto analytic = gradients(scalar_output, bindings);
    double worst = 0.0;
    for (auto& [name, value] : *params_) {
      Tensor<T>& theta = value;
      const Tensor<T>& g = analytic.at(name);
      for (std::size_t i = 0; i < theta.numel(); ++i) {
        const T original = theta[i];
        theta[i] = original + static_cast<T>(step);
        forward(bindings);
        const double f_plus = static_cast<double>(nodes_[scalar_output].value[0]);
        theta[i] = original - static_cast<T>(step);
        forward(bindings);
        const double f_minus = static_cast<double>(nodes_[scalar_output].value[0]);
        theta[i] = original;
        const double fd = (f_plus - f_minus) / (2.0 * step);
        const double ad = static_cast<double>(g[i]);
        const double rel = std::abs(ad - fd) / std::max(std::abs(fd), 1e-8);
        worst = std::max(worst, rel);
      }
    }
    forward(bindings);  // leave values consistent with unperturbed parameters
    return worst;
  }

 private:
  GraphNode<T> make(OpKind kind, std::vector<int> inputs,
                    std::vector<std::size_t> dims) {
    for (int i : inputs) check_id(i);
    GraphNode<T> n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.dims = std::move(dims);
    return n;
  }

  int push(GraphNode<T> n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::runtime_error("graph: node id " + std::to_string(id) +
                               " out of range");
  }

  std::string describe(int id) const {
    check_id(id);
    const GraphNode<T>& n = nodes_[id];
    std::string s = "node " + std::to_string(id) + " (" + op_name(n.kind);
    if (!n.name.empty()) s += " '" + n.name + "'";
    s += " ";
    Tensor<T> probe = Tensor<T>::zeros(n.dims);
    s += probe.shape_string();
    s += ")";
    return s;
  }

  void require_same_shape(int a, int b, const char* op) const {
    if (dims_of(a) != dims_of(b))
      throw std::runtime_error(std::string(op) + ": shape mismatch between " +
                               describe(a) + " and " + describe(b));
  }

  int row_broadcast(OpKind kind, int x, int r) {
    const auto& dx = dims_of(x);
    if (dx.size() != 2)
      throw std::runtime_error(std::string(op_name(kind)) +
                               ": rank-2 left operand required, got " + describe(x));
    if (rows_of(r) != 1 || cols_of(r) != dx[1])
      throw std::runtime_error(std::string(op_name(kind)) + ": " + describe(r) +
                               " does not broadcast over " + describe(x));
    return push(make(kind, {x, r}, dims_of(x)));
  }

  // ---- forward kernels ----

  void forward(const std::map<std::string, Tensor<T>>& bindings) {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      GraphNode<T>& n = nodes_[id];
      switch (n.kind) {
        case OpKind::kInput: {
          auto it = bindings.find(n.name);
          if (it == bindings.end())
            throw std::runtime_error("evaluate: no binding for input '" + n.name + "'");
          if (it->second.dims() != n.dims)
            throw std::runtime_error("evaluate: binding for '" + n.name + "' has shape " +
                                     it->second.shape_string() + ", expected " +
                                     Tensor<T>::zeros(n.dims).shape_string());
          it->second.check_finite("input '" + n.name + "'");
          n.value = it->second;
          break;
        }
        case OpKind::kParam: {
          const Tensor<T>& p = params_->get(n.name);
          if (p.dims() != n.dims)
            throw std::runtime_error("evaluate: parameter '" + n.name +
                                     "' changed shape since recording");
          n.value = p;
          break;
        }
        case OpKind::kConstant:
          n.value = n.literal;
          break;
        default:
          apply(n);
          n.value.check_finite(std::string(op_name(n.kind)) + " (node " +
                               std::to_string(id) + ")");
          break;
      }
    }
  }

  void apply(GraphNode<T>& n) {
    const auto in = [&](std::size_t i) -> const Tensor<T>& {
      return nodes_[n.inputs[i]].value;
    };
    switch (n.kind) {
      case OpKind::kAdd: {
        n.value = in(0);
        const Tensor<T>& b = in(1);
        for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] += b[i];
        break;
      }
      case OpKind::kMul: {
        n.value = in(0);
        const Tensor<T>& b = in(1);
        for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] *= b[i];
        break;
      }
      case OpKind::kAffine: {
        n.value = in(0);
        for (std::size_t i = 0; i < n.value.numel(); ++i)
          n.value[i] = n.mul_c * n.value[i] + n.add_c;
        break;
      }
      case OpKind::kMatmul: {
        const Tensor<T>& a = in(0);
        const Tensor<T>& b = in(1);
        const std::size_t m = a.rows(), kk = a.cols(), p = b.cols();
        n.value = Tensor<T>::zeros({m, p});
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t k = 0; k < kk; ++k) {
            const T aik = a.at(i, k);
            if (aik == T(0)) continue;
            const T* brow = b.data().data() + k * p;
            T* crow = n.value.data().data() + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
          }
        }
        break;
      }
      case OpKind::kAddRow: {
        n.value = in(0);
        const Tensor<T>& r = in(1);
        for (std::size_t i = 0; i < n.value.rows(); ++i)
          for (std::size_t j = 0; j < n.value.cols(); ++j)
            n.value.at(i, j) += r[j];
        break;
      }
      case OpKind::kMulRow: {
        n.value = in(0);
        const Tensor<T>& r = in(1);
        for (std::size_t i = 0; i < n.value.rows(); ++i)
          for (std::size_t j = 0; j < n.value.cols(); ++j)
            n.value.at(i, j) *= r[j];
        break;
      }
      case OpKind::kGather: {
        const Tensor<T>& t = in(0);
        const std::size_t c = t.cols();
        n.value = Tensor<T>::zeros({n.ids.size(), c});
        for (std::size_t i = 0; i < n.ids.size(); ++i)
          for (std::size_t j = 0; j < c; ++j)
            n.value.at(i, j) = t.at(static_cast<std::size_t>(n.ids[i]), j);
        break;
      }
      case OpKind::kSoftmaxRow: {
        const Tensor<T>& x = in(0);
        n.value = x;
        const std::size_t r = x.rows(), c = x.cols();
        for (std::size_t i = 0; i < r; ++i) {
          T mx = n.value.at(i, 0);
          for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, n.value.at(i, j));
          T z = T(0);
          for (std::size_t j = 0; j < c; ++j) {
            T e = std::exp(n.value.at(i, j) - mx);
            n.value.at(i, j) = e;
            z += e;
          }
          for (std::size_t j = 0; j < c; ++j) n.value.at(i, j) /= z;
        }
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor<T>& x = in(0);
        const std::size_t r = x.rows(), c = x.cols();
        n.value = x;
        n.aux = Tensor<T>::zeros({r});  // per-row 1/sqrt(var+eps)
        for (std::size_t i = 0; i < r; ++i) {
          T mu = T(0);
          for (std::size_t j = 0; j < c; ++j) mu += x.at(i, j);
          mu /= static_cast<T>(c);
          T var = T(0);
          for (std::size_t j = 0; j < c; ++j) {
            const T d = x.at(i, j) - mu;
            var += d * d;
          }
          var /= static_cast<T>(c);
          const T inv = T(1) / std::sqrt(var + n.eps);
          n.aux[i] = inv;
          for (std::size_t j = 0; j < c; ++j)
            n.value.at(i, j) = (x.at(i, j) - mu) * inv;
        }
        break;
      }
      case OpKind::kMaskedAttention: {
        const Tensor<T>& q = in(0);
        const Tensor<T>& k = in(1);
        const Tensor<T>& v = in(2);
        const std::size_t L = q.rows(), dh = q.cols(), dv = v.cols();
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        n.aux = Tensor<T>::zeros({L, L});  // attention probabilities
        for (std::size_t i = 0; i < L; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j <= i; ++j) {
            T s = T(0);
            for (std::size_t x = 0; x < dh; ++x) s += q.at(i, x) * k.at(j, x);
            s *= scale;
            n.aux.at(i, j) = s;
            mx = std::max(mx, s);
          }
          T z = T(0);
          for (std::size_t j = 0; j <= i; ++j) {
            const T e = std::exp(n.aux.at(i, j) - mx);
            n.aux.at(i, j) = e;
            z += e;
          }
          for (std::size_t j = 0; j <= i; ++j) n.aux.at(i, j) /= z;
        }
        n.value = Tensor<T>::zeros({L, dv});
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j <= i; ++j) {
            const T a = n.aux.at(i, j);
            for (std::size_t x = 0; x < dv; ++x)
              n.value.at(i, x) += a * v.at(j, x);
          }
        break;
      }
      case OpKind::kLog: {
        n.value = in(0);
        for (std::size_t i = 0; i < n.value.numel(); ++i)
          n.value[i] = std::log(n.value[i]);
        break;
      }
      case OpKind::kExp: {
        n.value = in(0);
        for (std::size_t i = 0; i < n.value.numel(); ++i)
          n.value[i] = std::exp(n.value[i]);
        break;
      }
      case OpKind::kSum: {
        T s = T(0);
        for (std::size_t i = 0; i < in(0).numel(); ++i) s += in(0)[i];
        if (!std::isfinite(static_cast<double>(s)))
          throw std::runtime_error("sum: non-finite value");
        n.value = Tensor<T>({1}, {s});
        break;
      }
      case OpKind::kMean: {
        T s = T(0);
        for (std::size_t i = 0; i < in(0).numel(); ++i) s += in(0)[i];
        s /= static_cast<T>(in(0).numel());
        if (!std::isfinite(static_cast<double>(s)))
          throw std::runtime_error("mean: non-finite value");
        n.value = Tensor<T>({1}, {s});
        break;
      }
      case OpKind::kDropout: {
        n.value = in(0);
        if (!n.identity)
          for (std::size_t i = 0; i < n.value.numel(); ++i)
            n.value[i] *= n.literal[i];
        break;
      }
      case OpKind::kReshape: {
        n.value = Tensor<T>(n.dims, in(0).data());
        break;
      }
      case OpKind::kStackRows: {
        const std::size_t c = n.dims[1];
        n.value = Tensor<T>::zeros(n.dims);
        for (std::size_t i = 0; i < n.inputs.size(); ++i)
          for (std::size_t j = 0; j < c; ++j)
            n.value.at(i, j) = nodes_[n.inputs[i]].value[j];
        break;
      }
      default:
        throw std::runtime_error("graph: leaf reached apply()");
    }
  }

  // ---- backward kernels ----

  void backward_node(int id) {
    GraphNode<T>& n = nodes_[id];
    const Tensor<T>& g = n.grad;
    const auto gin = [&](std::size_t i) -> Tensor<T>& {
      return nodes_[n.inputs[i]].grad;
    };
    const auto vin = [&](std::size_t i) -> const Tensor<T>& {
      return nodes_[n.inputs[i]].value;
    };
    switch (n.kind) {
      case OpKind::kInput:
      case OpKind::kParam:
      case OpKind::kConstant:
        return;
      case OpKind::kAdd: {
        for (std::size_t i = 0; i < g.numel(); ++i) {
          gin(0)[i] += g[i];
          gin(1)[i] += g[i];
        }
        return;
      }
      case OpKind::kMul: {
        const Tensor<T>& a = vin(0);
        const Tensor<T>& b = vin(1);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          gin(0)[i] += g[i] * b[i];
          gin(1)[i] += g[i] * a[i];
        }
        return;
      }
      case OpKind::kAffine: {
        for (std::size_t i = 0; i < g.numel(); ++i) gin(0)[i] += n.mul_c * g[i];
        return;
      }
      case OpKind::kMatmul: {
        const Tensor<T>& a = vin(0);
        const Tensor<T>& b = vin(1);
        Tensor<T>& ga = gin(0);
        Tensor<T>& gb = gin(1);
        const std::size_t m = a.rows(), kk = a.cols(), p = b.cols();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < p; ++j) {
            const T gij = g.at(i, j);
            if (gij == T(0)) continue;
            for (std::size_t k = 0; k < kk; ++k) {
              ga.at(i, k) += gij * b.at(k, j);
              gb.at(k, j) += gij * a.at(i, k);
            }
          }
        }
        return;
      }
      case OpKind::kAddRow: {
        Tensor<T>& gx = gin(0);
        Tensor<T>& gr = gin(1);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) {
            gx.at(i, j) += g.at(i, j);
            gr[j] += g.at(i, j);
          }
        return;
      }
      case OpKind::kMulRow: {
        const Tensor<T>& x = vin(0);
        const Tensor<T>& r = vin(1);
        Tensor<T>& gx = gin(0);
        Tensor<T>& gr = gin(1);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) {
            gx.at(i, j) += g.at(i, j) * r[j];
            gr[j] += g.at(i, j) * x.at(i, j);
          }
        return;
      }
      case OpKind::kGather: {
        Tensor<T>& gt = gin(0);
        const std::size_t c = g.cols();
        for (std::size_t i = 0; i < n.ids.size(); ++i)
          for (std::size_t j = 0; j < c; ++j)
            gt.at(static_cast<std::size_t>(n.ids[i]), j) += g.at(i, j);
        return;
      }
      case OpKind::kSoftmaxRow: {
        const Tensor<T>& p = n.value;
        Tensor<T>& gx = gin(0);
        for (std::size_t i = 0; i < p.rows(); ++i) {
          T dot = T(0);
          for (std::size_t j = 0; j < p.cols(); ++j)
            dot += g.at(i, j) * p.at(i, j);
          for (std::size_t j = 0; j < p.cols(); ++j)
            gx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
        }
        return;
      }
      case OpKind::kLayerNorm: {
        const Tensor<T>& y = n.value;
        Tensor<T>& gx = gin(0);
        const std::size_t c = y.cols();
        for (std::size_t i = 0; i < y.rows(); ++i) {
          T gmean = T(0), gymean = T(0);
          for (std::size_t j = 0; j < c; ++j) {
            gmean += g.at(i, j);
            gymean += g.at(i, j) * y.at(i, j);
          }
          gmean /= static_cast<T>(c);
          gymean /= static_cast<T>(c);
          const T inv = n.aux[i];
          for (std::size_t j = 0; j < c; ++j)
            gx.at(i, j) += inv * (g.at(i, j) - gmean - y.at(i, j) * gymean);
        }
        return;
      }
      case OpKind::kMaskedAttention: {
        const Tensor<T>& q = vin(0);
        const Tensor<T>& k = vin(1);
        const Tensor<T>& v = vin(2);
        const Tensor<T>& a = n.aux;
        Tensor<T>& gq = gin(0);
        Tensor<T>& gk = gin(1);
        Tensor<T>& gv = gin(2);
        const std::size_t L = q.rows(), dh = q.cols(), dv = v.cols();
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        Tensor<T> gs = Tensor<T>::zeros({L, L});
        for (std::size_t i = 0; i < L; ++i) {
          // dA then the softmax Jacobian, restricted to the causal prefix.
          T dot = T(0);
          for (std::size_t j = 0; j <= i; ++j) {
            T da = T(0);
            for (std::size_t x = 0; x < dv; ++x)
              da += g.at(i, x) * v.at(j, x);
            gs.at(i, j) = da;
            dot += da * a.at(i, j);
          }
          for (std::size_t j = 0; j <= i; ++j)
            gs.at(i, j) = a.at(i, j) * (gs.at(i, j) - dot);
        }
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j <= i; ++j) {
            const T sij = gs.at(i, j) * scale;
            const T aij = a.at(i, j);
            for (std::size_t x = 0; x < dh; ++x) {
              gq.at(i, x) += sij * k.at(j, x);
              gk.at(j, x) += sij * q.at(i, x);
            }
            for (std::size_t x = 0; x < dv; ++x)
              gv.at(j, x) += aij * g.at(i, x);
          }
        return;
      }
      case OpKind::kLog: {
        const Tensor<T>& x = vin(0);
        for (std::size_t i = 0; i < g.numel(); ++i) gin(0)[i] += g[i] / x[i];
        return;
      }
      case OpKind::kExp: {
        const Tensor<T>& y = n.value;
        for (std::size_t i = 0; i < g.numel(); ++i) gin(0)[i] += g[i] * y[i];
        return;
      }
      case OpKind::kSum: {
        for (std::size_t i = 0; i < gin(0).numel(); ++i) gin(0)[i] += g[0];
        return;
      }
      case OpKind::kMean: {
        const T w = g[0] / static_cast<T>(gin(0).numel());
        for (std::size_t i = 0; i < gin(0).numel(); ++i) gin(0)[i] += w;
        return;
      }
      case OpKind::kDropout: {
        if (n.identity) {
          for (std::size_t i = 0; i < g.numel(); ++i) gin(0)[i] += g[i];
        } else {
          for (std::size_t i = 0; i < g.numel(); ++i)
            gin(0)[i] += g[i] * n.literal[i];
        }
        return;
      }
      case OpKind::kReshape: {
        for (std::size_t i = 0; i < g.numel(); ++i) gin(0)[i] += g[i];
        return;
      }
      case OpKind::kStackRows: {
        const std::size_t c = n.dims[1];
        for (std::size_t i = 0; i < n.inputs.size(); ++i)
          for (std::size_t j = 0; j < c; ++j)
            gin(i)[j] += g.at(i, j);
        return;
      }
    }
  }

  std::shared_ptr<ParameterStore<T>> params_;
  std::vector<GraphNode<T>> nodes_;
  std::vector<std::pair<int, std::string>> outputs_;
};

}  // namespace ckd

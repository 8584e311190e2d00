#pragma once

// Reverse-mode differentiation over a closed set of primitives.
//
// A program is any callable `Var(Tape&)` that builds its computation from the
// primitives below and returns a 1x1 result. Values are computed eagerly as
// the program runs; Tape::backward then walks the recorded nodes in reverse.
// Every reduction runs in ascending index order so repeated calls are
// bit-identical.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "idsp/error.hpp"
#include "idsp/tensor.hpp"

namespace idsp {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  explicit Tape(const ParamStore& params) : params_(&params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to a named parameter. Repeated calls return the same leaf.
  Var param(std::string_view name) {
    auto it = param_leaves_.find(std::string(name));
    if (it != param_leaves_.end()) return it->second;
    Var v = push(params_->at(name), true, {});
    nodes_[v.id].param_name = std::string(name);
    param_leaves_.emplace(std::string(name), v);
    return v;
  }

  Var constant(Tensor t) {
    check_finite("constant", t);
    return push(std::move(t), false, {});
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value[0]; }
  std::size_t size() const { return nodes_.size(); }

  // ---- primitives -------------------------------------------------------

  /// A * B
  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) shape_fail("matmul", A, B);
    Tensor C(A.rows(), B.cols());
    matmul_into(A, B, C);
    return push_op("matmul", std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      if (t.wants(a)) {
        Tensor& dA = t.grad_of(a.id);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t k = 0; k < A.cols(); ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < B.cols(); ++j) s += G(i, j) * B(k, j);
            dA(i, k) += s;
          }
      }
      if (t.wants(b)) {
        Tensor& dB = t.grad_of(b.id);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t k = 0; k < A.cols(); ++k) {
            const double aik = A(i, k);
            for (std::size_t j = 0; j < B.cols(); ++j) dB(k, j) += aik * G(i, j);
          }
      }
    });
  }

  /// A * B^T. Weight matrices are stored out x in, node features row-wise,
  /// so a linear map over all nodes is matmul_nt(X, W).
  Var matmul_nt(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.cols()) shape_fail("matmul_nt", A, B);
    Tensor C(A.rows(), B.rows());
    const std::size_t K = A.cols();
    for (std::size_t i = 0; i < A.rows(); ++i) {
      const double* ar = A.data() + i * K;
      for (std::size_t j = 0; j < B.rows(); ++j) {
        const double* br = B.data() + j * K;
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += ar[k] * br[k];
        C(i, j) = s;
      }
    }
    return push_op("matmul_nt", std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      const std::size_t K = A.cols();
      if (t.wants(a)) {
        Tensor& dA = t.grad_of(a.id);
        for (std::size_t i = 0; i < A.rows(); ++i) {
          double* da = dA.data() + i * K;
          for (std::size_t j = 0; j < B.rows(); ++j) {
            const double g = G(i, j);
            if (g == 0.0) continue;
            const double* br = B.data() + j * K;
            for (std::size_t k = 0; k < K; ++k) da[k] += g * br[k];
          }
        }
      }
      if (t.wants(b)) {
        Tensor& dB = t.grad_of(b.id);
        for (std::size_t i = 0; i < A.rows(); ++i) {
          const double* ar = A.data() + i * K;
          for (std::size_t j = 0; j < B.rows(); ++j) {
            const double g = G(i, j);
            if (g == 0.0) continue;
            double* db = dB.data() + j * K;
            for (std::size_t k = 0; k < K; ++k) db[k] += g * ar[k];
          }
        }
      }
    });
  }

  /// [A | B] along the feature axis.
  Var concat_cols(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rows() != B.rows()) shape_fail("concat_cols", A, B);
    Tensor C(A.rows(), A.cols() + B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      std::copy(A.row(i).begin(), A.row(i).end(), C.row(i).begin());
      std::copy(B.row(i).begin(), B.row(i).end(), C.row(i).begin() + A.cols());
    }
    return push_op("concat_cols", std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const std::size_t ca = t.value(a).cols();
      for (std::size_t i = 0; i < G.rows(); ++i) {
        auto g = G.row(i);
        if (t.wants(a)) {
          auto d = t.grad_of(a.id).row(i);
          for (std::size_t k = 0; k < ca; ++k) d[k] += g[k];
        }
        if (t.wants(b)) {
          auto d = t.grad_of(b.id).row(i);
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += g[ca + k];
        }
      }
    });
  }

  /// A stacked on top of B.
  Var concat_rows(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.cols()) shape_fail("concat_rows", A, B);
    std::vector<double> data;
    data.reserve(A.size() + B.size());
    data.insert(data.end(), A.values().begin(), A.values().end());
    data.insert(data.end(), B.values().begin(), B.values().end());
    Tensor C(A.rows() + B.rows(), A.cols(), std::move(data));
    return push_op("concat_rows", std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const std::size_t na = t.value(a).size();
      if (t.wants(a)) {
        Tensor& d = t.grad_of(a.id);
        for (std::size_t k = 0; k < na; ++k) d[k] += G[k];
      }
      if (t.wants(b)) {
        Tensor& d = t.grad_of(b.id);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += G[na + k];
      }
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("add", A, B);
    Tensor C = A;
    for (std::size_t k = 0; k < C.size(); ++k) C[k] += B[k];
    return push_op("add", std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      for (Var x : {a, b}) {
        if (!t.wants(x)) continue;
        Tensor& d = t.grad_of(x.id);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += G[k];
      }
    });
  }

  /// X + 1*b, with b a 1 x cols row added to every row.
  Var add_bias(Var x, Var b) {
    const Tensor& X = value(x);
    const Tensor& B = value(b);
    if (B.rows() != 1 || B.cols() != X.cols()) shape_fail("add_bias", X, B);
    Tensor C = X;
    for (std::size_t i = 0; i < C.rows(); ++i)
      for (std::size_t k = 0; k < C.cols(); ++k) C(i, k) += B[k];
    return push_op("add_bias", std::move(C), {x, b}, [x, b](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      if (t.wants(x)) {
        Tensor& d = t.grad_of(x.id);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += G[k];
      }
      if (t.wants(b)) {
        Tensor& d = t.grad_of(b.id);
        for (std::size_t i = 0; i < G.rows(); ++i)
          for (std::size_t k = 0; k < G.cols(); ++k) d[k] += G(i, k);
      }
    });
  }

  Var scale(Var x, double s) {
    Tensor C = value(x);
    for (double& v : C.values()) v *= s;
    return push_op("scale", std::move(C), {x}, [x, s](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      Tensor& d = t.grad_of(x.id);
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += s * G[k];
    });
  }

  /// Subgradient 0 at x = 0.
  Var relu(Var x) {
    Tensor C = value(x);
    for (double& v : C.values()) v = v > 0.0 ? v : 0.0;
    return push_op("relu", std::move(C), {x}, [x](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const Tensor& X = t.value(x);
      Tensor& d = t.grad_of(x.id);
      for (std::size_t k = 0; k < d.size(); ++k)
        if (X[k] > 0.0) d[k] += G[k];
    });
  }

  /// Elementwise product.
  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("mul", A, B);
    Tensor C = A;
    for (std::size_t k = 0; k < C.size(); ++k) C[k] *= B[k];
    return push_op("mul", std::move(C), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      if (t.wants(a)) {
        Tensor& d = t.grad_of(a.id);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += G[k] * B[k];
      }
      if (t.wants(b)) {
        Tensor& d = t.grad_of(b.id);
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += G[k] * A[k];
      }
    });
  }

  /// Row i of X scaled by w[i]; w is rows x 1.
  Var scale_rows(Var x, Var w) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    if (W.cols() != 1 || W.rows() != X.rows()) shape_fail("scale_rows", X, W);
    Tensor C = X;
    for (std::size_t i = 0; i < C.rows(); ++i)
      for (double& v : C.row(i)) v *= W[i];
    return push_op("scale_rows", std::move(C), {x, w}, [x, w](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const Tensor& X = t.value(x);
      const Tensor& W = t.value(w);
      if (t.wants(x)) {
        Tensor& d = t.grad_of(x.id);
        for (std::size_t i = 0; i < X.rows(); ++i)
          for (std::size_t k = 0; k < X.cols(); ++k) d(i, k) += W[i] * G(i, k);
      }
      if (t.wants(w)) {
        Tensor& d = t.grad_of(w.id);
        for (std::size_t i = 0; i < X.rows(); ++i) {
          double s = 0.0;
          for (std::size_t k = 0; k < X.cols(); ++k) s += G(i, k) * X(i, k);
          d[i] += s;
        }
      }
    });
  }

  /// rows x 1, each entry the sum of its row.
  Var row_sum(Var x) {
    const Tensor& X = value(x);
    Tensor C(X.rows(), 1);
    for (std::size_t i = 0; i < X.rows(); ++i) {
      double s = 0.0;
      for (double v : X.row(i)) s += v;
      C[i] = s;
    }
    return push_op("row_sum", std::move(C), {x}, [x](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      Tensor& d = t.grad_of(x.id);
      for (std::size_t i = 0; i < d.rows(); ++i)
        for (double& v : d.row(i)) v += G[i];
    });
  }

  /// 1x1 sum of all entries.
  Var sum(Var x) {
    double s = 0.0;
    for (double v : value(x).values()) s += v;
    return push_op("sum", Tensor::scalar(s), {x}, [x](Tape& t, std::size_t self) {
      const double g = t.grad_of(self)[0];
      for (double& v : t.grad_of(x.id).values()) v += g;
    });
  }

  /// 1x1 mean of all entries.
  Var mean(Var x) {
    const Tensor& X = value(x);
    if (X.size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : X.values()) s += v;
    const double n = static_cast<double>(X.size());
    return push_op("mean", Tensor::scalar(s / n), {x}, [x, n](Tape& t, std::size_t self) {
      const double g = t.grad_of(self)[0] / n;
      for (double& v : t.grad_of(x.id).values()) v += g;
    });
  }

  /// 1x1 mean of (pred - target)^2.
  Var squared_error(Var pred, Var target) {
    const Tensor& P = value(pred);
    const Tensor& T = value(target);
    if (!P.same_shape(T) || P.size() == 0) shape_fail("squared_error", P, T);
    double s = 0.0;
    for (std::size_t k = 0; k < P.size(); ++k) {
      const double r = P[k] - T[k];
      s += r * r;
    }
    const double n = static_cast<double>(P.size());
    return push_op("squared_error", Tensor::scalar(s / n), {pred, target},
                   [pred, target, n](Tape& t, std::size_t self) {
                     const double g = t.grad_of(self)[0];
                     const Tensor& P = t.value(pred);
                     const Tensor& T = t.value(target);
                     for (std::size_t k = 0; k < P.size(); ++k) {
                       const double d = 2.0 * (P[k] - T[k]) / n * g;
                       if (t.wants(pred)) t.grad_of(pred.id)[k] += d;
                       if (t.wants(target)) t.grad_of(target.id)[k] -= d;
                     }
                   });
  }

  /// Row k of the result is row index[k] of X.
  Var gather_rows(Var x, std::vector<std::size_t> index) {
    const Tensor& X = value(x);
    Tensor C(index.size(), X.cols());
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] >= X.rows()) {
        throw ShapeError("gather_rows: index " + std::to_string(index[k]) + " out of range for " +
                         X.shape_string());
      }
      auto src = X.row(index[k]);
      std::copy(src.begin(), src.end(), C.row(k).begin());
    }
    return push_op("gather_rows", std::move(C), {x},
                   [x, index = std::move(index)](Tape& t, std::size_t self) {
                     const Tensor& G = t.grad_of(self);
                     Tensor& d = t.grad_of(x.id);
                     for (std::size_t k = 0; k < index.size(); ++k) {
                       auto dst = d.row(index[k]);
                       auto g = G.row(k);
                       for (std::size_t c = 0; c < g.size(); ++c) dst[c] += g[c];
                     }
                   });
  }

  /// Y[target[k]] += coeff[k] * X[k], Y has `rows` rows. Rows never targeted stay 0.
  Var scatter_add_rows(Var x, std::vector<std::size_t> target, std::size_t rows,
                       std::vector<double> coeff) {
    const Tensor& X = value(x);
    if (target.size() != X.rows() || coeff.size() != X.rows()) {
      throw ShapeError("scatter_add_rows: " + std::to_string(target.size()) + " targets and " +
                       std::to_string(coeff.size()) + " coefficients for " + X.shape_string());
    }
    Tensor C(rows, X.cols());
    for (std::size_t k = 0; k < target.size(); ++k) {
      if (target[k] >= rows) throw ShapeError("scatter_add_rows: target out of range");
      auto dst = C.row(target[k]);
      auto src = X.row(k);
      const double c = coeff[k];
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += c * src[j];
    }
    return push_op("scatter_add_rows", std::move(C), {x},
                   [x, target = std::move(target), coeff = std::move(coeff)](Tape& t,
                                                                             std::size_t self) {
                     const Tensor& G = t.grad_of(self);
                     Tensor& d = t.grad_of(x.id);
                     for (std::size_t k = 0; k < target.size(); ++k) {
                       auto g = G.row(target[k]);
                       auto dst = d.row(k);
                       for (std::size_t j = 0; j < g.size(); ++j) dst[j] += coeff[k] * g[j];
                     }
                   });
  }

  /// x is n x 1; result is segments x 1 with the max of each segment's members.
  /// Empty segments yield 0. The gradient goes to one argmax, the lowest index
  /// on ties.
  Var segment_max(Var x, std::vector<std::size_t> segment, std::size_t segments) {
    const Tensor& X = value(x);
    if (X.cols() != 1 || segment.size() != X.rows()) {
      throw ShapeError("segment_max: " + std::to_string(segment.size()) + " segment ids for " +
                       X.shape_string());
    }
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> argmax(segments, none);
    Tensor C(segments, 1);
    for (std::size_t k = 0; k < segment.size(); ++k) {
      const std::size_t s = segment[k];
      if (s >= segments) throw ShapeError("segment_max: segment id out of range");
      if (argmax[s] == none || X[k] > X[argmax[s]]) argmax[s] = k;
    }
    for (std::size_t s = 0; s < segments; ++s) C[s] = argmax[s] == none ? 0.0 : X[argmax[s]];
    return push_op("segment_max", std::move(C), {x},
                   [x, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                     const Tensor& G = t.grad_of(self);
                     Tensor& d = t.grad_of(x.id);
                     for (std::size_t s = 0; s < argmax.size(); ++s)
                       if (argmax[s] != none) d[argmax[s]] += G[s];
                   });
  }

  /// 1 / max(x, eps) elementwise. Zero gradient where the guard is active.
  Var guarded_reciprocal(Var x, double eps) {
    Tensor C = value(x);
    for (double& v : C.values()) v = 1.0 / std::max(v, eps);
    return push_op("guarded_reciprocal", std::move(C), {x}, [x, eps](Tape& t, std::size_t self) {
      const Tensor& G = t.grad_of(self);
      const Tensor& X = t.value(x);
      Tensor& d = t.grad_of(x.id);
      for (std::size_t k = 0; k < d.size(); ++k)
        if (X[k] > eps) d[k] -= G[k] / (X[k] * X[k]);
    });
  }

  // ---- differentiation --------------------------------------------------

  /// Reverse sweep from a 1x1 output.
  void backward(Var out) {
    if (value(out).size() != 1) {
      throw ShapeError("backward: output must be 1x1, got " + value(out).shape_string());
    }
    for (auto& n : nodes_) {
      if (n.needs_grad) n.grad = Tensor(n.value.rows(), n.value.cols());
    }
    if (!nodes_[out.id].needs_grad) return;
    nodes_[out.id].grad[0] = 1.0;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
    differentiated_ = true;
  }

  /// d(out)/d(param) for every parameter in the store; parameters the program
  /// never touched get exact zeros.
  ParamStore gradients() const {
    ParamStore out = params_->zeros_like();
    if (!differentiated_) return out;
    for (const auto& [name, v] : param_leaves_) out.at(name) = nodes_[v.id].grad;
    return out;
  }

 private:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
    std::string param_name;
  };

  bool wants(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor& grad_of(std::size_t id) { return nodes_[id].grad; }

  Var push(Tensor value, bool needs_grad, Backward bw) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(bw), {}});
    return Var{nodes_.size() - 1};
  }

  Var push_op(const char* name, Tensor value, std::initializer_list<Var> inputs, Backward bw) {
    check_finite(name, value);
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_[v.id].needs_grad;
    return push(std::move(value), needs, needs ? std::move(bw) : Backward{});
  }

  static void check_finite(const char* name, const Tensor& t) {
    if (!t.all_finite()) throw NumericError(std::string(name) + ": non-finite value in output");
  }

  [[noreturn]] static void shape_fail(const char* name, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(name) + ": incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }

  static void matmul_into(const Tensor& A, const Tensor& B, Tensor& C) {
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t k = 0; k < A.cols(); ++k) {
        const double aik = A(i, k);
        for (std::size_t j = 0; j < B.cols(); ++j) C(i, j) += aik * B(k, j);
      }
  }

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> param_leaves_;
  bool differentiated_ = false;
};

struct GradResult {
  double value = 0.0;
  ParamStore grads;
};

/// Runs the program once forward, once backward.
template <typename Program>
GradResult forward_backward(Program&& program, const ParamStore& params) {
  Tape tape(params);
  Var out = program(tape);
  tape.backward(out);
  return {tape.scalar(out), tape.gradients()};
}

/// Forward only.
template <typename Program>
double evaluate(Program&& program, const ParamStore& params) {
  Tape tape(params);
  Var out = program(tape);
  if (tape.value(out).size() != 1) throw ShapeError("program output must be 1x1");
  return tape.scalar(out);
}

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed() const { return max_rel_error <= tol; }
};

/// Compares reverse-mode gradients against central differences, entry by
/// entry. Relative error is |g - fd| / max(1, |g|, |fd|).
template <typename Program>
GradCheckReport grad_check(Program&& program, const ParamStore& params, double step = 1e-5,
                           double tol = 1e-4) {
  if (params.total_size() >= 10000) {
    throw UsageError("grad_check: " + std::to_string(params.total_size()) +
                     " parameter entries, limit is 10000");
  }
  const GradResult analytic = forward_backward(program, params);
  GradCheckReport report;
  report.tol = tol;
  ParamStore probe = params;
  for (const auto& [name, tensor] : params) {
    Tensor& slot = probe.at(name);
    const Tensor& g = analytic.grads.at(name);
    for (std::size_t k = 0; k < tensor.size(); ++k) {
      const double orig = slot[k];
      slot[k] = orig + step;
      const double up = evaluate(program, probe);
      slot[k] = orig - step;
      const double down = evaluate(program, probe);
      slot[k] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite perturbed loss at " + name + "[" +
                           std::to_string(k) + "]");
      }
      const double fd = (up - down) / (2.0 * step);
      const double denom = std::max({1.0, std::abs(g[k]), std::abs(fd)});
      const double rel = std::abs(g[k] - fd) / denom;
      report.entries.push_back({name, k, g[k], fd, rel});
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  return report;
}

}  // namespace idsp

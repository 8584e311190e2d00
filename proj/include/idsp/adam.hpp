#pragma once

#include <cmath>
#include <cstdint>

#include "idsp/tensor.hpp"

namespace idsp {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// First and second moment estimates plus the step counter.
struct AdamState {
  ParamStore m;
  ParamStore v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update, in place. An empty state is initialized to
/// zeros on the first call.
inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state,
                      const AdamOptions& opt = {}) {
  if (!params.same_layout(grads)) throw ShapeError("adam_step: gradient layout does not match parameters");
  if (state.m.count() == 0) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
    state.step = 0;
  } else if (!params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw ShapeError("adam_step: optimizer state layout does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] + opt.weight_decay * p[k];
      m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
      v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

}  // namespace idsp

#pragma once

// Central finite-difference checker shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "latentscale/autodiff.hpp"
#include "latentscale/ops.hpp"
#include "latentscale/rng.hpp"

namespace latentscale::testing {

using num::Tape;
using num::Tensor;
using num::Var;

/// Builds a scalar from the input leaves. Must be deterministic: any RNG it
/// uses has to be re-created inside the function.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline Tensor random_tensor(num::RngStream& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Contracts an op output with a fixed random weight so every output element
/// contributes to the scalar being differentiated.
inline Var project(Tape& tape, Var out, std::uint64_t seed) {
  num::RngStream rng(seed, 0xfeed);
  Tensor w(out.value().shape());
  for (double& v : w.values()) v = rng.uniform() * 2.0 - 1.0;
  return num::sum(num::mul(out, tape.constant(std::move(w))));
}

/// Largest infinity-norm relative error between tape gradients and central
/// differences over all inputs: |g - fd|_inf / max(|g|_inf, |fd|_inf).
inline double gradient_error(const ScalarFn& fn, const std::vector<Tensor>& inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.variable(t));
  Var root = fn(tape, leaves);
  tape.backward(root);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t(false);
    std::vector<Var> ls;
    for (const Tensor& x : xs) ls.push_back(t.constant(x));
    return fn(t, ls).value().item();
  };

  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.has_grad(leaves[k].index) ? tape.grad(leaves[k]) : Tensor(inputs[k].shape(), 0.0);
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + h;
      const double up = eval(work);
      work[k][i] = x0 - h;
      const double down = eval(work);
      work[k][i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      diff = std::max(diff, std::abs(numeric - analytic[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
    }
    if (scale > 0.0) worst = std::max(worst, diff / scale);
  }
  return worst;
}

/// One named differentiable op with a random-instance generator.
struct GradCase {
  const char* name;
  std::function<std::vector<Tensor>(num::RngStream&)> inputs;
  ScalarFn fn;
};

inline std::vector<GradCase> op_gradient_cases() {
  using namespace latentscale::num;
  auto dim = [](RngStream& r, int lo, int hi) { return static_cast<std::size_t>(r.uniform_int(lo, hi)); };
  std::vector<GradCase> cases;
  cases.push_back({"matmul",
                   [dim](RngStream& r) {
                     const auto m = dim(r, 1, 5), k = dim(r, 1, 5), n = dim(r, 1, 5);
                     return std::vector<Tensor>{random_tensor(r, m, k), random_tensor(r, k, n)};
                   },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, matmul(x[0], x[1]), 1); }});
  cases.push_back({"add_broadcast",
                   [dim](RngStream& r) {
                     const auto m = dim(r, 1, 5), n = dim(r, 1, 5);
                     return std::vector<Tensor>{random_tensor(r, m, n), random_tensor(r, 1, n)};
                   },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, add(x[0], x[1]), 2); }});
  cases.push_back({"sub_mul_scale",
                   [dim](RngStream& r) {
                     const auto m = dim(r, 1, 5), n = dim(r, 1, 5);
                     return std::vector<Tensor>{random_tensor(r, m, n), random_tensor(r, m, n)};
                   },
                   [](Tape& t, const std::vector<Var>& x) {
                     return project(t, scale(mul(sub(x[0], x[1]), x[0]), 1.7), 3);
                   }});
  cases.push_back({"gelu",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 1, 4), dim(r, 1, 6), -3, 3)}; },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, gelu(x[0]), 4); }});
  cases.push_back({"relu",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 1, 4), dim(r, 1, 6), -3, 3)}; },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, relu(x[0]), 5); }});
  cases.push_back({"sigmoid",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 1, 4), dim(r, 1, 6), -4, 4)}; },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, sigmoid(x[0]), 6); }});
  cases.push_back({"layer_norm",
                   [dim](RngStream& r) {
                     const auto m = dim(r, 1, 4), n = dim(r, 2, 7);
                     return std::vector<Tensor>{random_tensor(r, m, n, -2, 2), random_tensor(r, 1, n, 0.5, 1.5),
                                                random_tensor(r, 1, n)};
                   },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, layer_norm(x[0], x[1], x[2]), 7); }});
  cases.push_back({"softmax_rows",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 1, 4), dim(r, 1, 6), -2, 2)}; },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, softmax(x[0], 1), 8); }});
  cases.push_back({"softmax_cols",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 1, 4), dim(r, 1, 6), -2, 2)}; },
                   [](Tape& t, const std::vector<Var>& x) { return project(t, softmax(x[0], 0), 9); }});
  cases.push_back({"dropout",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 1, 4), dim(r, 1, 6))}; },
                   [](Tape& t, const std::vector<Var>& x) {
                     RngStream drop(7, 7);
                     return project(t, dropout(x[0], 0.3, drop, true), 10);
                   }});
  cases.push_back({"embedding",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 3, 6), dim(r, 1, 5))}; },
                   [](Tape& t, const std::vector<Var>& x) {
                     const int ids[] = {0, 2, 1, 2};
                     return project(t, embedding(x[0], ids), 11);
                   }});
  cases.push_back({"concat_slice",
                   [dim](RngStream& r) {
                     const auto n = dim(r, 2, 5);
                     return std::vector<Tensor>{random_tensor(r, dim(r, 1, 3), n), random_tensor(r, dim(r, 1, 3), n)};
                   },
                   [](Tape& t, const std::vector<Var>& x) {
                     Var c = concat_rows(x[0], x[1]);
                     Var s = slice_cols(slice_rows(c, 1, c.rows()), 1, c.cols());
                     return project(t, s, 12);
                   }});
  cases.push_back({"causal_attention",
                   [dim](RngStream& r) {
                     const auto heads = dim(r, 1, 3), hd = dim(r, 1, 3), n = dim(r, 1, 3), extra = dim(r, 0, 3);
                     const auto d = heads * hd, m = n + extra;
                     return std::vector<Tensor>{random_tensor(r, n, d), random_tensor(r, m, d), random_tensor(r, m, d),
                                                Tensor::scalar(static_cast<double>(heads))};
                   },
                   [](Tape& t, const std::vector<Var>& x) {
                     const auto heads = static_cast<std::size_t>(std::lround(x[3].value().item()));
                     return project(t, causal_attention(x[0], x[1], x[2], heads), 13);
                   }});
  cases.push_back({"causal_attention_dropout",
                   [dim](RngStream& r) {
                     const auto heads = dim(r, 1, 2), hd = dim(r, 1, 3), n = dim(r, 1, 3), extra = dim(r, 0, 2);
                     const auto d = heads * hd, m = n + extra;
                     return std::vector<Tensor>{random_tensor(r, n, d), random_tensor(r, m, d), random_tensor(r, m, d),
                                                Tensor::scalar(static_cast<double>(heads))};
                   },
                   [](Tape& t, const std::vector<Var>& x) {
                     RngStream drop(3, 9);
                     const auto heads = static_cast<std::size_t>(std::lround(x[3].value().item()));
                     return project(t, causal_attention(x[0], x[1], x[2], heads, {0.25, &drop, true}), 14);
                   }});
  cases.push_back({"mean",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, dim(r, 1, 4), dim(r, 1, 4))}; },
                   [](Tape&, const std::vector<Var>& x) { return mean(x[0]); }});
  cases.push_back({"binary_cross_entropy",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, 1, dim(r, 1, 6), 0.05, 0.95)}; },
                   [](Tape&, const std::vector<Var>& x) {
                     std::vector<double> labels(x[0].value().size());
                     for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(i % 2);
                     return binary_cross_entropy(x[0], labels);
                   }});
  cases.push_back({"mse_loss",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, 1, dim(r, 1, 6))}; },
                   [](Tape&, const std::vector<Var>& x) {
                     std::vector<double> targets(x[0].value().size(), 0.25);
                     return mse_loss(x[0], targets);
                   }});
  cases.push_back({"token_cross_entropy",
                   [dim](RngStream& r) { return std::vector<Tensor>{random_tensor(r, 4, dim(r, 3, 6), -2, 2)}; },
                   [](Tape&, const std::vector<Var>& x) {
                     const int targets[] = {1, -1, 0, 2};
                     return token_cross_entropy(x[0], targets);
                   }});
  return cases;
}

}  // namespace latentscale::testing

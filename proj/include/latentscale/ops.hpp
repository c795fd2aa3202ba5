#pragma once

#include <span>
#include <vector>

#include "latentscale/autodiff.hpp"
#include "latentscale/rng.hpp"

namespace latentscale::num {

/// Probability clamp applied before taking logs in binary cross-entropy.
inline constexpr double kProbEps = 1e-7;

// Differentiable ops. All of them treat operands as [rows x cols] matrices.

Var matmul(Var a, Var b);
/// Elementwise a + b. `b` may also be a single row broadcast over a's rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);

Var gelu(Var x);
Var relu(Var x);
Var sigmoid(Var x);

/// Row-wise layer normalization (population variance) with affine gain/bias.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Softmax along axis 1 (within rows) or axis 0 (within columns).
Var softmax(Var x, int axis = 1);

/// Inverted dropout. Returns `x` itself (same node) when disabled or rate == 0.
Var dropout(Var x, double rate, RngStream& rng, bool enabled);

/// Gathers rows of `table`.
Var embedding(Var table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(Var a, Var b);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var slice_cols(Var x, std::size_t begin, std::size_t end);

/// Dropout configuration for the attention probabilities.
struct AttentionDropout {
  double rate = 0.0;
  RngStream* rng = nullptr;
  bool enabled = false;
};

/// Multi-head scaled dot-product attention. q is [n x d]; k and v are
/// [m x d] with m >= n, and query row i sits at absolute position m - n + i,
/// attending to key rows 0..m-n+i.
Var causal_attention(Var q, Var k, Var v, std::size_t heads, AttentionDropout drop = {});

Var sum(Var x);
Var mean(Var x);

/// Mean binary cross-entropy; predictions are clamped to [eps, 1 - eps].
Var binary_cross_entropy(Var pred, std::span<const double> labels);
/// Mean squared error.
Var mse_loss(Var pred, std::span<const double> targets);
/// Mean token-level cross-entropy over logits rows; rows whose target is
/// negative are excluded from the loss and receive zero gradient.
Var token_cross_entropy(Var logits, std::span<const int> targets);

// Plain scalar forms.
double cross_entropy(double pred, double label);
double mse(double pred, double target);

/// Value-level softmax (no tape).
Tensor softmax(const Tensor& x, int axis = 1);
/// log-softmax of one row.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace latentscale::num

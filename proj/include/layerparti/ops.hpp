// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "layerparti/rng.hpp"
#include "layerparti/tensor.hpp"

LAYERPARTI_BEGIN_NAMESPACE
namespace ops {

// Every op records itself on Tape::active() when recording is enabled and at
// least one input requires a gradient. Outputs of unrecorded ops are constants.

/// a[..., k] x b[k, n] -> [..., n]; leading dimensions of `a` are flattened into rows.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
/// x[..., n] + bias[n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
/// Sum of all entries, shape [1].
Tensor sum(const Tensor& x);
/// Same values, new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// Tanh-approximated GELU.
Tensor gelu(const Tensor& x);

/// Softmax over the last axis, stabilized by max-subtraction.
Tensor softmax(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5f);

/// Inverted dropout. Identity (same handle) when !training or rate == 0.
/// Throws ConfigError unless 0 <= rate < 1.
Tensor dropout(const Tensor& x, Real rate, Rng& rng, bool training);

/// Rows of x viewed as [rows, x.dim(-1)], picked by index -> [indices.size(), d].
/// Serves both embedding lookup and [CLS]-position selection.
Tensor gather_rows(const Tensor& x, std::span<const std::int32_t> indices);

/// Scaled dot-product multi-head attention core over already-projected
/// q, k, v of shape [b, L, d]. key_mask[b*L] is 1 for real tokens; masked keys
/// get zero weight. Optionally copies the attention weights, laid out
/// [b, heads, L, L], into `probs_out`.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> key_mask,
                 std::size_t n_heads, std::vector<Real>* probs_out = nullptr);

/// Mean over rows of -log softmax(logits)[label], logits [b, k].
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

/// Mean over all entries of (a - target)^2. `target` is a constant: no
/// gradient is ever recorded for it, whatever its requires_grad flag.
Tensor mse(const Tensor& a, const Tensor& target);

}  // namespace ops
LAYERPARTI_END_NAMESPACE

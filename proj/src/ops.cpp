// SPDX-License-Identifier: Apache-2.0
#include "layerparti/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "layerparti/errors.hpp"

LAYERPARTI_BEGIN_NAMESPACE
namespace ops {

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

std::vector<Tensor> grad_inputs_of(std::initializer_list<const Tensor*> inputs) {
    std::vector<Tensor> out;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) out.push_back(*t);
    }
    return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

Shape with_last(Shape s, std::size_t last) {
    s.back() = last;
    return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() != 2 || a.dim(-1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                             shape_to_string(b.shape()));
    }
    const std::size_t k = b.dim(0), n = b.dim(1), m = a.numel() / k;
    std::vector<Real> c(m * n, 0.0f);
    {
        const Real* A = a.data().data();
        const Real* B = b.data().data();
        for (std::size_t i = 0; i < m; ++i) {
            Real* crow = c.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const Real av = A[i * k + p];
                const Real* brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    Tensor out = Tensor::from(with_last(a.shape(), n), std::move(c), should_record({&a, &b}));
    if (out.requires_grad()) {
        Tape::active().record("matmul", grad_inputs_of({&a, &b}), out, [a, b, m, k, n](std::span<const Real> g) mutable {
            const Real* B = b.data().data();
            const Real* A = a.data().data();
            if (a.requires_grad()) {
                auto ga = a.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real* grow = g.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const Real* brow = B + p * n;
                        Real acc = 0.0f;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                auto gb = b.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const Real* grow = g.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const Real av = A[i * k + p];
                        Real* gbrow = gb.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<Real> c(a.numel());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] + b.data()[i];
    Tensor out = Tensor::from(a.shape(), std::move(c), should_record({&a, &b}));
    if (out.requires_grad()) {
        Tape::active().record("add", grad_inputs_of({&a, &b}), out, [a, b](std::span<const Real> g) mutable {
            for (const Tensor* t : {&a, &b}) {
                if (!t->requires_grad()) continue;
                auto gt = t->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || bias.dim(0) != x.dim(-1)) {
        throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                             shape_to_string(x.shape()));
    }
    const std::size_t n = bias.numel();
    std::vector<Real> c(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += bias.data()[i % n];
    Tensor out = Tensor::from(x.shape(), std::move(c), should_record({&x, &bias}));
    if (out.requires_grad()) {
        Tape::active().record("add_bias", grad_inputs_of({&x, &bias}), out,
                              [x, bias, n](std::span<const Real> g) mutable {
                                  if (x.requires_grad()) {
                                      auto gx = x.ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                  }
                                  if (bias.requires_grad()) {
                                      auto gb = bias.ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                                  }
                              });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<Real> c(a.numel());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] * b.data()[i];
    Tensor out = Tensor::from(a.shape(), std::move(c), should_record({&a, &b}));
    if (out.requires_grad()) {
        Tape::active().record("mul", grad_inputs_of({&a, &b}), out, [a, b](std::span<const Real> g) mutable {
            if (a.requires_grad()) {
                auto ga = a.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto gb = b.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, Real factor) {
    std::vector<Real> c(x.data().begin(), x.data().end());
    for (auto& v : c) v *= factor;
    Tensor out = Tensor::from(x.shape(), std::move(c), should_record({&x}));
    if (out.requires_grad()) {
        Tape::active().record("scale", {x}, out, [x, factor](std::span<const Real> g) mutable {
            auto gx = x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Real acc = 0.0f;
    for (Real v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc, should_record({&x}));
    if (out.requires_grad()) {
        Tape::active().record("sum", {x}, out, [x](std::span<const Real> g) mutable {
            auto gx = x.ensure_grad();
            for (auto& v : gx) v += g[0];
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
    }
    Tensor out = Tensor::from(std::move(shape), std::vector<Real>(x.data().begin(), x.data().end()),
                              should_record({&x}));
    if (out.requires_grad()) {
        Tape::active().record("reshape", {x}, out, [x](std::span<const Real> g) mutable {
            auto gx = x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    constexpr Real kAlpha = 0.044715f;
    const Real c = std::sqrt(Real(2) / std::numbers::pi_v<Real>);
    std::vector<Real> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const Real v = x.data()[i];
        y[i] = 0.5f * v * (1.0f + std::tanh(c * (v + kAlpha * v * v * v)));
    }
    Tensor out = Tensor::from(x.shape(), std::move(y), should_record({&x}));
    if (out.requires_grad()) {
        Tape::active().record("gelu", {x}, out, [x, c](std::span<const Real> g) mutable {
            auto gx = x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const Real v = x.data()[i];
                const Real t = std::tanh(c * (v + kAlpha * v * v * v));
                const Real d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * c * (1.0f + 3.0f * kAlpha * v * v);
                gx[i] += g[i] * d;
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x) {
    const std::size_t k = x.dim(-1), rows = x.numel() / k;
    std::vector<Real> y(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = x.data().data() + r * k;
        Real* o = y.data() + r * k;
        const Real mx = *std::max_element(in, in + k);
        Real denom = 0.0f;
        for (std::size_t j = 0; j < k; ++j) {
            o[j] = std::exp(in[j] - mx);
            denom += o[j];
        }
        for (std::size_t j = 0; j < k; ++j) o[j] /= denom;
    }
    Tensor out = Tensor::from(x.shape(), std::move(y), should_record({&x}));
    if (out.requires_grad()) {
        Tensor probs = out;
        Tape::active().record("softmax", {x}, out, [x, probs, k, rows](std::span<const Real> g) mutable {
            auto gx = x.ensure_grad();
            const auto p = probs.data();
            for (std::size_t r = 0; r < rows; ++r) {
                Real dot = 0.0f;
                for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * p[r * k + j];
                for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += p[r * k + j] * (g[r * k + j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    const std::size_t d = x.dim(-1), rows = x.numel() / d;
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm: gamma/beta " + shape_to_string(gamma.shape()) + "/" +
                             shape_to_string(beta.shape()) + " do not match " + shape_to_string(x.shape()));
    }
    std::vector<Real> y(x.numel()), xhat(x.numel()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = x.data().data() + r * d;
        Real mean = 0.0f;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<Real>(d);
        Real var = 0.0f;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<Real>(d);
        rstd[r] = 1.0f / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (in[j] - mean) * rstd[r];
            y[r * d + j] = gamma.data()[j] * xhat[r * d + j] + beta.data()[j];
        }
    }
    Tensor out = Tensor::from(x.shape(), std::move(y), should_record({&x, &gamma, &beta}));
    if (out.requires_grad()) {
        Tape::active().record(
            "layer_norm", grad_inputs_of({&x, &gamma, &beta}), out,
            [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), d, rows](std::span<const Real> g) mutable {
                if (gamma.requires_grad()) {
                    auto gg = gamma.ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
                if (beta.requires_grad()) {
                    auto gb = beta.ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                    }
                }
                if (!x.requires_grad()) return;
                auto gx = x.ensure_grad();
                const auto gam = gamma.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    Real mean_dxhat = 0.0f, mean_dxhat_xhat = 0.0f;
                    for (std::size_t j = 0; j < d; ++j) {
                        const Real dxh = g[r * d + j] * gam[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[r * d + j];
                    }
                    mean_dxhat /= static_cast<Real>(d);
                    mean_dxhat_xhat /= static_cast<Real>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const Real dxh = g[r * d + j] * gam[j];
                        gx[r * d + j] += rstd[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
                    }
                }
            });
    }
    return out;
}

Tensor dropout(const Tensor& x, Real rate, Rng& rng, bool training) {
    if (!(rate >= 0.0f && rate < 1.0f)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0f) return x;
    const Real keep_scale = 1.0f / (1.0f - rate);
    std::vector<Real> mask(x.numel());
    for (auto& m : mask) m = rng.uniform() < rate ? 0.0f : keep_scale;
    std::vector<Real> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * mask[i];
    Tensor out = Tensor::from(x.shape(), std::move(y), should_record({&x}));
    if (out.requires_grad()) {
        Tape::active().record("dropout", {x}, out, [x, mask = std::move(mask)](std::span<const Real> g) mutable {
            auto gx = x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::int32_t> indices) {
    const std::size_t d = x.dim(-1), rows = x.numel() / d;
    if (indices.empty()) throw UsageError("gather_rows: empty index list");
    std::vector<Real> y(indices.size() * d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto r = indices[i];
        if (r < 0 || static_cast<std::size_t>(r) >= rows) {
            throw InputError("gather_rows: index " + std::to_string(r) + " outside [0, " + std::to_string(rows) + ")");
        }
        std::copy_n(x.data().data() + static_cast<std::size_t>(r) * d, d, y.data() + i * d);
    }
    Tensor out = Tensor::from({indices.size(), d}, std::move(y), should_record({&x}));
    if (out.requires_grad()) {
        Tape::active().record("gather_rows", {x}, out,
                              [x, idx = std::vector<std::int32_t>(indices.begin(), indices.end()),
                               d](std::span<const Real> g) mutable {
                                  auto gx = x.ensure_grad();
                                  for (std::size_t i = 0; i < idx.size(); ++i) {
                                      Real* dst = gx.data() + static_cast<std::size_t>(idx[i]) * d;
                                      for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
                                  }
                              });
    }
    return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> key_mask,
                 std::size_t n_heads, std::vector<Real>* probs_out) {
    require_same_shape("attention", q, k);
    require_same_shape("attention", q, v);
    if (q.rank() != 3) throw DimensionError("attention: expected [b, L, d], got " + shape_to_string(q.shape()));
    const std::size_t b = q.dim(0), L = q.dim(1), d = q.dim(2);
    if (n_heads == 0 || d % n_heads != 0) {
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                             " heads");
    }
    if (key_mask.size() != b * L) throw DimensionError("attention: key mask size does not match [b, L]");
    const std::size_t dh = d / n_heads;
    const Real inv_sqrt = 1.0f / std::sqrt(static_cast<Real>(dh));

    // probs layout [b, h, i, j]
    std::vector<Real> probs(b * n_heads * L * L, 0.0f);
    std::vector<Real> y(q.numel(), 0.0f);
    const Real* Q = q.data().data();
    const Real* K = k.data().data();
    const Real* V = v.data().data();
    for (std::size_t bi = 0; bi < b; ++bi) {
        const std::uint8_t* mask = key_mask.data() + bi * L;
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < L; ++i) {
                Real* p = probs.data() + ((bi * n_heads + h) * L + i) * L;
                const Real* qi = Q + (bi * L + i) * d + h * dh;
                Real mx = -std::numeric_limits<Real>::infinity();
                for (std::size_t j = 0; j < L; ++j) {
                    if (!mask[j]) continue;
                    const Real* kj = K + (bi * L + j) * d + h * dh;
                    Real s = 0.0f;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    p[j] = s * inv_sqrt;
                    mx = std::max(mx, p[j]);
                }
                if (mx == -std::numeric_limits<Real>::infinity()) continue;  // no visible key: output stays zero
                Real denom = 0.0f;
                for (std::size_t j = 0; j < L; ++j) {
                    if (!mask[j]) continue;
                    p[j] = std::exp(p[j] - mx);
                    denom += p[j];
                }
                Real* yi = y.data() + (bi * L + i) * d + h * dh;
                for (std::size_t j = 0; j < L; ++j) {
                    if (!mask[j]) continue;
                    p[j] /= denom;
                    const Real* vj = V + (bi * L + j) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) yi[c] += p[j] * vj[c];
                }
            }
        }
    }
    if (probs_out) *probs_out = probs;
    Tensor out = Tensor::from(q.shape(), std::move(y), should_record({&q, &k, &v}));
    if (out.requires_grad()) {
        Tape::active().record(
            "attention", grad_inputs_of({&q, &k, &v}), out,
            [q, k, v, probs = std::move(probs), b, L, d, dh, n_heads, inv_sqrt](std::span<const Real> g) mutable {
                std::span<Real> gq, gk, gv;
                if (q.requires_grad()) gq = q.ensure_grad();
                if (k.requires_grad()) gk = k.ensure_grad();
                if (v.requires_grad()) gv = v.ensure_grad();
                const Real* Q = q.data().data();
                const Real* K = k.data().data();
                const Real* V = v.data().data();
                std::vector<Real> dp(L);
                for (std::size_t bi = 0; bi < b; ++bi) {
                    for (std::size_t h = 0; h < n_heads; ++h) {
                        for (std::size_t i = 0; i < L; ++i) {
                            const Real* p = probs.data() + ((bi * n_heads + h) * L + i) * L;
                            const Real* gi = g.data() + (bi * L + i) * d + h * dh;
                            Real dot = 0.0f;
                            for (std::size_t j = 0; j < L; ++j) {
                                dp[j] = 0.0f;
                                if (p[j] == 0.0f) continue;
                                const Real* vj = V + (bi * L + j) * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) dp[j] += gi[c] * vj[c];
                                dot += p[j] * dp[j];
                                if (!gv.empty()) {
                                    Real* gvj = gv.data() + (bi * L + j) * d + h * dh;
                                    for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gi[c];
                                }
                            }
                            const Real* qi = Q + (bi * L + i) * d + h * dh;
                            for (std::size_t j = 0; j < L; ++j) {
                                if (p[j] == 0.0f) continue;
                                const Real ds = p[j] * (dp[j] - dot) * inv_sqrt;
                                const Real* kj = K + (bi * L + j) * d + h * dh;
                                if (!gq.empty()) {
                                    Real* gqi = gq.data() + (bi * L + i) * d + h * dh;
                                    for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                                }
                                if (!gk.empty()) {
                                    Real* gkj = gk.data() + (bi * L + j) * d + h * dh;
                                    for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                                }
                            }
                        }
                    }
                }
            });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw DimensionError("cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    std::vector<Real> probs(b * k);
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        const auto y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
        }
        const Real* in = logits.data().data() + r * k;
        const Real mx = *std::max_element(in, in + k);
        Real denom = 0.0f;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(in[j] - mx);
        const Real lse = mx + std::log(denom);
        total += static_cast<double>(lse - in[y]);
        for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(in[j] - lse);
    }
    Tensor out = Tensor::scalar(static_cast<Real>(total / static_cast<double>(b)), should_record({&logits}));
    if (out.requires_grad()) {
        Tape::active().record("cross_entropy", {logits}, out,
                              [logits, probs = std::move(probs), lab = std::vector<std::int32_t>(labels.begin(), labels.end()),
                               b, k](std::span<const Real> g) mutable {
                                  auto gl = logits.ensure_grad();
                                  const Real s = g[0] / static_cast<Real>(b);
                                  for (std::size_t r = 0; r < b; ++r) {
                                      for (std::size_t j = 0; j < k; ++j) {
                                          const Real onehot = static_cast<std::size_t>(lab[r]) == j ? 1.0f : 0.0f;
                                          gl[r * k + j] += s * (probs[r * k + j] - onehot);
                                      }
                                  }
                              });
    }
    return out;
}

Tensor mse(const Tensor& a, const Tensor& target) {
    require_same_shape("mse", a, target);
    const std::size_t n = a.numel();
    std::vector<Real> diff(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = a.data()[i] - target.data()[i];
        total += static_cast<double>(diff[i]) * diff[i];
    }
    Tensor out = Tensor::scalar(static_cast<Real>(total / static_cast<double>(n)), should_record({&a}));
    if (out.requires_grad()) {
        Tape::active().record("mse", {a}, out, [a, diff = std::move(diff), n](std::span<const Real> g) mutable {
            auto ga = a.ensure_grad();
            const Real s = 2.0f * g[0] / static_cast<Real>(n);
            for (std::size_t i = 0; i < n; ++i) ga[i] += s * diff[i];
        });
    }
    return out;
}

}  // namespace ops
LAYERPARTI_END_NAMESPACE

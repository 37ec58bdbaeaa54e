#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "bev/tensor.hpp"

// Differentiable operations. Each op computes its output eagerly and, when an
// operand is bound to a tape, records a pull closure that routes the output
// gradient back to the operands. All loops run in a fixed order, so forward
// and backward values are deterministic for a given tape.

namespace bev {

namespace detail {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapRM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapRM = Eigen::Map<const MatRM<S>>;

template <class S>
Tape<S>* common_tape(std::initializer_list<const Tensor<S>*> ts) {
    Tape<S>* tape = nullptr;
    for (const Tensor<S>* t : ts) {
        if (!t->on_tape()) continue;
        BEV_CHECK(!tape || tape == t->tape(), "op: operands are bound to different tapes");
        tape = t->tape();
    }
    return tape;
}

inline std::vector<long long> row_major_strides(const std::vector<int>& shape) {
    std::vector<long long> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
    return s;
}

enum class BinOp { Add, Sub, Mul };

// Equal shapes, or either operand a one-element tensor (scalar broadcast).
// No other broadcasting; callers reshape explicitly.
template <class S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, BinOp op) {
    BEV_CHECK(a.defined() && b.defined(), "op: undefined operand");
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    BEV_CHECK(a.shape() == b.shape() || a_scalar || b_scalar,
              "op: shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()),
              " are neither equal nor scalar-broadcastable");
    const bool lead_a = a.shape() == b.shape() || !a_scalar;
    Tensor<S> out(lead_a ? a.shape() : b.shape());
    const long long n = out.numel();
    const long long sa = (a_scalar && n > 1) ? 0 : 1;
    const long long sb = (b_scalar && n > 1) ? 0 : 1;
    {
        const S* pa = a.data();
        const S* pb = b.data();
        S* po = out.data();
        switch (op) {
            case BinOp::Add:
                for (long long i = 0; i < n; ++i) po[i] = pa[i * sa] + pb[i * sb];
                break;
            case BinOp::Sub:
                for (long long i = 0; i < n; ++i) po[i] = pa[i * sa] - pb[i * sb];
                break;
            case BinOp::Mul:
                for (long long i = 0; i < n; ++i) po[i] = pa[i * sa] * pb[i * sb];
                break;
        }
    }
    Tape<S>* tape = common_tape<S>({&a, &b});
    if (!tape) return out;
    const int na = a.on_tape() ? a.node() : -1;
    const int nb = b.on_tape() ? b.node() : -1;
    return tape->emit(std::move(out), [na, nb, sa, sb, n, op, a, b](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        if (na >= 0) {
            std::vector<S>& ga = tp.grad_buf(na);
            if (op == BinOp::Mul) {
                const S* pb = b.data();
                for (long long i = 0; i < n; ++i) ga[static_cast<size_t>(i * sa)] += go[static_cast<size_t>(i)] * pb[i * sb];
            } else {
                for (long long i = 0; i < n; ++i) ga[static_cast<size_t>(i * sa)] += go[static_cast<size_t>(i)];
            }
        }
        if (nb >= 0) {
            std::vector<S>& gb = tp.grad_buf(nb);
            if (op == BinOp::Mul) {
                const S* pa = a.data();
                for (long long i = 0; i < n; ++i) gb[static_cast<size_t>(i * sb)] += go[static_cast<size_t>(i)] * pa[i * sa];
            } else if (op == BinOp::Sub) {
                for (long long i = 0; i < n; ++i) gb[static_cast<size_t>(i * sb)] -= go[static_cast<size_t>(i)];
            } else {
                for (long long i = 0; i < n; ++i) gb[static_cast<size_t>(i * sb)] += go[static_cast<size_t>(i)];
            }
        }
    });
}

template <class S, class Fwd, class Bwd>
Tensor<S> unary(const Tensor<S>& x, Fwd fwd, Bwd dydx_from_y_and_x) {
    BEV_CHECK(x.defined(), "op: undefined operand");
    Tensor<S> out(x.shape());
    const long long n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    for (long long i = 0; i < n; ++i) po[i] = fwd(px[i]);
    if (!x.on_tape()) return out;
    const int nx = x.node();
    Tensor<S> y = out;  // shares payload
    return x.tape()->emit(std::move(out),
                          [nx, n, x, y, dydx_from_y_and_x](Tape<S>& tp, int self) {
                              const std::vector<S>& go = tp.grad_view(self);
                              std::vector<S>& gx = tp.grad_buf(nx);
                              const S* px = x.data();
                              const S* py = y.data();
                              for (long long i = 0; i < n; ++i)
                                  gx[static_cast<size_t>(i)] +=
                                      go[static_cast<size_t>(i)] * dydx_from_y_and_x(py[i], px[i]);
                          });
}

}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::BinOp::Add);
}
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::BinOp::Sub);
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary(a, b, detail::BinOp::Mul);
}
template <class S>
Tensor<S> add(const Tensor<S>& a, S c) {
    return detail::unary(a, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, S c) {
    return detail::unary(a, [c](S v) { return v * c; }, [c](S, S) { return c; });
}
template <class S>
Tensor<S> neg(const Tensor<S>& a) {
    return mul(a, S(-1));
}

template <class S>
Tensor<S> exp(const Tensor<S>& x) {
    return detail::unary(x, [](S v) { return std::exp(v); }, [](S y, S) { return y; });
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    // subgradient 0 at the kink
    return detail::unary(x, [](S v) { return v > S(0) ? v : S(0); },
                         [](S, S v) { return v > S(0) ? S(1) : S(0); });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    auto fwd = [](S v) {
        return v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                         : std::exp(v) / (S(1) + std::exp(v));
    };
    return detail::unary(x, fwd, [](S y, S) { return y * (S(1) - y); });
}

/// Softmax along `axis`; per-slice sums are 1 up to rounding.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    BEV_CHECK(x.defined(), "softmax: undefined operand");
    BEV_CHECK(axis >= 0 && axis < x.ndim(), "softmax: axis ", axis, " out of range for shape ",
              shape_str(x.shape()));
    const auto strides = detail::row_major_strides(x.shape());
    const long long inner = strides[static_cast<size_t>(axis)];
    const long long len = x.dim(axis);
    const long long outer = x.numel() / (inner * len);
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    for (long long o = 0; o < outer; ++o) {
        for (long long i = 0; i < inner; ++i) {
            const long long base = o * len * inner + i;
            S mx = px[base];
            for (long long j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
            S sum = S(0);
            for (long long j = 0; j < len; ++j) {
                S e = std::exp(px[base + j * inner] - mx);
                po[base + j * inner] = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (long long j = 0; j < len; ++j) po[base + j * inner] *= inv;
        }
    }
    if (!x.on_tape()) return out;
    const int nx = x.node();
    Tensor<S> y = out;
    return x.tape()->emit(std::move(out), [nx, inner, len, outer, y](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        std::vector<S>& gx = tp.grad_buf(nx);
        const S* py = y.data();
        for (long long o = 0; o < outer; ++o) {
            for (long long i = 0; i < inner; ++i) {
                const long long base = o * len * inner + i;
                S dot = S(0);
                for (long long j = 0; j < len; ++j)
                    dot += go[static_cast<size_t>(base + j * inner)] * py[base + j * inner];
                for (long long j = 0; j < len; ++j) {
                    const long long k = base + j * inner;
                    gx[static_cast<size_t>(k)] += py[k] * (go[static_cast<size_t>(k)] - dot);
                }
            }
        }
    });
}

/// Mean over all elements; result is a rank-0 scalar tensor.
template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    BEV_CHECK(x.defined(), "mean: undefined operand");
    const long long n = x.numel();
    S acc = S(0);
    const S* px = x.data();
    for (long long i = 0; i < n; ++i) acc += px[i];
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
    if (!x.on_tape()) return out;
    const int nx = x.node();
    return x.tape()->emit(std::move(out), [nx, n](Tape<S>& tp, int self) {
        const S g = tp.grad_view(self)[0] / static_cast<S>(n);
        std::vector<S>& gx = tp.grad_buf(nx);
        for (long long i = 0; i < n; ++i) gx[static_cast<size_t>(i)] += g;
    });
}

/// Sum over all elements; result is a rank-0 scalar tensor.
template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    BEV_CHECK(x.defined(), "sum: undefined operand");
    const long long n = x.numel();
    S acc = S(0);
    const S* px = x.data();
    for (long long i = 0; i < n; ++i) acc += px[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (!x.on_tape()) return out;
    const int nx = x.node();
    return x.tape()->emit(std::move(out), [nx, n](Tape<S>& tp, int self) {
        const S g = tp.grad_view(self)[0];
        std::vector<S>& gx = tp.grad_buf(nx);
        for (long long i = 0; i < n; ++i) gx[static_cast<size_t>(i)] += g;
    });
}

/// Same data, new shape (element count preserved). Pure metadata: the result
/// shares both the payload and, when bound, the tape node of its input.
template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<int> shape) {
    BEV_CHECK(x.defined(), "reshape: undefined operand");
    Tensor<S> out = x.reshaped_view(std::move(shape));
    BEV_CHECK(out.numel() == x.numel(), "reshape: cannot view ", shape_str(x.shape()), " as ",
              shape_str(out.shape()));
    return out;
}

namespace detail {

// cache-blocked out[c][r] = in[r][c] for rows×cols row-major in; contiguous
// writes, block-resident strided reads
template <class S, bool Accumulate>
void transpose2d(const S* in, S* out, long long rows, long long cols) {
    constexpr long long kBlock = 64;
    for (long long r0 = 0; r0 < rows; r0 += kBlock) {
        const long long r1 = std::min(rows, r0 + kBlock);
        for (long long c = 0; c < cols; ++c) {
            S* dst = out + c * rows;
            const S* src = in + c;
            for (long long r = r0; r < r1; ++r) {
                if constexpr (Accumulate)
                    dst[r] += src[r * cols];
                else
                    dst[r] = src[r * cols];
            }
        }
    }
}

}  // namespace detail

template <class S>
Tensor<S> permute_generic(const Tensor<S>& x, const std::vector<int>& perm);

/// Axis reorder: out dim d has extent shape[perm[d]].
template <class S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& perm) {
    // fast path: plain 2-D transpose, the layout change behind every lift
    if (x.ndim() == 2 && perm == std::vector<int>{1, 0}) {
        const long long rows = x.dim(0), cols = x.dim(1);
        Tensor<S> out({x.dim(1), x.dim(0)});
        detail::transpose2d<S, false>(x.data(), out.data(), rows, cols);
        if (!x.on_tape()) return out;
        const int nx = x.node();
        return x.tape()->emit(std::move(out), [nx, rows, cols](Tape<S>& tp, int self) {
            const std::vector<S>& go = tp.grad_view(self);
            std::vector<S>& gx = tp.grad_buf(nx);
            detail::transpose2d<S, true>(go.data(), gx.data(), cols, rows);
        });
    }
    // fast path: middle-axis swap with a contiguous tail, the C×Z×Y×X →
    // C×Y×Z×X rearrangement behind vertical compression
    if (x.ndim() == 4 && perm == std::vector<int>{0, 2, 1, 3}) {
        const long long d0 = x.dim(0), d1 = x.dim(1), d2 = x.dim(2), d3 = x.dim(3);
        Tensor<S> out({x.dim(0), x.dim(2), x.dim(1), x.dim(3)});
        auto swap_mid = [d0, d1, d2, d3](const S* in, S* dst, bool accumulate) {
            for (long long a = 0; a < d0; ++a)
                for (long long b = 0; b < d1; ++b)
                    for (long long c = 0; c < d2; ++c) {
                        const S* src = in + (((a * d1) + b) * d2 + c) * d3;
                        S* d = dst + (((a * d2) + c) * d1 + b) * d3;
                        if (accumulate)
                            for (long long i = 0; i < d3; ++i) d[i] += src[i];
                        else
                            std::copy(src, src + d3, d);
                    }
        };
        swap_mid(x.data(), out.data(), false);
        if (!x.on_tape()) return out;
        const int nx = x.node();
        return x.tape()->emit(std::move(out), [nx, d0, d1, d2, d3](Tape<S>& tp, int self) {
            const std::vector<S>& go = tp.grad_view(self);
            std::vector<S>& gx = tp.grad_buf(nx);
            // inverse of the swap is the same swap with d1/d2 exchanged
            for (long long a = 0; a < d0; ++a)
                for (long long c = 0; c < d2; ++c)
                    for (long long b = 0; b < d1; ++b) {
                        const S* src = go.data() + (((a * d2) + c) * d1 + b) * d3;
                        S* d = gx.data() + (((a * d1) + b) * d2 + c) * d3;
                        for (long long i = 0; i < d3; ++i) d[i] += src[i];
                    }
        });
    }
    return permute_generic(x, perm);
}

template <class S>
Tensor<S> permute_generic(const Tensor<S>& x, const std::vector<int>& perm) {
    BEV_CHECK(x.defined(), "permute: undefined operand");
    const int nd = x.ndim();
    BEV_CHECK(static_cast<int>(perm.size()) == nd, "permute: got ", perm.size(), " axes for rank ",
              nd);
    std::vector<char> seen(static_cast<size_t>(nd), 0);
    std::vector<int> out_shape(static_cast<size_t>(nd));
    for (int d = 0; d < nd; ++d) {
        const int p = perm[static_cast<size_t>(d)];
        BEV_CHECK(p >= 0 && p < nd && !seen[static_cast<size_t>(p)], "permute: invalid permutation");
        seen[static_cast<size_t>(p)] = 1;
        out_shape[static_cast<size_t>(d)] = x.dim(p);
    }
    const auto in_strides = detail::row_major_strides(x.shape());
    // stride of out dim d in the input layout
    std::vector<long long> map_strides(static_cast<size_t>(nd));
    for (int d = 0; d < nd; ++d)
        map_strides[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(d)])];

    Tensor<S> out(out_shape);
    const long long n = x.numel();
    const S* px = x.data();
    S* po = out.data();
    std::vector<long long> coord(static_cast<size_t>(nd), 0);
    long long src = 0;
    for (long long i = 0; i < n; ++i) {
        po[i] = px[src];
        for (int d = nd - 1; d >= 0; --d) {
            coord[static_cast<size_t>(d)]++;
            src += map_strides[static_cast<size_t>(d)];
            if (coord[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            src -= map_strides[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
            coord[static_cast<size_t>(d)] = 0;
        }
    }
    if (!x.on_tape()) return out;
    const int nx = x.node();
    return x.tape()->emit(std::move(out),
                          [nx, n, nd, out_shape, map_strides](Tape<S>& tp, int self) {
                              const std::vector<S>& go = tp.grad_view(self);
                              std::vector<S>& gx = tp.grad_buf(nx);
                              std::vector<long long> coord(static_cast<size_t>(nd), 0);
                              long long src = 0;
                              for (long long i = 0; i < n; ++i) {
                                  gx[static_cast<size_t>(src)] += go[static_cast<size_t>(i)];
                                  for (int d = nd - 1; d >= 0; --d) {
                                      coord[static_cast<size_t>(d)]++;
                                      src += map_strides[static_cast<size_t>(d)];
                                      if (coord[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
                                      src -= map_strides[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
                                      coord[static_cast<size_t>(d)] = 0;
                                  }
                              }
                          });
}

/// Contiguous window of length `len` starting at `start` along `axis`.
template <class S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int len) {
    BEV_CHECK(x.defined(), "slice: undefined operand");
    BEV_CHECK(axis >= 0 && axis < x.ndim(), "slice: axis ", axis, " out of range");
    BEV_CHECK(start >= 0 && len >= 1 && start + len <= x.dim(axis), "slice: window [", start, ", ",
              start + len, ") exceeds extent ", x.dim(axis));
    const auto strides = detail::row_major_strides(x.shape());
    const long long inner = strides[static_cast<size_t>(axis)];
    const long long outer = x.numel() / (inner * x.dim(axis));
    const long long in_block = inner * x.dim(axis);
    const long long out_block = inner * len;
    std::vector<int> out_shape = x.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor<S> out(out_shape);
    const S* px = x.data();
    S* po = out.data();
    for (long long o = 0; o < outer; ++o)
        std::copy(px + o * in_block + start * inner, px + o * in_block + start * inner + out_block,
                  po + o * out_block);
    if (!x.on_tape()) return out;
    const int nx = x.node();
    return x.tape()->emit(std::move(out),
                          [nx, outer, inner, in_block, out_block, start](Tape<S>& tp, int self) {
                              const std::vector<S>& go = tp.grad_view(self);
                              std::vector<S>& gx = tp.grad_buf(nx);
                              for (long long o = 0; o < outer; ++o) {
                                  const long long src = o * out_block;
                                  const long long dst = o * in_block + start * inner;
                                  for (long long i = 0; i < out_block; ++i)
                                      gx[static_cast<size_t>(dst + i)] += go[static_cast<size_t>(src + i)];
                              }
                          });
}

/// Concatenation along `axis`; all other extents must match.
template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    BEV_CHECK(!parts.empty(), "concat: no operands");
    const Tensor<S>& first = parts.front();
    BEV_CHECK(axis >= 0 && axis < first.ndim(), "concat: axis ", axis, " out of range");
    int total = 0;
    for (const Tensor<S>& p : parts) {
        BEV_CHECK(p.ndim() == first.ndim(), "concat: rank mismatch");
        for (int d = 0; d < first.ndim(); ++d)
            BEV_CHECK(d == axis || p.dim(d) == first.dim(d), "concat: shape ", shape_str(p.shape()),
                      " incompatible with ", shape_str(first.shape()), " along axis ", axis);
        total += p.dim(axis);
    }
    std::vector<int> out_shape = first.shape();
    out_shape[static_cast<size_t>(axis)] = total;
    const auto strides = detail::row_major_strides(first.shape());
    const long long inner = strides[static_cast<size_t>(axis)];
    const long long outer = first.numel() / (inner * first.dim(axis));
    Tensor<S> out(out_shape);
    S* po = out.data();
    const long long out_block = inner * total;
    long long offset = 0;
    for (const Tensor<S>& p : parts) {
        const long long block = inner * p.dim(axis);
        const S* pp = p.data();
        for (long long o = 0; o < outer; ++o)
            std::copy(pp + o * block, pp + (o + 1) * block, po + o * out_block + offset);
        offset += block;
    }
    std::vector<const Tensor<S>*> ptrs;
    for (const Tensor<S>& p : parts) ptrs.push_back(&p);
    Tape<S>* tape = nullptr;
    for (const Tensor<S>* p : ptrs) {
        if (!p->on_tape()) continue;
        BEV_CHECK(!tape || tape == p->tape(), "concat: operands on different tapes");
        tape = p->tape();
    }
    if (!tape) return out;
    std::vector<int> nodes;
    std::vector<long long> blocks;
    for (const Tensor<S>& p : parts) {
        nodes.push_back(p.on_tape() ? p.node() : -1);
        blocks.push_back(inner * p.dim(axis));
    }
    return tape->emit(std::move(out), [nodes, blocks, outer, out_block](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        long long offset = 0;
        for (size_t k = 0; k < nodes.size(); ++k) {
            const long long block = blocks[k];
            if (nodes[k] >= 0) {
                std::vector<S>& g = tp.grad_buf(nodes[k]);
                for (long long o = 0; o < outer; ++o)
                    for (long long i = 0; i < block; ++i)
                        g[static_cast<size_t>(o * block + i)] +=
                            go[static_cast<size_t>(o * out_block + offset + i)];
            }
            offset += block;
        }
    });
}

/// Elementwise sum of equally-shaped tensors in one tape node.
template <class S>
Tensor<S> add_n(const std::vector<Tensor<S>>& parts) {
    BEV_CHECK(!parts.empty(), "add_n: no operands");
    const Tensor<S>& first = parts.front();
    for (const Tensor<S>& p : parts)
        BEV_CHECK(p.shape() == first.shape(), "add_n: shape ", shape_str(p.shape()),
                  " differs from ", shape_str(first.shape()));
    if (parts.size() == 1) return first;
    Tensor<S> out(first.shape());
    const long long n = out.numel();
    S* po = out.data();
    std::copy(first.data(), first.data() + n, po);
    for (size_t k = 1; k < parts.size(); ++k) {
        const S* pp = parts[k].data();
        for (long long i = 0; i < n; ++i) po[i] += pp[i];
    }
    Tape<S>* tape = nullptr;
    for (const Tensor<S>& p : parts) {
        if (!p.on_tape()) continue;
        BEV_CHECK(!tape || tape == p.tape(), "add_n: operands on different tapes");
        tape = p.tape();
    }
    if (!tape) return out;
    std::vector<int> nodes;
    for (const Tensor<S>& p : parts) nodes.push_back(p.on_tape() ? p.node() : -1);
    return tape->emit(std::move(out), [nodes, n](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        for (int node : nodes) {
            if (node < 0) continue;
            std::vector<S>& g = tp.grad_buf(node);
            for (long long i = 0; i < n; ++i) g[static_cast<size_t>(i)] += go[static_cast<size_t>(i)];
        }
    });
}

/// out[i*r + j, :] = m[i, :] for j in [0, r); the row-block layout keeps one
/// source row's copies contiguous.
template <class S>
Tensor<S> repeat_rows(const Tensor<S>& m, int repeats) {
    BEV_CHECK(m.defined() && m.ndim() == 2, "repeat_rows: expected a rank-2 tensor");
    BEV_CHECK(repeats >= 1, "repeat_rows: repeats must be >= 1");
    const int rows = m.dim(0);
    const int cols = m.dim(1);
    Tensor<S> out({rows * repeats, cols});
    const S* pm = m.data();
    S* po = out.data();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < repeats; ++j)
            std::copy(pm + static_cast<long long>(i) * cols, pm + static_cast<long long>(i + 1) * cols,
                      po + (static_cast<long long>(i) * repeats + j) * cols);
    if (!m.on_tape()) return out;
    const int nm = m.node();
    return m.tape()->emit(std::move(out), [nm, rows, cols, repeats](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        std::vector<S>& gm = tp.grad_buf(nm);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < repeats; ++j) {
                const long long src = (static_cast<long long>(i) * repeats + j) * cols;
                const long long dst = static_cast<long long>(i) * cols;
                for (int c = 0; c < cols; ++c)
                    gm[static_cast<size_t>(dst + c)] += go[static_cast<size_t>(src + c)];
            }
    });
}

/// out[i, :] = m[i, :] * s[i]. Differentiable in both operands.
template <class S>
Tensor<S> scale_rows(const Tensor<S>& m, const Tensor<S>& s) {
    BEV_CHECK(m.defined() && m.ndim() == 2, "scale_rows: expected a rank-2 tensor");
    BEV_CHECK(s.numel() == m.dim(0), "scale_rows: ", s.numel(), " scales for ", m.dim(0), " rows");
    const int rows = m.dim(0);
    const int cols = m.dim(1);
    Tensor<S> out({rows, cols});
    const S* pm = m.data();
    const S* ps = s.data();
    S* po = out.data();
    for (int i = 0; i < rows; ++i) {
        const S w = ps[i];
        const long long base = static_cast<long long>(i) * cols;
        for (int c = 0; c < cols; ++c) po[base + c] = pm[base + c] * w;
    }
    Tape<S>* tape = detail::common_tape<S>({&m, &s});
    if (!tape) return out;
    const int nm = m.on_tape() ? m.node() : -1;
    const int ns = s.on_tape() ? s.node() : -1;
    return tape->emit(std::move(out), [nm, ns, rows, cols, m, s](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        if (nm >= 0) {
            std::vector<S>& gm = tp.grad_buf(nm);
            const S* ps = s.data();
            for (int i = 0; i < rows; ++i) {
                const S w = ps[i];
                const long long base = static_cast<long long>(i) * cols;
                for (int c = 0; c < cols; ++c)
                    gm[static_cast<size_t>(base + c)] += go[static_cast<size_t>(base + c)] * w;
            }
        }
        if (ns >= 0) {
            std::vector<S>& gs = tp.grad_buf(ns);
            const S* pm = m.data();
            for (int i = 0; i < rows; ++i) {
                const long long base = static_cast<long long>(i) * cols;
                S acc = S(0);
                for (int c = 0; c < cols; ++c)
                    acc += go[static_cast<size_t>(base + c)] * pm[base + c];
                gs[static_cast<size_t>(i)] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d

namespace detail {

// im2col: cols[(ci*k + di)*k + dj, y*Wo + x] = in[ci, y*stride-pad+di, x*stride-pad+dj]
template <class S>
void im2col(const S* in, int ci, int h, int w, int k, int stride, int pad, int ho, int wo,
            S* cols) {
    const long long n = static_cast<long long>(ho) * wo;
    for (int c = 0; c < ci; ++c) {
        const S* plane = in + static_cast<long long>(c) * h * w;
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
                S* row = cols + (static_cast<long long>(c) * k * k + di * k + dj) * n;
                for (int y = 0; y < ho; ++y) {
                    const int iy = y * stride - pad + di;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + static_cast<long long>(y) * wo, row + static_cast<long long>(y + 1) * wo, S(0));
                        continue;
                    }
                    const S* src = plane + static_cast<long long>(iy) * w;
                    S* dst = row + static_cast<long long>(y) * wo;
                    for (int x = 0; x < wo; ++x) {
                        const int ix = x * stride - pad + dj;
                        dst[x] = (ix >= 0 && ix < w) ? src[ix] : S(0);
                    }
                }
            }
        }
    }
}

// transpose of im2col: scatter-add cols back into the input layout
template <class S>
void col2im(const S* cols, int ci, int h, int w, int k, int stride, int pad, int ho, int wo,
            S* in_grad) {
    const long long n = static_cast<long long>(ho) * wo;
    for (int c = 0; c < ci; ++c) {
        S* plane = in_grad + static_cast<long long>(c) * h * w;
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
                const S* row = cols + (static_cast<long long>(c) * k * k + di * k + dj) * n;
                for (int y = 0; y < ho; ++y) {
                    const int iy = y * stride - pad + di;
                    if (iy < 0 || iy >= h) continue;
                    S* dst = plane + static_cast<long long>(iy) * w;
                    const S* src = row + static_cast<long long>(y) * wo;
                    for (int x = 0; x < wo; ++x) {
                        const int ix = x * stride - pad + dj;
                        if (ix >= 0 && ix < w) dst[ix] += src[x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2D convolution, square odd kernel, zero padding.
/// input C_in×h×w, weight C_out×C_in×k×k, bias C_out → C_out×h'×w'.
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride, int pad) {
    BEV_CHECK(input.defined() && input.ndim() == 3, "conv2d: input must be C×h×w, got ",
              shape_str(input.shape()));
    BEV_CHECK(weight.defined() && weight.ndim() == 4 && weight.dim(2) == weight.dim(3),
              "conv2d: weight must be C_out×C_in×k×k, got ", shape_str(weight.shape()));
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = weight.dim(0), k = weight.dim(2);
    BEV_CHECK(weight.dim(1) == ci, "conv2d: input has ", ci, " channels but weight expects ",
              weight.dim(1), " (input ", shape_str(input.shape()), ", weight ",
              shape_str(weight.shape()), ")");
    BEV_CHECK(bias.defined() && bias.numel() == co, "conv2d: bias must have ", co, " entries");
    BEV_CHECK(k % 2 == 1, "conv2d: kernel size must be odd, got ", k);
    BEV_CHECK(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
    BEV_CHECK(h + 2 * pad >= k && w + 2 * pad >= k, "conv2d: kernel ", k,
              " exceeds padded input ", h + 2 * pad, "×", w + 2 * pad);
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    const long long n = static_cast<long long>(ho) * wo;
    const long long kk = static_cast<long long>(ci) * k * k;
    // 1×1 stride-1 kernels need no im2col: the input already is the column matrix
    const bool direct = k == 1 && stride == 1 && pad == 0;

    Tensor<S> out({co, ho, wo});
    auto cols = std::make_shared<std::vector<S>>();
    {
        if (!direct) {
            cols->resize(static_cast<size_t>(kk * n));
            detail::im2col(input.data(), ci, h, w, k, stride, pad, ho, wo, cols->data());
        }
        detail::CMapRM<S> wmat(weight.data(), co, kk);
        detail::CMapRM<S> cmat(direct ? input.data() : cols->data(), kk, n);
        detail::MapRM<S> omat(out.data(), co, n);
        omat.noalias() = wmat * cmat;
        const S* pb = bias.data();
        for (int c = 0; c < co; ++c) omat.row(c).array() += pb[c];
    }
    Tape<S>* tape = detail::common_tape<S>({&input, &weight, &bias});
    if (!tape) return out;
    const int nin = input.on_tape() ? input.node() : -1;
    const int nw = weight.on_tape() ? weight.node() : -1;
    const int nb = bias.on_tape() ? bias.node() : -1;
    if (nw < 0) cols.reset();  // only the weight gradient needs the columns again
    return tape->emit(std::move(out), [nin, nw, nb, input, weight, cols, ci, h, w, k, stride, pad,
                                       ho, wo, n, kk, co, direct](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        detail::CMapRM<S> gout(go.data(), co, n);
        if (nb >= 0) {
            std::vector<S>& gb = tp.grad_buf(nb);
            // plain accumulation: Eigen's reduction order depends on buffer
            // alignment, which would break bit-reproducibility across runs
            for (int c = 0; c < co; ++c) {
                const S* row = go.data() + static_cast<long long>(c) * n;
                S acc = S(0);
                for (long long i = 0; i < n; ++i) acc += row[i];
                gb[static_cast<size_t>(c)] += acc;
            }
        }
        if (nw >= 0) {
            detail::CMapRM<S> cmat(direct ? input.data() : cols->data(), kk, n);
            std::vector<S>& gw = tp.grad_buf(nw);
            detail::MapRM<S> gwmat(gw.data(), co, kk);
            gwmat.noalias() += gout * cmat.transpose();
        }
        if (nin >= 0) {
            detail::CMapRM<S> wmat(weight.data(), co, kk);
            std::vector<S>& gin = tp.grad_buf(nin);
            if (direct) {
                detail::MapRM<S> ginmat(gin.data(), kk, n);
                ginmat.noalias() += wmat.transpose() * gout;
            } else {
                std::vector<S> gcols(static_cast<size_t>(kk * n));
                detail::MapRM<S> gcmat(gcols.data(), kk, n);
                gcmat.noalias() = wmat.transpose() * gout;
                detail::col2im(gcols.data(), ci, h, w, k, stride, pad, ho, wo, gin.data());
            }
        }
    });
}

// ---------------------------------------------------------------------------
// bilinear sampling

template <class S>
struct SampleResult {
    Tensor<S> values;            // N×C
    std::vector<uint8_t> valid;  // N; false ⇒ values row is zero
};

/// Samples `image` (C×h×w) at continuous pixel positions `coords` (N×2,
/// columns are x then y; integer coordinate = pixel center). Positions
/// outside [0, w−1]×[0, h−1] yield zeros and valid=false — hard zero, no
/// clamping. Differentiable w.r.t. the image everywhere and w.r.t. coords on
/// the open interior; at the integer lattice the one-sided right-derivative
/// is used.
template <class S>
SampleResult<S> bilinear_sample(const Tensor<S>& image, const Tensor<S>& coords) {
    BEV_CHECK(image.defined() && image.ndim() == 3, "bilinear_sample: image must be C×h×w");
    BEV_CHECK(coords.defined() && coords.ndim() == 2 && coords.dim(1) == 2,
              "bilinear_sample: coords must be N×2, got ", shape_str(coords.shape()));
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const int n = coords.dim(0);
    const S* pc = coords.data();
    for (long long i = 0; i < 2LL * n; ++i)
        BEV_CHECK(std::isfinite(static_cast<double>(pc[i])), "bilinear_sample: non-finite coordinate");

    SampleResult<S> res;
    res.values = Tensor<S>({n, c});
    res.valid.assign(static_cast<size_t>(n), 0);
    const S* img = image.data();
    S* pv = res.values.data();
    const long long plane = static_cast<long long>(h) * w;
    for (int i = 0; i < n; ++i) {
        const S x = pc[2 * i], y = pc[2 * i + 1];
        if (x < S(0) || x > S(w - 1) || y < S(0) || y > S(h - 1)) continue;
        res.valid[static_cast<size_t>(i)] = 1;
        const int x0 = static_cast<int>(std::floor(static_cast<double>(x)));
        const int y0 = static_cast<int>(std::floor(static_cast<double>(y)));
        const S fx = x - static_cast<S>(x0), fy = y - static_cast<S>(y0);
        // missing corners at the far edges carry zero weight
        const bool x1ok = x0 + 1 < w, y1ok = y0 + 1 < h;
        const S w00 = (S(1) - fy) * (S(1) - fx);
        const S w01 = x1ok ? (S(1) - fy) * fx : S(0);
        const S w10 = y1ok ? fy * (S(1) - fx) : S(0);
        const S w11 = (x1ok && y1ok) ? fy * fx : S(0);
        const long long o01 = x1ok ? 1 : 0;
        const long long o10 = y1ok ? w : 0;
        const long long o11 = o01 + o10;
        const S* p = img + static_cast<long long>(y0) * w + x0;
        S* dst = pv + static_cast<long long>(i) * c;
        for (int ch = 0; ch < c; ++ch, p += plane)
            dst[ch] = w00 * p[0] + w01 * p[o01] + w10 * p[o10] + w11 * p[o11];
    }
    Tape<S>* tape = detail::common_tape<S>({&image, &coords});
    if (!tape) return res;
    const int nimg = image.on_tape() ? image.node() : -1;
    const int ncrd = coords.on_tape() ? coords.node() : -1;
    auto valid = res.valid;
    res.values = tape->emit(std::move(res.values), [nimg, ncrd, image, coords, valid, c, h, w,
                                                    n](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        const S* img = image.data();
        const S* pc = coords.data();
        const long long plane = static_cast<long long>(h) * w;
        std::vector<S>* gimg = nimg >= 0 ? &tp.grad_buf(nimg) : nullptr;
        std::vector<S>* gcrd = ncrd >= 0 ? &tp.grad_buf(ncrd) : nullptr;
        for (int i = 0; i < n; ++i) {
            if (!valid[static_cast<size_t>(i)]) continue;
            const S x = pc[2 * i], y = pc[2 * i + 1];
            const int x0 = static_cast<int>(std::floor(static_cast<double>(x)));
            const int y0 = static_cast<int>(std::floor(static_cast<double>(y)));
            const S fx = x - static_cast<S>(x0), fy = y - static_cast<S>(y0);
            const bool x1ok = x0 + 1 < w, y1ok = y0 + 1 < h;
            const S w00 = (S(1) - fy) * (S(1) - fx);
            const S w01 = x1ok ? (S(1) - fy) * fx : S(0);
            const S w10 = y1ok ? fy * (S(1) - fx) : S(0);
            const S w11 = (x1ok && y1ok) ? fy * fx : S(0);
            const long long o01 = x1ok ? 1 : 0;
            const long long o10 = y1ok ? w : 0;
            const long long o11 = o01 + o10;
            const long long o00 = static_cast<long long>(y0) * w + x0;
            const S* grow = go.data() + static_cast<long long>(i) * c;
            if (gimg) {
                // zero weights make the aliased-offset adds at the far edges no-ops
                S* gbase = gimg->data() + o00;
                for (int ch = 0; ch < c; ++ch, gbase += plane) {
                    const S g = grow[ch];
                    gbase[0] += g * w00;
                    gbase[o01] += g * w01;
                    gbase[o10] += g * w10;
                    gbase[o11] += g * w11;
                }
            }
            if (gcrd) {
                S dx = S(0), dy = S(0);
                const S* p = img + o00;
                for (int ch = 0; ch < c; ++ch, p += plane) {
                    const S g = grow[ch];
                    const S v00 = p[0];
                    const S v01 = x1ok ? p[o01] : S(0);
                    const S v10 = y1ok ? p[o10] : S(0);
                    const S v11 = (x1ok && y1ok) ? p[o11] : S(0);
                    dx += g * ((S(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                    dy += g * ((S(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                (*gcrd)[static_cast<size_t>(2 * i)] += dx;
                (*gcrd)[static_cast<size_t>(2 * i + 1)] += dy;
            }
        }
    });
    return res;
}

/// bilinear_sample with channel-major output (values C×N instead of N×C):
/// the layout every lift wants, so no transpose is needed downstream. Same
/// math, same out-of-bounds and lattice conventions as bilinear_sample.
template <class S>
SampleResult<S> bilinear_sample_cm(const Tensor<S>& image, const Tensor<S>& coords) {
    BEV_CHECK(image.defined() && image.ndim() == 3, "bilinear_sample_cm: image must be C×h×w");
    BEV_CHECK(coords.defined() && coords.ndim() == 2 && coords.dim(1) == 2,
              "bilinear_sample_cm: coords must be N×2");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const int n = coords.dim(0);
    const S* pc = coords.data();
    for (long long i = 0; i < 2LL * n; ++i)
        BEV_CHECK(std::isfinite(static_cast<double>(pc[i])), "bilinear_sample_cm: non-finite coordinate");

    // compact per-row tap: one cache-line-friendly record instead of parallel
    // arrays, loaded once per channel block
    struct Tap {
        int row;
        int o00;
        int o01, o10;  // 0 when the corner is off the image
        S w00, w01, w10, w11;
        S fx, fy;
    };
    auto taps = std::make_shared<std::vector<Tap>>();
    taps->reserve(static_cast<size_t>(n));

    SampleResult<S> res;
    res.values = Tensor<S>({c, n});
    res.valid.assign(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const S x = pc[2 * i], y = pc[2 * i + 1];
        if (x < S(0) || x > S(w - 1) || y < S(0) || y > S(h - 1)) continue;
        res.valid[static_cast<size_t>(i)] = 1;
        const int x0 = static_cast<int>(std::floor(static_cast<double>(x)));
        const int y0 = static_cast<int>(std::floor(static_cast<double>(y)));
        const S fx = x - static_cast<S>(x0), fy = y - static_cast<S>(y0);
        const bool x1ok = x0 + 1 < w, y1ok = y0 + 1 < h;
        Tap t;
        t.row = i;
        t.o00 = y0 * w + x0;
        t.o01 = x1ok ? 1 : 0;
        t.o10 = y1ok ? w : 0;
        t.w00 = (S(1) - fy) * (S(1) - fx);
        t.w01 = x1ok ? (S(1) - fy) * fx : S(0);
        t.w10 = y1ok ? fy * (S(1) - fx) : S(0);
        t.w11 = (x1ok && y1ok) ? fy * fx : S(0);
        t.fx = fx;
        t.fy = fy;
        taps->push_back(t);
    }
    const long long plane = static_cast<long long>(h) * w;
    static constexpr int kChanBlock = 8;
    {
        const S* img = image.data();
        S* pv = res.values.data();
        for (int cb = 0; cb < c; cb += kChanBlock) {
            const int ce = std::min(c, cb + kChanBlock);
            for (const Tap& t : *taps) {
                const S* q = img + static_cast<long long>(cb) * plane + t.o00;
                S* dst = pv + static_cast<long long>(cb) * n + t.row;
                for (int ch = cb; ch < ce; ++ch, q += plane, dst += n)
                    *dst = t.w00 * q[0] + t.w01 * q[t.o01] + t.w10 * q[t.o10] +
                           t.w11 * q[t.o01 + t.o10];
            }
        }
    }
    Tape<S>* tape = detail::common_tape<S>({&image, &coords});
    if (!tape) return res;
    const int nimg = image.on_tape() ? image.node() : -1;
    const int ncrd = coords.on_tape() ? coords.node() : -1;
    res.values = tape->emit(std::move(res.values), [nimg, ncrd, image, taps, plane, c,
                                                    n](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        if (nimg >= 0) {
            std::vector<S>& gimg = tp.grad_buf(nimg);
            for (int cb = 0; cb < c; cb += kChanBlock) {
                const int ce = std::min(c, cb + kChanBlock);
                for (const Tap& t : *taps) {
                    S* q = gimg.data() + static_cast<long long>(cb) * plane + t.o00;
                    const S* g = go.data() + static_cast<long long>(cb) * n + t.row;
                    for (int ch = cb; ch < ce; ++ch, q += plane, g += n) {
                        const S gi = *g;
                        q[0] += gi * t.w00;
                        q[t.o01] += gi * t.w01;
                        q[t.o10] += gi * t.w10;
                        q[t.o01 + t.o10] += gi * t.w11;
                    }
                }
            }
        }
        if (ncrd >= 0) {
            std::vector<S>& gcrd = tp.grad_buf(ncrd);
            const S* img = image.data();
            for (const Tap& t : *taps) {
                const S* g = go.data() + t.row;
                S dx = S(0), dy = S(0);
                const S* q = img + t.o00;
                for (int ch = 0; ch < c; ++ch, q += plane, g += n) {
                    const S gi = *g;
                    const S v00 = q[0];
                    const S v01 = t.o01 ? q[t.o01] : S(0);
                    const S v10 = t.o10 ? q[t.o10] : S(0);
                    const S v11 = (t.o01 && t.o10) ? q[t.o01 + t.o10] : S(0);
                    dx += gi * ((S(1) - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
                    dy += gi * ((S(1) - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
                }
                gcrd[static_cast<size_t>(2 * t.row)] += dx;
                gcrd[static_cast<size_t>(2 * t.row + 1)] += dy;
            }
        }
    });
    return res;
}

/// out[ch, i] = m[ch, i] * s[i] for a channel-major C×N matrix: the
/// column-wise twin of scale_rows. Differentiable in both operands.
template <class S>
Tensor<S> scale_cols(const Tensor<S>& m, const Tensor<S>& s) {
    BEV_CHECK(m.defined() && m.ndim() == 2, "scale_cols: expected a rank-2 tensor");
    BEV_CHECK(s.numel() == m.dim(1), "scale_cols: ", s.numel(), " scales for ", m.dim(1),
              " columns");
    const int c = m.dim(0), n = m.dim(1);
    Tensor<S> out({c, n});
    {
        const S* pm = m.data();
        const S* ps = s.data();
        S* po = out.data();
        for (int ch = 0; ch < c; ++ch) {
            const long long base = static_cast<long long>(ch) * n;
            for (int i = 0; i < n; ++i) po[base + i] = pm[base + i] * ps[i];
        }
    }
    Tape<S>* tape = detail::common_tape<S>({&m, &s});
    if (!tape) return out;
    const int nm = m.on_tape() ? m.node() : -1;
    const int ns = s.on_tape() ? s.node() : -1;
    return tape->emit(std::move(out), [nm, ns, c, n, m, s](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        if (nm >= 0) {
            std::vector<S>& gm = tp.grad_buf(nm);
            const S* ps = s.data();
            for (int ch = 0; ch < c; ++ch) {
                const long long base = static_cast<long long>(ch) * n;
                for (int i = 0; i < n; ++i)
                    gm[static_cast<size_t>(base + i)] += go[static_cast<size_t>(base + i)] * ps[i];
            }
        }
        if (ns >= 0) {
            std::vector<S>& gs = tp.grad_buf(ns);
            const S* pm = m.data();
            for (int ch = 0; ch < c; ++ch) {
                const long long base = static_cast<long long>(ch) * n;
                for (int i = 0; i < n; ++i)
                    gs[static_cast<size_t>(i)] += go[static_cast<size_t>(base + i)] * pm[base + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// scatter_add

inline constexpr long long kScatterDiscard = -1;

/// out[m, :] = Σ values[i, :] over i with cell_index[i] == m. Sentinel −1
/// discards a row. Backward gathers output-gradient rows.
template <class S>
Tensor<S> scatter_add(const Tensor<S>& values, const std::vector<long long>& cell_index,
                      int cells) {
    BEV_CHECK(values.defined() && values.ndim() == 2, "scatter_add: values must be N×C");
    BEV_CHECK(static_cast<long long>(cell_index.size()) == values.dim(0), "scatter_add: ",
              cell_index.size(), " indices for ", values.dim(0), " rows");
    BEV_CHECK(cells >= 1, "scatter_add: cells must be >= 1");
    for (long long idx : cell_index)
        BEV_CHECK(idx == kScatterDiscard || (idx >= 0 && idx < cells), "scatter_add: index ", idx,
                  " outside [0, ", cells, ")");
    const int n = values.dim(0), c = values.dim(1);
    Tensor<S> out({cells, c});
    const S* pv = values.data();
    S* po = out.data();
    for (int i = 0; i < n; ++i) {
        const long long m = cell_index[static_cast<size_t>(i)];
        if (m == kScatterDiscard) continue;
        const S* src = pv + static_cast<long long>(i) * c;
        S* dst = po + m * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
    }
    if (!values.on_tape()) return out;
    const int nv = values.node();
    return values.tape()->emit(std::move(out), [nv, cell_index, n, c](Tape<S>& tp, int self) {
        const std::vector<S>& go = tp.grad_view(self);
        std::vector<S>& gv = tp.grad_buf(nv);
        for (int i = 0; i < n; ++i) {
            const long long m = cell_index[static_cast<size_t>(i)];
            if (m == kScatterDiscard) continue;
            for (int ch = 0; ch < c; ++ch)
                gv[static_cast<size_t>(static_cast<long long>(i) * c + ch)] +=
                    go[static_cast<size_t>(m * c + ch)];
        }
    });
}

// ---------------------------------------------------------------------------
// losses

/// Mean binary cross-entropy on logits, numerically stable for |x| up to the
/// float exponent range. Labels must be exactly 0 or 1 and constant.
template <class S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const Tensor<S>& labels, S pos_weight) {
    BEV_CHECK(logits.defined() && labels.defined(), "bce_with_logits: undefined operand");
    BEV_CHECK(logits.shape() == labels.shape(), "bce_with_logits: shape ",
              shape_str(logits.shape()), " vs labels ", shape_str(labels.shape()));
    BEV_CHECK(!labels.on_tape(), "bce_with_logits: labels must be constants");
    const long long n = logits.numel();
    const S* px = logits.data();
    const S* py = labels.data();
    auto softplus = [](S t) {
        const S a = t > S(0) ? t : S(0);
        return a + std::log1p(std::exp(-std::abs(t)));
    };
    S acc = S(0);
    for (long long i = 0; i < n; ++i) {
        const S y = py[i];
        BEV_CHECK(y == S(0) || y == S(1), "bce_with_logits: label ", static_cast<double>(y),
                  " is not in {0, 1}");
        acc += pos_weight * y * softplus(-px[i]) + (S(1) - y) * softplus(px[i]);
    }
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
    if (!logits.on_tape()) return out;
    const int nx = logits.node();
    return logits.tape()->emit(std::move(out),
                               [nx, n, logits, labels, pos_weight](Tape<S>& tp, int self) {
                                   const S g = tp.grad_view(self)[0] / static_cast<S>(n);
                                   std::vector<S>& gx = tp.grad_buf(nx);
                                   const S* px = logits.data();
                                   const S* py = labels.data();
                                   for (long long i = 0; i < n; ++i) {
                                       const S x = px[i];
                                       const S sig = x >= S(0)
                                                         ? S(1) / (S(1) + std::exp(-x))
                                                         : std::exp(x) / (S(1) + std::exp(x));
                                       const S y = py[i];
                                       gx[static_cast<size_t>(i)] +=
                                           g * (pos_weight * y * (sig - S(1)) + (S(1) - y) * sig);
                                   }
                               });
}

/// Σ mask·|pred−target| / max(Σ mask, 1); subgradient 0 at exact ties.
template <class S>
Tensor<S> l1_masked(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& mask) {
    BEV_CHECK(pred.defined() && target.defined() && mask.defined(), "l1_masked: undefined operand");
    BEV_CHECK(pred.shape() == target.shape() && pred.shape() == mask.shape(),
              "l1_masked: shapes differ: ", shape_str(pred.shape()), ", ",
              shape_str(target.shape()), ", ", shape_str(mask.shape()));
    BEV_CHECK(!mask.on_tape(), "l1_masked: mask must be constant");
    const long long n = pred.numel();
    const S* pp = pred.data();
    const S* pt = target.data();
    const S* pm = mask.data();
    S acc = S(0), msum = S(0);
    for (long long i = 0; i < n; ++i) {
        acc += pm[i] * std::abs(pp[i] - pt[i]);
        msum += pm[i];
    }
    const S denom = std::max(msum, S(1));
    Tensor<S> out = Tensor<S>::scalar(acc / denom);
    Tape<S>* tape = detail::common_tape<S>({&pred, &target});
    if (!tape) return out;
    const int np = pred.on_tape() ? pred.node() : -1;
    const int nt = target.on_tape() ? target.node() : -1;
    return tape->emit(std::move(out), [np, nt, n, pred, target, mask, denom](Tape<S>& tp, int self) {
        const S g = tp.grad_view(self)[0] / denom;
        const S* pp = pred.data();
        const S* pt = target.data();
        const S* pm = mask.data();
        std::vector<S>* gp = np >= 0 ? &tp.grad_buf(np) : nullptr;
        std::vector<S>* gt = nt >= 0 ? &tp.grad_buf(nt) : nullptr;
        for (long long i = 0; i < n; ++i) {
            const S d = pp[i] - pt[i];
            const S s = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
            const S gi = g * pm[i] * s;
            if (gp) (*gp)[static_cast<size_t>(i)] += gi;
            if (gt) (*gt)[static_cast<size_t>(i)] -= gi;
        }
    });
}

}  // namespace bev

#include "gtf/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "gtf/errors.hpp"
#include "gtf/kernels.hpp"

namespace gtf::ops {

namespace {

void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void check_same(const Tensor& a, const Tensor& b, const char* who) {
    if (a.dtype() != b.dtype() || a.shape() != b.shape())
        throw std::invalid_argument(std::string(who) + ": operand shape/dtype mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void accum(const T* src, T* dst, i64 n) {
    kern::accum1(src, dst, n, [](T v) { return v; });
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluC = 0.044715;

} // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    check_same(a, b, "add");
    const i64 n = a.numel();
    Tensor out = make_node(a.shape(), a.dtype(), {a, b}, [a, b](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            const i64 n = o.numel();
            if (a.requires_grad()) { a.impl()->ensure_grad(); accum(g, a.grad_data<T>(), n); }
            if (b.requires_grad()) { b.impl()->ensure_grad(); accum(g, b.grad_data<T>(), n); }
        });
    });
    with_dtype(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::map2(a.data<T>(), b.data<T>(), out.data<T>(), n, [](T x, T y) { return x + y; });
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same(a, b, "sub");
    const i64 n = a.numel();
    Tensor out = make_node(a.shape(), a.dtype(), {a, b}, [a, b](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            const i64 n = o.numel();
            if (a.requires_grad()) { a.impl()->ensure_grad(); accum(g, a.grad_data<T>(), n); }
            if (b.requires_grad()) {
                b.impl()->ensure_grad();
                kern::accum1(g, b.grad_data<T>(), n, [](T v) { return -v; });
            }
        });
    });
    with_dtype(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::map2(a.data<T>(), b.data<T>(), out.data<T>(), n, [](T x, T y) { return x - y; });
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same(a, b, "mul");
    const i64 n = a.numel();
    Tensor out = make_node(a.shape(), a.dtype(), {a, b}, [a, b](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            const i64 n = o.numel();
            if (a.requires_grad()) {
                a.impl()->ensure_grad();
                kern::accum2(g, b.data<T>(), a.grad_data<T>(), n, [](T gv, T bv) { return gv * bv; });
            }
            if (b.requires_grad()) {
                b.impl()->ensure_grad();
                kern::accum2(g, a.data<T>(), b.grad_data<T>(), n, [](T gv, T av) { return gv * av; });
            }
        });
    });
    with_dtype(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::map2(a.data<T>(), b.data<T>(), out.data<T>(), n, [](T x, T y) { return x * y; });
    });
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same(a, b, "div");
    const i64 n = a.numel();
    Tensor out = make_node(a.shape(), a.dtype(), {a, b}, [a, b](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            const T* av = a.data<T>();
            const T* bv = b.data<T>();
            const i64 n = o.numel();
            if (a.requires_grad()) {
                a.impl()->ensure_grad();
                kern::accum2(g, bv, a.grad_data<T>(), n, [](T gv, T y) { return gv / y; });
            }
            if (b.requires_grad()) {
                b.impl()->ensure_grad();
                T* gb = b.grad_data<T>();
                for (i64 i = 0; i < n; ++i) gb[i] += -g[i] * av[i] / (bv[i] * bv[i]);
            }
        });
    });
    with_dtype(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::map2(a.data<T>(), b.data<T>(), out.data<T>(), n, [](T x, T y) { return x / y; });
    });
    return out;
}

Tensor affine(const Tensor& x, double a, double b) {
    const i64 n = x.numel();
    Tensor out = make_node(x.shape(), x.dtype(), {x}, [x, a](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T aa = static_cast<T>(a);
            kern::accum1(o.grd<T>(), x.grad_data<T>(), o.numel(), [aa](T g) { return aa * g; });
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T aa = static_cast<T>(a), bb = static_cast<T>(b);
        kern::map1(x.data<T>(), out.data<T>(), n, [aa, bb](T v) { return aa * v + bb; });
    });
    return out;
}

Tensor relu(const Tensor& x) {
    const i64 n = x.numel();
    Tensor out = make_node(x.shape(), x.dtype(), {x}, [x](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            kern::accum2(o.grd<T>(), x.data<T>(), x.grad_data<T>(), o.numel(),
                         [](T g, T v) { return v > T(0) ? g : T(0); });
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::map1(x.data<T>(), out.data<T>(), n, [](T v) { return v > T(0) ? v : T(0); });
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    const i64 n = x.numel();
    Tensor out = make_node(x.shape(), x.dtype(), {x}, [x](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T k = static_cast<T>(kSqrt2OverPi), c = static_cast<T>(kGeluC);
            kern::accum2(o.grd<T>(), x.data<T>(), x.grad_data<T>(), o.numel(), [k, c](T g, T v) {
                const T u = k * (v + c * v * v * v);
                const T t = std::tanh(u);
                const T du = k * (T(1) + T(3) * c * v * v);
                return g * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
            });
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T k = static_cast<T>(kSqrt2OverPi), c = static_cast<T>(kGeluC);
        kern::map1(x.data<T>(), out.data<T>(), n, [k, c](T v) {
            return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v)));
        });
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    const i64 n = x.numel();
    Tensor out = make_node(x.shape(), x.dtype(), {x}, [x](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            kern::accum2(o.grd<T>(), o.val<T>(), x.grad_data<T>(), o.numel(),
                         [](T g, T y) { return g * y * (T(1) - y); });
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::map1(x.data<T>(), out.data<T>(), n, [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        });
    });
    return out;
}

Tensor dropout(const Tensor& x, double p, RngState& rng, bool training) {
    if (!training || p <= 0.0) return x;
    check(p < 1.0, "dropout: p must be < 1");
    const i64 n = x.numel();
    auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) (*mask)[static_cast<size_t>(i)] = rng.bernoulli(1.0 - p) ? 1 : 0;
    const double scale = 1.0 / (1.0 - p);
    Tensor out = make_node(x.shape(), x.dtype(), {x}, [x, mask, scale](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T s = static_cast<T>(scale);
            const T* g = o.grd<T>();
            T* gx = x.grad_data<T>();
            const i64 n = o.numel();
            for (i64 i = 0; i < n; ++i)
                if ((*mask)[static_cast<size_t>(i)]) gx[i] += g[i] * s;
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T s = static_cast<T>(scale);
        const T* xv = x.data<T>();
        T* yv = out.data<T>();
        for (i64 i = 0; i < n; ++i)
            yv[i] = (*mask)[static_cast<size_t>(i)] ? xv[i] * s : T(0);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check(w.ndim() == 2, "linear: weight must be [in,out]");
    check(x.ndim() >= 1, "linear: input rank");
    const i64 in = w.dim(0), out_dim = w.dim(1);
    check(x.dim(x.ndim() - 1) == in, "linear: input width != weight rows");
    if (bias.defined()) check(bias.numel() == out_dim, "linear: bias size");
    const i64 rows = x.numel() / in;

    Shape out_shape = x.shape();
    out_shape.back() = out_dim;
    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);

    Tensor out = make_node(out_shape, x.dtype(), std::move(parents),
                           [x, w, bias, rows, in, out_dim](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            if (x.requires_grad()) {
                x.impl()->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(rows * in));
                kern::matmul_nt(g, w.data<T>(), tmp.data(), 1, rows, out_dim, in, false);
                accum(tmp.data(), x.grad_data<T>(), rows * in);
            }
            if (w.requires_grad()) {
                w.impl()->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(in * out_dim));
                kern::matmul_tn(x.data<T>(), g, tmp.data(), 1, rows, in, out_dim, false);
                accum(tmp.data(), w.grad_data<T>(), in * out_dim);
            }
            if (bias.defined() && bias.requires_grad()) {
                bias.impl()->ensure_grad();
                T* gb = bias.grad_data<T>();
                for (i64 j = 0; j < out_dim; ++j) {
                    T s = T(0);
                    for (i64 r = 0; r < rows; ++r) s += g[r * out_dim + j];
                    gb[j] += s;
                }
            }
        });
    });

    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::matmul(x.data<T>(), w.data<T>(), out.data<T>(), 1, rows, in, out_dim, false);
        if (bias.defined()) {
            const T* b = bias.data<T>();
            T* y = out.data<T>();
            for (i64 r = 0; r < rows; ++r)
                for (i64 j = 0; j < out_dim; ++j) y[r * out_dim + j] += b[j];
        }
    });
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check(a.ndim() == 3 && b.ndim() == 3, "bmm: operands must be 3-d");
    check(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1), "bmm: shape mismatch");
    const i64 B = a.dim(0), M = a.dim(1), K = a.dim(2), P = b.dim(2);
    Tensor out = make_node({B, M, P}, a.dtype(), {a, b}, [a, b, B, M, K, P](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            if (a.requires_grad()) {
                a.impl()->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(B * M * K));
                kern::matmul_nt(g, b.data<T>(), tmp.data(), B, M, P, K, true);
                accum(tmp.data(), a.grad_data<T>(), B * M * K);
            }
            if (b.requires_grad()) {
                b.impl()->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(B * K * P));
                kern::matmul_tn(a.data<T>(), g, tmp.data(), B, M, K, P, true);
                accum(tmp.data(), b.grad_data<T>(), B * K * P);
            }
        });
    });
    with_dtype(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::matmul(a.data<T>(), b.data<T>(), out.data<T>(), B, M, K, P, true);
    });
    return out;
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    check(a.ndim() == 3 && b.ndim() == 3, "bmm_nt: operands must be 3-d");
    check(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2), "bmm_nt: shape mismatch");
    const i64 B = a.dim(0), M = a.dim(1), K = a.dim(2), P = b.dim(1);
    Tensor out = make_node({B, M, P}, a.dtype(), {a, b}, [a, b, B, M, K, P](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            if (a.requires_grad()) {
                a.impl()->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(B * M * K));
                kern::matmul(g, b.data<T>(), tmp.data(), B, M, P, K, true);
                accum(tmp.data(), a.grad_data<T>(), B * M * K);
            }
            if (b.requires_grad()) {
                b.impl()->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(B * P * K));
                kern::matmul_tn(g, a.data<T>(), tmp.data(), B, M, P, K, true);
                accum(tmp.data(), b.grad_data<T>(), B * P * K);
            }
        });
    });
    with_dtype(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::matmul_nt(a.data<T>(), b.data<T>(), out.data<T>(), B, M, K, P, true);
    });
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, i64 stride_h,
              i64 stride_w, i64 pad_h, i64 pad_w, i64 groups) {
    check(x.ndim() == 4 && w.ndim() == 4, "conv2d: x [N,C,H,W], w [Co,Ci/g,kh,kw]");
    const i64 N = x.dim(0), C_in = x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 C_out = w.dim(0), kH = w.dim(2), kW = w.dim(3);
    check(groups >= 1 && C_in % groups == 0 && C_out % groups == 0, "conv2d: bad groups");
    check(w.dim(1) == C_in / groups, "conv2d: weight in-channels mismatch");
    check(stride_h >= 1 && stride_w >= 1, "conv2d: stride");
    if (bias.defined()) check(bias.numel() == C_out, "conv2d: bias size");
    const i64 OH = (H + 2 * pad_h - kH) / stride_h + 1;
    const i64 OW = (W + 2 * pad_w - kW) / stride_w + 1;
    check(OH >= 1 && OW >= 1, "conv2d: empty output");

    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    Tensor out = make_node({N, C_out, OH, OW}, x.dtype(), std::move(parents),
                           [=](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            if (x.requires_grad()) {
                x.impl()->ensure_grad();
                kern::conv2d_bwd_input(g, w.data<T>(), x.grad_data<T>(), N, C_in, H, W,
                                       C_out, kH, kW, OH, OW, stride_h, stride_w, pad_h,
                                       pad_w, groups);
            }
            if (w.requires_grad()) {
                w.impl()->ensure_grad();
                kern::conv2d_bwd_weight(g, x.data<T>(), w.grad_data<T>(), N, C_in, H, W,
                                        C_out, kH, kW, OH, OW, stride_h, stride_w, pad_h,
                                        pad_w, groups);
            }
            if (bias.defined() && bias.requires_grad()) {
                bias.impl()->ensure_grad();
                T* gb = bias.grad_data<T>();
                for (i64 co = 0; co < C_out; ++co) {
                    T s = T(0);
                    for (i64 n = 0; n < N; ++n) {
                        const T* gc = g + (n * C_out + co) * OH * OW;
                        for (i64 i = 0; i < OH * OW; ++i) s += gc[i];
                    }
                    gb[co] += s;
                }
            }
        });
    });

    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::conv2d_fwd(x.data<T>(), w.data<T>(),
                         bias.defined() ? bias.data<T>() : nullptr, out.data<T>(), N,
                         C_in, H, W, C_out, kH, kW, OH, OW, stride_h, stride_w, pad_h,
                         pad_w, groups);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization / attention pieces

Tensor softmax_lastdim(const Tensor& x) {
    check(x.ndim() >= 1, "softmax: rank");
    const i64 n = x.dim(x.ndim() - 1);
    const i64 rows = x.numel() / n;
    Tensor out = make_node(x.shape(), x.dtype(), {x}, [x, rows, n](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            kern::softmax_rows_bwd(o.val<T>(), o.grd<T>(), x.grad_data<T>(), rows, n);
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::softmax_rows(x.data<T>(), out.data<T>(), rows, n);
    });
    return out;
}

Tensor layer_norm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          double eps) {
    const i64 n = x.dim(x.ndim() - 1);
    check(gamma.numel() == n && beta.numel() == n, "layer_norm: affine size mismatch");
    const i64 rows = x.numel() / n;
    Tensor mean = Tensor::zeros({rows}, x.dtype());
    Tensor rstd = Tensor::zeros({rows}, x.dtype());

    Tensor out = make_node(x.shape(), x.dtype(), {x, gamma, beta},
                           [x, gamma, beta, mean, rstd, rows, n](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            if (x.requires_grad()) {
                x.impl()->ensure_grad();
                kern::layer_norm_rows_bwd_x(x.data<T>(), gamma.data<T>(), g,
                                            mean.data<T>(), rstd.data<T>(),
                                            x.grad_data<T>(), rows, n);
            }
            if (gamma.requires_grad() || beta.requires_grad()) {
                gamma.impl()->ensure_grad();
                beta.impl()->ensure_grad();
                kern::layer_norm_rows_bwd_gb(x.data<T>(), g, mean.data<T>(),
                                             rstd.data<T>(), gamma.grad_data<T>(),
                                             beta.grad_data<T>(), rows, n);
            }
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::layer_norm_rows(x.data<T>(), gamma.data<T>(), beta.data<T>(),
                              out.data<T>(), mean.data<T>(), rstd.data<T>(), rows, n,
                              static_cast<T>(eps));
    });
    return out;
}

Tensor bilinear_resize(const Tensor& x, i64 out_h, i64 out_w) {
    check(x.ndim() == 4, "bilinear_resize: expects NCHW");
    check(out_h >= 1 && out_w >= 1, "bilinear_resize: output extents");
    const i64 N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out = make_node({N, C, out_h, out_w}, x.dtype(), {x},
                           [x, N, C, H, W, out_h, out_w](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            kern::bilinear_bwd(o.grd<T>(), x.grad_data<T>(), N * C, H, W, out_h, out_w);
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        kern::bilinear_fwd(x.data<T>(), out.data<T>(), N * C, H, W, out_h, out_w);
    });
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    check(x.ndim() == 4, "global_avg_pool: expects NCHW");
    const i64 N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out = make_node({N, C}, x.dtype(), {x}, [x, N, C, HW](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T* g = o.grd<T>();
            T* gx = x.grad_data<T>();
            const T inv = T(1) / static_cast<T>(HW);
            for (i64 i = 0; i < N * C; ++i) {
                const T gv = g[i] * inv;
                T* p = gx + i * HW;
                for (i64 j = 0; j < HW; ++j) p[j] += gv;
            }
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* xv = x.data<T>();
        T* y = out.data<T>();
        const T inv = T(1) / static_cast<T>(HW);
        for (i64 i = 0; i < N * C; ++i) {
            T s = T(0);
            const T* p = xv + i * HW;
            for (i64 j = 0; j < HW; ++j) s += p[j];
            y[i] = s * inv;
        }
    });
    return out;
}

Tensor mul_channels(const Tensor& x, const Tensor& gate) {
    check(x.ndim() == 4 && gate.ndim() == 2, "mul_channels: x NCHW, gate [N,C]");
    check(x.dim(0) == gate.dim(0) && x.dim(1) == gate.dim(1), "mul_channels: N,C mismatch");
    const i64 NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out = make_node(x.shape(), x.dtype(), {x, gate}, [x, gate, NC, HW](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            if (x.requires_grad()) {
                x.impl()->ensure_grad();
                const T* gv = gate.data<T>();
                T* gx = x.grad_data<T>();
                for (i64 i = 0; i < NC; ++i) {
                    const T gg = gv[i];
                    for (i64 j = 0; j < HW; ++j) gx[i * HW + j] += g[i * HW + j] * gg;
                }
            }
            if (gate.requires_grad()) {
                gate.impl()->ensure_grad();
                const T* xv = x.data<T>();
                T* gg = gate.grad_data<T>();
                for (i64 i = 0; i < NC; ++i) {
                    T s = T(0);
                    for (i64 j = 0; j < HW; ++j) s += g[i * HW + j] * xv[i * HW + j];
                    gg[i] += s;
                }
            }
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* xv = x.data<T>();
        const T* gv = gate.data<T>();
        T* y = out.data<T>();
        for (i64 i = 0; i < NC; ++i) {
            const T gg = gv[i];
            for (i64 j = 0; j < HW; ++j) y[i * HW + j] = xv[i * HW + j] * gg;
        }
    });
    return out;
}

Tensor select_channel(const Tensor& x, i64 c) {
    check(x.ndim() == 4, "select_channel: expects NCHW");
    check(c >= 0 && c < x.dim(1), "select_channel: index out of range");
    const i64 N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out = make_node({N, x.dim(2), x.dim(3)}, x.dtype(), {x},
                           [x, c, N, C, HW](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T* g = o.grd<T>();
            T* gx = x.grad_data<T>();
            for (i64 n = 0; n < N; ++n)
                accum(g + n * HW, gx + (n * C + c) * HW, HW);
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* xv = x.data<T>();
        T* y = out.data<T>();
        for (i64 n = 0; n < N; ++n)
            std::memcpy(y + n * HW, xv + (n * C + c) * HW, static_cast<size_t>(HW) * sizeof(T));
    });
    return out;
}

// ---------------------------------------------------------------------------
// Shape plumbing

Tensor reshape(const Tensor& x, Shape shape) {
    check(shape_numel(shape) == x.numel(), "reshape: element count mismatch");
    Tensor out = make_node(std::move(shape), x.dtype(), {x}, [x](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            accum(o.grd<T>(), x.grad_data<T>(), o.numel());
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        std::memcpy(out.data<T>(), x.data<T>(), static_cast<size_t>(x.numel()) * sizeof(T));
    });
    return out;
}

namespace {
std::vector<i64> contiguous_strides(const Shape& s) {
    std::vector<i64> st(s.size());
    i64 acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

// out[i0,...,ik] = in[perm applied]; dst contiguous, src indexed by stride map.
template <class T>
void permute_copy(const T* src, T* dst, const Shape& out_shape,
                  const std::vector<i64>& src_stride_for_out, bool accumulate) {
    const int nd = static_cast<int>(out_shape.size());
    const i64 total = shape_numel(out_shape);
    std::vector<i64> idx(static_cast<size_t>(nd), 0);
    i64 soff = 0;
    for (i64 i = 0; i < total; ++i) {
        if (accumulate) dst[i] += src[soff];
        else dst[i] = src[soff];
        for (int d = nd - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            soff += src_stride_for_out[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            soff -= src_stride_for_out[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
}
} // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const int nd = x.ndim();
    check(static_cast<int>(perm.size()) == nd, "permute: rank mismatch");
    std::vector<bool> used(static_cast<size_t>(nd), false);
    for (int p : perm) {
        check(p >= 0 && p < nd && !used[static_cast<size_t>(p)], "permute: invalid axes");
        used[static_cast<size_t>(p)] = true;
    }
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i)
        out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    const auto in_strides = contiguous_strides(x.shape());
    std::vector<i64> src_stride(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i)
        src_stride[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    Tensor out = make_node(out_shape, x.dtype(), {x},
                           [x, out_shape, src_stride](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            // Walk output order, scatter-accumulate into the permuted source slot.
            const T* g = o.grd<T>();
            T* gx = x.grad_data<T>();
            const int nd = static_cast<int>(out_shape.size());
            const i64 total = o.numel();
            std::vector<i64> idx(static_cast<size_t>(nd), 0);
            i64 soff = 0;
            for (i64 i = 0; i < total; ++i) {
                gx[soff] += g[i];
                for (int d = nd - 1; d >= 0; --d) {
                    idx[static_cast<size_t>(d)]++;
                    soff += src_stride[static_cast<size_t>(d)];
                    if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
                    soff -= src_stride[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
                    idx[static_cast<size_t>(d)] = 0;
                }
            }
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        permute_copy(x.data<T>(), out.data<T>(), out_shape, src_stride, false);
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int dim) {
    check(!xs.empty(), "concat: no inputs");
    const int nd = xs[0].ndim();
    check(dim >= 0 && dim < nd, "concat: bad dim");
    i64 cat_total = 0;
    for (const Tensor& t : xs) {
        check(t.ndim() == nd && t.dtype() == xs[0].dtype(), "concat: rank/dtype mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != dim) check(t.dim(d) == xs[0].dim(d), "concat: off-axis extent mismatch");
        cat_total += t.dim(dim);
    }
    Shape out_shape = xs[0].shape();
    out_shape[static_cast<size_t>(dim)] = cat_total;

    i64 outer = 1, inner = 1;
    for (int d = 0; d < dim; ++d) outer *= xs[0].dim(d);
    for (int d = dim + 1; d < nd; ++d) inner *= xs[0].dim(d);

    Tensor out = make_node(out_shape, xs[0].dtype(), xs,
                           [xs, outer, inner, cat_total, dim](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* g = o.grd<T>();
            i64 off = 0;
            for (const Tensor& t : xs) {
                const i64 len = t.dim(dim) * inner;
                if (t.requires_grad()) {
                    t.impl()->ensure_grad();
                    T* gt = t.grad_data<T>();
                    for (i64 r = 0; r < outer; ++r)
                        accum(g + r * cat_total * inner + off, gt + r * len, len);
                }
                off += len;
            }
        });
    });
    with_dtype(xs[0].dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        T* y = out.data<T>();
        i64 off = 0;
        for (const Tensor& t : xs) {
            const i64 len = t.dim(dim) * inner;
            const T* src = t.data<T>();
            for (i64 r = 0; r < outer; ++r)
                std::memcpy(y + r * cat_total * inner + off, src + r * len,
                            static_cast<size_t>(len) * sizeof(T));
            off += len;
        }
    });
    return out;
}

namespace {
// Shared pad/crop machinery over layout [N, H, W, C] (stride C on x axis)
// or [N*C, H, W] style blocks. We express both pad_hw and pad_nchw through
// block copies: outer blocks of rows, each row W*inner wide.
template <class T>
void copy_rows_padded(const T* src, T* dst, i64 blocks, i64 H, i64 row_w,
                      i64 OH, i64 out_row_w) {
    // dst assumed zero-initialized; copies the top-left H×row_w region.
    for (i64 b = 0; b < blocks; ++b)
        for (i64 y = 0; y < H; ++y)
            std::memcpy(dst + (b * OH + y) * out_row_w, src + (b * H + y) * row_w,
                        static_cast<size_t>(row_w) * sizeof(T));
}

template <class T>
void accum_rows_cropped(const T* g, T* gx, i64 blocks, i64 H, i64 row_w, i64 OH,
                        i64 out_row_w) {
    for (i64 b = 0; b < blocks; ++b)
        for (i64 y = 0; y < H; ++y) {
            const T* gr = g + (b * OH + y) * out_row_w;
            T* xr = gx + (b * H + y) * row_w;
            for (i64 i = 0; i < row_w; ++i) xr[i] += gr[i];
        }
}
} // namespace

Tensor pad_hw(const Tensor& x, i64 ph, i64 pw) {
    check(x.ndim() == 4, "pad_hw: expects [N,H,W,C]");
    check(ph >= 0 && pw >= 0, "pad_hw: negative pad");
    const i64 N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const i64 OH = H + ph, OW = W + pw;
    Tensor out = make_node({N, OH, OW, C}, x.dtype(), {x},
                           [x, N, H, W, C, OH, OW](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            accum_rows_cropped(o.grd<T>(), x.grad_data<T>(), N, H, W * C, OH, OW * C);
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        copy_rows_padded(x.data<T>(), out.data<T>(), N, H, W * C, OH, OW * C);
    });
    return out;
}

Tensor crop_hw(const Tensor& x, i64 out_h, i64 out_w) {
    check(x.ndim() == 4, "crop_hw: expects [N,H,W,C]");
    const i64 N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    check(out_h <= H && out_w <= W && out_h >= 1 && out_w >= 1, "crop_hw: extents");
    Tensor out = make_node({N, out_h, out_w, C}, x.dtype(), {x},
                           [x, N, H, W, C, out_h, out_w](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            // Grad of crop = pad: scatter rows back into the larger map.
            const T* g = o.grd<T>();
            T* gx = x.grad_data<T>();
            for (i64 n = 0; n < N; ++n)
                for (i64 y = 0; y < out_h; ++y) {
                    const T* gr = g + (n * out_h + y) * out_w * C;
                    T* xr = gx + (n * H + y) * W * C;
                    for (i64 i = 0; i < out_w * C; ++i) xr[i] += gr[i];
                }
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* src = x.data<T>();
        T* dst = out.data<T>();
        for (i64 n = 0; n < N; ++n)
            for (i64 y = 0; y < out_h; ++y)
                std::memcpy(dst + (n * out_h + y) * out_w * C, src + (n * H + y) * W * C,
                            static_cast<size_t>(out_w * C) * sizeof(T));
    });
    return out;
}

Tensor pad_nchw(const Tensor& x, i64 ph, i64 pw) {
    check(x.ndim() == 4, "pad_nchw: expects [N,C,H,W]");
    check(ph >= 0 && pw >= 0, "pad_nchw: negative pad");
    const i64 NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 OH = H + ph, OW = W + pw;
    Tensor out = make_node({x.dim(0), x.dim(1), OH, OW}, x.dtype(), {x},
                           [x, NC, H, W, OH, OW](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            accum_rows_cropped(o.grd<T>(), x.grad_data<T>(), NC, H, W, OH, OW);
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        copy_rows_padded(x.data<T>(), out.data<T>(), NC, H, W, OH, OW);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& x) {
    const i64 n = x.numel();
    Tensor out = make_node({1}, x.dtype(), {x}, [x](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T g = o.grd<T>()[0];
            T* gx = x.grad_data<T>();
            const i64 n = x.numel();
            for (i64 i = 0; i < n; ++i) gx[i] += g;
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        out.data<T>()[0] = kern::reduce_sum(x.data<T>(), n);
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    const i64 n = x.numel();
    Tensor out = make_node({1}, x.dtype(), {x}, [x, n](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T g = o.grd<T>()[0] / static_cast<T>(n);
            T* gx = x.grad_data<T>();
            for (i64 i = 0; i < n; ++i) gx[i] += g;
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        out.data<T>()[0] = kern::reduce_sum(x.data<T>(), n) / static_cast<T>(n);
    });
    return out;
}

Tensor sum_rows(const Tensor& x) {
    check(x.ndim() == 2, "sum_rows: expects [R,n]");
    const i64 R = x.dim(0), n = x.dim(1);
    Tensor out = make_node({R}, x.dtype(), {x}, [x, R, n](TensorImpl& o) {
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (!x.requires_grad()) return;
            x.impl()->ensure_grad();
            const T* g = o.grd<T>();
            T* gx = x.grad_data<T>();
            for (i64 r = 0; r < R; ++r)
                for (i64 i = 0; i < n; ++i) gx[r * n + i] += g[r];
        });
    });
    with_dtype(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* xv = x.data<T>();
        T* y = out.data<T>();
        for (i64 r = 0; r < R; ++r) y[r] = kern::reduce_sum(xv + r * n, n);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Fused classification losses

namespace {

// Shared forward/backward so focal(0,1) is cross-entropy bit for bit.
Tensor classification_loss(const Tensor& logits, const std::vector<i64>& targets,
                           double gamma, double alpha, i64 ignore_index) {
    check(logits.ndim() == 2, "classification loss: logits must be [R,K]");
    const i64 R = logits.dim(0), K = logits.dim(1);
    check(static_cast<i64>(targets.size()) == R, "classification loss: target count");
    i64 valid = 0;
    for (i64 t : targets) {
        if (t == ignore_index) continue;
        if (t < 0 || t >= K)
            throw DataError("classification loss: target index " + std::to_string(t) +
                            " out of range [0," + std::to_string(K) + ")");
        ++valid;
    }
    auto tgt = std::make_shared<std::vector<i64>>(targets);

    Tensor out = make_node({1}, logits.dtype(), {logits},
                           [logits, tgt, gamma, alpha, ignore_index, R, K, valid](TensorImpl& o) {
        if (!logits.requires_grad() || valid == 0) return;
        with_dtype(o.dtype, [&](auto tag) {
            using T = typename decltype(tag)::type;
            logits.impl()->ensure_grad();
            const T gscale = o.grd<T>()[0] / static_cast<T>(valid);
            const T* lv = logits.data<T>();
            T* gl = logits.grad_data<T>();
            const T a = static_cast<T>(alpha), gm = static_cast<T>(gamma);
            for (i64 r = 0; r < R; ++r) {
                const i64 t = (*tgt)[static_cast<size_t>(r)];
                if (t == ignore_index) continue;
                const T* row = lv + r * K;
                T mx = row[0];
                for (i64 j = 1; j < K; ++j) mx = row[j] > mx ? row[j] : mx;
                T se = T(0);
                for (i64 j = 0; j < K; ++j) se += std::exp(row[j] - mx);
                const T lse = mx + std::log(se);
                const T pt = std::exp(row[t] - lse);
                // d(focal)/dlogit_j = B * (delta_tj - p_j), with the bounded form
                // B = a*g*(1-p)^(g-1)*p*log(p) - a*(1-p)^g  (B = -a when gamma = 0).
                T B;
                if (gamma == 0.0) {
                    B = -a;
                } else {
                    const T om = T(1) - pt;
                    const T plogp = pt > T(0) ? pt * std::log(pt) : T(0);
                    const T t1 = om > T(0) ? a * gm * std::pow(om, gm - T(1)) * plogp : T(0);
                    B = t1 - a * std::pow(om, gm);
                }
                for (i64 j = 0; j < K; ++j) {
                    const T pj = std::exp(row[j] - lse);
                    const T delta = (j == t) ? T(1) : T(0);
                    gl[r * K + j] += gscale * B * (delta - pj);
                }
            }
        });
    });

    with_dtype(logits.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* lv = logits.data<T>();
        const T a = static_cast<T>(alpha), gm = static_cast<T>(gamma);
        T total = T(0);
        for (i64 r = 0; r < R; ++r) {
            const i64 t = targets[static_cast<size_t>(r)];
            if (t == ignore_index) continue;
            const T* row = lv + r * K;
            T mx = row[0];
            for (i64 j = 1; j < K; ++j) mx = row[j] > mx ? row[j] : mx;
            T se = T(0);
            for (i64 j = 0; j < K; ++j) se += std::exp(row[j] - mx);
            const T lse = mx + std::log(se);
            const T ce = lse - row[t];
            if (gamma == 0.0 && alpha == 1.0) {
                total += ce;
            } else {
                const T pt = std::exp(row[t] - lse);
                total += a * std::pow(T(1) - pt, gm) * ce;
            }
        }
        out.data<T>()[0] = valid > 0 ? total / static_cast<T>(valid) : T(0);
    });
    return out;
}

} // namespace

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<i64>& targets,
                            i64 ignore_index) {
    return classification_loss(logits, targets, 0.0, 1.0, ignore_index);
}

Tensor focal_loss_logits(const Tensor& logits, const std::vector<i64>& targets,
                         double gamma, double alpha, i64 ignore_index) {
    check(gamma >= 0.0, "focal loss: gamma must be >= 0");
    return classification_loss(logits, targets, gamma, alpha, ignore_index);
}

} // namespace gtf::ops

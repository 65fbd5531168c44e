#pragma once

// Dense compute kernels. Every kernel comes in two variants: a serial
// reference (kern::serial) and an OpenMP-parallel version (kern::par) that
// distributes independent output elements over threads. The per-element
// arithmetic, including the order of every floating-point reduction, is
// shared between the two, so their results are bitwise identical; tests and
// the kernel benchmark rely on this. The dispatching wrappers in kern:: pick
// the active variant from a process-global mode flag.

#include <atomic>
#include <cmath>
#include <cstdint>

namespace gtf::kern {

using i64 = std::int64_t;

enum class Mode { serial, parallel };

inline std::atomic<Mode>& mode_flag() {
    static std::atomic<Mode> m{Mode::parallel};
    return m;
}
inline void set_mode(Mode m) { mode_flag().store(m, std::memory_order_relaxed); }
inline Mode mode() { return mode_flag().load(std::memory_order_relaxed); }

// Loops below this many output elements stay serial even in parallel mode.
inline constexpr i64 kParGrain = 2048;

namespace detail {

template <class T>
inline T dot(const T* a, const T* b, i64 n) {
    T s = T(0);
    for (i64 k = 0; k < n; ++k) s += a[k] * b[k];
    return s;
}

template <class T>
inline T dot_strided(const T* a, const T* b, i64 n, i64 stride_b) {
    T s = T(0);
    for (i64 k = 0; k < n; ++k) s += a[k] * b[k * stride_b];
    return s;
}

// One output element of a grouped convolution. Reduction order is
// (ci, kh, kw), fixed for both kernel variants.
template <class T>
inline T conv_out_elem(const T* in, const T* w, i64 C_in_g, i64 H, i64 W,
                       i64 kH, i64 kW, i64 oy, i64 ox, i64 stride_h,
                       i64 stride_w, i64 pad_h, i64 pad_w, i64 in_chan0,
                       i64 in_chan_stride) {
    T s = T(0);
    const i64 y0 = oy * stride_h - pad_h;
    const i64 x0 = ox * stride_w - pad_w;
    for (i64 ci = 0; ci < C_in_g; ++ci) {
        const T* in_c = in + (in_chan0 + ci) * in_chan_stride;
        const T* w_c = w + ci * kH * kW;
        for (i64 ky = 0; ky < kH; ++ky) {
            const i64 y = y0 + ky;
            if (y < 0 || y >= H) continue;
            for (i64 kx = 0; kx < kW; ++kx) {
                const i64 x = x0 + kx;
                if (x < 0 || x >= W) continue;
                s += in_c[y * W + x] * w_c[ky * kW + kx];
            }
        }
    }
    return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// matmul: C[b,m,p] = sum_k A[b,m,k] * B[b,k,p]. b_batched=false reuses the
// same B for every batch (linear layers).

namespace serial {

template <class T>
void matmul(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
            bool b_batched) {
    for (i64 i = 0; i < batch * M; ++i) {
        const i64 bi = i / M, m = i % M;
        const T* arow = a + (bi * M + m) * K;
        const T* bmat = b + (b_batched ? bi * K * P : 0);
        T* crow = c + (bi * M + m) * P;
        for (i64 p = 0; p < P; ++p)
            crow[p] = detail::dot_strided(arow, bmat + p, K, P);
    }
}

// C[b,m,p] = sum_k A[b,m,k] * B[b,p,k]  (B transposed; attention scores)
template <class T>
void matmul_nt(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
               bool b_batched) {
    for (i64 i = 0; i < batch * M; ++i) {
        const i64 bi = i / M, m = i % M;
        const T* arow = a + (bi * M + m) * K;
        const T* bmat = b + (b_batched ? bi * P * K : 0);
        T* crow = c + (bi * M + m) * P;
        for (i64 p = 0; p < P; ++p)
            crow[p] = detail::dot(arow, bmat + p * K, K);
    }
}

// C[b,k,p] = sum_m A[b,m,k] * B[b,m,p]  (A transposed; weight gradients)
template <class T>
void matmul_tn(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
               bool b_batched) {
    for (i64 i = 0; i < batch * K; ++i) {
        const i64 bi = i / K, k = i % K;
        const T* amat = a + bi * M * K;
        const T* bmat = b + (b_batched ? bi * M * P : 0);
        T* crow = c + (bi * K + k) * P;
        for (i64 p = 0; p < P; ++p) {
            T s = T(0);
            for (i64 m = 0; m < M; ++m) s += amat[m * K + k] * bmat[m * P + p];
            crow[p] = s;
        }
    }
}

template <class T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, i64 N,
                i64 C_in, i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH,
                i64 OW, i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w,
                i64 groups) {
    const i64 C_in_g = C_in / groups;
    const i64 C_out_g = C_out / groups;
    const i64 total = N * C_out * OH;
    for (i64 idx = 0; idx < total; ++idx) {
        const i64 oy = idx % OH;
        const i64 co = (idx / OH) % C_out;
        const i64 n = idx / (OH * C_out);
        const i64 g = co / C_out_g;
        const T* in_n = in + n * C_in * H * W;
        const T* w_co = w + co * C_in_g * kH * kW;
        T* out_row = out + ((n * C_out + co) * OH + oy) * OW;
        for (i64 ox = 0; ox < OW; ++ox) {
            T s = detail::conv_out_elem(in_n, w_co, C_in_g, H, W, kH, kW, oy,
                                        ox, stride_h, stride_w, pad_h, pad_w,
                                        g * C_in_g, H * W);
            if (bias) s += bias[co];
            out_row[ox] = s;
        }
    }
}

// Gather formulation: each input element sums the output positions that
// reference it, so elements are independent.
template <class T>
void conv2d_bwd_input(const T* gout, const T* w, T* gin, i64 N, i64 C_in,
                      i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH, i64 OW,
                      i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w,
                      i64 groups) {
    const i64 C_in_g = C_in / groups;
    const i64 C_out_g = C_out / groups;
    const i64 total = N * C_in * H;
    for (i64 idx = 0; idx < total; ++idx) {
        const i64 y = idx % H;
        const i64 ci = (idx / H) % C_in;
        const i64 n = idx / (H * C_in);
        const i64 g = ci / C_in_g;
        const i64 cig = ci % C_in_g;
        T* gin_row = gin + ((n * C_in + ci) * H + y) * W;
        for (i64 x = 0; x < W; ++x) {
            T s = T(0);
            for (i64 co = g * C_out_g; co < (g + 1) * C_out_g; ++co) {
                const T* w_co = w + (co * C_in_g + cig) * kH * kW;
                const T* go_c = gout + (n * C_out + co) * OH * OW;
                for (i64 ky = 0; ky < kH; ++ky) {
                    const i64 ty = y + pad_h - ky;
                    if (ty < 0 || ty % stride_h != 0) continue;
                    const i64 oy = ty / stride_h;
                    if (oy >= OH) continue;
                    for (i64 kx = 0; kx < kW; ++kx) {
                        const i64 tx = x + pad_w - kx;
                        if (tx < 0 || tx % stride_w != 0) continue;
                        const i64 ox = tx / stride_w;
                        if (ox >= OW) continue;
                        s += go_c[oy * OW + ox] * w_co[ky * kW + kx];
                    }
                }
            }
            gin_row[x] += s;
        }
    }
}

// Each weight element owns an independent reduction over (n, oy, ox).
template <class T>
void conv2d_bwd_weight(const T* gout, const T* in, T* gw, i64 N, i64 C_in,
                       i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH, i64 OW,
                       i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w,
                       i64 groups) {
    const i64 C_in_g = C_in / groups;
    const i64 C_out_g = C_out / groups;
    const i64 total = C_out * C_in_g * kH * kW;
    for (i64 idx = 0; idx < total; ++idx) {
        const i64 kx = idx % kW;
        const i64 ky = (idx / kW) % kH;
        const i64 cig = (idx / (kW * kH)) % C_in_g;
        const i64 co = idx / (kW * kH * C_in_g);
        const i64 g = co / C_out_g;
        const i64 ci = g * C_in_g + cig;
        T s = T(0);
        for (i64 n = 0; n < N; ++n) {
            const T* go_c = gout + (n * C_out + co) * OH * OW;
            const T* in_c = in + (n * C_in + ci) * H * W;
            for (i64 oy = 0; oy < OH; ++oy) {
                const i64 y = oy * stride_h - pad_h + ky;
                if (y < 0 || y >= H) continue;
                for (i64 ox = 0; ox < OW; ++ox) {
                    const i64 x = ox * stride_w - pad_w + kx;
                    if (x < 0 || x >= W) continue;
                    s += go_c[oy * OW + ox] * in_c[y * W + x];
                }
            }
        }
        gw[idx] += s;
    }
}

template <class T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * n;
        T* yr = y + r * n;
        T mx = xr[0];
        for (i64 i = 1; i < n; ++i) mx = xr[i] > mx ? xr[i] : mx;
        T sum = T(0);
        for (i64 i = 0; i < n; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            sum += yr[i];
        }
        const T inv = T(1) / sum;
        for (i64 i = 0; i < n; ++i) yr[i] *= inv;
    }
}

template <class T>
void softmax_rows_bwd(const T* y, const T* gy, T* gx, i64 rows, i64 n) {
    for (i64 r = 0; r < rows; ++r) {
        const T* yr = y + r * n;
        const T* gyr = gy + r * n;
        T* gxr = gx + r * n;
        T acc = T(0);
        for (i64 i = 0; i < n; ++i) acc += gyr[i] * yr[i];
        for (i64 i = 0; i < n; ++i) gxr[i] += yr[i] * (gyr[i] - acc);
    }
}

template <class T>
void layer_norm_rows(const T* x, const T* gamma, const T* beta, T* y, T* mean,
                     T* rstd, i64 rows, i64 n, T eps) {
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * n;
        T* yr = y + r * n;
        T mu = T(0);
        for (i64 i = 0; i < n; ++i) mu += xr[i];
        mu /= T(n);
        T var = T(0);
        for (i64 i = 0; i < n; ++i) {
            const T d = xr[i] - mu;
            var += d * d;
        }
        var /= T(n);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        for (i64 i = 0; i < n; ++i)
            yr[i] = (xr[i] - mu) * rs * gamma[i] + beta[i];
    }
}

template <class T>
void layer_norm_rows_bwd_x(const T* x, const T* gamma, const T* gy,
                           const T* mean, const T* rstd, T* gx, i64 rows,
                           i64 n) {
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * n;
        const T* gyr = gy + r * n;
        T* gxr = gx + r * n;
        const T mu = mean[r], rs = rstd[r];
        T sum_g = T(0), sum_gx = T(0);
        for (i64 i = 0; i < n; ++i) {
            const T gh = gyr[i] * gamma[i];
            sum_g += gh;
            sum_gx += gh * (xr[i] - mu);
        }
        const T inv_n = T(1) / T(n);
        for (i64 i = 0; i < n; ++i) {
            const T gh = gyr[i] * gamma[i];
            const T xhat = (xr[i] - mu) * rs;
            gxr[i] += rs * (gh - inv_n * sum_g - xhat * inv_n * sum_gx * rs);
        }
    }
}

// Column-wise gather over rows; each column independent.
template <class T>
void layer_norm_rows_bwd_gb(const T* x, const T* gy, const T* mean,
                            const T* rstd, T* ggamma, T* gbeta, i64 rows,
                            i64 n) {
    for (i64 i = 0; i < n; ++i) {
        T sg = T(0), sb = T(0);
        for (i64 r = 0; r < rows; ++r) {
            const T xhat = (x[r * n + i] - mean[r]) * rstd[r];
            sg += gy[r * n + i] * xhat;
            sb += gy[r * n + i];
        }
        ggamma[i] += sg;
        gbeta[i] += sb;
    }
}

// Bilinear interpolation, align_corners = false project-wide.
template <class T>
void bilinear_fwd(const T* in, T* out, i64 planes, i64 H, i64 W, i64 OH,
                  i64 OW) {
    const double sy = static_cast<double>(H) / static_cast<double>(OH);
    const double sx = static_cast<double>(W) / static_cast<double>(OW);
    for (i64 pc = 0; pc < planes; ++pc) {
        const T* ip = in + pc * H * W;
        T* op = out + pc * OH * OW;
        for (i64 oy = 0; oy < OH; ++oy) {
            const double fy = (oy + 0.5) * sy - 0.5;
            i64 y0 = static_cast<i64>(std::floor(fy));
            const T dy = static_cast<T>(fy - y0);
            const i64 y0c = y0 < 0 ? 0 : (y0 >= H ? H - 1 : y0);
            const i64 y1c = y0 + 1 < 0 ? 0 : (y0 + 1 >= H ? H - 1 : y0 + 1);
            for (i64 ox = 0; ox < OW; ++ox) {
                const double fx = (ox + 0.5) * sx - 0.5;
                i64 x0 = static_cast<i64>(std::floor(fx));
                const T dx = static_cast<T>(fx - x0);
                const i64 x0c = x0 < 0 ? 0 : (x0 >= W ? W - 1 : x0);
                const i64 x1c = x0 + 1 < 0 ? 0 : (x0 + 1 >= W ? W - 1 : x0 + 1);
                const T v00 = ip[y0c * W + x0c], v01 = ip[y0c * W + x1c];
                const T v10 = ip[y1c * W + x0c], v11 = ip[y1c * W + x1c];
                op[oy * OW + ox] = (T(1) - dy) * ((T(1) - dx) * v00 + dx * v01) +
                                   dy * ((T(1) - dx) * v10 + dx * v11);
            }
        }
    }
}

// Scatter form; planes are independent so the parallel twin splits on them.
template <class T>
void bilinear_bwd(const T* gout, T* gin, i64 planes, i64 H, i64 W, i64 OH,
                  i64 OW) {
    const double sy = static_cast<double>(H) / static_cast<double>(OH);
    const double sx = static_cast<double>(W) / static_cast<double>(OW);
    for (i64 pc = 0; pc < planes; ++pc) {
        const T* gp = gout + pc * OH * OW;
        T* ip = gin + pc * H * W;
        for (i64 oy = 0; oy < OH; ++oy) {
            const double fy = (oy + 0.5) * sy - 0.5;
            i64 y0 = static_cast<i64>(std::floor(fy));
            const T dy = static_cast<T>(fy - y0);
            const i64 y0c = y0 < 0 ? 0 : (y0 >= H ? H - 1 : y0);
            const i64 y1c = y0 + 1 < 0 ? 0 : (y0 + 1 >= H ? H - 1 : y0 + 1);
            for (i64 ox = 0; ox < OW; ++ox) {
                const double fx = (ox + 0.5) * sx - 0.5;
                i64 x0 = static_cast<i64>(std::floor(fx));
                const T dx = static_cast<T>(fx - x0);
                const i64 x0c = x0 < 0 ? 0 : (x0 >= W ? W - 1 : x0);
                const i64 x1c = x0 + 1 < 0 ? 0 : (x0 + 1 >= W ? W - 1 : x0 + 1);
                const T g = gp[oy * OW + ox];
                ip[y0c * W + x0c] += (T(1) - dy) * (T(1) - dx) * g;
                ip[y0c * W + x1c] += (T(1) - dy) * dx * g;
                ip[y1c * W + x0c] += dy * (T(1) - dx) * g;
                ip[y1c * W + x1c] += dy * dx * g;
            }
        }
    }
}

template <class T, class F>
void map1(const T* x, T* y, i64 n, F f) {
    for (i64 i = 0; i < n; ++i) y[i] = f(x[i]);
}

template <class T, class F>
void map2(const T* a, const T* b, T* y, i64 n, F f) {
    for (i64 i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
}

// y[i] += f(...); used by backward accumulation paths.
template <class T, class F>
void accum1(const T* x, T* y, i64 n, F f) {
    for (i64 i = 0; i < n; ++i) y[i] += f(x[i]);
}

template <class T, class F>
void accum2(const T* a, const T* b, T* y, i64 n, F f) {
    for (i64 i = 0; i < n; ++i) y[i] += f(a[i], b[i]);
}

} // namespace serial

// ---------------------------------------------------------------------------
// Parallel twins. Outer loops split over threads; bodies reuse the serial
// per-element helpers so results stay bitwise identical.

namespace par {

template <class T>
void matmul(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
            bool b_batched) {
    const i64 total = batch * M;
#pragma omp parallel for schedule(static) if (total * P * K > kParGrain)
    for (i64 i = 0; i < total; ++i) {
        const i64 bi = i / M, m = i % M;
        const T* arow = a + (bi * M + m) * K;
        const T* bmat = b + (b_batched ? bi * K * P : 0);
        T* crow = c + (bi * M + m) * P;
        for (i64 p = 0; p < P; ++p)
            crow[p] = detail::dot_strided(arow, bmat + p, K, P);
    }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
               bool b_batched) {
    const i64 total = batch * M;
#pragma omp parallel for schedule(static) if (total * P * K > kParGrain)
    for (i64 i = 0; i < total; ++i) {
        const i64 bi = i / M, m = i % M;
        const T* arow = a + (bi * M + m) * K;
        const T* bmat = b + (b_batched ? bi * P * K : 0);
        T* crow = c + (bi * M + m) * P;
        for (i64 p = 0; p < P; ++p)
            crow[p] = detail::dot(arow, bmat + p * K, K);
    }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
               bool b_batched) {
    const i64 total = batch * K;
#pragma omp parallel for schedule(static) if (total * P * M > kParGrain)
    for (i64 i = 0; i < total; ++i) {
        const i64 bi = i / K, k = i % K;
        const T* amat = a + bi * M * K;
        const T* bmat = b + (b_batched ? bi * M * P : 0);
        T* crow = c + (bi * K + k) * P;
        for (i64 p = 0; p < P; ++p) {
            T s = T(0);
            for (i64 m = 0; m < M; ++m) s += amat[m * K + k] * bmat[m * P + p];
            crow[p] = s;
        }
    }
}

template <class T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, i64 N,
                i64 C_in, i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH,
                i64 OW, i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w,
                i64 groups) {
    const i64 C_in_g = C_in / groups;
    const i64 C_out_g = C_out / groups;
    const i64 total = N * C_out * OH;
#pragma omp parallel for schedule(static) if (total * OW * C_in_g * kH * kW > kParGrain)
    for (i64 idx = 0; idx < total; ++idx) {
        const i64 oy = idx % OH;
        const i64 co = (idx / OH) % C_out;
        const i64 n = idx / (OH * C_out);
        const i64 g = co / C_out_g;
        const T* in_n = in + n * C_in * H * W;
        const T* w_co = w + co * C_in_g * kH * kW;
        T* out_row = out + ((n * C_out + co) * OH + oy) * OW;
        for (i64 ox = 0; ox < OW; ++ox) {
            T s = detail::conv_out_elem(in_n, w_co, C_in_g, H, W, kH, kW, oy,
                                        ox, stride_h, stride_w, pad_h, pad_w,
                                        g * C_in_g, H * W);
            if (bias) s += bias[co];
            out_row[ox] = s;
        }
    }
}

template <class T>
void conv2d_bwd_input(const T* gout, const T* w, T* gin, i64 N, i64 C_in,
                      i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH, i64 OW,
                      i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w,
                      i64 groups) {
    const i64 C_in_g = C_in / groups;
    const i64 C_out_g = C_out / groups;
    const i64 total = N * C_in * H;
#pragma omp parallel for schedule(static) if (total * W * C_out_g > kParGrain)
    for (i64 idx = 0; idx < total; ++idx) {
        const i64 y = idx % H;
        const i64 ci = (idx / H) % C_in;
        const i64 n = idx / (H * C_in);
        const i64 g = ci / C_in_g;
        const i64 cig = ci % C_in_g;
        T* gin_row = gin + ((n * C_in + ci) * H + y) * W;
        for (i64 x = 0; x < W; ++x) {
            T s = T(0);
            for (i64 co = g * C_out_g; co < (g + 1) * C_out_g; ++co) {
                const T* w_co = w + (co * C_in_g + cig) * kH * kW;
                const T* go_c = gout + (n * C_out + co) * OH * OW;
                for (i64 ky = 0; ky < kH; ++ky) {
                    const i64 ty = y + pad_h - ky;
                    if (ty < 0 || ty % stride_h != 0) continue;
                    const i64 oy = ty / stride_h;
                    if (oy >= OH) continue;
                    for (i64 kx = 0; kx < kW; ++kx) {
                        const i64 tx = x + pad_w - kx;
                        if (tx < 0 || tx % stride_w != 0) continue;
                        const i64 ox = tx / stride_w;
                        if (ox >= OW) continue;
                        s += go_c[oy * OW + ox] * w_co[ky * kW + kx];
                    }
                }
            }
            gin_row[x] += s;
        }
    }
}

template <class T>
void conv2d_bwd_weight(const T* gout, const T* in, T* gw, i64 N, i64 C_in,
                       i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH, i64 OW,
                       i64 stride_h, i64 stride_w, i64 pad_h, i64 pad_w,
                       i64 groups) {
    const i64 C_in_g = C_in / groups;
    const i64 C_out_g = C_out / groups;
    const i64 total = C_out * C_in_g * kH * kW;
#pragma omp parallel for schedule(static) if (total * N * OH * OW > kParGrain)
    for (i64 idx = 0; idx < total; ++idx) {
        const i64 kx = idx % kW;
        const i64 ky = (idx / kW) % kH;
        const i64 cig = (idx / (kW * kH)) % C_in_g;
        const i64 co = idx / (kW * kH * C_in_g);
        const i64 g = co / C_out_g;
        const i64 ci = g * C_in_g + cig;
        T s = T(0);
        for (i64 n = 0; n < N; ++n) {
            const T* go_c = gout + (n * C_out + co) * OH * OW;
            const T* in_c = in + (n * C_in + ci) * H * W;
            for (i64 oy = 0; oy < OH; ++oy) {
                const i64 y = oy * stride_h - pad_h + ky;
                if (y < 0 || y >= H) continue;
                for (i64 ox = 0; ox < OW; ++ox) {
                    const i64 x = ox * stride_w - pad_w + kx;
                    if (x < 0 || x >= W) continue;
                    s += go_c[oy * OW + ox] * in_c[y * W + x];
                }
            }
        }
        gw[idx] += s;
    }
}

template <class T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
#pragma omp parallel for schedule(static) if (rows * n > kParGrain)
    for (i64 r = 0; r < rows; ++r)
        serial::softmax_rows(x + r * n, y + r * n, 1, n);
}

template <class T>
void softmax_rows_bwd(const T* y, const T* gy, T* gx, i64 rows, i64 n) {
#pragma omp parallel for schedule(static) if (rows * n > kParGrain)
    for (i64 r = 0; r < rows; ++r)
        serial::softmax_rows_bwd(y + r * n, gy + r * n, gx + r * n, 1, n);
}

template <class T>
void layer_norm_rows(const T* x, const T* gamma, const T* beta, T* y, T* mean,
                     T* rstd, i64 rows, i64 n, T eps) {
#pragma omp parallel for schedule(static) if (rows * n > kParGrain)
    for (i64 r = 0; r < rows; ++r)
        serial::layer_norm_rows(x + r * n, gamma, beta, y + r * n, mean + r,
                                rstd + r, 1, n, eps);
}

template <class T>
void layer_norm_rows_bwd_x(const T* x, const T* gamma, const T* gy,
                           const T* mean, const T* rstd, T* gx, i64 rows,
                           i64 n) {
#pragma omp parallel for schedule(static) if (rows * n > kParGrain)
    for (i64 r = 0; r < rows; ++r)
        serial::layer_norm_rows_bwd_x(x + r * n, gamma, gy + r * n, mean + r,
                                      rstd + r, gx + r * n, 1, n);
}

template <class T>
void layer_norm_rows_bwd_gb(const T* x, const T* gy, const T* mean,
                            const T* rstd, T* ggamma, T* gbeta, i64 rows,
                            i64 n) {
#pragma omp parallel for schedule(static) if (rows * n > kParGrain)
    for (i64 i = 0; i < n; ++i) {
        T sg = T(0), sb = T(0);
        for (i64 r = 0; r < rows; ++r) {
            const T xhat = (x[r * n + i] - mean[r]) * rstd[r];
            sg += gy[r * n + i] * xhat;
            sb += gy[r * n + i];
        }
        ggamma[i] += sg;
        gbeta[i] += sb;
    }
}

template <class T>
void bilinear_fwd(const T* in, T* out, i64 planes, i64 H, i64 W, i64 OH,
                  i64 OW) {
#pragma omp parallel for schedule(static) if (planes * OH * OW > kParGrain)
    for (i64 pc = 0; pc < planes; ++pc)
        serial::bilinear_fwd(in + pc * H * W, out + pc * OH * OW, 1, H, W, OH,
                             OW);
}

template <class T>
void bilinear_bwd(const T* gout, T* gin, i64 planes, i64 H, i64 W, i64 OH,
                  i64 OW) {
#pragma omp parallel for schedule(static) if (planes * OH * OW > kParGrain)
    for (i64 pc = 0; pc < planes; ++pc)
        serial::bilinear_bwd(gout + pc * OH * OW, gin + pc * H * W, 1, H, W,
                             OH, OW);
}

template <class T, class F>
void map1(const T* x, T* y, i64 n, F f) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (i64 i = 0; i < n; ++i) y[i] = f(x[i]);
}

template <class T, class F>
void map2(const T* a, const T* b, T* y, i64 n, F f) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (i64 i = 0; i < n; ++i) y[i] = f(a[i], b[i]);
}

template <class T, class F>
void accum1(const T* x, T* y, i64 n, F f) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (i64 i = 0; i < n; ++i) y[i] += f(x[i]);
}

template <class T, class F>
void accum2(const T* a, const T* b, T* y, i64 n, F f) {
#pragma omp parallel for schedule(static) if (n > kParGrain)
    for (i64 i = 0; i < n; ++i) y[i] += f(a[i], b[i]);
}

} // namespace par

// ---------------------------------------------------------------------------
// Mode-dispatching wrappers. Reductions that have no per-element split
// (full-tensor sums) stay serial in both modes to keep one fixed order.

template <class T>
void matmul(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
            bool b_batched) {
    if (mode() == Mode::parallel)
        par::matmul(a, b, c, batch, M, K, P, b_batched);
    else
        serial::matmul(a, b, c, batch, M, K, P, b_batched);
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
               bool b_batched) {
    if (mode() == Mode::parallel)
        par::matmul_nt(a, b, c, batch, M, K, P, b_batched);
    else
        serial::matmul_nt(a, b, c, batch, M, K, P, b_batched);
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, i64 batch, i64 M, i64 K, i64 P,
               bool b_batched) {
    if (mode() == Mode::parallel)
        par::matmul_tn(a, b, c, batch, M, K, P, b_batched);
    else
        serial::matmul_tn(a, b, c, batch, M, K, P, b_batched);
}

template <class T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, i64 N,
                i64 C_in, i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH,
                i64 OW, i64 sh, i64 sw, i64 ph, i64 pw, i64 groups) {
    if (mode() == Mode::parallel)
        par::conv2d_fwd(in, w, bias, out, N, C_in, H, W, C_out, kH, kW, OH, OW,
                        sh, sw, ph, pw, groups);
    else
        serial::conv2d_fwd(in, w, bias, out, N, C_in, H, W, C_out, kH, kW, OH,
                           OW, sh, sw, ph, pw, groups);
}

template <class T>
void conv2d_bwd_input(const T* gout, const T* w, T* gin, i64 N, i64 C_in,
                      i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH, i64 OW,
                      i64 sh, i64 sw, i64 ph, i64 pw, i64 groups) {
    if (mode() == Mode::parallel)
        par::conv2d_bwd_input(gout, w, gin, N, C_in, H, W, C_out, kH, kW, OH,
                              OW, sh, sw, ph, pw, groups);
    else
        serial::conv2d_bwd_input(gout, w, gin, N, C_in, H, W, C_out, kH, kW,
                                 OH, OW, sh, sw, ph, pw, groups);
}

template <class T>
void conv2d_bwd_weight(const T* gout, const T* in, T* gw, i64 N, i64 C_in,
                       i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 OH, i64 OW,
                       i64 sh, i64 sw, i64 ph, i64 pw, i64 groups) {
    if (mode() == Mode::parallel)
        par::conv2d_bwd_weight(gout, in, gw, N, C_in, H, W, C_out, kH, kW, OH,
                               OW, sh, sw, ph, pw, groups);
    else
        serial::conv2d_bwd_weight(gout, in, gw, N, C_in, H, W, C_out, kH, kW,
                                  OH, OW, sh, sw, ph, pw, groups);
}

template <class T>
void softmax_rows(const T* x, T* y, i64 rows, i64 n) {
    if (mode() == Mode::parallel)
        par::softmax_rows(x, y, rows, n);
    else
        serial::softmax_rows(x, y, rows, n);
}

template <class T>
void softmax_rows_bwd(const T* y, const T* gy, T* gx, i64 rows, i64 n) {
    if (mode() == Mode::parallel)
        par::softmax_rows_bwd(y, gy, gx, rows, n);
    else
        serial::softmax_rows_bwd(y, gy, gx, rows, n);
}

template <class T>
void layer_norm_rows(const T* x, const T* gamma, const T* beta, T* y, T* mean,
                     T* rstd, i64 rows, i64 n, T eps) {
    if (mode() == Mode::parallel)
        par::layer_norm_rows(x, gamma, beta, y, mean, rstd, rows, n, eps);
    else
        serial::layer_norm_rows(x, gamma, beta, y, mean, rstd, rows, n, eps);
}

template <class T>
void layer_norm_rows_bwd_x(const T* x, const T* gamma, const T* gy,
                           const T* mean, const T* rstd, T* gx, i64 rows,
                           i64 n) {
    if (mode() == Mode::parallel)
        par::layer_norm_rows_bwd_x(x, gamma, gy, mean, rstd, gx, rows, n);
    else
        serial::layer_norm_rows_bwd_x(x, gamma, gy, mean, rstd, gx, rows, n);
}

template <class T>
void layer_norm_rows_bwd_gb(const T* x, const T* gy, const T* mean,
                            const T* rstd, T* ggamma, T* gbeta, i64 rows,
                            i64 n) {
    if (mode() == Mode::parallel)
        par::layer_norm_rows_bwd_gb(x, gy, mean, rstd, ggamma, gbeta, rows, n);
    else
        serial::layer_norm_rows_bwd_gb(x, gy, mean, rstd, ggamma, gbeta, rows,
                                       n);
}

template <class T>
void bilinear_fwd(const T* in, T* out, i64 planes, i64 H, i64 W, i64 OH,
                  i64 OW) {
    if (mode() == Mode::parallel)
        par::bilinear_fwd(in, out, planes, H, W, OH, OW);
    else
        serial::bilinear_fwd(in, out, planes, H, W, OH, OW);
}

template <class T>
void bilinear_bwd(const T* gout, T* gin, i64 planes, i64 H, i64 W, i64 OH,
                  i64 OW) {
    if (mode() == Mode::parallel)
        par::bilinear_bwd(gout, gin, planes, H, W, OH, OW);
    else
        serial::bilinear_bwd(gout, gin, planes, H, W, OH, OW);
}

template <class T, class F>
void map1(const T* x, T* y, i64 n, F f) {
    if (mode() == Mode::parallel)
        par::map1(x, y, n, f);
    else
        serial::map1(x, y, n, f);
}

template <class T, class F>
void map2(const T* a, const T* b, T* y, i64 n, F f) {
    if (mode() == Mode::parallel)
        par::map2(a, b, y, n, f);
    else
        serial::map2(a, b, y, n, f);
}

template <class T, class F>
void accum1(const T* x, T* y, i64 n, F f) {
    if (mode() == Mode::parallel)
        par::accum1(x, y, n, f);
    else
        serial::accum1(x, y, n, f);
}

template <class T, class F>
void accum2(const T* a, const T* b, T* y, i64 n, F f) {
    if (mode() == Mode::parallel)
        par::accum2(a, b, y, n, f);
    else
        serial::accum2(a, b, y, n, f);
}

// Full-tensor reduction, single fixed order in both modes.
template <class T>
T reduce_sum(const T* x, i64 n) {
    T s = T(0);
    for (i64 i = 0; i < n; ++i) s += x[i];
    return s;
}

} // namespace gtf::kern

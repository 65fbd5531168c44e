#pragma once

// Brute-force reference implementations used by tests and the selftest
// command. Deliberately written as plain quadruple loops over doubles,
// sharing no code with the kernels they check.

#include <cmath>
#include <cstdint>
#include <vector>

namespace gtf::oracle {

using i64 = std::int64_t;
using vecd = std::vector<double>;

inline vecd matmul(const vecd& a, const vecd& b, i64 M, i64 K, i64 P) {
    vecd c(static_cast<size_t>(M * P), 0.0);
    for (i64 m = 0; m < M; ++m)
        for (i64 p = 0; p < P; ++p) {
            double s = 0.0;
            for (i64 k = 0; k < K; ++k)
                s += a[static_cast<size_t>(m * K + k)] * b[static_cast<size_t>(k * P + p)];
            c[static_cast<size_t>(m * P + p)] = s;
        }
    return c;
}

inline vecd conv2d(const vecd& in, const vecd& w, const vecd& bias, i64 N,
                   i64 C_in, i64 H, i64 W, i64 C_out, i64 kH, i64 kW, i64 sh,
                   i64 sw, i64 ph, i64 pw, i64 groups) {
    const i64 OH = (H + 2 * ph - kH) / sh + 1;
    const i64 OW = (W + 2 * pw - kW) / sw + 1;
    const i64 cig = C_in / groups, cog = C_out / groups;
    vecd out(static_cast<size_t>(N * C_out * OH * OW), 0.0);
    for (i64 n = 0; n < N; ++n)
        for (i64 co = 0; co < C_out; ++co)
            for (i64 oy = 0; oy < OH; ++oy)
                for (i64 ox = 0; ox < OW; ++ox) {
                    double s = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
                    const i64 g = co / cog;
                    for (i64 c = 0; c < cig; ++c)
                        for (i64 ky = 0; ky < kH; ++ky)
                            for (i64 kx = 0; kx < kW; ++kx) {
                                const i64 y = oy * sh - ph + ky;
                                const i64 x = ox * sw - pw + kx;
                                if (y < 0 || y >= H || x < 0 || x >= W) continue;
                                s += in[static_cast<size_t>(((n * C_in + g * cig + c) * H + y) * W + x)] *
                                     w[static_cast<size_t>(((co * cig + c) * kH + ky) * kW + kx)];
                            }
                    out[static_cast<size_t>(((n * C_out + co) * OH + oy) * OW + ox)] = s;
                }
    return out;
}

inline vecd softmax_row(const vecd& x) {
    double mx = x[0];
    for (double v : x) mx = v > mx ? v : mx;
    vecd y(x.size());
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) { y[i] = std::exp(x[i] - mx); s += y[i]; }
    for (double& v : y) v /= s;
    return y;
}

// Dense single-head attention: out = softmax(Q Kᵀ / sqrt(d)) V.
// Q: [Tq,d], K,V: [Tk,d].
inline vecd attention(const vecd& q, const vecd& k, const vecd& v, i64 Tq,
                      i64 Tk, i64 d) {
    vecd out(static_cast<size_t>(Tq * d), 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (i64 i = 0; i < Tq; ++i) {
        vecd row(static_cast<size_t>(Tk));
        for (i64 j = 0; j < Tk; ++j) {
            double s = 0.0;
            for (i64 c = 0; c < d; ++c)
                s += q[static_cast<size_t>(i * d + c)] * k[static_cast<size_t>(j * d + c)];
            row[static_cast<size_t>(j)] = s * scale;
        }
        const vecd att = softmax_row(row);
        for (i64 j = 0; j < Tk; ++j)
            for (i64 c = 0; c < d; ++c)
                out[static_cast<size_t>(i * d + c)] +=
                    att[static_cast<size_t>(j)] * v[static_cast<size_t>(j * d + c)];
    }
    return out;
}

inline vecd layer_norm_row(const vecd& x, const vecd& gamma, const vecd& beta,
                           double eps) {
    const double n = static_cast<double>(x.size());
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= n;
    const double rs = 1.0 / std::sqrt(var + eps);
    vecd y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) * rs * gamma[i] + beta[i];
    return y;
}

} // namespace gtf::oracle

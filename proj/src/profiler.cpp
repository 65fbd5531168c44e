#include "gtf/profiler.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace gtf {

namespace {

i64 conv_out(i64 in, i64 k, i64 s, i64 p) { return (in + 2 * p - k) / s + 1; }
i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }

struct StageGeom {
    i64 h = 0, w = 0; // token map extents
};

i64 stage_params(const StageConfig& sc, i64 prev_c) {
    const i64 C = sc.out_channels, Ce = C * sc.mlp_expansion;
    i64 p = C * prev_c * sc.patch_kernel * sc.patch_kernel + C; // patch conv
    p += 2 * C;                                                 // patch LN
    for (char kind : sc.pattern) {
        p += 2 * C;              // attn pre-LN
        p += 4 * (C * C + C);    // q,k,v,o
        if (kind == 'E' && sc.reduction_ratio > 1) {
            p += C * C * sc.reduction_ratio * sc.reduction_ratio + C; // sr conv
            p += 2 * C;                                               // sr LN
        }
        p += 2 * C;              // ffn pre-LN
        p += C * Ce + Ce;        // fc1
        p += Ce * 9 + Ce;        // 3x3 depthwise
        p += Ce * C + C;         // fc2
    }
    p += 2 * C; // closing LN
    return p;
}

struct StageCost {
    i64 flops = 0;
    i64 ema_score = 0, lsa_score = 0;
};

StageCost stage_flops(const StageConfig& sc, i64 prev_c, StageGeom g) {
    const i64 C = sc.out_channels, Ce = C * sc.mlp_expansion;
    const i64 T = g.h * g.w;
    StageCost out;
    i64& f = out.flops;
    f += T * C * (prev_c * sc.patch_kernel * sc.patch_kernel) + T * C; // patch conv
    f += 8 * T * C;                                                    // patch LN
    for (char kind : sc.pattern) {
        f += 8 * T * C; // attention pre-LN
        if (kind == 'E') {
            const i64 R = sc.reduction_ratio;
            i64 Tk = T;
            f += T * C * C + T * C; // q
            if (R > 1) {
                Tk = ceil_div(g.h, R) * ceil_div(g.w, R);
                f += Tk * C * (C * R * R) + Tk * C; // reduction conv
                f += 8 * Tk * C;                    // reduction LN
            }
            f += 2 * (Tk * C * C + Tk * C); // k, v
            const i64 score = T * Tk * C;   // QK^T over all heads
            out.ema_score += score;
            f += score + T * Tk;     // scores + scaling
            f += 5 * T * Tk;         // softmax
            f += T * Tk * C;         // attn * V
            f += T * C * C + T * C;  // output projection
        } else {
            const i64 nh = ceil_div(g.h, sc.window_h), nw = ceil_div(g.w, sc.window_w);
            const i64 Tp = nh * sc.window_h * nw * sc.window_w; // padded token count
            const i64 nwin = nh * nw, wt = sc.window_h * sc.window_w;
            f += 3 * (Tp * C * C + Tp * C); // q, k, v on padded windows
            const i64 score = nwin * wt * wt * C;
            out.lsa_score += score;
            f += score + nwin * wt * wt;
            f += 5 * nwin * wt * wt;
            f += nwin * wt * wt * C;
            f += Tp * C * C + Tp * C; // output projection
        }
        f += T * C;     // attention residual
        f += 8 * T * C; // ffn pre-LN
        f += T * C * Ce + T * Ce;  // fc1
        f += T * Ce * 9 + T * Ce;  // depthwise conv
        f += 8 * T * Ce;           // gelu
        f += T * Ce * C + T * C;   // fc2
        f += T * C;                // ffn residual
    }
    f += 8 * T * C; // closing LN
    return out;
}

std::string human(i64 v) {
    char buf[32];
    if (v >= 1000000000)
        std::snprintf(buf, sizeof buf, "%.3fG", static_cast<double>(v) / 1e9);
    else if (v >= 1000000)
        std::snprintf(buf, sizeof buf, "%.3fM", static_cast<double>(v) / 1e6);
    else
        std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    return buf;
}

} // namespace

i64 count_params(const ModelConfig& cfg) {
    i64 total = 0;
    i64 prev = cfg.in_channels;
    for (const auto& sc : cfg.stages) {
        total += stage_params(sc, prev);
        prev = sc.out_channels;
    }
    const i64 ic = cfg.decoder.internal_channels, c4 = cfg.stages[3].out_channels;
    total += ic * c4 + ic; // gate
    total += ic * c4 + ic; // aspp
    for (int b : cfg.decoder.branches) {
        total += ic * cfg.stages[static_cast<size_t>(b - 1)].out_channels + ic; // branch conv
        total += ic * 2 * ic + ic;                                              // fuse conv
    }
    total += cfg.decoder.num_seg_classes * ic + cfg.decoder.num_seg_classes; // final

    const i64 cs = cfg.stages[static_cast<size_t>(cfg.classifier.source_stage - 1)].out_channels;
    total += cs * cfg.classifier.hidden + cfg.classifier.hidden;
    total += cfg.classifier.hidden * cfg.classifier.num_classes + cfg.classifier.num_classes;
    return total;
}

CostReport count_flops(const ModelConfig& cfg, i64 input_h, i64 input_w) {
    CostReport r;
    std::array<StageGeom, 4> geom;
    i64 prev = cfg.in_channels;
    i64 h = input_h, w = input_w;
    for (int s = 0; s < 4; ++s) {
        const auto& sc = cfg.stages[static_cast<size_t>(s)];
        h = conv_out(h, sc.patch_kernel, sc.patch_stride, sc.patch_pad);
        w = conv_out(w, sc.patch_kernel, sc.patch_stride, sc.patch_pad);
        geom[static_cast<size_t>(s)] = {h, w};
        StageCost c = stage_flops(sc, prev, geom[static_cast<size_t>(s)]);
        r.ema_score_flops[static_cast<size_t>(s)] = c.ema_score;
        r.lsa_score_flops[static_cast<size_t>(s)] = c.lsa_score;
        r.rows.push_back({"stage" + std::to_string(s + 1), stage_params(sc, prev), c.flops});
        prev = sc.out_channels;
    }

    // decoder
    {
        const i64 ic = cfg.decoder.internal_channels, c4 = cfg.stages[3].out_channels;
        const i64 K = cfg.decoder.num_seg_classes;
        const i64 t4 = geom[3].h * geom[3].w;
        i64 p = 2 * (ic * c4 + ic) + K * ic + K;
        i64 f = t4 * c4 + c4;          // global pool
        f += c4 * ic + ic + 4 * ic;    // gate conv + sigmoid
        f += t4 * c4 * ic + t4 * ic;   // aspp conv
        f += t4 * ic;                  // gating multiply
        std::vector<int> order = cfg.decoder.branches;
        std::sort(order.begin(), order.end(), std::greater<>());
        i64 t_last = t4;
        for (int b : order) {
            const auto& gb = geom[static_cast<size_t>(b - 1)];
            const i64 tb = gb.h * gb.w;
            const i64 cb = cfg.stages[static_cast<size_t>(b - 1)].out_channels;
            p += ic * cb + ic + ic * 2 * ic + ic;
            f += 8 * tb * ic;               // resize current map
            f += tb * cb * ic + tb * ic;    // branch conv
            f += tb * 2 * ic * ic + tb * ic; // fuse conv
            t_last = tb;
        }
        f += t_last * ic * K + t_last * K; // final conv
        f += 8 * input_h * input_w * K;    // resize to input resolution
        r.rows.push_back({"decoder", p, f});
    }

    // classifier
    {
        const i64 src = cfg.classifier.source_stage;
        const i64 cs = cfg.stages[static_cast<size_t>(src - 1)].out_channels;
        const i64 ts = geom[static_cast<size_t>(src - 1)].h * geom[static_cast<size_t>(src - 1)].w;
        const i64 hid = cfg.classifier.hidden, k = cfg.classifier.num_classes;
        const i64 p = cs * hid + hid + hid * k + k;
        const i64 f = ts * cs + cs + cs * hid + hid + hid + hid * k + k;
        r.rows.push_back({"classifier", p, f});
    }

    for (const auto& row : r.rows) {
        r.params_total += row.params;
        r.flops_total += row.flops;
    }
    return r;
}

std::string CostReport::table() const {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-12s %14s %16s\n", "module", "params", "flops");
    out << line;
    for (const auto& row : rows) {
        std::snprintf(line, sizeof line, "%-12s %14lld %16lld\n", row.name.c_str(),
                      static_cast<long long>(row.params), static_cast<long long>(row.flops));
        out << line;
    }
    std::snprintf(line, sizeof line, "%-12s %14lld %16lld  (%s params, %s flops)\n", "total",
                  static_cast<long long>(params_total), static_cast<long long>(flops_total),
                  human(params_total).c_str(), human(flops_total).c_str());
    out << line;
    return out.str();
}

std::string CostReport::json() const {
    std::ostringstream out;
    out << "{\"params\":" << params_total << ",\"flops\":" << flops_total << ",\"modules\":[";
    for (size_t i = 0; i < rows.size(); ++i) {
        if (i) out << ",";
        out << "{\"name\":\"" << rows[i].name << "\",\"params\":" << rows[i].params
            << ",\"flops\":" << rows[i].flops << "}";
    }
    out << "],\"ema_score_flops\":[";
    for (int s = 0; s < 4; ++s) out << (s ? "," : "") << ema_score_flops[static_cast<size_t>(s)];
    out << "],\"lsa_score_flops\":[";
    for (int s = 0; s < 4; ++s) out << (s ? "," : "") << lsa_score_flops[static_cast<size_t>(s)];
    out << "]}";
    return out.str();
}

} // namespace gtf

#include "gtf/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gtf/errors.hpp"
#include "gtf/ops.hpp"

namespace gtf {

const char* param_group_name(ParamGroup g) {
    switch (g) {
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::head: return "head";
    case ParamGroup::norm: return "norm";
    }
    return "?";
}

Tensor ParamRegistry::add(const std::string& name, Tensor t, ParamGroup g) {
    for (const auto& e : entries_)
        if (e.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    entries_.push_back({name, t, g});
    return t;
}

std::vector<ParamEntry> ParamRegistry::group(ParamGroup g) const {
    std::vector<ParamEntry> out;
    for (const auto& e : entries_)
        if (e.group == g) out.push_back(e);
    return out;
}

const Tensor* ParamRegistry::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e.t;
    return nullptr;
}

i64 ParamRegistry::total_params() const {
    i64 n = 0;
    for (const auto& e : entries_) n += e.t.numel();
    return n;
}

void ParamRegistry::zero_grad() const {
    for (const auto& e : entries_) e.t.zero_grad();
}

std::string ParamRegistry::describe_groups() const {
    std::ostringstream out;
    for (ParamGroup g : {ParamGroup::backbone, ParamGroup::head, ParamGroup::norm}) {
        i64 tensors = 0, scalars = 0;
        for (const auto& e : entries_)
            if (e.group == g) {
                ++tensors;
                scalars += e.t.numel();
            }
        out << param_group_name(g) << ": " << tensors << " tensors, " << scalars << " params\n";
    }
    return out.str();
}

// --- forward helpers ----------------------------------------------------------

namespace {

// [N,T,C] with T == H*W  ->  [N,C,H,W]
Tensor tokens_to_map(const Tensor& t, i64 H, i64 W) {
    const auto& s = t.shape();
    return ops::permute(ops::reshape(t, {s[0], H, W, s[2]}), {0, 3, 1, 2});
}

// [N,C,H,W] -> [N,H*W,C]
Tensor map_to_tokens(const Tensor& m) {
    const auto& s = m.shape();
    return ops::reshape(ops::permute(m, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

void check_tokens(const Tensor& t, i64 H, i64 W, const char* who) {
    if (t.ndim() != 3)
        throw DataError(std::string(who) + ": expected [N,T,C] tokens, got " + shape_str(t.shape()));
    if (t.shape()[1] != H * W)
        throw DataError(std::string(who) + ": token count " + std::to_string(t.shape()[1]) +
                        " != H*W = " + std::to_string(H) + "*" + std::to_string(W));
}

// Multi-head scaled dot-product attention over already-normalized sources,
// then the output projection. Shared by both attention flavors: E feeds
// (tokens, reduced tokens), L feeds (windows, windows).
Tensor attention_core(const Tensor& q_src, const Tensor& kv_src, const AttentionW& w, i64 heads) {
    const i64 N = q_src.shape()[0], Tq = q_src.shape()[1], C = q_src.shape()[2];
    const i64 Tk = kv_src.shape()[1];
    const i64 dh = C / heads;
    Tensor q = ops::linear(q_src, w.q.w, w.q.b);
    Tensor k = ops::linear(kv_src, w.k.w, w.k.b);
    Tensor v = ops::linear(kv_src, w.v.w, w.v.b);
    auto split = [&](const Tensor& t, i64 T) {
        return ops::reshape(ops::permute(ops::reshape(t, {N, T, heads, dh}), {0, 2, 1, 3}),
                            {N * heads, T, dh});
    };
    Tensor qh = split(q, Tq), kh = split(k, Tk), vh = split(v, Tk);
    Tensor scores = ops::affine(ops::bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)), 0.0);
    Tensor out = ops::bmm(ops::softmax_lastdim(scores), vh); // [N*h, Tq, dh]
    out = ops::reshape(ops::permute(ops::reshape(out, {N, heads, Tq, dh}), {0, 2, 1, 3}), {N, Tq, C});
    return ops::linear(out, w.o.w, w.o.b);
}

} // namespace

// --- encoder ops ----------------------------------------------------------------

std::tuple<Tensor, i64, i64> overlapped_patch_embed(const Tensor& x, const StageW& w,
                                                    const StageConfig& cfg) {
    Tensor y = ops::conv2d(x, w.patch.w, w.patch.b, cfg.patch_stride, cfg.patch_stride,
                           cfg.patch_pad, cfg.patch_pad);
    const i64 Ho = y.shape()[2], Wo = y.shape()[3];
    Tensor tokens = ops::layer_norm_lastdim(map_to_tokens(y), w.patch_ln.g, w.patch_ln.b);
    return {tokens, Ho, Wo};
}

Tensor efficient_attention(const Tensor& tokens, i64 H, i64 W, const AttentionW& w,
                           const StageConfig& cfg) {
    check_tokens(tokens, H, W, "efficient_attention");
    Tensor xn = ops::layer_norm_lastdim(tokens, w.pre.g, w.pre.b);
    Tensor kv = xn;
    const i64 R = cfg.reduction_ratio;
    if (R > 1) {
        // K/V source: kernel-R stride-R conv over the token map (zero-padded
        // bottom/right to a multiple of R so the reduced grid is ceil(H/R) x
        // ceil(W/R)), then layer norm.
        Tensor map = tokens_to_map(xn, H, W);
        const i64 ph = (R - H % R) % R, pw = (R - W % R) % R;
        if (ph || pw) map = ops::pad_nchw(map, ph, pw);
        Tensor red = ops::conv2d(map, w.sr.w, w.sr.b, R, R, 0, 0);
        kv = ops::layer_norm_lastdim(map_to_tokens(red), w.sr_ln.g, w.sr_ln.b);
    }
    return ops::add(tokens, attention_core(xn, kv, w, cfg.heads));
}

Tensor locally_grouped_attention(const Tensor& tokens, i64 H, i64 W, const AttentionW& w,
                                 const StageConfig& cfg) {
    check_tokens(tokens, H, W, "locally_grouped_attention");
    const i64 N = tokens.shape()[0], C = tokens.shape()[2];
    const i64 w1 = cfg.window_h, w2 = cfg.window_w;
    const i64 nh = (H + w1 - 1) / w1, nw = (W + w2 - 1) / w2;
    const i64 Hp = nh * w1, Wp = nw * w2;
    Tensor xn = ops::layer_norm_lastdim(tokens, w.pre.g, w.pre.b);
    // Pad after the norm, so padded positions enter each window as zero
    // vectors (unmasked); their outputs are cropped away below.
    Tensor m = ops::reshape(xn, {N, H, W, C});
    if (Hp != H || Wp != W) m = ops::pad_hw(m, Hp - H, Wp - W);
    m = ops::permute(ops::reshape(m, {N, nh, w1, nw, w2, C}), {0, 1, 3, 2, 4, 5});
    Tensor win = ops::reshape(m, {N * nh * nw, w1 * w2, C});
    Tensor out = attention_core(win, win, w, cfg.heads);
    out = ops::permute(ops::reshape(out, {N, nh, nw, w1, w2, C}), {0, 1, 3, 2, 4, 5});
    out = ops::reshape(out, {N, Hp, Wp, C});
    if (Hp != H || Wp != W) out = ops::crop_hw(out, H, W);
    return ops::add(tokens, ops::reshape(out, {N, H * W, C}));
}

Tensor mix_ffn(const Tensor& tokens, i64 H, i64 W, const FfnW& w, const StageConfig& cfg) {
    check_tokens(tokens, H, W, "mix_ffn");
    const i64 Ce = tokens.shape()[2] * cfg.mlp_expansion;
    Tensor h = ops::linear(ops::layer_norm_lastdim(tokens, w.pre.g, w.pre.b), w.fc1.w, w.fc1.b);
    Tensor m = ops::conv2d(tokens_to_map(h, H, W), w.dw.w, w.dw.b, 1, 1, 1, 1, /*groups=*/Ce);
    h = ops::linear(ops::gelu(map_to_tokens(m)), w.fc2.w, w.fc2.b);
    return ops::add(tokens, h);
}

// --- heads ----------------------------------------------------------------------

Tensor lraspp_forward(const FeaturePyramid& pyr, const DecoderW& w, const DecoderConfig& cfg) {
    if (!pyr.f[3].defined()) throw ConfigError("lraspp_forward: empty feature pyramid");
    const Tensor& f4 = pyr.f[3];
    const i64 N = f4.shape()[0], c4 = f4.shape()[1];

    Tensor pooled = ops::reshape(ops::global_avg_pool(f4), {N, c4, 1, 1});
    Tensor gate = ops::sigmoid(ops::conv2d(pooled, w.gate.w, w.gate.b, 1, 1, 0, 0));
    Tensor aspp = ops::conv2d(f4, w.aspp.w, w.aspp.b, 1, 1, 0, 0);
    Tensor cur = ops::mul_channels(aspp, ops::reshape(gate, {N, cfg.internal_channels}));

    std::vector<int> order = cfg.branches;
    std::sort(order.begin(), order.end(), std::greater<>()); // deepest first
    for (size_t j = 0; j < order.size(); ++j) {
        const Tensor& fb = pyr.f[static_cast<size_t>(order[j] - 1)];
        Tensor bb = ops::conv2d(fb, w.branch[j].w, w.branch[j].b, 1, 1, 0, 0);
        cur = ops::bilinear_resize(cur, fb.shape()[2], fb.shape()[3]);
        cur = ops::conv2d(ops::concat({cur, bb}, 1), w.fuse[j].w, w.fuse[j].b, 1, 1, 0, 0);
    }
    Tensor logits = ops::conv2d(cur, w.final.w, w.final.b, 1, 1, 0, 0);
    return ops::bilinear_resize(logits, pyr.in_h, pyr.in_w);
}

Tensor classify(const FeaturePyramid& pyr, const ClassifierW& w, const ClassifierConfig& cfg,
                bool training, RngState& rng) {
    const Tensor& src = pyr.f[static_cast<size_t>(cfg.source_stage - 1)];
    if (!src.defined()) throw ConfigError("classify: source stage missing from pyramid");
    Tensor h = ops::relu(ops::linear(ops::global_avg_pool(src), w.fc1.w, w.fc1.b));
    h = ops::dropout(h, cfg.dropout_rate, rng, training);
    return ops::linear(h, w.fc2.w, w.fc2.b);
}

std::vector<i64> segment(const Tensor& logits) {
    if (logits.ndim() != 4 || logits.shape()[1] < 2)
        throw DataError("segment: expected [N,K>=2,H,W] logits, got " + shape_str(logits.shape()));
    const i64 N = logits.shape()[0], K = logits.shape()[1];
    const i64 HW = logits.shape()[2] * logits.shape()[3];
    std::vector<i64> mask(static_cast<size_t>(N * HW));
    with_dtype(logits.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* p = logits.data<T>();
        for (i64 n = 0; n < N; ++n)
            for (i64 i = 0; i < HW; ++i) {
                i64 best = 0;
                T bv = p[(n * K) * HW + i];
                for (i64 k = 1; k < K; ++k) {
                    T v = p[(n * K + k) * HW + i];
                    if (v > bv) { // strict: ties keep the lower class index
                        bv = v;
                        best = k;
                    }
                }
                mask[static_cast<size_t>(n * HW + i)] = best;
            }
    });
    return mask;
}

// --- construction -----------------------------------------------------------------

namespace {

Tensor rand_trunc_normal(Shape shape, RngState& rng, double stddev) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) {
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > 2.0);
        x = z * stddev;
    }
    return Tensor::from_double(std::move(shape), v);
}

Tensor rand_normal(Shape shape, RngState& rng, double stddev) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.normal() * stddev;
    return Tensor::from_double(std::move(shape), v);
}

} // namespace

GasTwinFormer::GasTwinFormer(const ModelConfig& cfg, RngState& rng) : cfg_(cfg) {
    validate(cfg_);

    auto lin = [&](const std::string& name, i64 in, i64 out, ParamGroup g) {
        LinearW l;
        l.w = reg_.add(name + ".w", rand_trunc_normal({in, out}, rng, 0.02), g);
        l.b = reg_.add(name + ".b", Tensor::zeros({out}), g);
        return l;
    };
    auto norm = [&](const std::string& name, i64 c, ParamGroup g) {
        LayerNormW l;
        l.g = reg_.add(name + ".g", Tensor::full({c}, 1.0), g);
        l.b = reg_.add(name + ".b", Tensor::zeros({c}), g);
        return l;
    };
    auto conv = [&](const std::string& name, i64 cout, i64 cin, i64 kh, i64 kw, i64 groups,
                    ParamGroup g) {
        ConvW c;
        const double fan_out = static_cast<double>(kh * kw * cout) / static_cast<double>(groups);
        c.w = reg_.add(name + ".w", rand_normal({cout, cin / groups, kh, kw}, rng,
                                                std::sqrt(2.0 / fan_out)), g);
        c.b = reg_.add(name + ".b", Tensor::zeros({cout}), g);
        return c;
    };

    i64 prev_c = cfg_.in_channels;
    for (int s = 0; s < 4; ++s) {
        const StageConfig& sc = cfg_.stages[static_cast<size_t>(s)];
        StageW& st = stages_[static_cast<size_t>(s)];
        const std::string base = "encoder.stage" + std::to_string(s + 1);
        const i64 C = sc.out_channels;

        st.patch = conv(base + ".patch", C, prev_c, sc.patch_kernel, sc.patch_kernel, 1,
                        ParamGroup::backbone);
        st.patch_ln = norm(base + ".patch.ln", C, ParamGroup::norm);
        for (size_t bi = 0; bi < sc.pattern.size(); ++bi) {
            const std::string bb = base + ".block" + std::to_string(bi + 1);
            BlockW blk;
            blk.kind = sc.pattern[bi];
            blk.attn.pre = norm(bb + ".attn.ln", C, ParamGroup::norm);
            blk.attn.q = lin(bb + ".attn.q", C, C, ParamGroup::backbone);
            blk.attn.k = lin(bb + ".attn.k", C, C, ParamGroup::backbone);
            blk.attn.v = lin(bb + ".attn.v", C, C, ParamGroup::backbone);
            blk.attn.o = lin(bb + ".attn.o", C, C, ParamGroup::backbone);
            if (blk.kind == 'E' && sc.reduction_ratio > 1) {
                blk.attn.sr = conv(bb + ".attn.sr", C, C, sc.reduction_ratio, sc.reduction_ratio,
                                   1, ParamGroup::backbone);
                blk.attn.sr_ln = norm(bb + ".attn.sr.ln", C, ParamGroup::norm);
            }
            blk.ffn.pre = norm(bb + ".ffn.ln", C, ParamGroup::norm);
            const i64 Ce = C * sc.mlp_expansion;
            blk.ffn.fc1 = lin(bb + ".ffn.fc1", C, Ce, ParamGroup::backbone);
            blk.ffn.dw = conv(bb + ".ffn.dw", Ce, Ce, 3, 3, Ce, ParamGroup::backbone);
            blk.ffn.fc2 = lin(bb + ".ffn.fc2", Ce, C, ParamGroup::backbone);
            st.blocks.push_back(std::move(blk));
        }
        st.out_ln = norm(base + ".out.ln", C, ParamGroup::norm);
        prev_c = C;
    }

    const i64 ic = cfg_.decoder.internal_channels;
    const i64 c4 = cfg_.stages[3].out_channels;
    dec_.gate = conv("decoder.gate", ic, c4, 1, 1, 1, ParamGroup::head);
    dec_.aspp = conv("decoder.aspp", ic, c4, 1, 1, 1, ParamGroup::head);
    std::vector<int> order = cfg_.decoder.branches;
    std::sort(order.begin(), order.end(), std::greater<>());
    for (size_t j = 0; j < order.size(); ++j) {
        const i64 cb = cfg_.stages[static_cast<size_t>(order[j] - 1)].out_channels;
        const std::string tag = std::to_string(order[j]);
        dec_.branch.push_back(conv("decoder.branch" + tag, ic, cb, 1, 1, 1, ParamGroup::head));
        dec_.fuse.push_back(conv("decoder.fuse" + tag, ic, 2 * ic, 1, 1, 1, ParamGroup::head));
    }
    dec_.final = conv("decoder.final", cfg_.decoder.num_seg_classes, ic, 1, 1, 1, ParamGroup::head);

    const i64 cs = cfg_.stages[static_cast<size_t>(cfg_.classifier.source_stage - 1)].out_channels;
    cls_.fc1 = lin("classifier.fc1", cs, cfg_.classifier.hidden, ParamGroup::head);
    cls_.fc2 = lin("classifier.fc2", cfg_.classifier.hidden, cfg_.classifier.num_classes,
                   ParamGroup::head);
}

FeaturePyramid GasTwinFormer::encoder_forward(const Tensor& image) const {
    if (image.ndim() != 4 || image.shape()[1] != cfg_.in_channels)
        throw DataError("encoder input must be [N," + std::to_string(cfg_.in_channels) +
                        ",H,W], got " + shape_str(image.shape()));
    const i64 H = image.shape()[2], W = image.shape()[3];
    if (H % 32 != 0 || W % 32 != 0)
        throw DataError("encoder input " + std::to_string(H) + "x" + std::to_string(W) +
                        " must have extents divisible by 32");

    FeaturePyramid pyr;
    pyr.in_h = H;
    pyr.in_w = W;
    Tensor cur = image;
    for (int s = 0; s < 4; ++s) {
        const StageConfig& sc = cfg_.stages[static_cast<size_t>(s)];
        const StageW& st = stages_[static_cast<size_t>(s)];
        auto [tok, h, w] = overlapped_patch_embed(cur, st, sc);
        for (const BlockW& blk : st.blocks) {
            tok = blk.kind == 'E' ? efficient_attention(tok, h, w, blk.attn, sc)
                                  : locally_grouped_attention(tok, h, w, blk.attn, sc);
            tok = mix_ffn(tok, h, w, blk.ffn, sc);
        }
        tok = ops::layer_norm_lastdim(tok, st.out_ln.g, st.out_ln.b);
        cur = tokens_to_map(tok, h, w);
        pyr.f[static_cast<size_t>(s)] = cur;
    }
    return pyr;
}

Tensor GasTwinFormer::decode(const FeaturePyramid& pyr) const {
    return lraspp_forward(pyr, dec_, cfg_.decoder);
}

Tensor GasTwinFormer::classify_diet(const FeaturePyramid& pyr, bool training, RngState& rng) const {
    return classify(pyr, cls_, cfg_.classifier, training, rng);
}

GasTwinFormer::Output GasTwinFormer::forward(const Tensor& image, bool training,
                                             RngState& rng) const {
    FeaturePyramid pyr = encoder_forward(image);
    return {decode(pyr), classify_diet(pyr, training, rng)};
}

} // namespace gtf

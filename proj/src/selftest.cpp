#include "gtf/selftest.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>
#include <vector>

#include "gtf/checkpoint.hpp"
#include "gtf/gradcheck.hpp"
#include "gtf/kernels.hpp"
#include "gtf/losses.hpp"
#include "gtf/metrics.hpp"
#include "gtf/model.hpp"
#include "gtf/ops.hpp"
#include "gtf/optim.hpp"
#include "gtf/oracles.hpp"
#include "gtf/profiler.hpp"

namespace gtf {

namespace {

struct DtypeScope {
    DType prev = default_dtype();
    explicit DtypeScope(DType dt) { set_default_dtype(dt); }
    ~DtypeScope() { set_default_dtype(prev); }
};

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    const i64 ch[4] = {4, 8, 12, 16};
    const i64 heads[4] = {1, 2, 3, 4};
    for (size_t s = 0; s < 4; ++s) {
        cfg.stages[s].out_channels = ch[s];
        cfg.stages[s].heads = heads[s];
        cfg.stages[s].window_h = cfg.stages[s].window_w = 2;
    }
    cfg.input_h = cfg.input_w = 32;
    cfg.decoder.internal_channels = 16;
    cfg.classifier.hidden = 16;
    return cfg;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = a.size() == b.size() ? 0.0 : 1e300;
    for (size_t i = 0; i < a.size() && i < b.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool config_roundtrip() {
    ModelConfig cfg;
    if (!config_equal(parse_config(serialize(cfg)), cfg)) return false;
    ModelConfig mod = parse_config("model.pattern = LL,LL,LL,LL\nloss.seg = focal\n"
                                   "optim.lr = 0.0008\ndecoder.branches = 2,3\n");
    return config_equal(parse_config(serialize(mod)), mod);
}

bool serial_parallel_agree() {
    const ModelConfig cfg = tiny_cfg();
    RngState rng(5);
    GasTwinFormer model(cfg, rng);
    RngState ir(7), unused(0);
    Tensor x = Tensor::uniform({2, 3, 32, 32}, ir, 0.0, 1.0);
    NoGradGuard ng;
    kern::set_mode(kern::Mode::parallel);
    GasTwinFormer::Output par = model.forward(x, false, unused);
    kern::set_mode(kern::Mode::serial);
    GasTwinFormer::Output ser = model.forward(x, false, unused);
    kern::set_mode(kern::Mode::parallel);
    return par.seg.to_double() == ser.seg.to_double() &&
           par.diet.to_double() == ser.diet.to_double();
}

// Single-head attention block vs a from-first-principles row oracle.
bool attention_oracle() {
    DtypeScope f64(DType::f64);
    const i64 T = 16, C = 4;
    RngState rng(11);
    StageConfig sc;
    sc.out_channels = C;
    sc.heads = 1;
    sc.reduction_ratio = 1;
    sc.window_h = sc.window_w = 4;

    AttentionW w;
    w.pre.g = Tensor::uniform({C}, rng, 0.5, 1.5);
    w.pre.b = Tensor::uniform({C}, rng, -0.2, 0.2);
    for (LinearW* lw : {&w.q, &w.k, &w.v, &w.o}) {
        lw->w = Tensor::uniform({C, C}, rng, -0.5, 0.5);
        lw->b = Tensor::uniform({C}, rng, -0.1, 0.1);
    }
    Tensor x = Tensor::uniform({1, T, C}, rng, -1.0, 1.0);
    NoGradGuard ng;
    Tensor ema = efficient_attention(x, 4, 4, w, sc);
    Tensor lsa = locally_grouped_attention(x, 4, 4, w, sc); // 4x4 window == whole map

    // oracle: residual + O(attention(LN(x) projected))
    const auto xv = x.to_double();
    const auto gv = w.pre.g.to_double(), bv = w.pre.b.to_double();
    auto lin = [&](const oracle::vecd& in, const LinearW& lw) {
        const auto wv = lw.w.to_double(), bb = lw.b.to_double();
        oracle::vecd out = oracle::matmul(in, wv, T, C, C);
        for (i64 t = 0; t < T; ++t)
            for (i64 j = 0; j < C; ++j) out[static_cast<size_t>(t * C + j)] += bb[static_cast<size_t>(j)];
        return out;
    };
    oracle::vecd xn(static_cast<size_t>(T * C));
    for (i64 t = 0; t < T; ++t) {
        oracle::vecd row(xv.begin() + t * C, xv.begin() + (t + 1) * C);
        oracle::vecd n = oracle::layer_norm_row(row, gv, bv, 1e-5);
        std::copy(n.begin(), n.end(), xn.begin() + t * C);
    }
    oracle::vecd att = oracle::attention(lin(xn, w.q), lin(xn, w.k), lin(xn, w.v), T, T, C);
    oracle::vecd out = lin(att, w.o);
    for (size_t i = 0; i < out.size(); ++i) out[i] += xv[i];

    return max_abs_diff(ema.to_double(), out) < 1e-10 &&
           max_abs_diff(lsa.to_double(), out) < 1e-10;
}

bool loss_identities() {
    RngState rng(3);
    Tensor pred = Tensor::uniform({2, 4, 4}, rng, 0.05, 0.95, DType::f64);
    Tensor target = Tensor::from_double(
        {2, 4, 4},
        [] {
            std::vector<double> t(32, 0.0);
            for (size_t i : {1u, 2u, 5u, 17u, 22u, 23u}) t[i] = 1.0;
            return t;
        }(),
        DType::f64);
    Tensor uni = Tensor::full({2, 4, 4}, 0.37, DType::f64);
    const double a = weighted_dice_loss(pred, target, uni, 1e-6).item();
    const double b = dice_loss(pred, target, 1e-6).item();
    if (std::abs(a - b) > 1e-6) return false;

    Tensor empty = Tensor::zeros({1, 4, 4}, DType::f64);
    if (dice_loss(empty, empty, 1e-6).item() != 0.0) return false;
    if (dice_loss(target, target, 1e-6).item() > 1e-6) return false;

    Tensor logits = Tensor::uniform({1, 3, 4, 4}, rng, -2.0, 2.0, DType::f64);
    std::vector<i64> cls(16);
    for (auto& c : cls) c = static_cast<i64>(rng.randint(3));
    const double ce = seg_cross_entropy(logits, cls).item();
    const double fo = seg_focal(logits, cls, 0.0, 1.0).item();
    return ce == fo;
}

bool plume_field_sane() {
    std::vector<double> fg(100 * 80, 0.0);
    fg[20 * 100 + 30] = 1.0;
    PlumeWeightField f = gaussian_plume_weights(fg, 80, 100);
    if (f.mu_x != 30.0 || f.mu_y != 20.0) return false;
    if (f.sigma_x != 5.0 || f.sigma_y != 4.0) return false; // lower bounds engage
    PlumeWeightField z = gaussian_plume_weights(std::vector<double>(80, 0.0), 8, 10);
    return z.mu_x == 4.5 && z.mu_y == 3.5 && z.sigma_x == 5.0 && z.sigma_y == 4.0;
}

bool gradcheck_losses() {
    DtypeScope f64(DType::f64);
    RngState rng(23);
    Tensor logits = Tensor::uniform({1, 2, 3, 3}, rng, -1.0, 1.0);
    logits.set_requires_grad(true);
    std::vector<double> tv(9, 0.0);
    tv[2] = tv[4] = 1.0;
    Tensor target = Tensor::from_double({1, 3, 3}, tv);

    const auto fg = [&] {
        Tensor probs = ops::permute(ops::softmax_lastdim(ops::permute(logits, {0, 2, 3, 1})),
                                    {0, 3, 1, 2});
        return ops::select_channel(probs, 1);
    };
    // the plume field is recomputed from the prediction but excluded from the
    // gradient, so the finite-difference oracle runs against a frozen field
    Tensor w;
    {
        NoGradGuard ng;
        PlumeWeightField f = gaussian_plume_weights(fg().to_double(), 3, 3);
        w = Tensor::from_double({1, 3, 3}, f.weights);
    }
    const auto frozen = [&] {
        logits.zero_grad();
        Tensor l = weighted_dice_loss(fg(), target, w, 1e-6);
        l.backward();
        return l.item();
    };
    frozen();
    RngState probe(1);
    if (sampled_grad_err(logits, frozen, 18, probe, 1e-4) >= 1e-4) return false;

    // the full loss must backprop exactly the frozen-field gradients
    frozen(); // refresh grads at the unperturbed point
    const std::vector<double> an = logits.grad_to_double();
    logits.zero_grad();
    LossConfig lc; // gaussian_plume dice
    seg_loss(logits, target, lc).backward();
    return max_abs_diff(an, logits.grad_to_double()) < 1e-12;
}

bool metrics_example() {
    ConfusionMatrix cm(2);
    std::vector<i64> gt(16, 0), pr(16, 0);
    for (int i = 0; i < 6; ++i) gt[static_cast<size_t>(10 + i)] = 1; // 6 fg gt
    for (int i = 0; i < 6; ++i) pr[static_cast<size_t>(8 + i)] = 1;  // overlap 4
    cm.accumulate(pr, gt);
    SegScores s = miou_mf1(cm);
    return std::abs(s.miou - (50.0 + 200.0 / 3.0) / 2.0) < 1e-9;
}

bool checkpoint_roundtrip() {
    namespace fs = std::filesystem;
    const ModelConfig cfg = tiny_cfg();
    RngState rng(31);
    GasTwinFormer model(cfg, rng);
    RngState ir(1), unused(0);
    Tensor x = Tensor::uniform({1, 3, 32, 32}, ir, 0.0, 1.0);
    NoGradGuard ng;
    const auto before = model.forward(x, false, unused).seg.to_double();
    const fs::path p = fs::temp_directory_path() / "gtf_selftest.gtwf";
    save_model(p.string(), model, 7);
    GasTwinFormer loaded = load_model(p.string());
    fs::remove(p);
    return loaded.forward(x, false, unused).seg.to_double() == before;
}

bool schedule_endpoints() {
    OptimConfig cfg;
    return lr_at(0, cfg) == 1e-6 && lr_at(1500, cfg) == 6e-5 && lr_at(80000, cfg) == 0.0;
}

bool profiler_consistent() {
    const ModelConfig cfg = tiny_cfg();
    RngState rng(2);
    GasTwinFormer model(cfg, rng);
    return count_params(cfg) == model.params().total_params();
}

bool rng_deterministic() {
    RngState a(99), b(99);
    for (int i = 0; i < 100; ++i)
        if (a.uniform() != b.uniform()) return false;
    RngState c = RngState(99).derive("x"), d = RngState(99).derive("y");
    return c.uniform() != d.uniform();
}

} // namespace

int run_selftest(std::ostream& out) {
    const std::pair<const char*, std::function<bool()>> checks[] = {
        {"config round-trip", config_roundtrip},
        {"serial/parallel kernels agree bitwise", serial_parallel_agree},
        {"attention matches dense oracle", attention_oracle},
        {"loss identities", loss_identities},
        {"plume weight field", plume_field_sane},
        {"segmentation loss gradient check", gradcheck_losses},
        {"metrics worked example", metrics_example},
        {"checkpoint round-trip", checkpoint_roundtrip},
        {"lr schedule endpoints", schedule_endpoints},
        {"profiler matches built model", profiler_consistent},
        {"rng determinism", rng_deterministic},
    };
    int failures = 0;
    for (const auto& [name, fn] : checks) {
        bool ok = false;
        std::string err;
        try {
            ok = fn();
        } catch (const std::exception& e) {
            err = e.what();
        }
        if (ok) {
            out << "ok   " << name << "\n";
        } else {
            ++failures;
            out << "FAIL " << name << (err.empty() ? "" : " (" + err + ")") << "\n";
        }
    }
    out << (failures == 0 ? "selftest passed" : "selftest FAILED") << " ("
        << (std::size(checks) - static_cast<size_t>(failures)) << "/" << std::size(checks)
        << ")\n";
    return failures;
}

} // namespace gtf

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "gtf/errors.hpp"
#include "gtf/gradcheck.hpp"
#include "gtf/losses.hpp"
#include "gtf/ops.hpp"

using namespace gtf;

namespace {

struct DtypeGuard {
    DType prev;
    explicit DtypeGuard(DType d) : prev(default_dtype()) { set_default_dtype(d); }
    ~DtypeGuard() { set_default_dtype(prev); }
};

Tensor binary_map(Shape s, const std::vector<i64>& ones) {
    Tensor t = Tensor::zeros(std::move(s));
    for (i64 i : ones) t.set(i, 1.0);
    return t;
}

void gc(Tensor leaf, const std::function<Tensor()>& loss_fn, double tol, double h = 1e-4) {
    leaf.zero_grad();
    loss_fn().backward();
    auto fd = finite_diff_grad(leaf, [&] {
        NoGradGuard ng;
        return loss_fn().item();
    }, h);
    CHECK(grad_rel_err(fd, leaf.grad_to_double()) < tol);
}

} // namespace

TEST_CASE("plume weight field: centroid, clamped sigma, pointwise decay") {
    SUBCASE("single-pixel mass on a 100x80 image") {
        const i64 W = 100, H = 80;
        std::vector<double> p(static_cast<size_t>(H * W), 0.0);
        const i64 x0 = 30, y0 = 20;
        p[static_cast<size_t>(y0 * W + x0)] = 1.0;
        PlumeWeightField f = gaussian_plume_weights(p, H, W);
        CHECK(f.mu_x == doctest::Approx(30.0));
        CHECK(f.mu_y == doctest::Approx(20.0));
        CHECK(f.sigma_x == 5.0); // clamped to W/20
        CHECK(f.sigma_y == 4.0); // clamped to H/20
        auto w_at = [&](i64 x, i64 y) { return f.weights[static_cast<size_t>(y * W + x)]; };
        CHECK(w_at(x0, y0) == 1.0); // exp(0) at the center
        CHECK(w_at(35, 20) == doctest::Approx(std::exp(-25.0 / 50.0)).epsilon(1e-12));
        CHECK(w_at(30, 28) == doctest::Approx(std::exp(-64.0 / 32.0)).epsilon(1e-12));
        CHECK(w_at(40, 24) == doctest::Approx(std::exp(-100.0 / 50.0 - 16.0 / 32.0)).epsilon(1e-12));
    }

    SUBCASE("mass symmetric about the center pins the centroid there") {
        const i64 W = 6, H = 4;
        RngState rng(7);
        std::vector<double> p(static_cast<size_t>(H * W));
        for (auto& v : p) v = rng.uniform();
        // enforce 4-fold mirror symmetry
        for (i64 y = 0; y < H; ++y)
            for (i64 x = 0; x < W; ++x) {
                const double v = p[static_cast<size_t>(y * W + x)];
                p[static_cast<size_t>(y * W + (W - 1 - x))] = v;
                p[static_cast<size_t>((H - 1 - y) * W + x)] = v;
                p[static_cast<size_t>((H - 1 - y) * W + (W - 1 - x))] = v;
            }
        PlumeWeightField f = gaussian_plume_weights(p, H, W);
        CHECK(f.mu_x == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(f.mu_y == doctest::Approx(1.5).epsilon(1e-12));
    }

    SUBCASE("zero mass falls back to a centered, maximally spread field") {
        const i64 W = 10, H = 8;
        std::vector<double> p(static_cast<size_t>(H * W), 0.0);
        PlumeWeightField f = gaussian_plume_weights(p, H, W);
        CHECK(f.mu_x == doctest::Approx(4.5));
        CHECK(f.mu_y == doctest::Approx(3.5));
        CHECK(f.sigma_x == 5.0);
        CHECK(f.sigma_y == 4.0);
        for (double w : f.weights) {
            CHECK(w > 0.0);
            CHECK(w <= 1.0);
        }
    }

    SUBCASE("1000 random fields: max at the pixel nearest mu, sigma within bounds") {
        RngState rng(8);
        const i64 dims[4][2] = {{8, 8}, {12, 16}, {7, 5}, {24, 32}};
        for (int it = 0; it < 1000; ++it) {
            const auto& d = dims[it % 4];
            const i64 H = d[0], W = d[1];
            std::vector<double> p(static_cast<size_t>(H * W));
            for (auto& v : p) v = rng.uniform();
            if (it % 7 == 0) { // occasionally concentrate the mass
                for (auto& v : p) v *= 1e-3;
                p[rng.randint(static_cast<std::uint64_t>(H * W))] = 1.0;
            }
            PlumeWeightField f = gaussian_plume_weights(p, H, W);
            REQUIRE(f.sigma_x >= static_cast<double>(W) / 20.0);
            REQUIRE(f.sigma_x <= static_cast<double>(W) / 2.0);
            REQUIRE(f.sigma_y >= static_cast<double>(H) / 20.0);
            REQUIRE(f.sigma_y <= static_cast<double>(H) / 2.0);
            const i64 nx = std::lround(f.mu_x), ny = std::lround(f.mu_y);
            const double at_mu = f.weights[static_cast<size_t>(ny * W + nx)];
            double mx = 0;
            for (double w : f.weights) mx = std::max(mx, w);
            REQUIRE(at_mu == mx);
        }
    }
}

TEST_CASE("dice family: identities and hand values") {
    DtypeGuard dt(DType::f64);

    SUBCASE("both empty is exactly zero") {
        Tensor z = Tensor::zeros({1, 4, 4});
        CHECK(dice_loss(z, z, 1e-6).item() == 0.0);
        CHECK(gpw_dice_loss(z, z, 1e-6).item() == 0.0);
    }

    SUBCASE("perfect binary prediction") {
        Tensor m = binary_map({1, 4, 4}, {1, 2, 5, 6, 9});
        CHECK(dice_loss(m, m, 1e-6).item() <= 1e-6);
        CHECK(gpw_dice_loss(m, m, 1e-6).item() <= 1e-6);
    }

    SUBCASE("disjoint prediction and target") {
        Tensor p = binary_map({1, 4, 4}, {0, 1, 2, 3});
        Tensor t = binary_map({1, 4, 4}, {8, 9, 10, 11});
        CHECK(dice_loss(p, t, 1e-6).item() == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("half overlap: 1 - 2a/(b+c) = 0.5") {
        Tensor p = binary_map({1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7});
        Tensor t = binary_map({1, 4, 4}, {4, 5, 6, 7, 8, 9, 10, 11});
        CHECK(dice_loss(p, t, 1e-6).item() == doctest::Approx(0.5).epsilon(1e-6));
    }

    SUBCASE("uniform weight field cancels out of the ratio") {
        RngState rng(9);
        Tensor p = Tensor::uniform({1, 4, 4}, rng, 0.05, 0.95);
        Tensor t = binary_map({1, 4, 4}, {5, 6, 9, 10});
        Tensor w = Tensor::full({1, 4, 4}, 0.37);
        CHECK(weighted_dice_loss(p, t, w, 1e-6).item() ==
              doctest::Approx(dice_loss(p, t, 1e-6).item()).epsilon(1e-6));
    }

    SUBCASE("per-image then mean") {
        Tensor p = Tensor::zeros({2, 2, 2});
        Tensor t = Tensor::zeros({2, 2, 2});
        // image 0: perfect {pixel 0}; image 1: disjoint
        p.set(0, 1.0);
        t.set(0, 1.0);
        p.set(4 + 1, 1.0);
        t.set(4 + 2, 1.0);
        const double l0 = dice_loss(binary_map({1, 2, 2}, {0}), binary_map({1, 2, 2}, {0}), 1e-6).item();
        const double l1 = dice_loss(binary_map({1, 2, 2}, {1}), binary_map({1, 2, 2}, {2}), 1e-6).item();
        CHECK(dice_loss(p, t, 1e-6).item() == doctest::Approx((l0 + l1) / 2.0).epsilon(1e-12));
    }

    SUBCASE("gpw equals weighted dice with the recomputed field, values and grads") {
        RngState rng(10);
        Tensor p1 = Tensor::uniform({2, 4, 4}, rng, 0.0, 1.0);
        Tensor p2 = p1.detach();
        p1.set_requires_grad(true);
        p2.set_requires_grad(true);
        Tensor t = binary_map({2, 4, 4}, {1, 2, 5, 17, 18, 21});

        Tensor a = gpw_dice_loss(p1, t, 1e-6);
        // rebuild the same constant fields by hand
        std::vector<double> host = p2.to_double(), wall(host.size());
        for (i64 n = 0; n < 2; ++n) {
            std::vector<double> img(host.begin() + n * 16, host.begin() + (n + 1) * 16);
            auto f = gaussian_plume_weights(img, 4, 4);
            std::copy(f.weights.begin(), f.weights.end(), wall.begin() + n * 16);
        }
        Tensor b = weighted_dice_loss(p2, t, Tensor::from_double({2, 4, 4}, wall), 1e-6);
        CHECK(a.item() == b.item());
        a.backward();
        b.backward();
        CHECK(p1.grad_to_double() == p2.grad_to_double()); // stop-gradient through the field
    }
}

TEST_CASE("segmentation cross-entropy and focal") {
    DtypeGuard dt(DType::f64);

    SUBCASE("uniform logits give ln K") {
        Tensor l = Tensor::zeros({1, 2, 2, 2});
        Tensor t = Tensor::zeros({1, 2, 2});
        CHECK(seg_cross_entropy(l, {0, 0, 0, 0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        LossConfig cfg;
        cfg.seg_loss = SegLossKind::cross_entropy;
        CHECK(seg_loss(l, t, cfg).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("saturated-correct logits vanish") {
        Tensor l = Tensor::zeros({1, 2, 2, 2});
        for (i64 i = 0; i < 4; ++i) l.set(4 + i, 1e4); // channel 1 huge
        CHECK(seg_cross_entropy(l, {1, 1, 1, 1}).item() < 1e-4);
    }

    SUBCASE("random logits match the softmax-log oracle") {
        RngState rng(11);
        Tensor l = Tensor::uniform({2, 3, 2, 2}, rng, -2.0, 2.0);
        std::vector<i64> t = {0, 2, 1, 1, 2, 0, 0, 1};
        const double got = seg_cross_entropy(l, t).item();
        const auto v = l.to_double();
        double expect = 0.0;
        for (i64 n = 0; n < 2; ++n)
            for (i64 i = 0; i < 4; ++i) {
                double mx = -1e300, se = 0.0;
                for (i64 k = 0; k < 3; ++k)
                    mx = std::max(mx, v[static_cast<size_t>((n * 3 + k) * 4 + i)]);
                for (i64 k = 0; k < 3; ++k)
                    se += std::exp(v[static_cast<size_t>((n * 3 + k) * 4 + i)] - mx);
                const i64 tk = t[static_cast<size_t>(n * 4 + i)];
                expect += -(v[static_cast<size_t>((n * 3 + tk) * 4 + i)] - mx - std::log(se));
            }
        CHECK(got == doctest::Approx(expect / 8.0).epsilon(1e-12));
    }

    SUBCASE("focal(0,1) is cross-entropy exactly") {
        RngState rng(12);
        Tensor l1 = Tensor::uniform({1, 2, 4, 4}, rng, -3.0, 3.0);
        Tensor l2 = l1.detach();
        l1.set_requires_grad(true);
        l2.set_requires_grad(true);
        std::vector<i64> t(16);
        for (auto& x : t) x = static_cast<i64>(rng.randint(2));
        Tensor a = seg_focal(l1, t, 0.0, 1.0);
        Tensor b = seg_cross_entropy(l2, t);
        CHECK(a.item() == b.item());
        a.backward();
        b.backward();
        CHECK(l1.grad_to_double() == l2.grad_to_double());
    }

    SUBCASE("uniform 2-class focal closed form") {
        Tensor l = Tensor::zeros({1, 2, 2, 2});
        const double expect = 0.25 * 0.25 * std::log(2.0);
        CHECK(seg_focal(l, {0, 1, 0, 1}, 2.0, 0.25).item() == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("out-of-range target raises a data error") {
        Tensor l = Tensor::zeros({1, 2, 2, 2});
        CHECK_THROWS_AS((void)seg_cross_entropy(l, {0, 1, 2, 0}).item(), DataError);
    }
}

TEST_CASE("seg_loss dispatch and multi-task combination") {
    DtypeGuard dt(DType::f64);
    RngState rng(13);
    Tensor logits = Tensor::uniform({2, 2, 4, 4}, rng, -1.5, 1.5);
    Tensor tmap = binary_map({2, 4, 4}, {1, 2, 3, 17, 21, 22});

    SUBCASE("dispatch agrees with the direct calls") {
        LossConfig cfg;
        cfg.seg_loss = SegLossKind::cross_entropy;
        std::vector<i64> ti(32);
        auto tv = tmap.to_double();
        for (size_t i = 0; i < tv.size(); ++i) ti[i] = static_cast<i64>(tv[i]);
        CHECK(seg_loss(logits, tmap, cfg).item() == seg_cross_entropy(logits, ti).item());

        cfg.seg_loss = SegLossKind::focal;
        CHECK(seg_loss(logits, tmap, cfg).item() ==
              seg_focal(logits, ti, cfg.focal_gamma, cfg.focal_alpha).item());

        // dice flavors consume softmax foreground probabilities
        Tensor probs;
        {
            NoGradGuard ng;
            probs = ops::select_channel(
                ops::permute(ops::softmax_lastdim(ops::permute(logits, {0, 2, 3, 1})), {0, 3, 1, 2}),
                1);
        }
        cfg.seg_loss = SegLossKind::dice;
        CHECK(seg_loss(logits, tmap, cfg).item() == dice_loss(probs, tmap, cfg.dice_eps).item());
        cfg.seg_loss = SegLossKind::gaussian_plume;
        CHECK(seg_loss(logits, tmap, cfg).item() == gpw_dice_loss(probs, tmap, cfg.dice_eps).item());

        Tensor bad = Tensor::zeros({1, 3, 2, 2});
        CHECK_THROWS_AS((void)seg_loss(bad, Tensor::zeros({1, 2, 2}), cfg), ConfigError);
    }

    SUBCASE("multi-task total recomposes the weighted parts") {
        Tensor cls = Tensor::uniform({2, 3}, rng, -1.0, 1.0);
        LossConfig cfg;
        cfg.lambda_seg = 0.7;
        cfg.lambda_cls = 0.3;
        auto mt = multi_task_loss(logits, tmap, cls, {2, 0}, cfg);
        CHECK(mt.total.item() ==
              doctest::Approx(0.7 * mt.seg.item() + 0.3 * mt.cls.item()).epsilon(1e-15));

        cfg.lambda_seg = 1.0;
        cfg.lambda_cls = 0.0;
        auto mt0 = multi_task_loss(logits, tmap, cls, {2, 0}, cfg);
        CHECK(mt0.total.item() == mt0.seg.item());
    }

    SUBCASE("saturated-correct predictions drive the total below 1e-3") {
        Tensor l = Tensor::zeros({1, 2, 2, 2});
        Tensor t = binary_map({1, 2, 2}, {0, 3});
        for (i64 i : {i64{0}, i64{3}}) l.set(4 + i, 50.0);
        for (i64 i : {i64{1}, i64{2}}) l.set(i, 50.0);
        Tensor cls = Tensor::zeros({1, 3});
        cls.set(1, 50.0);
        LossConfig cfg; // gaussian_plume + CE
        auto mt = multi_task_loss(l, t, cls, {1}, cfg);
        CHECK(mt.total.item() < 1e-3);
    }
}

TEST_CASE("loss gradients match finite differences") {
    DtypeGuard dt(DType::f64);
    RngState rng(14);

    SUBCASE("weighted dice with a frozen field") {
        Tensor p = Tensor::uniform({1, 4, 4}, rng, 0.05, 0.95);
        p.set_requires_grad(true);
        Tensor t = binary_map({1, 4, 4}, {5, 6, 9, 10});
        Tensor w = Tensor::uniform({1, 4, 4}, rng, 0.1, 1.0);
        gc(p, [&] { return weighted_dice_loss(p, t, w, 1e-6); }, 1e-4);
    }

    SUBCASE("plain dice") {
        Tensor p = Tensor::uniform({2, 4, 4}, rng, 0.05, 0.95);
        p.set_requires_grad(true);
        Tensor t = binary_map({2, 4, 4}, {0, 5, 10, 15, 16, 21});
        gc(p, [&] { return dice_loss(p, t, 1e-6); }, 1e-4);
    }

    SUBCASE("segmentation cross-entropy and focal through the layout plumbing") {
        Tensor l = Tensor::uniform({1, 3, 4, 4}, rng, -2.0, 2.0);
        l.set_requires_grad(true);
        std::vector<i64> t(16);
        for (auto& x : t) x = static_cast<i64>(rng.randint(3));
        gc(l, [&] { return seg_cross_entropy(l, t); }, 1e-5);
        gc(l, [&] { return seg_focal(l, t, 2.0, 0.25); }, 1e-4);
    }

    SUBCASE("multi-task total w.r.t. both logit sets") {
        Tensor sl = Tensor::uniform({1, 2, 4, 4}, rng, -1.0, 1.0);
        Tensor cl = Tensor::uniform({1, 3}, rng, -1.0, 1.0);
        sl.set_requires_grad(true);
        cl.set_requires_grad(true);
        Tensor t = binary_map({1, 4, 4}, {3, 7, 11});
        LossConfig cfg;
        cfg.seg_loss = SegLossKind::dice;
        cfg.lambda_seg = 0.6;
        cfg.lambda_cls = 0.4;
        auto lf = [&] { return multi_task_loss(sl, t, cl, {0}, cfg).total; };
        gc(sl, lf, 1e-4);
        gc(cl, lf, 1e-4);
    }
}

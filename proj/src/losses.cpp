#include "gtf/losses.hpp"

#include <algorithm>
#include <cmath>

#include "gtf/errors.hpp"
#include "gtf/ops.hpp"

namespace gtf {

PlumeWeightField gaussian_plume_weights(const std::vector<double>& pred_fg, i64 H, i64 W) {
    if (static_cast<i64>(pred_fg.size()) != H * W)
        throw DataError("gaussian_plume_weights: field size mismatch");
    PlumeWeightField f;
    f.height = H;
    f.width = W;

    double mass = 0, sx = 0, sy = 0;
    for (i64 y = 0; y < H; ++y)
        for (i64 x = 0; x < W; ++x) {
            const double m = pred_fg[static_cast<size_t>(y * W + x)];
            mass += m;
            sx += m * static_cast<double>(x);
            sy += m * static_cast<double>(y);
        }
    const double sx_lo = static_cast<double>(W) / 20.0, sx_hi = static_cast<double>(W) / 2.0;
    const double sy_lo = static_cast<double>(H) / 20.0, sy_hi = static_cast<double>(H) / 2.0;
    if (mass < 1e-8) {
        // no mass anywhere: center the field and spread it maximally
        f.mu_x = static_cast<double>(W - 1) / 2.0;
        f.mu_y = static_cast<double>(H - 1) / 2.0;
        f.sigma_x = sx_hi;
        f.sigma_y = sy_hi;
    } else {
        f.mu_x = sx / mass;
        f.mu_y = sy / mass;
        double vx = 0, vy = 0;
        for (i64 y = 0; y < H; ++y)
            for (i64 x = 0; x < W; ++x) {
                const double m = pred_fg[static_cast<size_t>(y * W + x)];
                vx += m * (static_cast<double>(x) - f.mu_x) * (static_cast<double>(x) - f.mu_x);
                vy += m * (static_cast<double>(y) - f.mu_y) * (static_cast<double>(y) - f.mu_y);
            }
        f.sigma_x = std::clamp(std::sqrt(vx / mass), sx_lo, sx_hi);
        f.sigma_y = std::clamp(std::sqrt(vy / mass), sy_lo, sy_hi);
    }

    f.weights.resize(static_cast<size_t>(H * W));
    const double ix = 1.0 / (2.0 * f.sigma_x * f.sigma_x);
    const double iy = 1.0 / (2.0 * f.sigma_y * f.sigma_y);
    for (i64 y = 0; y < H; ++y)
        for (i64 x = 0; x < W; ++x) {
            const double dx = static_cast<double>(x) - f.mu_x;
            const double dy = static_cast<double>(y) - f.mu_y;
            f.weights[static_cast<size_t>(y * W + x)] = std::exp(-dx * dx * ix - dy * dy * iy);
        }
    return f;
}

namespace {

void check_map(const Tensor& pred, const Tensor& target, const char* who) {
    if (pred.ndim() != 3)
        throw DataError(std::string(who) + ": expected [N,H,W] probabilities, got " +
                        shape_str(pred.shape()));
    if (target.shape() != pred.shape())
        throw DataError(std::string(who) + ": prediction and target shapes differ: " +
                        shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
}

} // namespace

Tensor weighted_dice_loss(const Tensor& pred_fg, const Tensor& target, const Tensor& weights,
                          double eps) {
    check_map(pred_fg, target, "weighted_dice_loss");
    const i64 N = pred_fg.shape()[0], HW = pred_fg.shape()[1] * pred_fg.shape()[2];
    Tensor w = weights.defined() ? weights : Tensor::full(pred_fg.shape(), 1.0, pred_fg.dtype());
    if (w.shape() != pred_fg.shape())
        throw DataError("weighted_dice_loss: weight field shape mismatch");

    Tensor wy = ops::mul(w, target);
    Tensor num = ops::sum_rows(ops::reshape(ops::mul(wy, pred_fg), {N, HW}));
    Tensor den = ops::add(ops::sum_rows(ops::reshape(wy, {N, HW})),
                          ops::sum_rows(ops::reshape(ops::mul(w, pred_fg), {N, HW})));
    Tensor ratio = ops::div(ops::affine(num, 2.0, eps), ops::affine(den, 1.0, eps));
    return ops::mean_all(ops::affine(ratio, -1.0, 1.0));
}

Tensor gpw_dice_loss(const Tensor& pred_fg, const Tensor& target, double eps) {
    check_map(pred_fg, target, "gpw_dice_loss");
    const i64 N = pred_fg.shape()[0], H = pred_fg.shape()[1], W = pred_fg.shape()[2];
    std::vector<double> host = pred_fg.to_double();
    std::vector<double> wall(host.size());
    for (i64 n = 0; n < N; ++n) {
        std::vector<double> img(host.begin() + n * H * W, host.begin() + (n + 1) * H * W);
        PlumeWeightField f = gaussian_plume_weights(img, H, W);
        std::copy(f.weights.begin(), f.weights.end(), wall.begin() + n * H * W);
    }
    Tensor w = Tensor::from_double({N, H, W}, wall, pred_fg.dtype());
    return weighted_dice_loss(pred_fg, target, w, eps);
}

Tensor dice_loss(const Tensor& pred_fg, const Tensor& target, double eps) {
    return weighted_dice_loss(pred_fg, target, Tensor(), eps);
}

namespace {

// [N,K,H,W] -> [N*H*W, K] rows for the fused classification losses.
Tensor logits_rows(const Tensor& logits) {
    if (logits.ndim() != 4)
        throw DataError("segmentation loss: expected [N,K,H,W] logits, got " +
                        shape_str(logits.shape()));
    const auto& s = logits.shape();
    return ops::reshape(ops::permute(logits, {0, 2, 3, 1}), {s[0] * s[2] * s[3], s[1]});
}

std::vector<i64> target_indices(const Tensor& map) {
    std::vector<double> v = map.to_double();
    std::vector<i64> t(v.size());
    for (size_t i = 0; i < v.size(); ++i) t[i] = static_cast<i64>(std::llround(v[i]));
    return t;
}

} // namespace

Tensor seg_cross_entropy(const Tensor& logits, const std::vector<i64>& target) {
    return ops::cross_entropy_logits(logits_rows(logits), target);
}

Tensor seg_focal(const Tensor& logits, const std::vector<i64>& target, double gamma, double alpha) {
    return ops::focal_loss_logits(logits_rows(logits), target, gamma, alpha);
}

Tensor seg_loss(const Tensor& seg_logits, const Tensor& seg_target_map, const LossConfig& cfg) {
    const auto& s = seg_logits.shape();
    if (cfg.seg_loss == SegLossKind::cross_entropy)
        return seg_cross_entropy(seg_logits, target_indices(seg_target_map));
    if (cfg.seg_loss == SegLossKind::focal)
        return seg_focal(seg_logits, target_indices(seg_target_map), cfg.focal_gamma,
                         cfg.focal_alpha);
    if (s.size() != 4 || s[1] != 2)
        throw ConfigError("dice-family segmentation losses require exactly 2 classes, got logits " +
                          shape_str(seg_logits.shape()));
    Tensor probs = ops::permute(ops::softmax_lastdim(ops::permute(seg_logits, {0, 2, 3, 1})),
                                {0, 3, 1, 2});
    Tensor fg = ops::select_channel(probs, 1);
    return cfg.seg_loss == SegLossKind::dice ? dice_loss(fg, seg_target_map, cfg.dice_eps)
                                             : gpw_dice_loss(fg, seg_target_map, cfg.dice_eps);
}

MultiTaskLoss multi_task_loss(const Tensor& seg_logits, const Tensor& seg_target_map,
                              const Tensor& cls_logits, const std::vector<i64>& cls_target,
                              const LossConfig& cfg) {
    MultiTaskLoss out;
    out.seg = seg_loss(seg_logits, seg_target_map, cfg);
    out.cls = ops::cross_entropy_logits(cls_logits, cls_target);
    out.total = ops::add(ops::affine(out.seg, cfg.lambda_seg, 0.0),
                         ops::affine(out.cls, cfg.lambda_cls, 0.0));
    return out;
}

} // namespace gtf

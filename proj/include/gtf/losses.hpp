#pragma once

// Segmentation / classification objectives: cross-entropy, dice, focal, and
// the Gaussian-plume-weighted dice, plus the multi-task combiner.

#include <vector>

#include "gtf/config.hpp"
#include "gtf/tensor.hpp"

namespace gtf {

struct PlumeWeightField {
    std::vector<double> weights; // [H,W] row-major, values in (0,1]
    i64 height = 0, width = 0;
    double mu_x = 0, mu_y = 0;       // centroid, pixel coordinates
    double sigma_x = 0, sigma_y = 0; // clamped to [W/20, W/2] x [H/20, H/2]
};

// Anisotropic Gaussian weight field from soft foreground probabilities.
// mu = probability-mass centroid; sigma = weighted per-axis std, clamped.
// Total mass < 1e-8 falls back to mu = image center, sigma = upper bounds.
PlumeWeightField gaussian_plume_weights(const std::vector<double>& pred_fg, i64 H, i64 W);

// 1 - (2*sum(w*y*p) + eps) / (sum(w*y) + sum(w*p) + eps), per image then mean.
// weights: [N,H,W] constant field, or undefined for w == 1. Gradients flow
// through pred only.
Tensor weighted_dice_loss(const Tensor& pred_fg, const Tensor& target, const Tensor& weights,
                          double eps);

// weighted_dice_loss with per-image fields recomputed from the current
// prediction; the field is a constant of the step (no gradient through mu,
// sigma, or w).
Tensor gpw_dice_loss(const Tensor& pred_fg, const Tensor& target, double eps);
Tensor dice_loss(const Tensor& pred_fg, const Tensor& target, double eps);

// Pixel-wise losses over [N,K,H,W] logits and a [N*H*W] class-index map.
Tensor seg_cross_entropy(const Tensor& logits, const std::vector<i64>& target);
Tensor seg_focal(const Tensor& logits, const std::vector<i64>& target, double gamma, double alpha);

// Softmax over channels, then the configured segmentation loss. Dice-family
// losses read the foreground channel and require exactly 2 classes.
Tensor seg_loss(const Tensor& seg_logits, const Tensor& seg_target_map, const LossConfig& cfg);

struct MultiTaskLoss {
    Tensor total, seg, cls; // components unweighted; total = ls*seg + lc*cls
};
MultiTaskLoss multi_task_loss(const Tensor& seg_logits, const Tensor& seg_target_map,
                              const Tensor& cls_logits, const std::vector<i64>& cls_target,
                              const LossConfig& cfg);

} // namespace gtf

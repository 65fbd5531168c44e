#pragma once

// Run configuration: model architecture, decoder/classifier heads, loss,
// optimizer schedule, and the synthetic-data generator. Parsed from a
// line-oriented `section.key = value` text format; unspecified keys keep the
// defaults below. parse/serialize round-trip exactly.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gtf {

using i64 = std::int64_t;

struct StageConfig {
    i64 out_channels = 0;
    std::string pattern = "EL"; // per-block attention kind, chars E or L
    i64 heads = 1;
    i64 reduction_ratio = 1;
    i64 window_h = 5, window_w = 5;
    i64 mlp_expansion = 4;
    i64 patch_kernel = 3, patch_stride = 2, patch_pad = 1;
};

struct DecoderConfig {
    i64 internal_channels = 128;
    std::vector<int> branches = {1, 2, 3}; // pyramid stages fused as skip branches
    i64 num_seg_classes = 2;
};

struct ClassifierConfig {
    int source_stage = 4; // in {2,3,4}
    i64 hidden = 256;
    double dropout_rate = 0.1;
    i64 num_classes = 3; // HF, MD, HG
};

enum class SegLossKind { cross_entropy, dice, focal, gaussian_plume };

const char* seg_loss_name(SegLossKind k);

struct LossConfig {
    SegLossKind seg_loss = SegLossKind::gaussian_plume;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double dice_eps = 1e-6;
    double lambda_seg = 1.0;
    double lambda_cls = 1.0;
};

struct OptimConfig {
    double base_lr = 6e-5;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double warmup_start_lr = 1e-6;
    i64 warmup_iters = 1500;
    i64 total_iters = 80000;
    double poly_power = 1.0;
    double head_lr_multiplier = 10.0;
    double norm_weight_decay = 0.0;
    // loop knobs
    i64 batch_size = 8;
    i64 val_every = 8000;
    i64 keep_top_k = 3;
    bool augment = true;
};

// Per-diet-class blob statistics; distinct distributions make the diet label
// recoverable from appearance alone.
struct SynthClassStats {
    i64 plumes_lo = 1, plumes_hi = 2;
    double amp_lo = 0.3, amp_hi = 0.5;
    double sigma_lo = 3.0, sigma_hi = 5.0;
};

struct SynthConfig {
    i64 size = 64;
    i64 frames = 1000; // split 70/15/15 into train/val/test
    double noise = 0.02;
    double gradient = 0.15;
    std::array<double, 3> mix = {1.0 / 3, 1.0 / 3, 1.0 / 3}; // HF, MD, HG
    std::array<SynthClassStats, 3> cls = {
        SynthClassStats{4, 6, 0.55, 0.85, 6.0, 11.0},  // HF: many, large
        SynthClassStats{2, 3, 0.45, 0.70, 4.0, 7.0},   // MD
        SynthClassStats{1, 1, 0.35, 0.55, 2.0, 4.0},   // HG: few, small
    };
};

struct ModelConfig {
    std::array<StageConfig, 4> stages;
    i64 in_channels = 3;
    i64 input_h = 512, input_w = 512;
    std::uint64_t seed = 42;
    DecoderConfig decoder;
    ClassifierConfig classifier;
    LossConfig loss;
    OptimConfig optim;
    SynthConfig synth;

    ModelConfig(); // paper-default architecture
};

// Throws ConfigError naming the line / key / violated invariant.
ModelConfig parse_config(const std::string& text);
ModelConfig parse_config_file(const std::string& path);
void validate(const ModelConfig& cfg);
std::string serialize(const ModelConfig& cfg);

bool config_equal(const ModelConfig& a, const ModelConfig& b);

} // namespace gtf

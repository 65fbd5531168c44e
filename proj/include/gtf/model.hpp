#pragma once

// GasTwinFormer: four-stage Mix Twin encoder (efficient / locally-grouped
// attention blocks + Mix-FFN), hierarchical LR-ASPP segmentation decoder and
// dietary classification head. Weights live in a ParamRegistry so the
// optimizer and checkpointer can address them by name and group.

#include <array>
#include <string>
#include <tuple>
#include <vector>

#include "gtf/config.hpp"
#include "gtf/rng.hpp"
#include "gtf/tensor.hpp"

namespace gtf {

enum class ParamGroup { backbone, head, norm };

const char* param_group_name(ParamGroup g);

struct ParamEntry {
    std::string name;
    Tensor t;
    ParamGroup group;
};

class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor t, ParamGroup g);
    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry> group(ParamGroup g) const;
    const Tensor* find(const std::string& name) const;
    i64 total_params() const;
    void zero_grad() const;
    std::string describe_groups() const; // one line per group: name, tensors, scalars

private:
    std::vector<ParamEntry> entries_;
};

struct LayerNormW {
    Tensor g, b;
};
struct LinearW {
    Tensor w, b; // w: [in, out]
};
struct ConvW {
    Tensor w, b; // w: [C_out, C_in/groups, kh, kw]
};

struct AttentionW {
    LayerNormW pre;
    LinearW q, k, v, o;
    ConvW sr;        // only populated on the E path with R > 1
    LayerNormW sr_ln;
};

struct FfnW {
    LayerNormW pre;
    LinearW fc1;
    ConvW dw; // 3x3 depthwise
    LinearW fc2;
};

struct BlockW {
    char kind = 'E'; // 'E' or 'L'
    AttentionW attn;
    FfnW ffn;
};

struct StageW {
    ConvW patch;
    LayerNormW patch_ln;
    std::vector<BlockW> blocks;
    LayerNormW out_ln;
};

struct DecoderW {
    ConvW gate, aspp;            // 1x1 on F4 (gate applies to the pooled vector)
    std::vector<ConvW> branch;   // per selected branch, deepest-first (fusion order)
    std::vector<ConvW> fuse;     // one per branch, same order
    ConvW final;
};

struct ClassifierW {
    LinearW fc1, fc2;
};

struct FeaturePyramid {
    std::array<Tensor, 4> f; // f[i]: [N, C_{i+1}, H/2^{i+2}, W/2^{i+2}]
    i64 in_h = 0, in_w = 0;
};

// --- encoder ops ------------------------------------------------------------
// tokens are [N, T, C] with T == H*W in row-major spatial order.

std::tuple<Tensor, i64, i64> overlapped_patch_embed(const Tensor& x, const StageW& w,
                                                    const StageConfig& cfg);
Tensor efficient_attention(const Tensor& tokens, i64 H, i64 W, const AttentionW& w,
                           const StageConfig& cfg);
Tensor locally_grouped_attention(const Tensor& tokens, i64 H, i64 W, const AttentionW& w,
                                 const StageConfig& cfg);
Tensor mix_ffn(const Tensor& tokens, i64 H, i64 W, const FfnW& w, const StageConfig& cfg);

// --- heads ------------------------------------------------------------------

Tensor lraspp_forward(const FeaturePyramid& pyr, const DecoderW& w, const DecoderConfig& cfg);
Tensor classify(const FeaturePyramid& pyr, const ClassifierW& w, const ClassifierConfig& cfg,
                bool training, RngState& rng);
// Per-pixel argmax over [N,K,H,W] logits; ties break toward the lower index.
std::vector<i64> segment(const Tensor& logits);

// --- full model ---------------------------------------------------------------

class GasTwinFormer {
public:
    GasTwinFormer(const ModelConfig& cfg, RngState& rng);

    FeaturePyramid encoder_forward(const Tensor& image) const;
    Tensor decode(const FeaturePyramid& pyr) const;
    Tensor classify_diet(const FeaturePyramid& pyr, bool training, RngState& rng) const;

    struct Output {
        Tensor seg;  // [N, num_seg_classes, H, W]
        Tensor diet; // [N, num_classes]
    };
    Output forward(const Tensor& image, bool training, RngState& rng) const;

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }
    const StageW& stage(int s) const { return stages_[static_cast<size_t>(s)]; }
    const DecoderW& decoder_weights() const { return dec_; }
    const ClassifierW& classifier_weights() const { return cls_; }

private:
    ModelConfig cfg_;
    ParamRegistry reg_;
    std::array<StageW, 4> stages_;
    DecoderW dec_;
    ClassifierW cls_;
};

} // namespace gtf

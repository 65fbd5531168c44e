#pragma once

// Analytic parameter / FLOP accounting straight from the config — no model
// needs to be built. Convention (documented, fixed):
//   * 1 multiply-accumulate = 1 FLOP; bias/residual adds = 1 FLOP per element
//   * softmax = 5 FLOPs per element; layer norm = 8; gelu = 8; sigmoid = 4
//   * bilinear interpolation = 8 FLOPs per output element
// Published FLOP figures vary by convention; the comparable quantities here
// are the totals under one convention and the orderings between variants.

#include <array>
#include <string>
#include <vector>

#include "gtf/config.hpp"

namespace gtf {

struct CostRow {
    std::string name;
    i64 params = 0;
    i64 flops = 0;
};

struct CostReport {
    std::vector<CostRow> rows; // per stage + decoder + classifier
    i64 params_total = 0;
    i64 flops_total = 0;
    // attention score-matmul MACs per stage, split by attention kind —
    // the terms behind the complexity claims (EMA ~ 1/R^2, LSA ~ linear)
    std::array<i64, 4> ema_score_flops = {};
    std::array<i64, 4> lsa_score_flops = {};

    std::string table() const; // aligned text
    std::string json() const;
};

// Exact trainable-scalar count, closed form; equals the registry total of a
// model built from the same config.
i64 count_params(const ModelConfig& cfg);

CostReport count_flops(const ModelConfig& cfg, i64 input_h, i64 input_w);

} // namespace gtf

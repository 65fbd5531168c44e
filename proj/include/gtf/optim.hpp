#pragma once

// AdamW with decoupled weight decay over a ParamRegistry. The head group
// trains at head_lr_multiplier times the schedule; norm parameters use
// norm_weight_decay. Moments and master weights are kept in 64-bit floats so
// f32 models do not lose small updates to rounding.

#include <vector>

#include "gtf/config.hpp"
#include "gtf/model.hpp"

namespace gtf {

// Linear warmup warmup_start_lr -> base_lr, then polynomial decay to 0.
double lr_at(i64 iter, const OptimConfig& cfg);

class AdamW {
public:
    AdamW(ParamRegistry& params, OptimConfig cfg);

    // One update from the gradients currently held by the registry.
    void step(double lr);
    i64 steps() const { return t_; }

private:
    struct Slot {
        Tensor param;
        ParamGroup group;
        std::vector<double> master, m, v;
    };
    std::vector<Slot> slots_;
    OptimConfig cfg_;
    i64 t_ = 0;
};

} // namespace gtf

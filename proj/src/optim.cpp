#include "gtf/optim.hpp"

#include <cmath>

#include "gtf/errors.hpp"

namespace gtf {

double lr_at(i64 iter, const OptimConfig& cfg) {
    if (iter < 0 || iter > cfg.total_iters)
        throw UsageError("lr_at: iteration " + std::to_string(iter) + " outside [0, " +
                         std::to_string(cfg.total_iters) + "]");
    if (iter < cfg.warmup_iters) {
        const double f = static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
        return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * f;
    }
    const double f = static_cast<double>(iter - cfg.warmup_iters) /
                     static_cast<double>(cfg.total_iters - cfg.warmup_iters);
    return cfg.base_lr * std::pow(1.0 - f, cfg.poly_power);
}

AdamW::AdamW(ParamRegistry& params, OptimConfig cfg) : cfg_(std::move(cfg)) {
    slots_.reserve(params.entries().size());
    for (const ParamEntry& e : params.entries()) {
        Slot s;
        s.param = e.t;
        s.group = e.group;
        s.master = e.t.to_double();
        s.m.assign(s.master.size(), 0.0);
        s.v.assign(s.master.size(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        const double glr = lr * (s.group == ParamGroup::head ? cfg_.head_lr_multiplier : 1.0);
        const double wd =
            s.group == ParamGroup::norm ? cfg_.norm_weight_decay : cfg_.weight_decay;
        const std::vector<double> g = s.param.grad_to_double();
        if (g.size() != s.master.size())
            throw UsageError("AdamW: gradient size mismatch for a registered parameter");
        for (size_t i = 0; i < g.size(); ++i) {
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            s.master[i] -= glr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * s.master[i]);
        }
        s.param.copy_from_double(s.master);
    }
}

} // namespace gtf

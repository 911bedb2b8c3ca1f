#pragma once

#include <cstddef>
#include <vector>

#include "statret/params.hpp"

namespace statret {

/// AdamW hyperparameters plus the warmup/decay schedule bounds.
struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
    double weight_decay = 0.01;
    double peak_lr = 2e-5;
    double warmup_fraction = 0.05;
    std::size_t total_steps = 0;
    /// When false, every step uses peak_lr directly (no warmup or decay).
    bool use_schedule = true;
};

/// Piecewise-linear schedule: 0 -> peak over the first warmup_fraction of
/// total_steps, then linear decay back to 0 at total_steps. Clamped outside
/// [0, total_steps].
double lr_at(const AdamWConfig& cfg, std::size_t step);

/// Decoupled-weight-decay Adam over one parameter group. Weight decay is
/// applied to the parameter before the moment update term.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

    void zero_grad();

    /// Scales the group's gradients so their global L2 norm is at most
    /// max_norm. Returns the pre-clip norm.
    double clip_global_norm(double max_norm);

    /// Applies one update. Increments the step counter first, so the first
    /// call runs at lr_at(1). Throws NumericError on non-finite gradients,
    /// naming the parameter.
    void step();

    std::size_t step_count() const { return t_; }
    double current_lr() const;
    const std::vector<Parameter*>& params() const { return params_; }

private:
    std::vector<Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace statret

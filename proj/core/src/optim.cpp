#include "statret/optim.hpp"

#include <cmath>

#include "statret/errors.hpp"

namespace statret {

double lr_at(const AdamWConfig& cfg, std::size_t step) {
    if (!cfg.use_schedule) return cfg.peak_lr;
    if (cfg.total_steps == 0) return cfg.peak_lr;
    double s = static_cast<double>(std::min(step, cfg.total_steps));
    double total = static_cast<double>(cfg.total_steps);
    double warm = cfg.warmup_fraction * total;
    if (s <= warm && warm > 0.0) return cfg.peak_lr * s / warm;
    if (total <= warm) return cfg.peak_lr;
    return cfg.peak_lr * (total - s) / (total - warm);
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape));
        v_.push_back(Tensor::zeros(p->value.shape));
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double AdamW::clip_global_norm(double max_norm) {
    double sq = 0.0;
    for (Parameter* p : params_) {
        for (double g : p->grad.values) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double s = max_norm / norm;
        for (Parameter* p : params_) {
            for (double& g : p->grad.values) g *= s;
        }
    }
    return norm;
}

double AdamW::current_lr() const { return lr_at(cfg_, t_); }

void AdamW::step() {
    ++t_;
    double lr = lr_at(cfg_, t_);
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (!all_finite(p.grad)) {
            throw NumericError("non-finite gradient in parameter " + p.name);
        }
        for (std::size_t k = 0; k < p.value.values.size(); ++k) {
            double g = p.grad.values[k];
            double& th = p.value.values[k];
            th -= lr * cfg_.weight_decay * th;  // decoupled decay first
            double& m = m_[i].values[k];
            double& v = v_[i].values[k];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
            double mhat = m / bc1;
            double vhat = v / bc2;
            th -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace statret

#include "damformer/optim.hpp"

#include <cmath>
#include <iostream>

namespace damformer {

void OptimizerConfig::validate() const {
    if (lr <= 0) throw ConfigError("opt: learning rate must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw ConfigError("opt: betas must lie in [0, 1)");
    if (eps <= 0) throw ConfigError("opt: eps must be > 0");
    if (weight_decay < 0) throw ConfigError("opt: weight decay must be >= 0");
    if (steps < 0) throw ConfigError("opt: step budget must be >= 0");
    if (batch_size < 1) throw ConfigError("opt: batch size must be >= 1");
    if (clip_norm < 0) throw ConfigError("opt: clip_norm must be >= 0");
    if (stop_loss < 0) throw ConfigError("opt: stop_loss must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("opt: checkpoint cadence must be >= 0");
}

AdamW::AdamW(ParamList params, const OptimizerConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const NamedParam& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    }
}

void AdamW::zero_grad() {
    for (NamedParam& p : params_) p.tensor.zero_grad();
}

void AdamW::step() {
    t_++;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    double clip_factor = 1.0;
    if (cfg_.clip_norm > 0) {
        // fixed-order accumulation over parameters, then elements
        double sq = 0;
        for (NamedParam& p : params_) {
            if (!p.tensor.has_grad()) continue;
            Tensor g = p.tensor.grad();
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double gi = g.value_at(i);
                sq += gi * gi;
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) clip_factor = cfg_.clip_norm / norm;
    }

    for (size_t pi = 0; pi < params_.size(); ++pi) {
        NamedParam& p = params_[pi];
        Tensor g = p.tensor.grad();
        const int64_t n = p.tensor.numel();

        bool finite = true;
        for (int64_t i = 0; i < n && finite; ++i) finite = std::isfinite(g.value_at(i));
        if (!finite) {
            if (warn_) {
                std::cerr << "adamw: warning: non-finite gradient in " << p.name
                          << ", skipping its update at step " << t_ << "\n";
                continue;
            }
            throw NumericError("adamw: non-finite gradient in parameter " + p.name);
        }

        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        for (int64_t i = 0; i < n; ++i) {
            const double gi = g.value_at(i) * clip_factor;
            const double theta = p.tensor.value_at(i);
            m[static_cast<size_t>(i)] = cfg_.beta1 * m[static_cast<size_t>(i)] + (1.0 - cfg_.beta1) * gi;
            v[static_cast<size_t>(i)] =
                cfg_.beta2 * v[static_cast<size_t>(i)] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[static_cast<size_t>(i)] / bc1;
            const double vhat = v[static_cast<size_t>(i)] / bc2;
            p.tensor.set_value_at(i, theta - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps) -
                                         cfg_.lr * cfg_.weight_decay * theta);
        }
    }
}

}  // namespace damformer

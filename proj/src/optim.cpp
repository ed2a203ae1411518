#include "fka/optim.hpp"

#include <cmath>
#include <numbers>

#include "fka/errors.hpp"

namespace fka {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    if (config_.lr <= 0) throw ConfigError("learning rate must be positive");
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (1 - b1) * g[j];
            v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
            const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
            w[j] = static_cast<float>(w[j] - lr * (update + config_.weight_decay * w[j]));
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double schedule_lr(std::size_t step, std::size_t total, std::size_t warmup, double peak) {
    if (total == 0) return 0.0;
    if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    const double span = total > warmup + 1 ? static_cast<double>(total - 1 - warmup) : 1.0;
    const double t = std::min(1.0, static_cast<double>(step - warmup) / span);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

} // namespace fka

#include "mulki/optim.hpp"

#include <cmath>

#include "mulki/error.hpp"

namespace mulki {

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state, const AdamWConfig& cfg) {
    if (grads.size() != params.size()) {
        throw DimensionError("adamw_step: gradient length differs from parameter length");
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.t = 0;
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        params[i] -= cfg.lr * cfg.weight_decay * params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

void AdamW::step(std::span<Tensor> params) {
    if (states_.size() != params.size()) {
        states_.assign(params.size(), AdamWState{});
    }
    std::vector<double> zeros;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        std::span<const double> g = p.grad();
        if (g.size() != p.numel()) {
            zeros.assign(p.numel(), 0.0);
            g = zeros;
        }
        adamw_step(p.mutable_data(), g, states_[i], cfg_);
    }
}

}  // namespace mulki

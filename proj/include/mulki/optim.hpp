#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mulki/tensor.hpp"

namespace mulki {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

struct AdamWState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
};

// One decoupled-weight-decay Adam step on a flat parameter vector:
//   p <- p - lr * wd * p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state, const AdamWConfig& cfg);

// AdamW over a list of leaf tensors, reading their accumulated gradients.
// Tensors without a gradient are treated as having a zero gradient.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(std::span<Tensor> params);
    // Drop moment estimates (used after an EWE replacement).
    void reset() { states_.clear(); }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::vector<AdamWState> states_;
};

}  // namespace mulki

#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "mulki/protostore.hpp"

namespace mulki {

// How the two teachers' per-sample distillation terms are mixed.
enum class Weighting { similarity, average, only_c0, only_prev };

Weighting parse_weighting(std::string_view name);
std::string to_string(Weighting w);

// Component toggles; each maps to one row of the ablation grid.
struct Components {
    bool csa = true;
    bool fd = true;
    bool ird = true;
    bool idd = true;
    bool wc = true;
    bool we = true;
    bool ewe = false;
};

struct HyperParams {
    double tau = 2.0;
    double tau_ce = 0.07;
    double alpha = 1.0;
    double beta = 1.0;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda_wc = 1.0;
    GammaSchedule gamma{0.0, 0.04, 0.98};
    std::size_t iterations_per_task = 300;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t we_interval = 50;
    std::size_t ewe_eta = 5;
    Weighting weighting = Weighting::similarity;
    Components enable;

    bool any_distillation() const { return lambda2 != 0.0 && (enable.fd || enable.ird || enable.idd); }
    bool uses_csa() const { return lambda1 != 0.0 && enable.csa; }

    // Throws ConfigError on out-of-range values.
    void validate() const;
};

}  // namespace mulki

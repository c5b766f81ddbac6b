#include "mulki/hyper.hpp"

#include "mulki/error.hpp"

namespace mulki {

Weighting parse_weighting(std::string_view name) {
    if (name == "similarity") {
        return Weighting::similarity;
    }
    if (name == "average") {
        return Weighting::average;
    }
    if (name == "only_c0") {
        return Weighting::only_c0;
    }
    if (name == "only_prev") {
        return Weighting::only_prev;
    }
    throw ConfigError("unknown weighting mode '" + std::string(name) +
                      "' (expected similarity, average, only_c0 or only_prev)");
}

std::string to_string(Weighting w) {
    switch (w) {
        case Weighting::similarity:
            return "similarity";
        case Weighting::average:
            return "average";
        case Weighting::only_c0:
            return "only_c0";
        case Weighting::only_prev:
            return "only_prev";
    }
    return "similarity";
}

void HyperParams::validate() const {
    auto positive = [](double v, const char* key) {
        if (!(v > 0.0)) {
            throw ConfigError(std::string("hyper.") + key + " must be > 0");
        }
    };
    auto nonneg = [](double v, const char* key) {
        if (!(v >= 0.0)) {
            throw ConfigError(std::string("hyper.") + key + " must be >= 0");
        }
    };
    positive(tau, "tau");
    positive(tau_ce, "tau_ce");
    nonneg(alpha, "alpha");
    nonneg(beta, "beta");
    nonneg(lambda1, "lambda1");
    nonneg(lambda2, "lambda2");
    nonneg(lambda_wc, "lambda_wc");
    positive(lr, "lr");
    nonneg(weight_decay, "weight_decay");
    if (batch_size == 0) {
        throw ConfigError("hyper.batch_size must be >= 1");
    }
    if (we_interval == 0) {
        throw ConfigError("hyper.we_interval must be >= 1");
    }
    if (ewe_eta == 0) {
        throw ConfigError("hyper.ewe_eta must be >= 1");
    }
    // Constructing a store validates the schedule.
    PrototypeStore probe(gamma);
    (void)probe;
}

}  // namespace mulki

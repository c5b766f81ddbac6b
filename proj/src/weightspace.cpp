#include "mulki/weightspace.hpp"

#include <algorithm>

#include "mulki/encoder.hpp"
#include "mulki/error.hpp"
#include "mulki/io.hpp"

namespace mulki {

EnsembleMode parse_ensemble_mode(std::string_view name) {
    if (name == "off") {
        return EnsembleMode::off;
    }
    if (name == "we") {
        return EnsembleMode::we;
    }
    if (name == "ewe") {
        return EnsembleMode::ewe;
    }
    throw ConfigError("unknown ensemble mode '" + std::string(name) + "' (expected off, we or ewe)");
}

std::string to_string(EnsembleMode mode) {
    switch (mode) {
        case EnsembleMode::off:
            return "off";
        case EnsembleMode::we:
            return "we";
        case EnsembleMode::ewe:
            return "ewe";
    }
    return "off";
}

WEState we_init(std::span<const double> theta_prev, std::size_t interval, std::size_t eta, EnsembleMode mode) {
    if (interval == 0 || eta == 0) {
        throw ConfigError("weight ensemble interval and eta must be >= 1");
    }
    return WEState{{theta_prev.begin(), theta_prev.end()}, 0, interval, eta, mode};
}

bool we_step(WEState& state, std::span<const double> theta_current, std::size_t k) {
    if (state.mode == EnsembleMode::off || k == 0 || k % state.interval != 0) {
        return false;
    }
    if (theta_current.size() != state.theta_hat.size()) {
        throw DimensionError("we_step: parameter length changed");
    }
    // theta/(m+1) + m/(m+1) theta_hat written as an increment, so a sample equal
    // to theta_hat leaves it bitwise unchanged.
    const double count = static_cast<double>(state.m + 2);
    for (std::size_t i = 0; i < theta_current.size(); ++i) {
        state.theta_hat[i] += (theta_current[i] - state.theta_hat[i]) / count;
    }
    ++state.m;
    return true;
}

bool ewe_step(const WEState& state, std::span<double> live_params, std::size_t k) {
    if (state.mode != EnsembleMode::ewe || k == 0 || k % (state.eta * state.interval) != 0) {
        return false;
    }
    if (live_params.size() != state.theta_hat.size()) {
        throw DimensionError("ewe_step: parameter length changed");
    }
    std::copy(state.theta_hat.begin(), state.theta_hat.end(), live_params.begin());
    return true;
}

bool ewe_step(const WEState& state, DualEncoder& student, std::size_t k) {
    std::vector<double> live = student.params_flat();
    if (!ewe_step(state, std::span<double>(live), k)) {
        return false;
    }
    student.load_flat(live);
    return true;
}

std::vector<double> final_params(const WEState& state, std::span<const double> student_params) {
    if (state.mode == EnsembleMode::off) {
        return {student_params.begin(), student_params.end()};
    }
    return state.theta_hat;
}

double wc_value(std::span<const double> theta, std::span<const double> theta_prev) {
    if (theta.size() != theta_prev.size()) {
        throw DimensionError("wc_value: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double d = theta[i] - theta_prev[i];
        acc += d * d;
    }
    return acc;
}

std::vector<double> wc_gradient(std::span<const double> theta, std::span<const double> theta_prev) {
    if (theta.size() != theta_prev.size()) {
        throw DimensionError("wc_gradient: length mismatch");
    }
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        g[i] = 2.0 * (theta[i] - theta_prev[i]);
    }
    return g;
}

void save_we_state(const std::filesystem::path& prefix, const WEState& state) {
    Json m;
    m["format"] = "mulki-we-state";
    m["version"] = 1;
    m["m"] = state.m;
    m["interval"] = state.interval;
    m["eta"] = state.eta;
    m["mode"] = to_string(state.mode);
    save_bundle(prefix, m, state.theta_hat);
}

WEState load_we_state(const std::filesystem::path& prefix) {
    FlatBundle b = load_bundle(prefix);
    try {
        if (b.manifest.at("format").get<std::string>() != "mulki-we-state") {
            throw ParseError(prefix.string() + ": not a weight-ensemble state");
        }
        WEState s;
        s.theta_hat = std::move(b.values);
        s.m = b.manifest.at("m").get<std::size_t>();
        s.interval = b.manifest.at("interval").get<std::size_t>();
        s.eta = b.manifest.at("eta").get<std::size_t>();
        s.mode = parse_ensemble_mode(b.manifest.at("mode").get<std::string>());
        return s;
    } catch (const Json::exception& e) {
        throw ParseError(prefix.string() + ".json: " + e.what());
    }
}

}  // namespace mulki

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mulki {

class DualEncoder;

enum class EnsembleMode { off, we, ewe };

EnsembleMode parse_ensemble_mode(std::string_view name);
std::string to_string(EnsembleMode mode);

// Running parameter average within one task.
//
// theta_hat starts at the previous task's parameters. At every iteration k with
// k % interval == 0 the current parameters are folded in as the (m+1)-th sample,
// m = k / interval:
//     theta_hat <- theta / (m + 1) + m / (m + 1) * theta_hat
// so after m averagings theta_hat is the uniform mean of
// {theta_prev, theta_I, theta_2I, ..., theta_mI}.
struct WEState {
    std::vector<double> theta_hat;
    std::size_t m = 0;
    std::size_t interval = 50;
    std::size_t eta = 5;
    EnsembleMode mode = EnsembleMode::we;
};

WEState we_init(std::span<const double> theta_prev, std::size_t interval, std::size_t eta, EnsembleMode mode);

// Returns true when an averaging happened at iteration k (k >= 1).
bool we_step(WEState& state, std::span<const double> theta_current, std::size_t k);

// EWE replacement: when mode is ewe and k is a multiple of eta * interval, the
// live parameters are overwritten with theta_hat. Call after we_step for the
// same k. Returns true when a replacement happened.
bool ewe_step(const WEState& state, std::span<double> live_params, std::size_t k);
bool ewe_step(const WEState& state, DualEncoder& student, std::size_t k);

// theta_hat unless mode is off, in which case the raw student parameters.
std::vector<double> final_params(const WEState& state, std::span<const double> student_params);

// Sum_i (theta_i - theta_prev_i)^2 and its gradient 2 (theta - theta_prev), on plain vectors.
double wc_value(std::span<const double> theta, std::span<const double> theta_prev);
std::vector<double> wc_gradient(std::span<const double> theta, std::span<const double> theta_prev);

// Same manifest + flat-array format as encoder checkpoints.
void save_we_state(const std::filesystem::path& prefix, const WEState& state);
WEState load_we_state(const std::filesystem::path& prefix);

}  // namespace mulki

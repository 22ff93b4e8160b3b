#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>

#include <json.hpp>

#include "ntkstop/linalg.hpp"

namespace ntkstop {

struct DecayFit {
    double beta = 0.0;
    double stderr_beta = 0.0;  // standard error of β̂ (half the slope's)
    double r2 = 0.0;
    std::size_t k_min = 0;  // 1-based, inclusive
    std::size_t k_max = 0;

    nlohmann::json to_json() const;
};

// OLS of log(λ_k/λ_1) on log k for k ∈ [k_min, k_max] (1-based); β̂ = −slope/2.
// Requires k_max − k_min ≥ 8 and positive eigenvalues on the range.
DecayFit fit_decay(std::span<const double> eigs, std::size_t k_min, std::size_t k_max);

// Default range [2, min(N/2, 50)], also cut before the first eigenvalue at
// or below 1e−12·λ_1.
struct FitRange {
    std::size_t k_min = 2;
    std::size_t k_max = 2;
};
FitRange default_fit_range(std::span<const double> eigs);
DecayFit fit_decay(std::span<const double> eigs);

// 2β/(2β+1); β ≤ 1/2 violates the decay condition and is rejected.
double predicted_rate(double beta);

// λ_k = scale·k^{−2β}·(1 + noise·u_k), u_k ~ U[−1, 1], clipped positive.
Vector synth_spectrum(double beta, std::size_t n, double scale, double noise, std::uint64_t seed);

void write_decay_csv(std::span<const double> eigs, const std::filesystem::path& path);

} // namespace ntkstop

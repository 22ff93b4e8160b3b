#pragma once

#include <cstddef>
#include <string>
#include <span>
#include <vector>

#include <json.hpp>

#include "ntkstop/linalg.hpp"
#include "ntkstop/ntk.hpp"

namespace ntkstop {

// R̂(ρ) = √((1/N)·Σ min(λ_i, ρ²)), eigenvalues clamped at 0.
double local_rademacher(std::span<const double> eigs, double rho);

// R̂(ρ) ≤ ρ²·C²/(2eσ).
bool satisfies_critical_inequality(std::span<const double> eigs, double rho, double sigma,
                                   double c_h);

// Smallest ρ > 0 with R̂(ρ) ≤ ρ²C²/(2eσ). R̂(ρ)/ρ² is strictly decreasing, so
// the crossing is unique; bisection on [1e−8, ρ_hi] returns the upper bracket
// end, which satisfies the inequality, within absolute tolerance `tol`.
double critical_radius(std::span<const double> eigs, double sigma, double c_h, double tol = 1e-9);

// ⌊1/(ε·ρ̂²)⌋, the largest τ with ετ ≤ ρ̂⁻².
std::size_t t_max(double rho_hat, double epsilon);

// C/(ετ) + g(τ), with g given as g[τ−1].
double t_op_objective(double epsilon, double c, std::span<const double> g, std::size_t tau);

// argmin over τ ∈ [1, T̂_max] of C/(ετ) + g(τ), ties toward the smaller τ.
// g must hold at least T̂_max nondecreasing values.
std::size_t t_op(double epsilon, double c, std::span<const double> g, std::size_t t_max);

// Theoretical drift cap c·τ/√n for τ = 1..length.
Vector theoretical_drift_penalty(std::size_t length, std::size_t width, double c = 1.0);
// Extends a measured nondecreasing series to `length` entries using its mean
// per-step increment.
Vector extend_drift_penalty(std::span<const double> g, std::size_t length);

enum class LambdaMap { inverse, literal };
std::string to_string(LambdaMap m);
LambdaMap parse_lambda_map(const std::string& s);
// inverse: 1/(ετ); literal: ετ.
double matched_lambda(double epsilon, std::size_t tau, LambdaMap map);

struct RidgeSolution {
    double lambda = 0.0;
    Vector coefficients;  // c = (A + λI)⁻¹ r with A = ν·K
    Vector fitted;        // A·c, the fitted offset from f_PT
    Vector residuals;     // r = y − f_PT(X)
};

// Function-space solution of the linearized ridge problem.
RidgeSolution kernel_ridge(const EmpiricalKernel& k, std::span<const double> residuals, double lambda);

// Constant-kernel GD fit after τ steps: (I − (I − ε·A)^τ)·r.
Vector kernel_gd_fit(const EmpiricalKernel& k, std::span<const double> residuals, double epsilon,
                     std::size_t tau);

struct GapPoint {
    std::size_t tau = 0;
    double gap = 0.0;     // ‖fit_GD(τ) − fit_KRR(λ(τ))‖₂ / ‖fit_KRR(λ(τ))‖₂
    double lambda = 0.0;  // ∞ at τ = 0
};

// gd_fits[i] is the GD fitted offset from f_PT at step taus[i].
std::vector<GapPoint> es_krr_gap(std::span<const Vector> gd_fits, std::span<const std::size_t> taus,
                                 const EmpiricalKernel& k, std::span<const double> residuals,
                                 double epsilon, LambdaMap map = LambdaMap::inverse);
const GapPoint& min_gap(std::span<const GapPoint> gaps);

struct StoppingDiagnostics {
    Vector eigenvalues;
    double sigma = 0.0;
    double c_h = 0.0;
    double rho_hat = 0.0;
    std::size_t t_max = 0;
    std::size_t t_op = 0;
    double epsilon = 0.0;
    double C = 1.0;
    std::string g_mode;
    std::string lambda_map;
    Vector bias_variance;  // C/(ετ), τ = 1..t_max
    Vector drift;          // g(τ), τ = 1..t_max

    nlohmann::json to_json() const;
};

// `g` covers τ = 1..len(g) and is extended to T̂_max when shorter.
StoppingDiagnostics stopping_diagnostics(std::span<const double> eigs, double sigma, double c_h,
                                         double epsilon, double c, std::span<const double> g,
                                         const std::string& g_mode, LambdaMap map);

} // namespace ntkstop

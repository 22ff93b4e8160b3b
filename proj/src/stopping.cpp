#include "ntkstop/stopping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "ntkstop/csv.hpp"

namespace ntkstop {

double local_rademacher(std::span<const double> eigs, double rho) {
    if (eigs.empty()) throw std::invalid_argument("local_rademacher: empty eigenvalue list");
    if (!(rho > 0.0)) throw std::invalid_argument("local_rademacher: rho must be positive");
    const double r2 = rho * rho;
    double s = 0.0;
    for (double l : eigs) s += std::min(std::max(l, 0.0), r2);
    return std::sqrt(s / static_cast<double>(eigs.size()));
}

namespace {

double critical_slack(std::span<const double> eigs, double rho, double sigma, double c_h) {
    return local_rademacher(eigs, rho) - rho * rho * c_h * c_h / (2.0 * std::numbers::e * sigma);
}

} // namespace

bool satisfies_critical_inequality(std::span<const double> eigs, double rho, double sigma,
                                   double c_h) {
    return critical_slack(eigs, rho, sigma, c_h) <= 0.0;
}

double critical_radius(std::span<const double> eigs, double sigma, double c_h, double tol) {
    if (!(sigma > 0.0)) throw std::invalid_argument("critical_radius: sigma must be positive");
    if (!(c_h > 0.0)) throw std::invalid_argument("critical_radius: C_H must be positive");
    double lo = 1e-8;
    if (critical_slack(eigs, lo, sigma, c_h) <= 0.0)
        throw std::invalid_argument("critical_radius: inequality already holds at 1e-8; no crossing in bracket "
                                    "(degenerate spectrum)");
    double hi = 1.0;
    int expansions = 0;
    while (critical_slack(eigs, hi, sigma, c_h) > 0.0) {
        hi *= 2.0;
        if (++expansions > 2000 || !std::isfinite(hi))
            throw std::invalid_argument("critical_radius: no upper bracket found");
    }
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (critical_slack(eigs, mid, sigma, c_h) <= 0.0) hi = mid;
        else lo = mid;
    }
    return hi;
}

std::size_t t_max(double rho_hat, double epsilon) {
    if (!(rho_hat > 0.0) || !(epsilon > 0.0)) throw std::invalid_argument("t_max: rho and epsilon must be positive");
    const double v = std::floor(1.0 / (epsilon * rho_hat * rho_hat));
    if (v < 1.0) throw std::invalid_argument("t_max: radius too large for the learning rate (T_max < 1)");
    if (v > 1e15) throw std::invalid_argument("t_max: step bound exceeds 1e15");
    return static_cast<std::size_t>(v);
}

double t_op_objective(double epsilon, double c, std::span<const double> g, std::size_t tau) {
    return c / (epsilon * static_cast<double>(tau)) + g[tau - 1];
}

std::size_t t_op(double epsilon, double c, std::span<const double> g, std::size_t t_max) {
    if (t_max < 1) throw std::invalid_argument("t_op: empty range");
    if (g.size() < t_max) throw std::invalid_argument("t_op: drift series shorter than T_max");
    if (!(epsilon > 0.0)) throw std::invalid_argument("t_op: epsilon must be positive");
    double scale = 0.0;
    for (std::size_t i = 0; i < t_max; ++i) scale = std::max(scale, std::abs(g[i]));
    for (std::size_t i = 1; i < t_max; ++i)
        if (g[i] < g[i - 1] - 1e-12 * scale)
            throw std::invalid_argument("t_op: drift penalty decreases at step " + std::to_string(i + 1));
    std::size_t best = 1;
    double best_v = t_op_objective(epsilon, c, g, 1);
    for (std::size_t tau = 2; tau <= t_max; ++tau) {
        const double v = t_op_objective(epsilon, c, g, tau);
        if (v < best_v) {
            best_v = v;
            best = tau;
        }
    }
    return best;
}

Vector theoretical_drift_penalty(std::size_t length, std::size_t width, double c) {
    Vector g(length);
    const double s = c / std::sqrt(static_cast<double>(width));
    for (std::size_t i = 0; i < length; ++i) g[i] = s * static_cast<double>(i + 1);
    return g;
}

Vector extend_drift_penalty(std::span<const double> g, std::size_t length) {
    Vector out(g.begin(), g.end());
    if (out.size() >= length) {
        out.resize(length);
        return out;
    }
    const double slope = out.empty() ? 0.0 : out.back() / static_cast<double>(out.size());
    const double last = out.empty() ? 0.0 : out.back();
    const std::size_t have = out.size();
    for (std::size_t i = have; i < length; ++i)
        out.push_back(last + slope * static_cast<double>(i + 1 - have));
    return out;
}

std::string to_string(LambdaMap m) { return m == LambdaMap::inverse ? "inverse" : "literal"; }

LambdaMap parse_lambda_map(const std::string& s) {
    if (s == "inverse") return LambdaMap::inverse;
    if (s == "literal") return LambdaMap::literal;
    throw std::invalid_argument("unknown lambda map '" + s + "'");
}

double matched_lambda(double epsilon, std::size_t tau, LambdaMap map) {
    const double et = epsilon * static_cast<double>(tau);
    return map == LambdaMap::inverse ? 1.0 / et : et;
}

RidgeSolution kernel_ridge(const EmpiricalKernel& k, std::span<const double> residuals, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("kernel_ridge: lambda must be positive");
    if (residuals.size() != k.order()) throw std::invalid_argument("kernel_ridge: residual length mismatch");
    const Matrix a = k.step_operator();
    RidgeSolution sol;
    sol.lambda = lambda;
    sol.residuals.assign(residuals.begin(), residuals.end());
    try {
        sol.coefficients = solve_spd(a, residuals, lambda);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("kernel_ridge: solver failure: ") + e.what());
    }
    sol.fitted = matvec(a, sol.coefficients);
    return sol;
}

Vector kernel_gd_fit(const EmpiricalKernel& k, std::span<const double> residuals, double epsilon,
                     std::size_t tau) {
    if (residuals.size() != k.order()) throw std::invalid_argument("kernel_gd_fit: residual length mismatch");
    const Vector lam = k.step_eigenvalues();
    Vector f(lam.size());
    for (std::size_t i = 0; i < lam.size(); ++i)
        f[i] = 1.0 - std::pow(1.0 - epsilon * lam[i], static_cast<double>(tau));
    return spectral_apply(k.eigen(), f, residuals);
}

std::vector<GapPoint> es_krr_gap(std::span<const Vector> gd_fits, std::span<const std::size_t> taus,
                                 const EmpiricalKernel& k, std::span<const double> residuals,
                                 double epsilon, LambdaMap map) {
    if (gd_fits.size() != taus.size()) throw std::invalid_argument("es_krr_gap: one tau per fit required");
    std::vector<GapPoint> out;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        GapPoint p;
        p.tau = taus[i];
        if (taus[i] == 0) {
            // λ = ∞: ridge predicts f_PT, as does GD before its first step.
            p.lambda = std::numeric_limits<double>::infinity();
            p.gap = norm2(gd_fits[i]) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
            out.push_back(p);
            continue;
        }
        p.lambda = matched_lambda(epsilon, taus[i], map);
        const RidgeSolution r = kernel_ridge(k, residuals, p.lambda);
        Vector d(r.fitted.size());
        for (std::size_t j = 0; j < d.size(); ++j) d[j] = gd_fits[i][j] - r.fitted[j];
        const double denom = norm2(r.fitted);
        p.gap = denom > 0.0 ? norm2(d) / denom : (norm2(d) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        out.push_back(p);
    }
    return out;
}

const GapPoint& min_gap(std::span<const GapPoint> gaps) {
    if (gaps.empty()) throw std::invalid_argument("min_gap: empty series");
    const GapPoint* best = nullptr;
    for (const auto& g : gaps) {
        if (g.tau == 0) continue;
        if (!best || g.gap < best->gap) best = &g;
    }
    return best ? *best : gaps.front();
}

nlohmann::json StoppingDiagnostics::to_json() const {
    return {
        {"rho_hat", rho_hat}, {"t_max", t_max}, {"t_op", t_op},     {"epsilon", epsilon},
        {"C", C},             {"g_mode", g_mode}, {"lambda_map", lambda_map},
    };
}

StoppingDiagnostics stopping_diagnostics(std::span<const double> eigs, double sigma, double c_h,
                                         double epsilon, double c, std::span<const double> g,
                                         const std::string& g_mode, LambdaMap map) {
    StoppingDiagnostics d;
    d.eigenvalues.assign(eigs.begin(), eigs.end());
    d.sigma = sigma;
    d.c_h = c_h;
    d.epsilon = epsilon;
    d.C = c;
    d.g_mode = g_mode;
    d.lambda_map = to_string(map);
    d.rho_hat = critical_radius(eigs, sigma, c_h);
    d.t_max = t_max(d.rho_hat, epsilon);
    if (d.t_max > 100'000'000) throw std::invalid_argument("stopping_diagnostics: T_max above 1e8 is not scanned");
    d.drift = extend_drift_penalty(g, d.t_max);
    d.t_op = t_op(epsilon, c, d.drift, d.t_max);
    d.bias_variance.resize(d.t_max);
    for (std::size_t tau = 1; tau <= d.t_max; ++tau)
        d.bias_variance[tau - 1] = c / (epsilon * static_cast<double>(tau));
    return d;
}

} // namespace ntkstop

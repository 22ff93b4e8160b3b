#include "ntkstop/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ntkstop/csv.hpp"
#include "ntkstop/rng.hpp"

namespace ntkstop {

nlohmann::json DecayFit::to_json() const {
    return {{"beta", beta}, {"stderr", stderr_beta}, {"r2", r2}, {"k_min", k_min}, {"k_max", k_max}};
}

DecayFit fit_decay(std::span<const double> eigs, std::size_t k_min, std::size_t k_max) {
    if (k_min < 1 || k_max > eigs.size() || k_max < k_min + 8)
        throw std::invalid_argument("fit_decay: range [" + std::to_string(k_min) + ", " + std::to_string(k_max) +
                                    "] invalid for " + std::to_string(eigs.size()) +
                                    " eigenvalues (need k_max - k_min >= 8)");
    const double l1 = eigs[0];
    if (!(l1 > 0.0)) throw std::invalid_argument("fit_decay: leading eigenvalue must be positive");
    for (std::size_t k = k_min; k <= k_max; ++k)
        if (!(eigs[k - 1] > 0.0))
            throw std::invalid_argument("fit_decay: nonpositive eigenvalue at k=" + std::to_string(k) +
                                        "; truncate the range first");
    const std::size_t m = k_max - k_min + 1;
    double sx = 0, sy = 0;
    for (std::size_t k = k_min; k <= k_max; ++k) {
        sx += std::log(static_cast<double>(k));
        sy += std::log(eigs[k - 1] / l1);
    }
    const double mx = sx / static_cast<double>(m), my = sy / static_cast<double>(m);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t k = k_min; k <= k_max; ++k) {
        const double dx = std::log(static_cast<double>(k)) - mx;
        const double dy = std::log(eigs[k - 1] / l1) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    const double slope = sxy / sxx;
    double sse = 0;
    for (std::size_t k = k_min; k <= k_max; ++k) {
        const double x = std::log(static_cast<double>(k));
        const double e = std::log(eigs[k - 1] / l1) - (my + slope * (x - mx));
        sse += e * e;
    }
    DecayFit fit;
    fit.k_min = k_min;
    fit.k_max = k_max;
    fit.beta = -slope / 2.0;
    fit.stderr_beta = std::sqrt(sse / static_cast<double>(m - 2) / sxx) / 2.0;
    fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    return fit;
}

FitRange default_fit_range(std::span<const double> eigs) {
    if (eigs.empty() || !(eigs[0] > 0.0)) throw std::invalid_argument("default_fit_range: no positive spectrum");
    FitRange r;
    r.k_max = std::min<std::size_t>(eigs.size() / 2, 50);
    const double floor = 1e-12 * eigs[0];
    for (std::size_t k = r.k_min; k <= r.k_max; ++k)
        if (!(eigs[k - 1] > floor)) {
            r.k_max = k - 1;
            break;
        }
    return r;
}

DecayFit fit_decay(std::span<const double> eigs) {
    const FitRange r = default_fit_range(eigs);
    return fit_decay(eigs, r.k_min, r.k_max);
}

double predicted_rate(double beta) {
    if (!(beta > 0.5))
        throw std::invalid_argument("predicted_rate: beta must exceed 1/2 for the eigen-decay condition");
    return 2.0 * beta / (2.0 * beta + 1.0);
}

Vector synth_spectrum(double beta, std::size_t n, double scale, double noise, std::uint64_t seed) {
    if (!(beta > 0.0) || n < 1) throw std::invalid_argument("synth_spectrum: need beta > 0 and n >= 1");
    Rng rng(seed);
    Vector out(n);
    for (std::size_t k = 1; k <= n; ++k) {
        const double u = noise != 0.0 ? rng.uniform(-1.0, 1.0) : 0.0;
        const double v = scale * std::pow(static_cast<double>(k), -2.0 * beta) * (1.0 + noise * u);
        out[k - 1] = std::max(v, std::numeric_limits<double>::min());
    }
    return out;
}

void write_decay_csv(std::span<const double> eigs, const std::filesystem::path& path) {
    CsvWriter out(path, {"k", "lambda", "log_ratio"});
    for (std::size_t k = 1; k <= eigs.size(); ++k) {
        const double v = eigs[k - 1];
        std::optional<double> lr;
        if (v > 0.0 && eigs[0] > 0.0) lr = std::log(v / eigs[0]);
        out.row(k, v, lr);
    }
}

} // namespace ntkstop

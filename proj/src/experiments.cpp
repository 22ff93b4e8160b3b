#include "ntkstop/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ntkstop/parallel.hpp"
#include "ntkstop/rng.hpp"

namespace ntkstop {

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need two or more paired points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("loglog_slope: values must be positive");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(y[i]) - my);
    }
    return sxy / sxx;
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

PlantedTarget rescale(const PlantedTarget& target, std::span<const Matrix> inputs, double rms, std::size_t jobs) {
    const Vector off = target.offsets(inputs, jobs);
    const double now = norm2(off) / std::sqrt(static_cast<double>(off.size()));
    if (!(now > 0.0)) throw std::invalid_argument("planted offset vanishes on the training inputs; cannot rescale");
    Vector zeta = target.coefficients();
    for (double& z : zeta) z *= rms / now;
    return PlantedTarget(target.base(), target.centers(), std::move(zeta), jobs);
}

PlantedTask make_planted_task(const NetworkParams& theta_pt, const TaskSpec& spec, std::uint64_t seed,
                              std::size_t jobs) {
    const NetworkConfig& c = theta_pt.config();
    auto x = gen_inputs(spec.n_train, c.seq_len, c.input_dim, spec.bound, derive_seed(seed, "data"));
    PlantedTarget target = plant_target(theta_pt, x, spec.centers, spec.scale, derive_seed(seed, "plant"), jobs);
    if (spec.target_rms > 0.0) target = rescale(target, x, spec.target_rms, jobs);
    RegressionDataset train = sample_labels(target, std::move(x), spec.sigma, derive_seed(seed, "noise", 0), jobs);
    auto xt = gen_inputs(spec.n_test, c.seq_len, c.input_dim, spec.bound, derive_seed(seed, "test"));
    RegressionDataset test = sample_labels(target, std::move(xt), spec.sigma, derive_seed(seed, "noise", 1), jobs);
    train.bound = test.bound = spec.bound;
    return {std::move(target), std::move(train), std::move(test)};
}

namespace {

double rate_from_kernel(const EmpiricalKernel& k, double fraction) {
    return fraction * eta_critical(k) / k.step_scale();
}

} // namespace

WidthSweepPoint width_sweep_point(const WidthSweepConfig& cfg, std::size_t width, std::size_t seed) {
    NetworkConfig net = cfg.network;
    net.width = width;
    net.validate();
    const NetworkParams theta_pt = pretrain(net, derive_seed(cfg.root_seed, "init", seed), cfg.pretrain);
    const PlantedTask task = make_planted_task(theta_pt, cfg.task, derive_seed(cfg.root_seed, "task", seed));

    FinetuneOptions opts;
    opts.epsilon = rate_from_kernel(empirical_kernel(theta_pt, task.train.inputs), cfg.rate_fraction);
    opts.steps = cfg.steps;
    opts.record_kernel = true;
    opts.kernel_stride = 1;
    const TrainTrajectory traj = finetune(theta_pt, task.train, opts);

    WidthSweepPoint p;
    p.width = width;
    p.seed = seed;
    p.epsilon = opts.epsilon;
    p.sup_drift = traj.sup_kernel_drift().value_or(0.0);
    p.lin_error = linearization_error(theta_pt, traj.final_params, task.train.inputs);
    p.param_dist = traj.records.back().param_dist;
    p.initial_loss = traj.records.front().train_loss;
    p.final_loss = traj.records.back().train_loss;
    return p;
}

WidthSweepResult run_width_sweep(const WidthSweepConfig& cfg) {
    if (cfg.widths.size() < 2 || cfg.seeds < 1) throw std::invalid_argument("width sweep needs two widths and one seed");
    const std::size_t nw = cfg.widths.size();
    WidthSweepResult r;
    r.points.resize(nw * cfg.seeds);
    // The widest points are the slowest; start them first.
    parallel_for(r.points.size(), cfg.jobs, [&](std::size_t i) {
        const std::size_t w = nw - 1 - i / cfg.seeds, s = i % cfg.seeds;
        r.points[w * cfg.seeds + s] = width_sweep_point(cfg, cfg.widths[w], s);
    });
    for (std::size_t w = 0; w < nw; ++w) {
        std::vector<double> drift, lin, dist;
        for (std::size_t s = 0; s < cfg.seeds; ++s) {
            const auto& p = r.points[w * cfg.seeds + s];
            drift.push_back(p.sup_drift);
            lin.push_back(p.lin_error);
            dist.push_back(p.param_dist);
        }
        r.widths.push_back(static_cast<double>(cfg.widths[w]));
        r.median_drift.push_back(median(drift));
        r.median_lin_error.push_back(median(lin));
        r.median_param_dist.push_back(median(dist));
    }
    r.drift_slope = loglog_slope(r.widths, r.median_drift);
    r.lin_slope = loglog_slope(r.widths, r.median_lin_error);
    r.param_slope = loglog_slope(r.widths, r.median_param_dist);
    return r;
}

nlohmann::json WidthSweepResult::summary() const {
    return {{"widths", widths},
            {"median_sup_drift", median_drift},
            {"median_lin_error", median_lin_error},
            {"median_param_dist", median_param_dist},
            {"drift_slope", drift_slope},
            {"lin_slope", lin_slope},
            {"param_slope", param_slope}};
}

Vector kernel_gd_predict(const Matrix& k_train, const Matrix& k_test_train, std::span<const double> y,
                         double epsilon, std::size_t steps) {
    const std::size_t n = k_train.rows();
    if (!k_train.square() || y.size() != n || k_test_train.cols() != n)
        throw std::invalid_argument("kernel_gd_predict: shape mismatch");
    const EigenDecomposition eig = sym_eig(k_train);
    const double nn = static_cast<double>(n), tau = static_cast<double>(steps);
    Vector factors(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = std::max(eig.eigenvalues[i], 0.0);
        // (1 − (1 − x)^τ)/μ, continuous at μ = 0; x is clipped at 1 against rounding
        const double x = std::min(epsilon * mu / nn, 1.0);
        factors[i] = x > 1e-300 ? -std::expm1(tau * std::log1p(-x)) / mu : epsilon * tau / nn;
    }
    const Vector alpha = spectral_apply(eig, factors, y);
    return matvec(k_test_train, alpha);
}

namespace {

Matrix reshape(const EigenDecomposition& basis, double beta) {
    const std::size_t m = basis.eigenvalues.size();
    Matrix k(m, m);
    for (std::size_t a = 0; a < m; ++a) {
        const double lam = std::pow(static_cast<double>(a + 1), -2.0 * beta);
        for (std::size_t i = 0; i < m; ++i) {
            const double vi = lam * basis.eigenvectors(i, a);
            if (vi == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) k(i, j) += vi * basis.eigenvectors(j, a);
        }
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < i; ++j) k(i, j) = k(j, i) = 0.5 * (k(i, j) + k(j, i));
    return k;
}

Matrix submatrix(const Matrix& k, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
    Matrix out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = k(rows[i], cols[j]);
    return out;
}

} // namespace

LearningCurveResult run_learning_curve(const LearningCurveConfig& cfg) {
    if (cfg.betas.size() < 2 || cfg.sample_sizes.empty() || cfg.seeds < 1)
        throw std::invalid_argument("learning curve needs two betas, one sample size, and one seed");
    const std::size_t n_max = *std::max_element(cfg.sample_sizes.begin(), cfg.sample_sizes.end());
    const std::size_t pool = n_max + cfg.n_test;
    const std::size_t nb = cfg.betas.size(), nn = cfg.sample_sizes.size();

    LearningCurveResult r;
    r.points.resize(cfg.seeds * nb * nn);
    std::vector<EigenDecomposition> bases(cfg.seeds);
    parallel_for(cfg.seeds, cfg.jobs, [&](std::size_t s) {
        const NetworkParams theta = pretrain(cfg.network, derive_seed(cfg.root_seed, "init", s), cfg.pretrain);
        const auto x = gen_inputs(pool, cfg.network.seq_len, cfg.network.input_dim, cfg.bound,
                                  derive_seed(cfg.root_seed, "data", s));
        bases[s] = empirical_kernel(theta, x).eigen();
    });

    parallel_for(cfg.seeds * nb, cfg.jobs, [&](std::size_t item) {
        const std::size_t s = item / nb, b = item % nb;
        const Matrix k = reshape(bases[s], cfg.betas[b]);
        // f* = Kζ with ζ shared across β, scaled to unit RMS on the pool.
        Rng plant(derive_seed(cfg.root_seed, "plant", s));
        Vector zeta(pool);
        for (double& z : zeta) z = plant.normal();
        Vector f = matvec(k, zeta);
        const double rms = norm2(f) / std::sqrt(static_cast<double>(pool));
        for (double& v : f) v /= rms;
        for (double& z : zeta) z /= rms;
        const double c_h = std::sqrt(std::max(dot(zeta, f), 0.0));

        Rng noise(derive_seed(cfg.root_seed, "noise", s));
        Vector y(pool);
        for (std::size_t i = 0; i < pool; ++i) y[i] = f[i] + cfg.sigma * noise.normal();
        const auto perm = Rng(derive_seed(cfg.root_seed, "split", s)).permutation(pool);
        const std::vector<std::size_t> test_idx(perm.end() - static_cast<std::ptrdiff_t>(cfg.n_test), perm.end());

        for (std::size_t j = 0; j < nn; ++j) {
            const std::size_t n = cfg.sample_sizes[j];
            const std::vector<std::size_t> train_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
            const Matrix k_tr = submatrix(k, train_idx, train_idx);
            const Matrix k_te = submatrix(k, test_idx, train_idx);
            Vector y_tr(n);
            for (std::size_t i = 0; i < n; ++i) y_tr[i] = y[train_idx[i]];

            Vector step = sym_eig(k_tr).eigenvalues;
            for (double& v : step) v /= static_cast<double>(n);
            const double epsilon = 1.0 / step.front();
            const double rho = critical_radius(step, cfg.sigma, c_h);
            const std::size_t tm = t_max(rho, epsilon);
            // A fixed kernel has no drift, so the objective C/(ετ) is minimized at T̂_max.
            const Vector g(std::min<std::size_t>(tm, 1), 0.0);
            const std::size_t stop = t_op(epsilon, cfg.c, extend_drift_penalty(g, tm), tm);

            const Vector pred = kernel_gd_predict(k_tr, k_te, y_tr, epsilon, stop);
            double se = 0.0;
            for (std::size_t i = 0; i < cfg.n_test; ++i) {
                const double e = pred[i] - f[test_idx[i]];
                se += e * e;
            }
            LearningCurvePoint& p = r.points[(b * nn + j) * cfg.seeds + s];
            p.beta = cfg.betas[b];
            p.n = n;
            p.seed = s;
            p.t_op = stop;
            p.rho_hat = rho;
            p.test_mse = se / static_cast<double>(cfg.n_test);
        }
    });

    r.median_mse.assign(nb, std::vector<double>(nn));
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t j = 0; j < nn; ++j) {
            std::vector<double> v;
            for (std::size_t s = 0; s < cfg.seeds; ++s) v.push_back(r.points[(b * nn + j) * cfg.seeds + s].test_mse);
            r.median_mse[b][j] = median(v);
        }
    for (std::size_t j = 0; j < nn; ++j)
        for (std::size_t a = 0; a < nb; ++a)
            for (std::size_t b = a + 1; b < nb; ++b) {
                ++r.cells_total;
                const bool higher_wins = cfg.betas[b] > cfg.betas[a] ? r.median_mse[b][j] < r.median_mse[a][j]
                                                                     : r.median_mse[a][j] < r.median_mse[b][j];
                if (higher_wins) ++r.cells_ordered;
            }
    return r;
}

nlohmann::json LearningCurveResult::summary(const LearningCurveConfig& cfg) const {
    return {{"betas", cfg.betas},
            {"sample_sizes", cfg.sample_sizes},
            {"median_test_mse", median_mse},
            {"cells_ordered", cells_ordered},
            {"cells_total", cells_total}};
}

RidgeEquivResult run_ridge_equivalence(const RidgeEquivConfig& cfg) {
    const NetworkParams theta_pt = pretrain(cfg.network, derive_seed(cfg.root_seed, "init"), cfg.pretrain, cfg.jobs);
    const PlantedTask task = make_planted_task(theta_pt, cfg.task, derive_seed(cfg.root_seed, "task"), cfg.jobs);
    const LinearizedModel lin(theta_pt, Vector(theta_pt.size(), 0.0), task.train.inputs, cfg.jobs);
    const Matrix& jac = lin.jacobian();
    const EmpiricalKernel k = empirical_kernel(jac, task.train.size(), theta_pt.config().width,
                                               theta_pt.config().parameterization);

    RidgeEquivResult r;
    r.epsilon = rate_from_kernel(k, cfg.rate_fraction);
    const LinearizedTrajectory traj = finetune_linearized(lin, task.train.labels, r.epsilon, cfg.steps);

    Vector residual(task.train.size());
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = task.train.labels[i] - lin.base_outputs()[i];
    std::vector<Vector> fits;
    std::vector<std::size_t> taus;
    for (std::size_t t = 0; t < traj.predictions.size(); ++t) {
        Vector fit = traj.predictions[t];
        for (std::size_t i = 0; i < fit.size(); ++i) fit[i] -= lin.base_outputs()[i];
        const Vector closed = kernel_gd_fit(k, residual, r.epsilon, t);
        double d = 0.0;
        for (std::size_t i = 0; i < fit.size(); ++i) d += (fit[i] - closed[i]) * (fit[i] - closed[i]);
        const double denom = norm2(closed);
        if (denom > 0.0) r.closed_form_error = std::max(r.closed_form_error, std::sqrt(d) / denom);
        fits.push_back(std::move(fit));
        taus.push_back(t);
    }
    r.gaps = es_krr_gap(fits, taus, k, residual, r.epsilon, cfg.lambda_map);
    r.literal_gaps = es_krr_gap(fits, taus, k, residual, r.epsilon,
                                cfg.lambda_map == LambdaMap::inverse ? LambdaMap::literal : LambdaMap::inverse);
    r.best = min_gap(r.gaps);
    return r;
}

nlohmann::json RidgeEquivResult::summary() const {
    return {{"epsilon", epsilon},
            {"min_gap", best.gap},
            {"min_gap_tau", best.tau},
            {"min_gap_lambda", best.lambda},
            {"closed_form_error", closed_form_error}};
}

NegationSummary run_negation(const NegationConfig& cfg) {
    NegationSummary out;
    out.trials.resize(cfg.seeds);
    parallel_for(cfg.seeds, cfg.jobs, [&](std::size_t s) {
        const NetworkParams theta_pt = pretrain(cfg.network, derive_seed(cfg.root_seed, "init", s), cfg.pretrain);
        const PlantedTask task = make_planted_task(theta_pt, cfg.task, derive_seed(cfg.root_seed, "task", s));
        out.trials[s] = negation_trial(theta_pt, task.train, task.test, {0.0, cfg.steps, 1});
    });
    for (const auto& t : out.trials)
        if (t.difference > 0.0) ++out.successes;
    return out;
}

nlohmann::json NegationSummary::to_json() const {
    nlohmann::json trials_json = nlohmann::json::array();
    for (const auto& t : trials) trials_json.push_back(t.to_json());
    return {{"trials", trials_json}, {"successes", successes}, {"seeds", trials.size()}};
}

std::pair<std::vector<Matrix>, std::vector<Matrix>> region_inputs(const AdditionConfig& cfg, int task,
                                                                   std::size_t n_train, std::uint64_t seed) {
    const std::size_t t_len = cfg.network.seq_len, d = cfg.network.input_dim;
    if (d < 2) throw std::invalid_argument("region inputs need input_dim >= 2");
    if (task != 0 && task != 1) throw std::invalid_argument("region inputs: task must be 0 or 1");
    const std::size_t lo = task == 0 ? 0 : d / 2, hi = task == 0 ? d / 2 : d;
    const double b = cfg.task.bound;
    Rng proto_rng(derive_seed(seed, "prototype", static_cast<std::uint64_t>(task)));
    Matrix proto(t_len, d);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t f = lo; f < hi; ++f) proto(t, f) = proto_rng.uniform(-b, b);
    auto sample = [&](std::size_t n, const char* stream) {
        Rng rng(derive_seed(seed, stream, static_cast<std::uint64_t>(task)));
        std::vector<Matrix> xs(n, proto);
        for (auto& x : xs)
            for (std::size_t t = 0; t < t_len; ++t)
                for (std::size_t f = lo; f < hi; ++f) x(t, f) += cfg.spread * b * rng.normal();
        return xs;
    };
    return {sample(n_train, "data"), sample(cfg.task.n_test, "test")};
}

AdditionSummary run_addition(const AdditionConfig& cfg) {
    AdditionSummary out;
    out.trials.resize(cfg.seeds);
    parallel_for(cfg.seeds, cfg.jobs, [&](std::size_t s) {
        const NetworkParams theta_pt = pretrain(cfg.network, derive_seed(cfg.root_seed, "init", s), cfg.pretrain);
        const std::uint64_t seed = derive_seed(cfg.root_seed, "task", s);
        RegressionDataset train[2], test[2];
        for (int t = 0; t < 2; ++t) {
            auto [x, xt] = region_inputs(cfg, t, cfg.task.n_train, seed);
            PlantedTarget target = plant_target(theta_pt, x, cfg.task.centers, cfg.task.scale,
                                                derive_seed(seed, "plant", static_cast<std::uint64_t>(t)));
            if (cfg.task.target_rms > 0.0) target = rescale(target, x, cfg.task.target_rms, 1);
            train[t] = sample_labels(target, std::move(x), cfg.task.sigma,
                                     derive_seed(seed, "noise", static_cast<std::uint64_t>(2 * t)));
            test[t] = sample_labels(target, std::move(xt), cfg.task.sigma,
                                    derive_seed(seed, "noise", static_cast<std::uint64_t>(2 * t + 1)));
        }
        out.trials[s] = addition_trial(theta_pt, train[0], test[0], train[1], test[1], {0.0, cfg.steps, 1});
    });
    std::vector<double> rel[2], mass;
    for (const auto& t : out.trials) {
        for (int k = 0; k < 2; ++k) rel[k].push_back(t.relative_change[k]);
        mass.push_back(t.cross_mass);
        out.max_cross_mass = std::max(out.max_cross_mass, t.cross_mass);
        out.max_additivity_error = std::max(out.max_additivity_error, t.additivity_error);
    }
    for (int k = 0; k < 2; ++k) out.median_relative_change[k] = median(rel[k]);
    out.median_cross_mass = median(mass);
    return out;
}

nlohmann::json AdditionSummary::to_json() const {
    nlohmann::json trials_json = nlohmann::json::array();
    for (const auto& t : trials) trials_json.push_back(t.to_json());
    return {{"trials", trials_json},
            {"median_relative_change", {median_relative_change[0], median_relative_change[1]}},
            {"median_cross_mass", median_cross_mass},
            {"max_cross_mass", max_cross_mass},
            {"max_additivity_error", max_additivity_error}};
}

} // namespace ntkstop

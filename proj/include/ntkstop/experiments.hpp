#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ntkstop/data.hpp"
#include "ntkstop/model.hpp"
#include "ntkstop/ntk.hpp"
#include "ntkstop/spectrum.hpp"
#include "ntkstop/stopping.hpp"
#include "ntkstop/taskvec.hpp"
#include "ntkstop/train.hpp"

namespace ntkstop {

// Slope of the OLS line through (log x, log y).
double loglog_slope(std::span<const double> x, std::span<const double> y);
double median(std::vector<double> v);

// A planted regression task on a pretrained network: inputs i.i.d. on the
// cube, f_tgt = f_PT + Σ ζ_i 𝕂(·, c_i) with centers drawn from the training
// inputs, Gaussian label noise.
struct TaskSpec {
    std::size_t n_train = 64;
    std::size_t n_test = 64;
    std::size_t centers = 8;
    double scale = 1.0;  // stddev of ζ
    // When positive, ζ is rescaled so the planted offset has this RMS on the
    // training inputs, keeping the task size fixed across widths and seeds.
    double target_rms = 1.0;
    double sigma = 0.1;
    double bound = 1.0;
};

struct PlantedTask {
    PlantedTarget target;
    RegressionDataset train;
    RegressionDataset test;
};

// Same target direction with ζ scaled so the offset has the given RMS on `inputs`.
PlantedTarget rescale(const PlantedTarget& target, std::span<const Matrix> inputs, double rms,
                      std::size_t jobs = 1);

// Substreams "data", "plant", "noise", "test" of `seed`.
PlantedTask make_planted_task(const NetworkParams& theta_pt, const TaskSpec& spec, std::uint64_t seed,
                              std::size_t jobs = 1);

// Width sweep for the stability and linearization scaling checks.
struct WidthSweepConfig {
    NetworkConfig network;
    std::vector<std::size_t> widths = {32, 64, 128, 256};
    std::size_t seeds = 5;
    std::size_t steps = 50;
    TaskSpec task;
    PretrainOptions pretrain;
    double rate_fraction = 0.5;  // ε = rate_fraction·η_critical/ν
    std::uint64_t root_seed = 0;
    std::size_t jobs = 1;
};

struct WidthSweepPoint {
    std::size_t width = 0;
    std::size_t seed = 0;
    double epsilon = 0.0;
    double sup_drift = 0.0;
    double lin_error = 0.0;
    double param_dist = 0.0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

struct WidthSweepResult {
    std::vector<WidthSweepPoint> points;
    std::vector<double> widths;
    std::vector<double> median_drift, median_lin_error, median_param_dist;
    double drift_slope = 0.0;
    double lin_slope = 0.0;
    double param_slope = 0.0;

    nlohmann::json summary() const;
};

WidthSweepPoint width_sweep_point(const WidthSweepConfig& cfg, std::size_t width, std::size_t seed);
WidthSweepResult run_width_sweep(const WidthSweepConfig& cfg);

// Kernel learning curves on spectrally reshaped NTKs: the eigenvectors of the
// pretrained NTK on an input pool are kept and the eigenvalues replaced by
// k^{−2β}. Targets are drawn in the reshaped RKHS, normalized to unit RMS on
// the pool, and learned by kernel gradient descent stopped at T̂_op.
struct LearningCurveConfig {
    NetworkConfig network;
    std::vector<double> betas = {0.6, 0.8, 1.0};
    std::vector<std::size_t> sample_sizes = {50, 100, 200};
    std::size_t n_test = 200;
    std::size_t seeds = 5;
    double sigma = 0.5;
    double bound = 1.0;
    double c = 1.0;  // constant in the T̂_op objective
    PretrainOptions pretrain;
    std::uint64_t root_seed = 0;
    std::size_t jobs = 1;
};

struct LearningCurvePoint {
    double beta = 0.0;
    std::size_t n = 0;
    std::size_t seed = 0;
    std::size_t t_op = 0;
    double rho_hat = 0.0;
    double test_mse = 0.0;
};

struct LearningCurveResult {
    std::vector<LearningCurvePoint> points;
    // median test MSE per (β, N), indexed [beta][n]
    std::vector<std::vector<double>> median_mse;
    // ordered cells: for every N and β pair (a < b), median MSE(b) < median MSE(a)
    std::size_t cells_ordered = 0;
    std::size_t cells_total = 0;

    nlohmann::json summary(const LearningCurveConfig& cfg) const;
};

LearningCurveResult run_learning_curve(const LearningCurveConfig& cfg);

// Kernel GD in the RKHS on a fixed kernel matrix, α ← α + (ε/N)(y − K_tr α)
// from α = 0, evaluated in closed form on the eigenbasis of K_tr; returns the
// test predictions K_te,tr α after `steps`.
Vector kernel_gd_predict(const Matrix& k_train, const Matrix& k_test_train, std::span<const double> y,
                         double epsilon, std::size_t steps);

// ES↔KRR equivalence on a linearized model.
struct RidgeEquivConfig {
    NetworkConfig network;
    TaskSpec task;
    std::size_t steps = 400;
    double rate_fraction = 0.5;
    LambdaMap lambda_map = LambdaMap::inverse;
    PretrainOptions pretrain;
    std::uint64_t root_seed = 0;
    std::size_t jobs = 1;
};

struct RidgeEquivResult {
    std::vector<GapPoint> gaps;
    std::vector<GapPoint> literal_gaps;  // paper-literal λ = ετ, reported alongside
    GapPoint best;
    double epsilon = 0.0;
    double closed_form_error = 0.0;  // max relative gap between the GD run and (I − (I − εA)^τ)r

    nlohmann::json summary() const;
};

RidgeEquivResult run_ridge_equivalence(const RidgeEquivConfig& cfg);

// Negation and addition protocols.
struct NegationConfig {
    NetworkConfig network;
    TaskSpec task;
    std::size_t seeds = 10;
    std::size_t steps = 50;
    PretrainOptions pretrain;
    std::uint64_t root_seed = 0;
    std::size_t jobs = 1;
};

struct NegationSummary {
    std::vector<NegationResult> trials;
    std::size_t successes = 0;  // MSE(f_neg) > MSE(f_FT)

    nlohmann::json to_json() const;
};

NegationSummary run_negation(const NegationConfig& cfg);

// Two tasks on disjoint input regions. Each task's inputs are clustered
// around its own prototype drawn in its region; task 1 occupies the first half
// of the features and task 2 the second half (the other half is zero).
struct AdditionConfig {
    NetworkConfig network;
    TaskSpec task;
    double spread = 0.1;  // stddev of inputs around the task prototype, relative to the bound
    std::size_t seeds = 5;
    std::size_t steps = 50;
    PretrainOptions pretrain;
    std::uint64_t root_seed = 0;
    std::size_t jobs = 1;
};

struct AdditionSummary {
    std::vector<AdditionResult> trials;
    double median_relative_change[2] = {0.0, 0.0};
    double median_cross_mass = 0.0;
    double max_cross_mass = 0.0;
    double max_additivity_error = 0.0;

    nlohmann::json to_json() const;
};

std::pair<std::vector<Matrix>, std::vector<Matrix>> region_inputs(const AdditionConfig& cfg, int task,
                                                                   std::size_t n_train, std::uint64_t seed);
AdditionSummary run_addition(const AdditionConfig& cfg);

} // namespace ntkstop

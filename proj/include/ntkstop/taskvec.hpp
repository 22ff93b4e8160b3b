#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ntkstop/data.hpp"
#include "ntkstop/model.hpp"
#include "ntkstop/train.hpp"

namespace ntkstop {

struct TaskVector {
    Vector delta;  // θ_FT − θ_PT in flat order
    std::string task;
    double norm = 0.0;
};

TaskVector task_vector(const NetworkParams& theta_pt, const NetworkParams& theta_ft,
                       std::string task = {});
TaskVector make_task_vector(Vector delta, std::string task = {});

// θ + Σ c_i τ_i.
NetworkParams apply(const NetworkParams& base, std::span<const TaskVector> vectors,
                    std::span<const double> coefficients);

double cosine(const TaskVector& a, const TaskVector& b);

void write_cosine_csv(std::span<const TaskVector> vectors, const std::filesystem::path& path);

struct TrainingSpec {
    double epsilon = 0.0;
    std::size_t steps = 50;
    std::size_t jobs = 1;
};

struct NegationResult {
    double mse_ft = 0.0;       // test MSE of θ_PT + τ
    double mse_neg = 0.0;      // test MSE of θ_PT − τ
    double difference = 0.0;   // mse_neg − mse_ft
    double linearized_difference = 0.0;  // same with f_PT ± J(θ_PT)τ
    double quadratic_form = 0.0;         // (4/N)·‖J(θ_PT)τ‖²
    double cross_term = 0.0;             // (4/N)·(y − f_PT − Jτ)ᵀJτ
    double task_norm = 0.0;

    nlohmann::json to_json() const;
};

// Fine-tunes on `train`, then compares f_neg = f(θ_PT − τ) against
// f_FT = f(θ_PT + τ) on `test`. In the linearized model the MSE gap is
// (4/N)·(y − f_PT)ᵀJτ = quadratic_form + cross_term exactly.
NegationResult negation_trial(const NetworkParams& theta_pt, const RegressionDataset& train,
                              const RegressionDataset& test, const TrainingSpec& spec);

struct AdditionResult {
    double mse_ft[2] = {0.0, 0.0};   // individual model on its own task
    double mse_mt[2] = {0.0, 0.0};   // θ_PT + τ₁ + τ₂ on each task
    double relative_change[2] = {0.0, 0.0};  // (mse_mt − mse_ft)/mse_ft
    double cross_mass = 0.0;         // ‖K₁₂‖_F/√(‖K₁₁‖_F‖K₂₂‖_F) at θ_PT on the training inputs
    double cosine = 0.0;             // cos(τ₁, τ₂)
    double additivity_error = 0.0;   // max |J(τ₁+τ₂) − Jτ₁ − Jτ₂| in the linearized model
    double off_support[2] = {0.0, 0.0};  // RMS of Jτ_i on the other task's test inputs
    std::vector<TaskVector> vectors;     // τ₁, τ₂

    nlohmann::json to_json() const;
};

AdditionResult addition_trial(const NetworkParams& theta_pt, const RegressionDataset& train1,
                              const RegressionDataset& test1, const RegressionDataset& train2,
                              const RegressionDataset& test2, const TrainingSpec& spec);

} // namespace ntkstop

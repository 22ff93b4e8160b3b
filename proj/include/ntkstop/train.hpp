#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ntkstop/data.hpp"
#include "ntkstop/linalg.hpp"
#include "ntkstop/model.hpp"
#include "ntkstop/ntk.hpp"

namespace ntkstop {

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ½·mean squared error.
double half_mse(std::span<const double> predictions, std::span<const double> labels);
// Plain mean squared error, used for reporting test error.
double mse(std::span<const double> predictions, std::span<const double> labels);

struct HoldoutOptions {
    double fraction = 0.2;
    std::size_t patience = 5;
    std::uint64_t seed = 0;  // split permutation
};

struct FinetuneOptions {
    double epsilon = 0.0;
    std::size_t steps = 1;
    std::optional<HoldoutOptions> holdout;
    bool record_kernel = false;
    // Steps between kernel snapshots; 0 picks every step for runs of at most
    // 200 steps and ⌈steps/200⌉ otherwise.
    std::size_t kernel_stride = 0;
    // Nonzero entries mark trainable coordinates; empty trains everything.
    std::vector<char> trainable;
    std::size_t jobs = 1;
};

struct TrainRecord {
    std::size_t step = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double param_dist = 0.0;              // ‖θ_τ − θ_PT‖₂
    std::optional<double> kernel_drift;   // ‖K_0 − K_τ‖_F
    std::optional<double> kernel_change;  // ‖K_τ − K_previous snapshot‖_F
};

struct TrainTrajectory {
    std::vector<TrainRecord> records;  // one per step τ = 0, 1, ...
    NetworkParams final_params;        // last iterate, or best validation iterate under holdout
    double epsilon = 0.0;
    std::size_t steps_run = 0;
    std::size_t best_step = 0;
    bool stopped_early = false;

    std::optional<double> sup_kernel_drift() const;
    // g(τ) = Σ_{j≤τ} ‖K_j − K_{j−1}‖_F for τ = 1..steps_run (held constant
    // between snapshots when the stride exceeds 1).
    Vector cumulative_kernel_change() const;
};

// Full-batch gradient descent on ½·mean squared error from θ_PT. Throws
// TrainingDiverged when the loss exceeds 10⁶ times its initial value or
// becomes non-finite.
TrainTrajectory finetune(const NetworkParams& theta_pt, const RegressionDataset& data,
                         const FinetuneOptions& options);

// 0.5·η_critical(K)/ν: half the stability edge of the function-space step ε·ν·K.
double default_learning_rate(const EmpiricalKernel& k);

void write_trajectory_csv(const TrainTrajectory& trajectory, const std::filesystem::path& path);

// f_lin(x) = f_PT(x) + ⟨Δθ, ∇f_PT(x)⟩ with base outputs and Jacobian cached
// on an evaluation set.
class LinearizedModel {
public:
    LinearizedModel(NetworkParams base, Vector delta, std::span<const Matrix> eval_inputs,
                    std::size_t jobs = 1);

    const NetworkParams& base() const { return base_; }
    const Vector& delta() const { return delta_; }
    const Vector& base_outputs() const { return base_outputs_; }
    const Matrix& jacobian() const { return jacobian_; }
    std::size_t size() const { return base_outputs_.size(); }

    Vector predictions() const { return predictions_with(delta_); }
    Vector predictions_with(std::span<const double> delta) const;
    double predict(const Matrix& x) const;

private:
    NetworkParams base_;
    Vector delta_;
    Vector base_outputs_;
    Matrix jacobian_;
};

LinearizedModel linearize(const NetworkParams& theta_pt, const NetworkParams& theta_ft,
                          std::span<const Matrix> eval_inputs, std::size_t jobs = 1);

// ‖f_FT(X) − f_PT(X) − J(θ_PT)Δθ‖₂/√N.
double linearization_error(const NetworkParams& theta_pt, const NetworkParams& theta_ft,
                           std::span<const Matrix> inputs, std::size_t jobs = 1);

struct LinearizedTrajectory {
    std::vector<Vector> predictions;  // training-set predictions at τ = 0..steps
    Vector train_loss;
    Vector delta;                     // final Δθ
    double epsilon = 0.0;
};

// Gradient descent on the linearized model over its cached evaluation set,
// which serves as the training set: Δ ← Δ − ε·(1/N)·Jᵀ(f_lin − y).
LinearizedTrajectory finetune_linearized(const LinearizedModel& model, std::span<const double> labels,
                                         double epsilon, std::size_t steps,
                                         std::span<const char> trainable = {});

enum class HeadInit { zero, gaussian };

struct HeadOptions {
    std::size_t keep_blocks = 0;  // backbone depth k, 0 ≤ k ≤ L
    HeadInit init = HeadInit::gaussian;
    std::uint64_t seed = 0;
    bool freeze_backbone = false;  // linear probing
};

// The first k pretrained blocks followed by a fresh linear readout.
NetworkParams attach_head(const NetworkParams& theta_pt, const HeadOptions& head);
std::vector<char> readout_mask(const NetworkParams& params);

TrainTrajectory finetune_with_head(const NetworkParams& theta_pt, const RegressionDataset& data,
                                   const HeadOptions& head, FinetuneOptions options);

// Pretraining on a source task y = sin(2·mean(x)) with a few steps of GD on
// ½·mean squared error; steps = 0 returns the initialization.
struct PretrainOptions {
    std::size_t samples = 32;
    std::size_t steps = 20;
    double rate_fraction = 0.5;  // ε = rate_fraction·η_critical/ν on the source kernel
    double bound = 1.0;
};
NetworkParams pretrain(const NetworkConfig& config, std::uint64_t seed,
                       const PretrainOptions& options = {}, std::size_t jobs = 1);

} // namespace ntkstop

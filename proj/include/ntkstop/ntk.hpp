#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>

#include <json.hpp>

#include "ntkstop/linalg.hpp"
#include "ntkstop/model.hpp"

namespace ntkstop {

// Empirical kernel K = (1/N)·(1/n)·J Jᵀ (width-normalized) or (1/N)·J Jᵀ.
// Gradient descent on ½·mean squared error moves training predictions by
// ε·(1/N)·J Jᵀ·residual = ε·ν·K·residual; step_scale() returns ν.
class EmpiricalKernel {
public:
    EmpiricalKernel() = default;
    // Takes ownership of a symmetric matrix; symmetrizes it.
    EmpiricalKernel(Matrix k, std::size_t width, Parameterization parameterization,
                    bool width_normalized);

    const Matrix& matrix() const { return k_; }
    std::size_t order() const { return k_.rows(); }
    std::size_t width() const { return width_; }
    Parameterization parameterization() const { return parameterization_; }
    bool width_normalized() const { return width_normalized_; }
    double step_scale() const { return step_scale_; }
    // ν·K = (1/N)·J Jᵀ.
    Matrix step_operator() const;

    // Cached on first use; safe to call concurrently.
    const EigenDecomposition& eigen() const;
    Vector step_eigenvalues() const;  // eigenvalues of ν·K, descending

    nlohmann::json sidecar(std::uint64_t seed) const;

private:
    struct Cache {
        std::once_flag once;
        EigenDecomposition eig;
    };
    Matrix k_;
    std::size_t width_ = 1;
    Parameterization parameterization_ = Parameterization::ntk;
    bool width_normalized_ = false;
    double step_scale_ = 1.0;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// Width normalization 1/n applies under standard parameterization when
// `normalize_width` is set (the default convention).
EmpiricalKernel empirical_kernel(const Matrix& jac, std::size_t n_samples, std::size_t width,
                                 Parameterization parameterization, bool normalize_width = true);
EmpiricalKernel empirical_kernel(const NetworkParams& params, std::span<const Matrix> inputs,
                                 std::size_t jobs = 1, bool normalize_width = true);

// Kernel function 𝕂(x, x′) = ⟨∇f(x), ∇f(x′)⟩ with the same width normalization.
double kernel_value(const NetworkParams& params, const Matrix& x, const Matrix& x2,
                    bool normalize_width = true);
double kernel_scale(const NetworkConfig& config, bool normalize_width = true);

double kernel_drift(const EmpiricalKernel& k0, const EmpiricalKernel& k1);

// 2/(λ_min + λ_max) of K.
double eta_critical(const EmpiricalKernel& k);

// ‖K₁₂‖_F / √(‖K₁₁‖_F ‖K₂₂‖_F) for the split of a joint kernel after row `split`.
double cross_kernel_mass(const Matrix& joint, std::size_t split);

void write_kernel_csv(const EmpiricalKernel& k, const std::filesystem::path& path);

} // namespace ntkstop

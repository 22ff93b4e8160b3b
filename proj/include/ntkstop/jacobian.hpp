#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ntkstop/linalg.hpp"
#include "ntkstop/model.hpp"

namespace ntkstop {

struct BlockBackprop {
    Matrix delta;                  // ∂f/∂f^l, gradient at the feed-forward pre-activation
    std::vector<Matrix> d_probs;   // ∂f/∂P_h per head
    Matrix d_input;                // ∂f/∂g^{l-1}
};

struct BackpropState {
    std::vector<BlockBackprop> blocks;
    Vector d_pooled;   // ∂f/∂(mean-pooled features)
    Vector gradient;   // ∂f/∂θ in flat order
};

// Λ = diag(p) − p pᵀ, the Jacobian of softmax at probability row p.
Matrix softmax_jacobian(std::span<const double> p);

// Reverse pass over a trace produced by forward() on the same parameters.
// Throws std::invalid_argument when the trace belongs to other parameters.
BackpropState backward(const ForwardTrace& trace, const NetworkParams& params);

// ∇_θ f(θ, x). Throws NumericalError naming the tensor on a non-finite entry.
Vector jacobian_row(const NetworkParams& params, const Matrix& x);

// Central differences with per-coordinate step h·max(1, |θ_i|).
Vector fd_jacobian(const NetworkParams& params, const Matrix& x, double h = 1e-4,
                   std::size_t jobs = 1);

// Entries with |reference| ≥ floor are compared relatively, smaller ones
// absolutely.
struct GradientAgreement {
    double max_rel_error = 0.0;
    double max_abs_error_small = 0.0;
    std::size_t worst_index = 0;  // entry with the largest relative error
};
GradientAgreement compare_gradients(std::span<const double> analytic, std::span<const double> reference,
                                    double floor = 1e-8);

// Row i is jacobian_row(params, inputs[i]).
Matrix jacobian_matrix(const NetworkParams& params, std::span<const Matrix> inputs,
                       std::size_t jobs = 1);

} // namespace ntkstop

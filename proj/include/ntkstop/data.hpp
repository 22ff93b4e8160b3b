#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ntkstop/linalg.hpp"
#include "ntkstop/model.hpp"

namespace ntkstop {

struct RegressionDataset {
    std::vector<Matrix> inputs;
    Vector labels;
    double noise_sigma = 0.0;
    double bound = 1.0;
    std::uint64_t seed = 0;

    std::size_t size() const { return inputs.size(); }
    RegressionDataset subset(std::span<const std::size_t> indices) const;
};

// Entries i.i.d. uniform on [−B, B].
std::vector<Matrix> gen_inputs(std::size_t n, std::size_t seq_len, std::size_t input_dim,
                               double bound, std::uint64_t seed);

// Inputs confined to one half of the cube: every token's `feature` coordinate
// has the sign of `positive` and magnitude at least `margin`·B. Used to give
// two tasks disjoint input regions.
struct InputRegion {
    std::size_t feature = 0;
    bool positive = true;
    double margin = 0.0;
};
std::vector<Matrix> gen_region_inputs(std::size_t n, std::size_t seq_len, std::size_t input_dim,
                                      double bound, const InputRegion& region, std::uint64_t seed);

// f_tgt(x) = f_PT(x) + Σ_i ζ_i 𝕂(x, c_i) with 𝕂 the width-normalized kernel
// function at θ_PT. The difference equals ⟨∇f_PT(x), w⟩ for
// w = s·Σ_i ζ_i ∇f_PT(c_i), s the kernel scale, which is how it is evaluated.
class PlantedTarget {
public:
    PlantedTarget(NetworkParams base, std::vector<Matrix> centers, Vector coefficients,
                  std::size_t jobs = 1);

    const NetworkParams& base() const { return base_; }
    const std::vector<Matrix>& centers() const { return centers_; }
    const Vector& coefficients() const { return coefficients_; }
    const Matrix& center_kernel() const { return center_kernel_; }
    // √(ζᵀ K_cc ζ), the RKHS norm of f_tgt − f_PT.
    double rkhs_norm() const { return rkhs_norm_; }
    // Parameter direction w with f_tgt − f_PT = ⟨∇f_PT(·), w⟩.
    const Vector& direction() const { return direction_; }

    double offset(const Matrix& x) const;  // f_tgt(x) − f_PT(x)
    double operator()(const Matrix& x) const;
    Vector evaluate(std::span<const Matrix> inputs, std::size_t jobs = 1) const;
    Vector offsets(std::span<const Matrix> inputs, std::size_t jobs = 1) const;

private:
    NetworkParams base_;
    std::vector<Matrix> centers_;
    Vector coefficients_;
    Matrix center_kernel_;
    double rkhs_norm_ = 0.0;
    Vector direction_;
};

// Picks k centers from X and draws ζ ~ N(0, scale²). Rejects a center kernel
// whose smallest eigenvalue is not positive beyond 1e−12 relative tolerance.
PlantedTarget plant_target(const NetworkParams& base, std::span<const Matrix> inputs,
                           std::size_t k, double scale, std::uint64_t seed, std::size_t jobs = 1);

// y_i = f_tgt(X_i) + N(0, σ²).
RegressionDataset sample_labels(const PlantedTarget& target, std::vector<Matrix> inputs,
                                double sigma, std::uint64_t seed, std::size_t jobs = 1);

// Header "t0_f0,...,t{T−1}_f{d−1},label". A dataset with no examples must be
// given its shape explicitly; load reads it back from the header.
void save_csv(const RegressionDataset& data, const std::filesystem::path& path,
              std::size_t seq_len = 0, std::size_t input_dim = 0);
RegressionDataset load_csv(const std::filesystem::path& path);

} // namespace ntkstop

#include "ntkstop/ntk.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ntkstop/csv.hpp"
#include "ntkstop/jacobian.hpp"

namespace ntkstop {

EmpiricalKernel::EmpiricalKernel(Matrix k, std::size_t width, Parameterization parameterization,
                                 bool width_normalized)
    : k_(std::move(k)),
      width_(width),
      parameterization_(parameterization),
      width_normalized_(width_normalized),
      step_scale_(width_normalized ? static_cast<double>(width) : 1.0) {
    if (!k_.square()) throw std::invalid_argument("kernel matrix must be square");
    for (std::size_t i = 0; i < k_.rows(); ++i)
        for (std::size_t j = i + 1; j < k_.cols(); ++j) {
            const double avg = 0.5 * (k_(i, j) + k_(j, i));
            k_(i, j) = avg;
            k_(j, i) = avg;
        }
}

Matrix EmpiricalKernel::step_operator() const {
    Matrix a = k_;
    for (double& v : a.values()) v *= step_scale_;
    return a;
}

const EigenDecomposition& EmpiricalKernel::eigen() const {
    std::call_once(cache_->once, [this] { cache_->eig = sym_eig(k_); });
    return cache_->eig;
}

Vector EmpiricalKernel::step_eigenvalues() const {
    Vector e = eigen().eigenvalues;
    for (double& v : e) v *= step_scale_;
    return e;
}

nlohmann::json EmpiricalKernel::sidecar(std::uint64_t seed) const {
    return {
        {"order", order()},
        {"normalization", width_normalized_ ? "per_sample_and_width" : "per_sample"},
        {"width", width_},
        {"parameterization", to_string(parameterization_)},
        {"seed", seed},
    };
}

EmpiricalKernel empirical_kernel(const Matrix& jac, std::size_t n_samples, std::size_t width,
                                 Parameterization parameterization, bool normalize_width) {
    if (n_samples == 0) throw std::invalid_argument("empirical_kernel: N must be positive");
    if (jac.rows() != n_samples)
        throw std::invalid_argument("empirical_kernel: Jacobian has " + std::to_string(jac.rows()) +
                                    " rows, expected " + std::to_string(n_samples));
    const bool by_width = normalize_width && parameterization == Parameterization::standard;
    Matrix k = gram(jac);
    const double s = 1.0 / (static_cast<double>(n_samples) * (by_width ? static_cast<double>(width) : 1.0));
    for (double& v : k.values()) v *= s;
    return EmpiricalKernel(std::move(k), width, parameterization, by_width);
}

EmpiricalKernel empirical_kernel(const NetworkParams& params, std::span<const Matrix> inputs,
                                 std::size_t jobs, bool normalize_width) {
    const Matrix jac = jacobian_matrix(params, inputs, jobs);
    return empirical_kernel(jac, inputs.size(), params.config().width,
                            params.config().parameterization, normalize_width);
}

double kernel_scale(const NetworkConfig& config, bool normalize_width) {
    return normalize_width && config.parameterization == Parameterization::standard
               ? 1.0 / static_cast<double>(config.width)
               : 1.0;
}

double kernel_value(const NetworkParams& params, const Matrix& x, const Matrix& x2,
                    bool normalize_width) {
    const Vector a = jacobian_row(params, x);
    const Vector b = jacobian_row(params, x2);
    return kernel_scale(params.config(), normalize_width) * dot(a, b);
}

double kernel_drift(const EmpiricalKernel& k0, const EmpiricalKernel& k1) {
    if (k0.order() != k1.order()) throw std::invalid_argument("kernel_drift: order mismatch");
    return frob_dist(k0.matrix(), k1.matrix());
}

double eta_critical(const EmpiricalKernel& k) {
    const auto& e = k.eigen().eigenvalues;
    if (e.empty()) throw std::invalid_argument("eta_critical: empty kernel");
    const double s = e.front() + e.back();
    if (!(s > 0.0)) throw std::invalid_argument("eta_critical: degenerate kernel (lambda_min + lambda_max <= 0)");
    return 2.0 / s;
}

double cross_kernel_mass(const Matrix& joint, std::size_t split) {
    if (!joint.square() || split == 0 || split >= joint.rows())
        throw std::invalid_argument("cross_kernel_mass: bad split");
    double k11 = 0, k22 = 0, k12 = 0;
    for (std::size_t i = 0; i < joint.rows(); ++i)
        for (std::size_t j = 0; j < joint.cols(); ++j) {
            const double v = joint(i, j) * joint(i, j);
            const bool a = i < split, b = j < split;
            if (a && b) k11 += v;
            else if (!a && !b) k22 += v;
            else if (a && !b) k12 += v;
        }
    return std::sqrt(k12) / std::sqrt(std::sqrt(k11) * std::sqrt(k22));
}

void write_kernel_csv(const EmpiricalKernel& k, const std::filesystem::path& path) {
    CsvWriter out(path, {"i", "j", "value"});
    const Matrix& m = k.matrix();
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i; j < m.cols(); ++j) out.row(i, j, m(i, j));
}

} // namespace ntkstop

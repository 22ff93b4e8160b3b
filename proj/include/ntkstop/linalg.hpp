#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ntkstop {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> diag);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool square() const noexcept { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    Matrix transposed() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Non-owning row-major view; used to read weight tensors in place from a
// flat parameter vector.
struct MatrixView {
    const double* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    MatrixView() = default;
    MatrixView(const double* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
    MatrixView(const Matrix& m) : data(m.data()), rows(m.rows()), cols(m.cols()) {}  // NOLINT

    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::span<const double> row(std::size_t i) const { return {data + i * cols, cols}; }
};

struct EigenDecomposition {
    Vector eigenvalues;  // descending
    Matrix eigenvectors; // column k pairs with eigenvalues[k]
};

// Cyclic Jacobi eigensolver for symmetric matrices. Throws
// std::invalid_argument for non-square or asymmetric input.
EigenDecomposition sym_eig(const Matrix& a);

// Solves (A + ridge*I) x = b by Cholesky with one step of iterative
// refinement. Throws std::invalid_argument if the shifted matrix is not
// positive definite.
Vector solve_spd(const Matrix& a, std::span<const double> b, double ridge);

double frob_norm(const Matrix& a);
double frob_dist(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& a);
double max_abs_asymmetry(const Matrix& a);
double trace(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

Matrix matmul(MatrixView a, MatrixView b);     // a * b
Matrix matmul_tn(MatrixView a, MatrixView b);  // aᵀ * b
Matrix matmul_nt(MatrixView a, MatrixView b);  // a * bᵀ

// out (rows×cols, row-major) += alpha * op(a) op(b)
void add_matmul(MatrixView a, MatrixView b, double alpha, std::span<double> out);
void add_matmul_tn(MatrixView a, MatrixView b, double alpha, std::span<double> out);
void add_matmul_nt(MatrixView a, MatrixView b, double alpha, std::span<double> out);

Vector matvec(MatrixView a, std::span<const double> x);
Vector matvec_t(MatrixView a, std::span<const double> x);

// rows * rowsᵀ, blocked over columns so long rows stay cache resident.
Matrix gram(const Matrix& rows);
// a * bᵀ for two row sets with the same column count.
Matrix cross_gram(const Matrix& a, const Matrix& b);

// Reassembles V diag(f(λ)) Vᵀ x for a spectral filter given per-eigenvalue
// factors.
Vector spectral_apply(const EigenDecomposition& eig, std::span<const double> factors,
                      std::span<const double> x);

} // namespace ntkstop

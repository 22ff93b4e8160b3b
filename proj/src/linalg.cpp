#include "ntkstop/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ntkstop {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_)
        throw std::invalid_argument("Matrix: storage length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

double frob_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

double frob_dist(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("frob_dist: shape mismatch " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                    "x" + std::to_string(b.cols()));
    double s = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_asymmetry(const Matrix& a) {
    if (!a.square()) throw std::invalid_argument("max_abs_asymmetry: matrix is not square");
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - a(j, i)));
    return m;
}

double trace(const Matrix& a) {
    if (!a.square()) throw std::invalid_argument("trace: matrix is not square");
    double t = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
    return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    const std::size_t n = a.size();
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

} // namespace

void add_matmul(MatrixView a, MatrixView b, double alpha, std::span<double> out) {
    require(a.cols == b.rows, "matmul: inner dimension mismatch");
    require(out.size() == a.rows * b.cols, "matmul: output size mismatch");
    const std::size_t n = b.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = alpha * a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data + k * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
}

void add_matmul_tn(MatrixView a, MatrixView b, double alpha, std::span<double> out) {
    require(a.rows == b.rows, "matmul_tn: inner dimension mismatch");
    require(out.size() == a.cols * b.cols, "matmul_tn: output size mismatch");
    const std::size_t n = b.cols;
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* brow = b.data + k * n;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = alpha * a(k, i);
            if (aki == 0.0) continue;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aki * brow[j];
        }
    }
}

void add_matmul_nt(MatrixView a, MatrixView b, double alpha, std::span<double> out) {
    require(a.cols == b.cols, "matmul_nt: inner dimension mismatch");
    require(out.size() == a.rows * b.rows, "matmul_nt: output size mismatch");
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j)
            out[i * b.rows + j] += alpha * dot(a.row(i), b.row(j));
}

Matrix matmul(MatrixView a, MatrixView b) {
    Matrix out(a.rows, b.cols);
    add_matmul(a, b, 1.0, out.values());
    return out;
}

Matrix matmul_tn(MatrixView a, MatrixView b) {
    Matrix out(a.cols, b.cols);
    add_matmul_tn(a, b, 1.0, out.values());
    return out;
}

Matrix matmul_nt(MatrixView a, MatrixView b) {
    Matrix out(a.rows, b.rows);
    add_matmul_nt(a, b, 1.0, out.values());
    return out;
}

Vector matvec(MatrixView a, std::span<const double> x) {
    require(a.cols == x.size(), "matvec: dimension mismatch");
    Vector y(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) y[i] = dot(a.row(i), x);
    return y;
}

Vector matvec_t(MatrixView a, std::span<const double> x) {
    require(a.rows == x.size(), "matvec_t: dimension mismatch");
    Vector y(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double xi = x[i];
        const double* r = a.data + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) y[j] += xi * r[j];
    }
    return y;
}

Matrix gram(const Matrix& rows) { return cross_gram(rows, rows); }

Matrix cross_gram(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "cross_gram: column count mismatch");
    const bool same = (&a == &b);
    constexpr std::size_t chunk = 2048;
    Matrix g(a.rows(), b.rows());
    const std::size_t cols = a.cols();
    for (std::size_t c0 = 0; c0 < cols; c0 += chunk) {
        const std::size_t len = std::min(chunk, cols - c0);
        for (std::size_t i = 0; i < a.rows(); ++i) {
            std::span<const double> ai(a.data() + i * cols + c0, len);
            const std::size_t jend = same ? i + 1 : b.rows();
            for (std::size_t j = 0; j < jend; ++j)
                g(i, j) += dot(ai, std::span<const double>(b.data() + j * cols + c0, len));
        }
    }
    if (same)
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < i; ++j) g(j, i) = g(i, j);
    return g;
}

EigenDecomposition sym_eig(const Matrix& a) {
    if (!a.square())
        throw std::invalid_argument("sym_eig: matrix is " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + ", expected square");
    const std::size_t n = a.rows();
    const double amax = max_abs(a);
    const double asym = max_abs_asymmetry(a);
    if (asym > 1e-9 * amax)
        throw std::invalid_argument("sym_eig: matrix is not symmetric (max |A-A^T| = " +
                                    std::to_string(asym) + ")");

    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(i, j) = 0.5 * (a(i, j) + a(j, i));

    // vt holds eigenvectors as rows so rotations touch contiguous memory.
    Matrix vt = Matrix::identity(n);
    const double scale = frob_norm(m);
    if (scale == 0.0 || n == 1) {
        EigenDecomposition out;
        out.eigenvalues.assign(n, n == 1 ? m(0, 0) : 0.0);
        out.eigenvectors = Matrix::identity(n);
        return out;
    }

    constexpr int max_sweeps = 100;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * m(i, j) * m(i, j);
        if (std::sqrt(off) <= 1e-12 * scale) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (apq == 0.0) continue;
                const double app = m(p, p);
                const double aqq = m(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                double* rp = m.data() + p * n;
                double* rq = m.data() + q * n;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = rp[k];
                    const double akq = rq[k];
                    rp[k] = c * akp - s * akq;
                    rq[k] = s * akp + c * akq;
                    m(k, p) = rp[k];
                    m(k, q) = rq[k];
                }
                m(p, p) = c * c * app - 2.0 * c * s * apq + s * s * aqq;
                m(q, q) = s * s * app + 2.0 * c * s * apq + c * c * aqq;
                m(p, q) = 0.0;
                m(q, p) = 0.0;

                double* vp = vt.data() + p * n;
                double* vq = vt.data() + q * n;
                for (std::size_t k = 0; k < n; ++k) {
                    const double x = vp[k];
                    const double y = vq[k];
                    vp[k] = c * x - s * y;
                    vq[k] = s * x + c * y;
                }
            }
        }
    }
    if (!converged) throw std::runtime_error("sym_eig: Jacobi iteration did not converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.eigenvalues[k] = m(src, src);
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = vt(src, i);
    }
    return out;
}

namespace {

Matrix cholesky(const Matrix& m) {
    const std::size_t n = m.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(m(i, i)));
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 1e-14 * max_diag))
            throw std::invalid_argument("solve_spd: matrix is not positive definite (pivot " +
                                        std::to_string(j) + " = " + std::to_string(d) + ")");
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

Vector cholesky_solve(const Matrix& l, std::span<const double> b) {
    const std::size_t n = l.rows();
    Vector y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        double s = y[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * y[k];
        y[ii] = s / l(ii, ii);
    }
    return y;
}

} // namespace

Vector solve_spd(const Matrix& a, std::span<const double> b, double ridge) {
    if (!a.square()) throw std::invalid_argument("solve_spd: matrix is not square");
    if (b.size() != a.rows()) throw std::invalid_argument("solve_spd: right-hand side length mismatch");
    if (!(ridge >= 0.0)) throw std::invalid_argument("solve_spd: ridge must be nonnegative");
    if (max_abs_asymmetry(a) > 1e-9 * std::max(max_abs(a), 1e-300))
        throw std::invalid_argument("solve_spd: matrix is not symmetric");

    Matrix m = a;
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += ridge;
    const Matrix l = cholesky(m);
    Vector x = cholesky_solve(l, b);

    Vector r(b.begin(), b.end());
    for (std::size_t i = 0; i < m.rows(); ++i) r[i] -= dot(m.row(i), x);
    const Vector dx = cholesky_solve(l, r);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[i];
    return x;
}

Vector spectral_apply(const EigenDecomposition& eig, std::span<const double> factors,
                      std::span<const double> x) {
    const Matrix& v = eig.eigenvectors;
    if (factors.size() != v.cols() || x.size() != v.rows())
        throw std::invalid_argument("spectral_apply: dimension mismatch");
    Vector coeff = matvec_t(v, x);
    for (std::size_t k = 0; k < coeff.size(); ++k) coeff[k] *= factors[k];
    return matvec(v, coeff);
}

} // namespace ntkstop

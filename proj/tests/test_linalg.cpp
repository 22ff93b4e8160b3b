#include <gtest/gtest.h>

#include <cmath>

#include "ntkstop/linalg.hpp"
#include "ntkstop/rng.hpp"

using namespace ntkstop;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

Matrix naive_product(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

} // namespace

TEST(Linalg, ProductsMatchTripleLoop) {
    const Matrix a = random_matrix(5, 7, 1), b = random_matrix(7, 3, 2);
    const Matrix ref = naive_product(a, b);
    EXPECT_LT(frob_dist(matmul(a, b), ref), 1e-12);
    EXPECT_LT(frob_dist(matmul_tn(a.transposed(), b), ref), 1e-12);
    EXPECT_LT(frob_dist(matmul_nt(a, b.transposed()), ref), 1e-12);
    EXPECT_LT(frob_dist(cross_gram(a, b.transposed()), ref), 1e-12);
    EXPECT_LT(frob_dist(gram(a), naive_product(a, a.transposed())), 1e-12);
}

TEST(Linalg, AccumulatingProductsScaleAndAdd) {
    const Matrix a = random_matrix(4, 6, 3), b = random_matrix(6, 5, 4);
    Matrix out(4, 5, 1.0);
    add_matmul(a, b, 0.5, out.values());
    const Matrix ref = naive_product(a, b);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(out(i, j), 1.0 + 0.5 * ref(i, j), 1e-12);
}

TEST(Linalg, MatvecAndTranspose) {
    const Matrix a = random_matrix(3, 4, 5);
    const Vector x = {1.0, -2.0, 0.5, 3.0}, y = {0.25, 1.0, -1.0};
    const Vector ax = matvec(a, x), aty = matvec_t(a, y);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) s += a(i, j) * x[j];
        EXPECT_NEAR(ax[i], s, 1e-14);
    }
    EXPECT_NEAR(dot(ax, y), dot(x, aty), 1e-12);
}

TEST(Linalg, JacobiRecoversKnownSpectrum) {
    Matrix a(2, 2);
    a(0, 0) = 2; a(0, 1) = 1; a(1, 0) = 1; a(1, 1) = 2;
    const auto eig = sym_eig(a);
    EXPECT_NEAR(eig.eigenvalues[0], 3.0, 1e-14);
    EXPECT_NEAR(eig.eigenvalues[1], 1.0, 1e-14);
    EXPECT_NEAR(std::abs(eig.eigenvectors(0, 0)), 1.0 / std::sqrt(2.0), 1e-14);
}

TEST(Linalg, JacobiReconstructsRandomSymmetric) {
    const Matrix b = random_matrix(12, 12, 6);
    Matrix a = gram(b);
    const auto eig = sym_eig(a);
    for (std::size_t k = 1; k < eig.eigenvalues.size(); ++k) EXPECT_GE(eig.eigenvalues[k - 1], eig.eigenvalues[k]);
    Matrix rec(12, 12);
    for (std::size_t k = 0; k < 12; ++k)
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 12; ++j)
                rec(i, j) += eig.eigenvalues[k] * eig.eigenvectors(i, k) * eig.eigenvectors(j, k);
    EXPECT_LT(frob_dist(rec, a) / frob_norm(a), 1e-12);
    EXPECT_NEAR(trace(a), [&] { double s = 0; for (double v : eig.eigenvalues) s += v; return s; }(), 1e-9);
}

TEST(Linalg, JacobiRejectsAsymmetric) {
    Matrix a(2, 2);
    a(0, 1) = 1.0;
    EXPECT_THROW(sym_eig(a), std::invalid_argument);
    EXPECT_THROW(sym_eig(Matrix(2, 3)), std::invalid_argument);
}

TEST(Linalg, CholeskySolveAndRidge) {
    const Matrix b = random_matrix(8, 8, 7);
    const Matrix a = gram(b);
    const Vector rhs = {1, 2, 3, 4, 5, 6, 7, 8};
    const Vector x = solve_spd(a, rhs, 0.3);
    Vector ax = matvec(a, x);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(ax[i] + 0.3 * x[i], rhs[i], 1e-9);
    Matrix neg(2, 2);
    neg(0, 0) = -1; neg(1, 1) = 1;
    EXPECT_THROW(solve_spd(neg, Vector{1, 1}, 0.0), std::invalid_argument);
}

TEST(Linalg, SpectralApplyIdentityFactors) {
    const Matrix a = gram(random_matrix(6, 6, 8));
    const auto eig = sym_eig(a);
    const Vector x = {1, -1, 2, 0, 3, 1};
    const Vector ones(6, 1.0);
    const Vector y = spectral_apply(eig, ones, x);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
    const Vector ax = spectral_apply(eig, eig.eigenvalues, x), ref = matvec(a, x);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(ax[i], ref[i], 1e-9);
}

TEST(Linalg, NormsAndAsymmetry) {
    Matrix a(2, 2);
    a(0, 0) = 3; a(0, 1) = 4; a(1, 0) = 2;
    EXPECT_DOUBLE_EQ(frob_norm(a), std::sqrt(29.0));
    EXPECT_DOUBLE_EQ(max_abs(a), 4.0);
    EXPECT_DOUBLE_EQ(max_abs_asymmetry(a), 2.0);
    const Vector v = {3, 4};
    EXPECT_DOUBLE_EQ(norm2(v), 5.0);
    Vector y = {1, 1};
    axpy(2.0, v, y);
    EXPECT_EQ(y, (Vector{7, 9}));
}

TEST(Rng, SubstreamsAreStableAndDistinct) {
    EXPECT_EQ(derive_seed(1, "init", 0), derive_seed(1, "init", 0));
    EXPECT_NE(derive_seed(1, "init", 0), derive_seed(1, "data", 0));
    EXPECT_NE(derive_seed(1, "init", 0), derive_seed(1, "init", 1));
    EXPECT_NE(derive_seed(1, "init", 0), derive_seed(2, "init", 0));
    Rng a(5), b(5);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
    const auto idx = Rng(3).sample_indices(10, 4);
    EXPECT_EQ(idx.size(), 4u);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < i; ++j) EXPECT_NE(idx[i], idx[j]);
}

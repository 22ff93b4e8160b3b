#include <gtest/gtest.h>

#include <cmath>

#include "ntkstop/data.hpp"
#include "ntkstop/jacobian.hpp"
#include "ntkstop/rng.hpp"
#include "reference_model.hpp"

using namespace ntkstop;

namespace {

NetworkConfig small(std::size_t blocks = 1) {
    NetworkConfig c;
    c.seq_len = 3;
    c.input_dim = 3;
    c.width = 8;
    c.num_blocks = blocks;
    return c;
}

NetworkParams perturbed(const NetworkConfig& c, std::uint64_t seed) {
    NetworkParams p = init_network(c, seed);
    Rng rng(seed + 1);
    for (const auto& slot : p.layout().slots())
        if (!is_weight(slot.kind))
            for (double& v : p.tensor_values(slot.name)) v += 0.3 * rng.normal();
    return p;
}

Matrix input(const NetworkConfig& c, std::uint64_t seed) {
    return gen_inputs(1, c.seq_len, c.input_dim, 1.0, seed).front();
}

} // namespace

TEST(Softmax, JacobianAnnihilatesOnesAndIsPsd) {
    const Vector p = {0.1, 0.2, 0.3, 0.4};
    const Matrix lam = softmax_jacobian(p);
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) s += lam(i, j);
        EXPECT_NEAR(s, 0.0, 1e-15);
    }
    const auto eig = sym_eig(lam);
    for (double v : eig.eigenvalues) EXPECT_GE(v, -1e-14);
    EXPECT_NEAR(eig.eigenvalues.back(), 0.0, 1e-14);
}

TEST(Jacobian, ZeroReadoutKillsBackboneGradient) {
    NetworkParams p = init_network(small(2), 1);
    for (double& v : p.tensor_values("readout.weight")) v = 0.0;
    const Matrix x = input(small(), 2);
    const auto fwd = forward(p, x);
    const auto bp = backward(fwd.trace, p);
    for (const auto& b : bp.blocks)
        for (double v : b.delta.values()) EXPECT_EQ(v, 0.0);
    const auto& rw = p.layout().slot(p.layout().readout_weight());
    for (std::size_t i = 0; i < bp.gradient.size(); ++i)
        if (i < rw.offset) {
            EXPECT_EQ(bp.gradient[i], 0.0) << p.layout().slot_of(i).name;
        }
}

TEST(Jacobian, ReadoutBiasGradientIsOne) {
    const NetworkParams p = perturbed(small(), 3);
    const Vector g = jacobian_row(p, input(small(), 4));
    EXPECT_EQ(g[p.layout().slot(p.layout().readout_bias()).offset], 1.0);
}

TEST(Jacobian, ReadoutOnlyModelMatchesDifferencesTightly) {
    NetworkConfig c = small(0);
    const NetworkParams p = perturbed(c, 5);
    const Matrix x = input(c, 6);
    const auto agree = compare_gradients(jacobian_row(p, x), fd_jacobian(p, x, 1e-4));
    EXPECT_LE(agree.max_rel_error, 1e-10);
}

TEST(Jacobian, MatchesLongDoubleReferenceDifferences) {
    for (int variant = 0; variant < 4; ++variant) {
        NetworkConfig c = small(1 + variant % 2);
        c.layernorm_placement = variant % 2 ? NormPlacement::pre : NormPlacement::post;
        c.parameterization = variant == 3 ? Parameterization::ntk : Parameterization::standard;
        c.activation = variant == 2 ? Activation::tanh : Activation::gelu;
        const NetworkParams p = perturbed(c, 10 + variant);
        const Matrix x = input(c, 20 + variant);
        const auto agree = compare_gradients(jacobian_row(p, x), ntkstop::testing::reference_fd(p, x, 1e-5));
        EXPECT_LE(agree.max_rel_error, 1e-6) << "variant " << variant << " worst "
                                             << p.layout().slot_of(agree.worst_index).name;
        EXPECT_LE(agree.max_abs_error_small, 1e-8);
    }
}

TEST(Jacobian, CentralDifferenceErrorIsSecondOrder) {
    // square activation with no LayerNorm influence on the checked
    // coordinate: the error should fall by about 4 under h-halving
    NetworkConfig c = small(1);
    c.activation = Activation::square;
    const NetworkParams p = perturbed(c, 30);
    const Matrix x = input(c, 31);
    const Vector exact = jacobian_row(p, x);
    const std::size_t idx = p.layout().slot(p.layout().block(0).value[0]).offset;
    auto err = [&](double h) {
        NetworkParams plus = p, minus = p;
        const double step = h * std::max(1.0, std::abs(p.flat()[idx]));
        plus.flat()[idx] += step;
        minus.flat()[idx] -= step;
        return std::abs((evaluate(plus, x) - evaluate(minus, x)) / (2 * step) - exact[idx]);
    };
    const double e1 = err(1e-2), e2 = err(5e-3);
    ASSERT_GT(e1, 1e-11);
    EXPECT_NEAR(e1 / e2, 4.0, 0.5);
}

TEST(Jacobian, DirectionalDerivativeMatchesAnalytic) {
    const NetworkParams p = perturbed(small(2), 40);
    const Matrix x = input(small(), 41);
    const Vector g = jacobian_row(p, x);
    Rng rng(42);
    Vector v(p.size());
    for (double& e : v) e = rng.normal();
    const double h = 1e-5;
    NetworkParams plus = p, minus = p;
    for (std::size_t i = 0; i < v.size(); ++i) {
        plus.flat()[i] += h * v[i];
        minus.flat()[i] -= h * v[i];
    }
    const double fd = (evaluate(plus, x) - evaluate(minus, x)) / (2 * h);
    EXPECT_NEAR(fd, dot(g, v), 1e-6 * std::max(1.0, std::abs(fd)));
}

TEST(Jacobian, MatrixRowsMatchSingleRows) {
    const NetworkParams p = perturbed(small(), 50);
    const auto xs = gen_inputs(5, 3, 3, 1.0, 51);
    const Matrix j = jacobian_matrix(p, xs, 3);
    ASSERT_EQ(j.rows(), 5u);
    ASSERT_EQ(j.cols(), p.size());
    for (std::size_t i = 0; i < 5; ++i) {
        const Vector row = jacobian_row(p, xs[i]);
        for (std::size_t k = 0; k < p.size(); ++k) EXPECT_EQ(j(i, k), row[k]);
    }
}

TEST(Jacobian, RejectsForeignTrace) {
    const NetworkParams p = init_network(small(), 60), q = init_network(small(), 61);
    const auto fwd = forward(p, input(small(), 62));
    EXPECT_THROW(backward(fwd.trace, q), std::invalid_argument);
}

TEST(Jacobian, CompareGradientsSplitsSmallEntries) {
    const Vector ref = {1.0, 1e-10, -2.0};
    const Vector ana = {1.0 + 1e-7, 3e-10, -2.0};
    const auto a = compare_gradients(ana, ref);
    EXPECT_NEAR(a.max_rel_error, 1e-7, 1e-12);
    EXPECT_NEAR(a.max_abs_error_small, 2e-10, 1e-20);
    EXPECT_EQ(a.worst_index, 0u);
}

#include <gtest/gtest.h>

#include <cmath>

#include "ntkstop/experiments.hpp"
#include "ntkstop/rng.hpp"

using namespace ntkstop;

namespace {

NetworkConfig tiny(std::size_t width = 8) {
    NetworkConfig c;
    c.seq_len = 3;
    c.input_dim = 4;
    c.width = width;
    return c;
}

} // namespace

TEST(Stats, LogLogSlopeAndMedian) {
    const Vector x = {1, 2, 4, 8}, y = {3, 1.5, 0.75, 0.375};
    EXPECT_NEAR(loglog_slope(x, y), -1.0, 1e-14);
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(PlantedTask, OffsetHasRequestedRms) {
    const NetworkParams p = init_network(tiny(), 1);
    TaskSpec spec;
    spec.n_train = 16;
    spec.n_test = 8;
    spec.centers = 4;
    spec.target_rms = 0.7;
    const PlantedTask t = make_planted_task(p, spec, 2);
    const Vector off = t.target.offsets(t.train.inputs);
    EXPECT_NEAR(norm2(off) / 4.0, 0.7, 1e-12);
    EXPECT_EQ(t.train.size(), 16u);
    EXPECT_EQ(t.test.size(), 8u);
    const PlantedTask again = make_planted_task(p, spec, 2);
    EXPECT_EQ(again.train.labels, t.train.labels);
}

TEST(KernelGd, ClosedFormMatchesIteration) {
    Rng rng(3);
    Matrix j(9, 6);
    for (double& v : j.values()) v = rng.normal();
    const Matrix k = gram(j);
    const std::vector<std::size_t> tr = {0, 1, 2, 3, 4, 5}, te = {6, 7, 8};
    Matrix ktr(6, 6), kte(3, 6);
    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = 0; b < 6; ++b) ktr(a, b) = k(tr[a], tr[b]);
        for (std::size_t b = 0; b < 3; ++b) kte(b, a) = k(te[b], tr[a]);
    }
    const Vector y = {1, -1, 0.5, 2, 0, -0.5};
    const double eps = 0.9 * 6.0 / sym_eig(ktr).eigenvalues.front();
    Vector alpha(6, 0.0);
    for (int t = 0; t < 25; ++t) {
        Vector r = y;
        axpy(-1.0, matvec(ktr, alpha), r);
        axpy(eps / 6.0, r, alpha);
    }
    const Vector want = matvec(kte, alpha), got = kernel_gd_predict(ktr, kte, y, eps, 25);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-10 * std::max(1.0, std::abs(want[i])));
    const Vector edge = kernel_gd_predict(ktr, kte, y, 6.0 / sym_eig(ktr).eigenvalues.front(), 40);
    for (double v : edge) EXPECT_TRUE(std::isfinite(v));
}

TEST(WidthSweep, PointIsDeterministicAndShrinksLoss) {
    WidthSweepConfig cfg;
    cfg.network = tiny();
    cfg.task.n_train = 12;
    cfg.task.n_test = 4;
    cfg.task.centers = 3;
    cfg.pretrain.steps = 2;
    cfg.pretrain.samples = 8;
    cfg.steps = 5;
    const WidthSweepPoint a = width_sweep_point(cfg, 16, 0), b = width_sweep_point(cfg, 16, 0);
    EXPECT_EQ(a.sup_drift, b.sup_drift);
    EXPECT_EQ(a.lin_error, b.lin_error);
    EXPECT_LT(a.final_loss, a.initial_loss);
    EXPECT_GT(a.sup_drift, 0.0);
}

TEST(LearningCurve, SmallRunCountsCells) {
    LearningCurveConfig cfg;
    cfg.network = tiny();
    cfg.sample_sizes = {10, 20};
    cfg.n_test = 10;
    cfg.seeds = 2;
    cfg.pretrain.steps = 1;
    cfg.pretrain.samples = 8;
    const LearningCurveResult r = run_learning_curve(cfg);
    EXPECT_EQ(r.cells_total, 6u);
    EXPECT_EQ(r.points.size(), 3u * 2u * 2u);
    for (const auto& p : r.points) {
        EXPECT_TRUE(std::isfinite(p.test_mse));
        EXPECT_GE(p.t_op, 1u);
    }
    const LearningCurveResult again = run_learning_curve(cfg);
    EXPECT_EQ(again.median_mse, r.median_mse);
}

TEST(RidgeEquiv, ClosedFormAgreesWithLinearizedRun) {
    RidgeEquivConfig cfg;
    cfg.network = tiny();
    cfg.task.n_train = 12;
    cfg.task.centers = 3;
    cfg.steps = 60;
    cfg.pretrain.steps = 1;
    cfg.pretrain.samples = 8;
    const RidgeEquivResult r = run_ridge_equivalence(cfg);
    EXPECT_LE(r.closed_form_error, 1e-10);
    EXPECT_EQ(r.gaps.size(), r.literal_gaps.size());
    EXPECT_EQ(r.gaps.front().gap, 0.0);
    EXPECT_GE(r.best.tau, 1u);
    for (const auto& g : r.gaps) {
        if (g.tau > 0) {
            EXPECT_GE(g.gap, r.best.gap);
        }
    }
}

TEST(Addition, RegionsUseDisjointFeatures) {
    AdditionConfig cfg;
    cfg.network = tiny();
    cfg.task.n_test = 5;
    const auto [a, at] = region_inputs(cfg, 0, 6, 1);
    const auto [b, bt] = region_inputs(cfg, 1, 6, 1);
    for (const Matrix& x : a)
        for (std::size_t t = 0; t < 3; ++t) {
            EXPECT_EQ(x(t, 2), 0.0);
            EXPECT_EQ(x(t, 3), 0.0);
        }
    for (const Matrix& x : bt)
        for (std::size_t t = 0; t < 3; ++t) {
            EXPECT_EQ(x(t, 0), 0.0);
            EXPECT_EQ(x(t, 1), 0.0);
        }
    EXPECT_EQ(at.size(), 5u);
    EXPECT_THROW(region_inputs(cfg, 2, 6, 1), std::invalid_argument);
}

#include <gtest/gtest.h>

#include <cmath>

#include "ntkstop/data.hpp"
#include "ntkstop/ntk.hpp"
#include "ntkstop/spectrum.hpp"

using namespace ntkstop;

TEST(Decay, ExactPowerLawRecovered) {
    for (double beta : {0.55, 0.6, 1.0, 1.7}) {
        const Vector eigs = synth_spectrum(beta, 100, 1.0, 0.0, 0);
        const DecayFit f = fit_decay(eigs);
        EXPECT_NEAR(f.beta, beta, 1e-10);
        EXPECT_NEAR(f.r2, 1.0, 1e-12);
        EXPECT_EQ(f.k_min, 2u);
        EXPECT_EQ(f.k_max, 50u);
    }
}

TEST(Decay, ScaleInvariant) {
    const DecayFit a = fit_decay(synth_spectrum(0.8, 60, 1.0, 0.1, 3));
    const DecayFit b = fit_decay(synth_spectrum(0.8, 60, 1e4, 0.1, 3));
    EXPECT_NEAR(a.beta, b.beta, 1e-10);
}

TEST(Decay, NoisyRecoveryMostSeeds) {
    int good = 0;
    for (std::uint64_t s = 0; s < 20; ++s)
        if (std::abs(fit_decay(synth_spectrum(0.6, 100, 1.0, 0.1, s)).beta - 0.6) <= 0.1) ++good;
    EXPECT_GE(good, 19);
}

TEST(Decay, RangeRules) {
    const Vector eigs = synth_spectrum(1.0, 30, 1.0, 0.0, 0);
    const FitRange r = default_fit_range(eigs);
    EXPECT_EQ(r.k_min, 2u);
    EXPECT_EQ(r.k_max, 15u);
    EXPECT_THROW(fit_decay(eigs, 2, 9), std::invalid_argument);
    Vector cut = synth_spectrum(1.0, 100, 1.0, 0.0, 0);
    cut[20] = 0.0;
    EXPECT_EQ(default_fit_range(cut).k_max, 20u);
}

TEST(Decay, PredictedRate) {
    EXPECT_DOUBLE_EQ(predicted_rate(0.6), 1.2 / 2.2);
    EXPECT_NEAR(predicted_rate(0.6), 0.5454545454545454, 1e-15);
    EXPECT_NEAR(predicted_rate(0.51), 1.02 / 2.02, 1e-15);
    EXPECT_THROW(predicted_rate(0.5), std::invalid_argument);
}

TEST(Decay, EmpiricalKernelSpectrumIsPowerLawLike) {
    NetworkConfig c;
    c.seq_len = 4;
    c.input_dim = 4;
    c.width = 32;
    const NetworkParams p = init_network(c, 1);
    const auto k = empirical_kernel(p, gen_inputs(64, 4, 4, 1.0, 2), 2);
    const DecayFit f = fit_decay(k.eigen().eigenvalues);
    EXPECT_GE(f.r2, 0.8);
    EXPECT_GT(f.beta, 0.0);
}

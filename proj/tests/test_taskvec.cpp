#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ntkstop/data.hpp"
#include "ntkstop/taskvec.hpp"

using namespace ntkstop;

namespace {

NetworkConfig small() {
    NetworkConfig c;
    c.seq_len = 3;
    c.input_dim = 4;
    c.width = 16;
    return c;
}

struct Task {
    RegressionDataset train, test;
};

Task planted(const NetworkParams& p, std::uint64_t seed) {
    const auto xs = gen_inputs(24, 3, 4, 1.0, seed);
    const PlantedTarget t = plant_target(p, xs, 4, 1.0, seed + 1);
    return {sample_labels(t, xs, 0.1, seed + 2), sample_labels(t, gen_inputs(24, 3, 4, 1.0, seed + 3), 0.1, seed + 4)};
}

} // namespace

TEST(TaskVector, ZeroAndRoundTrip) {
    const NetworkParams p = init_network(small(), 1);
    const TaskVector zero = task_vector(p, p, "none");
    EXPECT_EQ(zero.norm, 0.0);
    EXPECT_EQ(apply(p, std::span(&zero, 1), std::vector<double>{1.0}), p);
    NetworkParams q = p;
    for (double& v : q.flat()) v += 0.01;
    const TaskVector tv = task_vector(p, q);
    EXPECT_NEAR(tv.norm, 0.01 * std::sqrt(static_cast<double>(p.size())), 1e-12);
    const NetworkParams back = apply(p, std::span(&tv, 1), std::vector<double>{1.0});
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(back.flat()[i], q.flat()[i], 1e-15);
    EXPECT_THROW(task_vector(p, init_network(NetworkConfig{}, 1)), std::invalid_argument);
}

TEST(TaskVector, CosineCases) {
    const TaskVector a = make_task_vector({1, 2, 0, 0}), b = make_task_vector({2, 4, 0, 0});
    const TaskVector c = make_task_vector({-1, -2, 0, 0}), d = make_task_vector({0, 0, 3, 1});
    EXPECT_NEAR(cosine(a, b), 1.0, 1e-15);
    EXPECT_NEAR(cosine(a, c), -1.0, 1e-15);
    EXPECT_EQ(cosine(a, d), 0.0);
    EXPECT_THROW(cosine(a, make_task_vector({0, 0, 0, 0})), std::invalid_argument);
}

TEST(TaskVector, ApplyIsLinear) {
    const NetworkParams p = init_network(small(), 2);
    Vector d1(p.size()), d2(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        d1[i] = 0.001 * static_cast<double>(i % 7);
        d2[i] = -0.002 * static_cast<double>(i % 3);
    }
    const std::vector<TaskVector> vs = {make_task_vector(d1), make_task_vector(d2)};
    const NetworkParams both = apply(p, vs, std::vector<double>{0.5, 2.0});
    const NetworkParams one = apply(p, std::span(vs.data(), 1), std::vector<double>{0.5});
    const NetworkParams two = apply(one, std::span(vs.data() + 1, 1), std::vector<double>{2.0});
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(both.flat()[i], two.flat()[i], 1e-15);
}

TEST(TaskVector, CosineScaleInvariant) {
    const TaskVector a = make_task_vector({1, -3, 2}), b = make_task_vector({0.5, 1, 4});
    const TaskVector a3 = make_task_vector({3, -9, 6});
    EXPECT_NEAR(cosine(a, b), cosine(a3, b), 1e-15);
}

TEST(TaskVector, CosineCsv) {
    const std::vector<TaskVector> vs = {make_task_vector({1, 0}, "a"), make_task_vector({0, 1}, "b")};
    const auto path = std::filesystem::temp_directory_path() / "ntkstop_cosine.csv";
    write_cosine_csv(vs, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_NE(header.find("cosine"), std::string::npos);
    std::filesystem::remove(path);
}

TEST(Negation, LinearizedIdentityHolds) {
    const NetworkParams p = init_network(small(), 3);
    const Task t = planted(p, 4);
    TrainingSpec spec;
    spec.epsilon = default_learning_rate(empirical_kernel(p, t.train.inputs));
    spec.steps = 20;
    const NegationResult r = negation_trial(p, t.train, t.test, spec);
    EXPECT_NEAR(r.linearized_difference, r.quadratic_form + r.cross_term,
                1e-10 * std::max(1.0, std::abs(r.linearized_difference)));
    EXPECT_NEAR(r.difference, r.mse_neg - r.mse_ft, 1e-15);
    EXPECT_GT(r.task_norm, 0.0);
    EXPECT_GT(r.difference, 0.0);
}

TEST(Addition, LinearizedDecompositionIsExact) {
    const NetworkParams p = init_network(small(), 5);
    const Task a = planted(p, 6), b = planted(p, 16);
    TrainingSpec spec;
    spec.epsilon = default_learning_rate(empirical_kernel(p, a.train.inputs));
    spec.steps = 10;
    const AdditionResult r = addition_trial(p, a.train, a.test, b.train, b.test, spec);
    EXPECT_LE(r.additivity_error, 1e-8);
    ASSERT_EQ(r.vectors.size(), 2u);
    EXPECT_NEAR(r.cosine, cosine(r.vectors[0], r.vectors[1]), 1e-15);
    EXPECT_GE(r.cross_mass, 0.0);
    for (int i = 0; i < 2; ++i)
        EXPECT_NEAR(r.relative_change[i], (r.mse_mt[i] - r.mse_ft[i]) / r.mse_ft[i], 1e-12);
}

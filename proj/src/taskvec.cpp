#include "ntkstop/taskvec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ntkstop/csv.hpp"
#include "ntkstop/ntk.hpp"

namespace ntkstop {

TaskVector make_task_vector(Vector delta, std::string task) {
    for (double v : delta)
        if (!std::isfinite(v)) throw std::invalid_argument("task vector has a non-finite entry");
    TaskVector t;
    t.norm = norm2(delta);
    t.delta = std::move(delta);
    t.task = std::move(task);
    return t;
}

TaskVector task_vector(const NetworkParams& theta_pt, const NetworkParams& theta_ft, std::string task) {
    if (!theta_pt.same_architecture(theta_ft)) throw std::invalid_argument("task_vector: architectures differ");
    Vector d(theta_pt.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = theta_ft.flat()[i] - theta_pt.flat()[i];
    return make_task_vector(std::move(d), std::move(task));
}

NetworkParams apply(const NetworkParams& base, std::span<const TaskVector> vectors,
                    std::span<const double> coefficients) {
    if (vectors.size() != coefficients.size()) throw std::invalid_argument("apply: one coefficient per vector required");
    NetworkParams out = base;
    auto flat = out.flat();
    for (std::size_t k = 0; k < vectors.size(); ++k) {
        if (vectors[k].delta.size() != flat.size())
            throw std::invalid_argument("apply: task vector '" + vectors[k].task + "' is not aligned with the parameters");
        axpy(coefficients[k], vectors[k].delta, flat);
    }
    return out;
}

double cosine(const TaskVector& a, const TaskVector& b) {
    if (a.delta.size() != b.delta.size()) throw std::invalid_argument("cosine: length mismatch");
    const double na = norm2(a.delta), nb = norm2(b.delta);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero task vector");
    return std::clamp(dot(a.delta, b.delta) / (na * nb), -1.0, 1.0);
}

void write_cosine_csv(std::span<const TaskVector> vectors, const std::filesystem::path& path) {
    CsvWriter out(path, {"task_i", "task_j", "cosine"});
    for (const auto& a : vectors)
        for (const auto& b : vectors) out.row(a.task, b.task, cosine(a, b));
}

namespace {

double training_rate(const NetworkParams& theta, const RegressionDataset& train, const TrainingSpec& spec) {
    if (spec.epsilon > 0.0) return spec.epsilon;
    return default_learning_rate(empirical_kernel(theta, train.inputs, spec.jobs));
}

NetworkParams fit(const NetworkParams& theta_pt, const RegressionDataset& train, const TrainingSpec& spec) {
    FinetuneOptions opts;
    opts.epsilon = training_rate(theta_pt, train, spec);
    opts.steps = spec.steps;
    opts.jobs = spec.jobs;
    return finetune(theta_pt, train, opts).final_params;
}

} // namespace

nlohmann::json NegationResult::to_json() const {
    return {{"mse_ft", mse_ft},
            {"mse_neg", mse_neg},
            {"difference", difference},
            {"linearized_difference", linearized_difference},
            {"quadratic_form", quadratic_form},
            {"cross_term", cross_term},
            {"task_norm", task_norm}};
}

NegationResult negation_trial(const NetworkParams& theta_pt, const RegressionDataset& train,
                              const RegressionDataset& test, const TrainingSpec& spec) {
    const NetworkParams theta_ft = fit(theta_pt, train, spec);
    const TaskVector tau = task_vector(theta_pt, theta_ft, "task");
    const std::vector<TaskVector> one{tau};
    const double minus[] = {-1.0};
    const NetworkParams theta_neg = apply(theta_pt, one, minus);

    NegationResult r;
    r.task_norm = tau.norm;
    r.mse_ft = mse(evaluate_batch(theta_ft, test.inputs, spec.jobs), test.labels);
    r.mse_neg = mse(evaluate_batch(theta_neg, test.inputs, spec.jobs), test.labels);
    r.difference = r.mse_neg - r.mse_ft;

    const LinearizedModel lin(theta_pt, tau.delta, test.inputs, spec.jobs);
    const Vector jt = matvec(lin.jacobian(), tau.delta);
    const double n = static_cast<double>(test.size());
    Vector plus(jt.size()), neg(jt.size());
    double quad = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < jt.size(); ++i) {
        plus[i] = lin.base_outputs()[i] + jt[i];
        neg[i] = lin.base_outputs()[i] - jt[i];
        quad += jt[i] * jt[i];
        cross += (test.labels[i] - plus[i]) * jt[i];
    }
    r.linearized_difference = mse(neg, test.labels) - mse(plus, test.labels);
    r.quadratic_form = 4.0 * quad / n;
    r.cross_term = 4.0 * cross / n;
    return r;
}

nlohmann::json AdditionResult::to_json() const {
    return {{"mse_ft", {mse_ft[0], mse_ft[1]}},
            {"mse_mt", {mse_mt[0], mse_mt[1]}},
            {"relative_change", {relative_change[0], relative_change[1]}},
            {"cross_mass", cross_mass},
            {"cosine", cosine},
            {"additivity_error", additivity_error},
            {"off_support_rms", {off_support[0], off_support[1]}}};
}

AdditionResult addition_trial(const NetworkParams& theta_pt, const RegressionDataset& train1,
                              const RegressionDataset& test1, const RegressionDataset& train2,
                              const RegressionDataset& test2, const TrainingSpec& spec) {
    const RegressionDataset* trains[2] = {&train1, &train2};
    const RegressionDataset* tests[2] = {&test1, &test2};
    std::vector<TaskVector> taus;
    AdditionResult r;
    NetworkParams fts[2] = {theta_pt, theta_pt};
    for (int t = 0; t < 2; ++t) {
        fts[t] = fit(theta_pt, *trains[t], spec);
        taus.push_back(task_vector(theta_pt, fts[t], "task" + std::to_string(t + 1)));
    }
    const double ones[] = {1.0, 1.0};
    const NetworkParams theta_mt = apply(theta_pt, taus, ones);
    for (int t = 0; t < 2; ++t) {
        r.mse_ft[t] = mse(evaluate_batch(fts[t], tests[t]->inputs, spec.jobs), tests[t]->labels);
        r.mse_mt[t] = mse(evaluate_batch(theta_mt, tests[t]->inputs, spec.jobs), tests[t]->labels);
        r.relative_change[t] = (r.mse_mt[t] - r.mse_ft[t]) / r.mse_ft[t];
    }
    r.cosine = cosine(taus[0], taus[1]);

    std::vector<Matrix> joint = train1.inputs;
    joint.insert(joint.end(), train2.inputs.begin(), train2.inputs.end());
    const EmpiricalKernel k = empirical_kernel(theta_pt, joint, spec.jobs);
    r.cross_mass = cross_kernel_mass(k.matrix(), train1.size());

    for (int t = 0; t < 2; ++t) {
        const LinearizedModel lin(theta_pt, taus[t].delta, tests[t]->inputs, spec.jobs);
        Vector sum = taus[0].delta;
        axpy(1.0, taus[1].delta, sum);
        const Vector joint_part = matvec(lin.jacobian(), sum);
        const Vector a = matvec(lin.jacobian(), taus[0].delta);
        const Vector b = matvec(lin.jacobian(), taus[1].delta);
        for (std::size_t i = 0; i < a.size(); ++i)
            r.additivity_error = std::max(r.additivity_error, std::abs(joint_part[i] - a[i] - b[i]));
        const Vector& other = t == 0 ? b : a;  // the other task's vector on this task's inputs
        r.off_support[1 - t] = norm2(other) / std::sqrt(static_cast<double>(other.size()));
    }
    r.vectors = std::move(taus);
    return r;
}

} // namespace ntkstop

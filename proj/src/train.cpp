#include "ntkstop/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ntkstop/csv.hpp"
#include "ntkstop/jacobian.hpp"
#include "ntkstop/parallel.hpp"
#include "ntkstop/rng.hpp"

namespace ntkstop {

double half_mse(std::span<const double> predictions, std::span<const double> labels) {
    return 0.5 * mse(predictions, labels);
}

double mse(std::span<const double> predictions, std::span<const double> labels) {
    if (predictions.size() != labels.size()) throw std::invalid_argument("mse: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double r = predictions[i] - labels[i];
        s += r * r;
    }
    return s / static_cast<double>(labels.size());
}

namespace {

// Outputs and Jacobian rows in one pass per example.
Matrix outputs_and_jacobian(const NetworkParams& params, std::span<const Matrix> inputs,
                            std::size_t jobs, Vector& outputs) {
    Matrix jac(inputs.size(), params.size());
    outputs.assign(inputs.size(), 0.0);
    parallel_for(inputs.size(), jobs, [&](std::size_t i) {
        const ForwardResult fr = forward(params, inputs[i]);
        const BackpropState st = backward(fr.trace, params);
        outputs[i] = fr.output;
        std::copy(st.gradient.begin(), st.gradient.end(), jac.row(i).begin());
    });
    return jac;
}

Vector difference(std::span<const double> a, std::span<const double> b) {
    Vector d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

EmpiricalKernel kernel_from(const Matrix& jac, const NetworkConfig& cfg) {
    return empirical_kernel(jac, jac.rows(), cfg.width, cfg.parameterization);
}

} // namespace

std::optional<double> TrainTrajectory::sup_kernel_drift() const {
    std::optional<double> sup;
    for (const auto& r : records)
        if (r.kernel_drift) sup = std::max(sup.value_or(0.0), *r.kernel_drift);
    return sup;
}

Vector TrainTrajectory::cumulative_kernel_change() const {
    Vector g(steps_run, 0.0);
    double acc = 0.0;
    std::size_t next = 0;
    for (std::size_t tau = 1; tau <= steps_run; ++tau) {
        while (next < records.size() && records[next].step <= tau) {
            if (records[next].kernel_change) acc += *records[next].kernel_change;
            ++next;
        }
        g[tau - 1] = acc;
    }
    return g;
}

TrainTrajectory finetune(const NetworkParams& theta_pt, const RegressionDataset& data,
                         const FinetuneOptions& options) {
    if (!(options.epsilon >= 0.0) || !std::isfinite(options.epsilon))
        throw std::invalid_argument("finetune: learning rate must be nonnegative");
    if (options.steps < 1) throw std::invalid_argument("finetune: steps must be >= 1");
    if (data.size() == 0) throw std::invalid_argument("finetune: empty dataset");
    if (!options.trainable.empty() && options.trainable.size() != theta_pt.size())
        throw std::invalid_argument("finetune: trainable mask has the wrong length");

    std::vector<std::size_t> train_idx(data.size()), val_idx;
    for (std::size_t i = 0; i < data.size(); ++i) train_idx[i] = i;
    if (options.holdout) {
        const auto& h = *options.holdout;
        if (!(h.fraction > 0.0 && h.fraction < 1.0)) throw std::invalid_argument("finetune: holdout fraction must lie in (0, 1)");
        if (h.patience < 1) throw std::invalid_argument("finetune: patience must be >= 1");
        const auto n_val = static_cast<std::size_t>(std::llround(h.fraction * static_cast<double>(data.size())));
        if (n_val < 1 || n_val >= data.size()) throw std::invalid_argument("finetune: holdout split leaves an empty side");
        const auto perm = Rng(h.seed).permutation(data.size());
        val_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(train_idx.begin(), train_idx.end());
    }
    const RegressionDataset train = data.subset(train_idx);
    const RegressionDataset val = data.subset(val_idx);
    const std::size_t stride =
        options.kernel_stride ? options.kernel_stride
                              : (options.steps <= 200 ? 1 : (options.steps + 199) / 200);
    const double n_train = static_cast<double>(train.size());

    NetworkParams theta = theta_pt;
    TrainTrajectory traj{{}, theta_pt};
    traj.epsilon = options.epsilon;
    std::optional<EmpiricalKernel> k0, kprev;
    double initial_loss = 0.0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t tau = 0;; ++tau) {
        Vector outputs;
        const Matrix jac = outputs_and_jacobian(theta, train.inputs, options.jobs, outputs);
        TrainRecord rec;
        rec.step = tau;
        rec.train_loss = half_mse(outputs, train.labels);
        rec.param_dist = norm2(difference(theta.flat(), theta_pt.flat()));
        if (tau == 0) initial_loss = rec.train_loss;
        if (!std::isfinite(rec.train_loss) || rec.train_loss > 1e6 * std::max(initial_loss, 1e-12))
            throw TrainingDiverged("training diverged at step " + std::to_string(tau) + ": loss " +
                                   format_double(rec.train_loss) + " from initial " +
                                   format_double(initial_loss));
        if (options.record_kernel && (tau % stride == 0 || tau == options.steps)) {
            EmpiricalKernel k = kernel_from(jac, theta.config());
            if (!k0) k0 = k;
            rec.kernel_drift = kernel_drift(*k0, k);
            rec.kernel_change = kprev ? kernel_drift(*kprev, k) : 0.0;
            kprev = std::move(k);
        }
        bool stop = false;
        if (options.holdout) {
            rec.val_loss = half_mse(evaluate_batch(theta, val.inputs, options.jobs), val.labels);
            if (*rec.val_loss < best_val) {
                best_val = *rec.val_loss;
                traj.final_params = theta;
                traj.best_step = tau;
                since_best = 0;
            } else if (++since_best >= options.holdout->patience) {
                stop = true;
            }
        }
        traj.records.push_back(rec);
        traj.steps_run = tau;
        if (stop) {
            traj.stopped_early = tau < options.steps;
            break;
        }
        if (tau == options.steps) break;

        Vector residual = difference(outputs, train.labels);
        Vector grad = matvec_t(jac, residual);
        const double scale = options.epsilon / n_train;
        auto flat = theta.flat();
        for (std::size_t i = 0; i < flat.size(); ++i) {
            if (!options.trainable.empty() && !options.trainable[i]) continue;
            flat[i] -= scale * grad[i];
        }
    }
    if (!options.holdout) {
        traj.final_params = theta;
        traj.best_step = traj.steps_run;
    }
    return traj;
}

double default_learning_rate(const EmpiricalKernel& k) {
    return 0.5 * eta_critical(k) / k.step_scale();
}

void write_trajectory_csv(const TrainTrajectory& trajectory, const std::filesystem::path& path) {
    CsvWriter out(path, {"step", "train_loss", "val_loss", "param_dist", "kernel_drift"});
    for (const auto& r : trajectory.records)
        out.row(r.step, r.train_loss, r.val_loss, r.param_dist, r.kernel_drift);
}

LinearizedModel::LinearizedModel(NetworkParams base, Vector delta, std::span<const Matrix> eval_inputs,
                                 std::size_t jobs)
    : base_(std::move(base)), delta_(std::move(delta)) {
    if (delta_.size() != base_.size()) throw std::invalid_argument("LinearizedModel: delta length mismatch");
    jacobian_ = outputs_and_jacobian(base_, eval_inputs, jobs, base_outputs_);
}

Vector LinearizedModel::predictions_with(std::span<const double> delta) const {
    if (delta.size() != base_.size()) throw std::invalid_argument("LinearizedModel: delta length mismatch");
    Vector p = matvec(jacobian_, delta);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += base_outputs_[i];
    return p;
}

double LinearizedModel::predict(const Matrix& x) const {
    const ForwardResult fr = forward(base_, x);
    const BackpropState st = backward(fr.trace, base_);
    return fr.output + dot(st.gradient, delta_);
}

LinearizedModel linearize(const NetworkParams& theta_pt, const NetworkParams& theta_ft,
                          std::span<const Matrix> eval_inputs, std::size_t jobs) {
    if (!theta_pt.same_architecture(theta_ft)) throw std::invalid_argument("linearize: architectures differ");
    return LinearizedModel(theta_pt, difference(theta_ft.flat(), theta_pt.flat()), eval_inputs, jobs);
}

double linearization_error(const NetworkParams& theta_pt, const NetworkParams& theta_ft,
                           std::span<const Matrix> inputs, std::size_t jobs) {
    if (inputs.empty()) throw std::invalid_argument("linearization_error: empty input set");
    const LinearizedModel lin = linearize(theta_pt, theta_ft, inputs, jobs);
    const Vector ft = evaluate_batch(theta_ft, inputs, jobs);
    const Vector e = difference(ft, lin.predictions());
    return norm2(e) / std::sqrt(static_cast<double>(inputs.size()));
}

LinearizedTrajectory finetune_linearized(const LinearizedModel& model, std::span<const double> labels,
                                         double epsilon, std::size_t steps,
                                         std::span<const char> trainable) {
    if (labels.size() != model.size()) throw std::invalid_argument("finetune_linearized: label count mismatch");
    if (!trainable.empty() && trainable.size() != model.base().size())
        throw std::invalid_argument("finetune_linearized: trainable mask has the wrong length");
    LinearizedTrajectory out;
    out.epsilon = epsilon;
    out.delta.assign(model.base().size(), 0.0);
    const double scale = epsilon / static_cast<double>(labels.size());
    for (std::size_t tau = 0;; ++tau) {
        Vector pred = model.predictions_with(out.delta);
        out.train_loss.push_back(half_mse(pred, labels));
        out.predictions.push_back(pred);
        if (tau == steps) break;
        const Vector grad = matvec_t(model.jacobian(), difference(pred, labels));
        for (std::size_t i = 0; i < grad.size(); ++i) {
            if (!trainable.empty() && !trainable[i]) continue;
            out.delta[i] -= scale * grad[i];
        }
    }
    return out;
}

NetworkParams attach_head(const NetworkParams& theta_pt, const HeadOptions& head) {
    const NetworkConfig& src = theta_pt.config();
    if (head.keep_blocks > src.num_blocks)
        throw std::invalid_argument("attach_head: backbone depth " + std::to_string(head.keep_blocks) +
                                    " exceeds " + std::to_string(src.num_blocks) + " blocks");
    NetworkConfig cfg = src;
    cfg.num_blocks = head.keep_blocks;
    NetworkParams out(cfg);
    const auto& layout = out.layout();
    for (const auto& s : layout.slots()) {
        auto dst = out.tensor_values(s.name);
        if (s.block < head.keep_blocks) {
            const MatrixView from = theta_pt.tensor(s.name);
            std::copy(from.data, from.data + s.size(), dst.begin());
        }
    }
    if (head.init == HeadInit::gaussian) {
        Rng rng(head.seed);
        const auto& rs = layout.slot(layout.readout_weight());
        for (double& v : out.tensor_values(layout.readout_weight())) v = rs.init_stddev * rng.normal();
    }
    return out;
}

std::vector<char> readout_mask(const NetworkParams& params) {
    std::vector<char> mask(params.size(), 0);
    const auto& layout = params.layout();
    for (std::size_t slot : {layout.readout_weight(), layout.readout_bias()}) {
        const auto& s = layout.slot(slot);
        std::fill(mask.begin() + static_cast<std::ptrdiff_t>(s.offset),
                  mask.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()), 1);
    }
    return mask;
}

TrainTrajectory finetune_with_head(const NetworkParams& theta_pt, const RegressionDataset& data,
                                   const HeadOptions& head, FinetuneOptions options) {
    const NetworkParams start = attach_head(theta_pt, head);
    if (head.freeze_backbone) options.trainable = readout_mask(start);
    return finetune(start, data, options);
}

NetworkParams pretrain(const NetworkConfig& config, std::uint64_t seed, const PretrainOptions& options,
                       std::size_t jobs) {
    NetworkParams theta = init_network(config, seed);
    if (options.steps == 0) return theta;
    RegressionDataset source;
    source.inputs = gen_inputs(options.samples, config.seq_len, config.input_dim, options.bound,
                               derive_seed(seed, "source"));
    source.bound = options.bound;
    for (const Matrix& x : source.inputs) {
        double m = 0.0;
        for (double v : x.values()) m += v;
        source.labels.push_back(std::sin(2.0 * m / static_cast<double>(x.size())));
    }
    const EmpiricalKernel k = empirical_kernel(theta, source.inputs, jobs);
    FinetuneOptions opts;
    opts.epsilon = options.rate_fraction * eta_critical(k) / k.step_scale();
    opts.steps = options.steps;
    opts.jobs = jobs;
    return finetune(theta, source, opts).final_params;
}

} // namespace ntkstop

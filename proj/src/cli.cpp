#include "ntkstop/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "ntkstop/csv.hpp"
#include "ntkstop/experiments.hpp"
#include "ntkstop/jacobian.hpp"
#include "ntkstop/parallel.hpp"
#include "ntkstop/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ntkstop::cli {

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = {"jac-check", "kernel", "drift", "linearize", "stopping",
                                                   "ridge-equiv", "decay", "learning-curve", "taskvec"};
    return names;
}

json default_config(const std::string& sub) {
    json doc = {{"seed", 0},
                {"network", NetworkConfig{}},
                {"data", {{"n_train", 64}, {"n_test", 64}, {"centers", 8}, {"scale", 1.0}, {"target_rms", 1.0}, {"sigma", 0.1}, {"bound", 1.0}}},
                {"pretrain", {{"samples", 32}, {"steps", 20}, {"rate_fraction", 0.5}, {"bound", 1.0}}},
                {"train", {{"steps", 50}, {"rate_fraction", 0.5}}}};
    if (sub == "jac-check") {
        doc["jac"] = {{"samples", 2}, {"fd_step", 1e-4}};
    } else if (sub == "kernel") {
        doc["kernel"] = {{"normalize_width", true}};
    } else if (sub == "drift" || sub == "linearize") {
        doc["sweep"] = {{"widths", {32, 64, 128, 256}}, {"seeds", 5}};
    } else if (sub == "stopping") {
        doc["stopping"] = {{"spectrum", "kernel"}, {"size", 64},       {"flat_value", 1.0},   {"beta", 0.6},
                           {"noise", 0.0},         {"sigma", 0.1},     {"c_h", 0.0},          {"C", 1.0},
                           {"epsilon", 0.0},       {"g_mode", "measured"}, {"drift_c", 1.0},  {"lambda_map", "inverse"}};
    } else if (sub == "ridge-equiv") {
        doc["ridge"] = {{"steps", 400}, {"lambda_map", "inverse"}};
    } else if (sub == "decay") {
        doc["decay"] = {{"source", "kernel"}, {"beta", 0.6}, {"size", 100}, {"noise", 0.0}, {"k_min", 0}, {"k_max", 0}};
    } else if (sub == "learning-curve") {
        doc["curve"] = {{"betas", {0.6, 0.8, 1.0}}, {"sample_sizes", {50, 100, 200}}, {"n_test", 200}, {"seeds", 5},
                        {"sigma", 0.5}, {"C", 1.0}};
    } else if (sub == "taskvec") {
        doc["taskvec"] = {{"mode", "both"}, {"negation_seeds", 10}, {"addition_seeds", 5}, {"spread", 0.1}};
    } else {
        throw UsageError("unknown subcommand '" + sub + "'");
    }
    return doc;
}

namespace {

void check_known(const json& given, const json& defaults, const std::string& where) {
    if (!given.is_object()) throw UsageError("config " + (where.empty() ? "document" : "'" + where + "'") + " must be an object");
    for (const auto& [key, value] : given.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!defaults.contains(key)) throw UsageError("unknown config key '" + path + "'");
        if (defaults.at(key).is_object()) check_known(value, defaults.at(key), path);
    }
}

json::json_pointer pointer_for(const json& defaults, const std::string& dotted) {
    std::string ptr;
    const json* node = &defaults;
    std::size_t start = 0;
    for (;;) {
        const std::size_t dot = dotted.find('.', start);
        const std::string part = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty() || !node->is_object() || !node->contains(part))
            throw UsageError("unknown config key '" + dotted + "'");
        node = &node->at(part);
        ptr += "/" + part;
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return json::json_pointer(ptr);
}

} // namespace

json resolve_config(const std::string& sub, const json& file, const std::vector<std::string>& overrides) {
    const json defaults = default_config(sub);
    json doc = defaults;
    if (!file.is_null()) {
        check_known(file, defaults, "");
        doc.merge_patch(file);
    }
    for (const auto& o : overrides) {
        const std::size_t eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + o + "'");
        const auto ptr = pointer_for(defaults, o.substr(0, eq));
        const std::string text = o.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        doc[ptr] = value;
    }
    return doc;
}

std::string config_hash(const json& config) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

// Typed field access; every failure is a usage error naming the key.
class Section {
public:
    Section(const json& doc, std::string name) : j_(doc.at(name)), name_(std::move(name)) {}

    double real(const char* key) const {
        const json& v = at(key);
        if (!v.is_number()) fail(key, "a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) fail(key, "finite");
        return x;
    }
    double positive(const char* key) const {
        const double x = real(key);
        if (!(x > 0.0)) fail(key, "positive");
        return x;
    }
    double nonnegative(const char* key) const {
        const double x = real(key);
        if (x < 0.0) fail(key, "nonnegative");
        return x;
    }
    std::size_t count(const char* key, std::size_t min = 0) const {
        const json& v = at(key);
        if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min))
            fail(key, "an integer >= " + std::to_string(min));
        return v.get<std::size_t>();
    }
    bool flag(const char* key) const {
        const json& v = at(key);
        if (!v.is_boolean()) fail(key, "a boolean");
        return v.get<bool>();
    }
    std::string text(const char* key, std::initializer_list<const char*> allowed) const {
        const json& v = at(key);
        if (!v.is_string()) fail(key, "a string");
        const std::string s = v.get<std::string>();
        for (const char* a : allowed)
            if (s == a) return s;
        std::string list;
        for (const char* a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
        fail(key, "one of " + list);
        return s;
    }
    std::vector<double> reals(const char* key) const {
        const json& v = at(key);
        std::vector<double> out;
        if (!v.is_array() || v.empty()) fail(key, "a nonempty array of numbers");
        for (const auto& e : v) {
            if (!e.is_number()) fail(key, "a nonempty array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }
    std::vector<std::size_t> counts(const char* key, std::size_t min) const {
        const json& v = at(key);
        std::vector<std::size_t> out;
        if (!v.is_array() || v.empty()) fail(key, "a nonempty array of integers");
        for (const auto& e : v) {
            if (!e.is_number_integer() || e.get<long long>() < static_cast<long long>(min))
                fail(key, "an array of integers >= " + std::to_string(min));
            out.push_back(e.get<std::size_t>());
        }
        return out;
    }

private:
    const json& at(const char* key) const {
        if (!j_.contains(key)) throw UsageError("missing config key '" + name_ + "." + key + "'");
        return j_.at(key);
    }
    [[noreturn]] void fail(const char* key, const std::string& what) const {
        throw UsageError("config key '" + name_ + "." + key + "' must be " + what);
    }
    const json& j_;
    std::string name_;
};

// Files land in one directory per (subcommand, config hash); JSON outputs
// carry the hash.
class Output {
public:
    Output(fs::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {}

    fs::path file(const std::string& name) {
        files_.push_back(name);
        return dir_ / name;
    }
    void write_json(const std::string& name, json j) {
        j["config_hash"] = hash_;
        std::ofstream out(file(name), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
        out << j.dump(2) << '\n';
    }
    const std::vector<std::string>& files() const { return files_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::string hash_;
    std::vector<std::string> files_;
};

struct Common {
    std::uint64_t seed = 0;
    NetworkConfig network;
    TaskSpec task;
    PretrainOptions pretrain;
    std::size_t train_steps = 50;
    double rate_fraction = 0.5;
};

Common parse_common(const json& doc) {
    Common c;
    if (!doc.at("seed").is_number_unsigned() && !(doc.at("seed").is_number_integer() && doc.at("seed").get<long long>() >= 0))
        throw UsageError("config key 'seed' must be a nonnegative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();
    try {
        c.network = doc.at("network").get<NetworkConfig>();
    } catch (const std::exception& e) {
        throw UsageError(std::string("network: ") + e.what());
    }
    const Section data(doc, "data");
    c.task.n_train = data.count("n_train", 2);
    c.task.n_test = data.count("n_test", 1);
    c.task.centers = data.count("centers", 1);
    if (c.task.centers > c.task.n_train) throw UsageError("config key 'data.centers' exceeds data.n_train");
    c.task.scale = data.nonnegative("scale");
    c.task.target_rms = data.nonnegative("target_rms");
    c.task.sigma = data.nonnegative("sigma");
    c.task.bound = data.positive("bound");
    const Section pre(doc, "pretrain");
    c.pretrain.samples = pre.count("samples", 1);
    c.pretrain.steps = pre.count("steps", 0);
    c.pretrain.rate_fraction = pre.positive("rate_fraction");
    c.pretrain.bound = pre.positive("bound");
    const Section train(doc, "train");
    c.train_steps = train.count("steps", 1);
    c.rate_fraction = train.positive("rate_fraction");
    if (c.rate_fraction >= 1.0) throw UsageError("config key 'train.rate_fraction' must be below 1 (stability edge)");
    return c;
}

using Plan = std::function<void(Output&, std::size_t jobs)>;

Plan plan_jac_check(const json& doc, const Common& c) {
    const Section s(doc, "jac");
    const std::size_t samples = s.count("samples", 1);
    const double h = s.real("fd_step");
    if (h < 1e-6 || h > 1e-3) throw UsageError("config key 'jac.fd_step' must lie in [1e-6, 1e-3]");
    return [=](Output& out, std::size_t jobs) {
        const NetworkParams theta = pretrain(c.network, derive_seed(c.seed, "init"), c.pretrain, jobs);
        const auto xs = gen_inputs(samples, c.network.seq_len, c.network.input_dim, c.task.bound,
                                   derive_seed(c.seed, "data"));
        CsvWriter csv(out.file("jac_check.csv"), {"sample", "tensor", "max_abs_error", "max_rel_error"});
        double worst_rel = 0.0, worst_abs = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Vector a = jacobian_row(theta, xs[i]);
            const Vector f = fd_jacobian(theta, xs[i], h, jobs);
            for (const auto& slot : theta.layout().slots()) {
                const std::span<const double> as(a.data() + slot.offset, slot.rows * slot.cols);
                const std::span<const double> fs(f.data() + slot.offset, slot.rows * slot.cols);
                double abs_err = 0.0;
                for (std::size_t k = 0; k < as.size(); ++k) abs_err = std::max(abs_err, std::abs(as[k] - fs[k]));
                const GradientAgreement g = compare_gradients(as, fs);
                csv.row(i, slot.name, abs_err, g.max_rel_error);
                worst_rel = std::max(worst_rel, g.max_rel_error);
                worst_abs = std::max(worst_abs, abs_err);
            }
        }
        out.write_json("summary.json", {{"samples", samples},
                                        {"fd_step", h},
                                        {"param_count", theta.size()},
                                        {"max_rel_error", worst_rel},
                                        {"max_abs_error", worst_abs}});
    };
}

void write_spectrum(Output& out, const std::string& name, std::span<const double> eigs) {
    write_decay_csv(eigs, out.file(name));
}

Plan plan_kernel(const json& doc, const Common& c) {
    const Section s(doc, "kernel");
    const bool normalize = s.flag("normalize_width");
    return [=](Output& out, std::size_t jobs) {
        const NetworkParams theta = pretrain(c.network, derive_seed(c.seed, "init"), c.pretrain, jobs);
        const auto xs = gen_inputs(c.task.n_train, c.network.seq_len, c.network.input_dim, c.task.bound,
                                   derive_seed(c.seed, "data"));
        const EmpiricalKernel k = empirical_kernel(theta, xs, jobs, normalize);
        write_kernel_csv(k, out.file("kernel.csv"));
        write_spectrum(out, "spectrum.csv", k.eigen().eigenvalues);
        json meta = k.sidecar(c.seed);
        meta["trace"] = trace(k.matrix());
        meta["min_eigenvalue"] = k.eigen().eigenvalues.back();
        meta["max_eigenvalue"] = k.eigen().eigenvalues.front();
        meta["eta_critical"] = eta_critical(k);
        out.write_json("kernel.json", meta);
    };
}

Plan plan_sweep(const json& doc, const Common& c, bool drift) {
    const Section s(doc, "sweep");
    WidthSweepConfig cfg;
    cfg.network = c.network;
    cfg.widths = s.counts("widths", 1);
    if (cfg.widths.size() < 2) throw UsageError("config key 'sweep.widths' needs at least two widths");
    for (std::size_t w : cfg.widths) {
        NetworkConfig probe = c.network;
        probe.width = w;
        try {
            probe.validate();
        } catch (const std::exception& e) {
            throw UsageError("sweep width " + std::to_string(w) + ": " + e.what());
        }
    }
    cfg.seeds = s.count("seeds", 1);
    cfg.steps = c.train_steps;
    cfg.task = c.task;
    cfg.pretrain = c.pretrain;
    cfg.rate_fraction = c.rate_fraction;
    cfg.root_seed = c.seed;
    return [=](Output& out, std::size_t jobs) {
        WidthSweepConfig run = cfg;
        run.jobs = jobs;
        const WidthSweepResult r = run_width_sweep(run);
        CsvWriter csv(out.file("points.csv"), {"width", "seed", "epsilon", "sup_drift", "lin_error", "param_dist",
                                                "initial_loss", "final_loss"});
        for (const auto& p : r.points)
            csv.row(p.width, p.seed, p.epsilon, p.sup_drift, p.lin_error, p.param_dist, p.initial_loss, p.final_loss);
        json summary = r.summary();
        summary["quantity"] = drift ? "sup_drift" : "lin_error";
        summary["slope"] = drift ? r.drift_slope : r.lin_slope;
        out.write_json("summary.json", summary);
    };
}

Plan plan_stopping(const json& doc, const Common& c) {
    const Section s(doc, "stopping");
    const std::string spectrum = s.text("spectrum", {"kernel", "flat", "power"});
    const std::size_t size = s.count("size", 1);
    const double flat_value = s.positive("flat_value");
    const double beta = s.positive("beta");
    const double noise = s.nonnegative("noise");
    const double sigma = s.positive("sigma");
    const double c_h_given = s.nonnegative("c_h");
    const double big_c = s.positive("C");
    const double eps_given = s.nonnegative("epsilon");
    const std::string g_mode = s.text("g_mode", {"measured", "theoretical", "zero"});
    const double drift_c = s.nonnegative("drift_c");
    const LambdaMap map = parse_lambda_map(s.text("lambda_map", {"inverse", "literal"}));
    if (spectrum != "kernel" && c_h_given == 0.0)
        throw UsageError("config key 'stopping.c_h' must be positive for synthetic spectra");
    if (spectrum != "kernel" && g_mode == "measured")
        throw UsageError("stopping.g_mode 'measured' needs stopping.spectrum 'kernel'");
    return [=](Output& out, std::size_t jobs) {
        Vector eigs, g;
        double c_h = c_h_given, epsilon = eps_given;
        if (spectrum == "kernel") {
            TaskSpec task = c.task;
            task.n_train = size;
            task.centers = std::min(task.centers, size);
            const NetworkParams theta = pretrain(c.network, derive_seed(c.seed, "init"), c.pretrain, jobs);
            const PlantedTask planted = make_planted_task(theta, task, derive_seed(c.seed, "task"), jobs);
            const EmpiricalKernel k = empirical_kernel(theta, planted.train.inputs, jobs);
            eigs = k.step_eigenvalues();
            if (c_h == 0.0) c_h = planted.target.rkhs_norm();
            if (epsilon == 0.0) epsilon = c.rate_fraction * eta_critical(k) / k.step_scale();
            if (g_mode == "measured") {
                FinetuneOptions opts;
                opts.epsilon = epsilon;
                opts.steps = c.train_steps;
                opts.record_kernel = true;
                opts.kernel_stride = 1;
                opts.jobs = jobs;
                g = finetune(theta, planted.train, opts).cumulative_kernel_change();
            }
        } else if (spectrum == "flat") {
            eigs.assign(size, flat_value);
        } else {
            eigs = synth_spectrum(beta, size, flat_value, noise, derive_seed(c.seed, "spectrum"));
        }
        if (epsilon == 0.0) epsilon = 1.0 / eigs.front();
        const double rho = critical_radius(eigs, sigma, c_h);
        const std::size_t tm = t_max(rho, epsilon);
        if (g_mode == "theoretical") g = theoretical_drift_penalty(tm, c.network.width, drift_c);
        const StoppingDiagnostics d = stopping_diagnostics(eigs, sigma, c_h, epsilon, big_c, g, g_mode, map);
        json j = d.to_json();
        j["sigma"] = sigma;
        j["c_h"] = c_h;
        j["spectrum"] = spectrum;
        j["closed_form_flat"] = spectrum == "flat" ? json(2.0 * std::exp(1.0) * sigma / (c_h * c_h)) : json(nullptr);
        j["matched_lambda_at_t_op"] = matched_lambda(epsilon, d.t_op, map);
        out.write_json("diagnostics.json", j);

        // Every τ up to 10⁴, then a geometric grid; T̂_op is always included.
        std::vector<std::size_t> taus;
        for (std::size_t t = 1; t <= std::min<std::size_t>(d.t_max, 10000); ++t) taus.push_back(t);
        for (double t = 10000.0; t < static_cast<double>(d.t_max); t *= 1.005) {
            const auto ti = static_cast<std::size_t>(t);
            if (ti > taus.back()) taus.push_back(ti);
        }
        if (taus.back() != d.t_max) taus.push_back(d.t_max);
        taus.push_back(d.t_op);
        std::sort(taus.begin(), taus.end());
        taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
        CsvWriter csv(out.file("objective.csv"), {"tau", "bias_variance", "drift", "objective"});
        for (std::size_t t : taus) {
            const double bv = d.bias_variance[t - 1], dr = d.drift[t - 1];
            csv.row(t, bv, dr, bv + dr);
        }
        write_spectrum(out, "spectrum.csv", eigs);
    };
}

Plan plan_ridge(const json& doc, const Common& c) {
    const Section s(doc, "ridge");
    RidgeEquivConfig cfg;
    cfg.network = c.network;
    cfg.task = c.task;
    cfg.steps = s.count("steps", 1);
    cfg.lambda_map = parse_lambda_map(s.text("lambda_map", {"inverse", "literal"}));
    cfg.rate_fraction = c.rate_fraction;
    cfg.pretrain = c.pretrain;
    cfg.root_seed = c.seed;
    return [=](Output& out, std::size_t jobs) {
        RidgeEquivConfig run = cfg;
        run.jobs = jobs;
        const RidgeEquivResult r = run_ridge_equivalence(run);
        CsvWriter csv(out.file("gaps.csv"), {"tau", "lambda", "gap", "alt_lambda", "alt_gap"});
        for (std::size_t i = 0; i < r.gaps.size(); ++i) {
            const auto lam = [](double v) { return std::isinf(v) ? std::optional<double>() : std::optional<double>(v); };
            csv.row(r.gaps[i].tau, lam(r.gaps[i].lambda), r.gaps[i].gap, lam(r.literal_gaps[i].lambda),
                    r.literal_gaps[i].gap);
        }
        json j = r.summary();
        j["lambda_map"] = to_string(cfg.lambda_map);
        out.write_json("summary.json", j);
    };
}

Plan plan_decay(const json& doc, const Common& c) {
    const Section s(doc, "decay");
    const std::string source = s.text("source", {"kernel", "synthetic"});
    const double beta = s.positive("beta");
    const std::size_t size = s.count("size", 2);
    const double noise = s.nonnegative("noise");
    const std::size_t k_min = s.count("k_min"), k_max = s.count("k_max");
    if ((k_min == 0) != (k_max == 0)) throw UsageError("decay.k_min and decay.k_max are set together (0 = default range)");
    return [=](Output& out, std::size_t jobs) {
        Vector eigs;
        if (source == "kernel") {
            const NetworkParams theta = pretrain(c.network, derive_seed(c.seed, "init"), c.pretrain, jobs);
            const auto xs = gen_inputs(size, c.network.seq_len, c.network.input_dim, c.task.bound,
                                       derive_seed(c.seed, "data"));
            eigs = empirical_kernel(theta, xs, jobs).eigen().eigenvalues;
        } else {
            eigs = synth_spectrum(beta, size, 1.0, noise, derive_seed(c.seed, "spectrum"));
        }
        const DecayFit fit = k_min == 0 ? fit_decay(eigs) : fit_decay(eigs, k_min, k_max);
        write_decay_csv(eigs, out.file("decay.csv"));
        json j = fit.to_json();
        j["source"] = source;
        j["predicted_rate"] = fit.beta > 0.5 ? json(predicted_rate(fit.beta)) : json(nullptr);
        out.write_json("fit.json", j);
    };
}

Plan plan_curve(const json& doc, const Common& c) {
    const Section s(doc, "curve");
    LearningCurveConfig cfg;
    cfg.network = c.network;
    cfg.betas = s.reals("betas");
    if (cfg.betas.size() < 2) throw UsageError("config key 'curve.betas' needs two values");
    for (double b : cfg.betas)
        if (!(b > 0.0)) throw UsageError("config key 'curve.betas' must be positive");
    cfg.sample_sizes = s.counts("sample_sizes", 2);
    cfg.n_test = s.count("n_test", 1);
    cfg.seeds = s.count("seeds", 1);
    cfg.sigma = s.positive("sigma");
    cfg.c = s.positive("C");
    cfg.bound = c.task.bound;
    cfg.pretrain = c.pretrain;
    cfg.root_seed = c.seed;
    return [=](Output& out, std::size_t jobs) {
        LearningCurveConfig run = cfg;
        run.jobs = jobs;
        const LearningCurveResult r = run_learning_curve(run);
        CsvWriter csv(out.file("points.csv"), {"beta", "n", "seed", "t_op", "rho_hat", "test_mse"});
        for (const auto& p : r.points) csv.row(p.beta, p.n, p.seed, p.t_op, p.rho_hat, p.test_mse);
        out.write_json("summary.json", r.summary(cfg));
    };
}

Plan plan_taskvec(const json& doc, const Common& c) {
    const Section s(doc, "taskvec");
    const std::string mode = s.text("mode", {"negation", "addition", "both"});
    NegationConfig neg;
    neg.network = c.network;
    neg.task = c.task;
    neg.seeds = s.count("negation_seeds", 1);
    neg.steps = c.train_steps;
    neg.pretrain = c.pretrain;
    neg.root_seed = c.seed;
    AdditionConfig add;
    add.network = c.network;
    add.task = c.task;
    add.seeds = s.count("addition_seeds", 1);
    add.spread = s.positive("spread");
    add.steps = c.train_steps;
    add.pretrain = c.pretrain;
    add.root_seed = c.seed;
    if (mode != "negation" && c.network.input_dim < 2) throw UsageError("task addition needs network.input_dim >= 2");
    return [=](Output& out, std::size_t jobs) {
        if (mode != "addition") {
            NegationConfig run = neg;
            run.jobs = jobs;
            const NegationSummary r = run_negation(run);
            CsvWriter csv(out.file("negation.csv"), {"seed", "mse_ft", "mse_neg", "difference", "linearized_difference",
                                                      "quadratic_form", "cross_term", "task_norm"});
            for (std::size_t i = 0; i < r.trials.size(); ++i) {
                const auto& t = r.trials[i];
                csv.row(i, t.mse_ft, t.mse_neg, t.difference, t.linearized_difference, t.quadratic_form, t.cross_term,
                        t.task_norm);
            }
            out.write_json("negation.json", r.to_json());
        }
        if (mode != "negation") {
            AdditionConfig run = add;
            run.jobs = jobs;
            const AdditionSummary r = run_addition(run);
            out.write_json("addition.json", r.to_json());
            write_cosine_csv(r.trials.front().vectors, out.file("cosine.csv"));
        }
    };
}

Plan make_plan(const std::string& sub, const json& doc) {
    const Common c = parse_common(doc);
    if (sub == "jac-check") return plan_jac_check(doc, c);
    if (sub == "kernel") return plan_kernel(doc, c);
    if (sub == "drift") return plan_sweep(doc, c, true);
    if (sub == "linearize") return plan_sweep(doc, c, false);
    if (sub == "stopping") return plan_stopping(doc, c);
    if (sub == "ridge-equiv") return plan_ridge(doc, c);
    if (sub == "decay") return plan_decay(doc, c);
    if (sub == "learning-curve") return plan_curve(doc, c);
    if (sub == "taskvec") return plan_taskvec(doc, c);
    throw UsageError("unknown subcommand '" + sub + "'");
}

std::string usage() {
    std::string s = "usage: ntkstop <subcommand> [--config PATH] [--set k=v]... [--seed N] [--jobs N] [--out DIR]\n"
                    "subcommands:";
    for (const auto& n : subcommands()) s += " " + n;
    return s + "\n";
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    if (args.empty()) {
        err << usage();
        return 2;
    }
    if (args[0] == "--help" || args[0] == "-h") {
        out << usage();
        return 0;
    }
    if (args[0] == "--version") {
        out << "ntkstop " << version << '\n';
        return 0;
    }
    const std::string sub = args[0];
    if (std::find(subcommands().begin(), subcommands().end(), sub) == subcommands().end()) {
        err << "ntkstop: unknown subcommand '" << sub << "'\n" << usage();
        return 2;
    }

    CLI::App app("ntkstop " + sub, "ntkstop " + sub);
    std::string config_path, out_dir = "runs";
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = default_jobs();
    app.add_option("--config", config_path, "JSON config document");
    app.add_option("--set", sets, "dotted override, e.g. train.steps=100")->allow_extra_args(false);
    app.add_option("--seed", seed, "root seed");
    app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", out_dir, "output root directory");

    json doc;
    Plan plan;
    try {
        std::vector<std::string> rest(args.begin() + 1, args.end());
        std::reverse(rest.begin(), rest.end());
        app.parse(rest);
        json file;
        if (!config_path.empty()) {
            if (!fs::is_regular_file(config_path)) throw UsageError("config file not found: " + config_path);
            try {
                file = load_json_file(config_path);
            } catch (const std::exception& e) {
                throw UsageError(e.what());
            }
        }
        doc = resolve_config(sub, file, sets);
        if (seed) doc["seed"] = *seed;
        plan = make_plan(sub, doc);
    } catch (const CLI::CallForHelp&) {
        out << app.help() << usage();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "ntkstop " << sub << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "ntkstop " << sub << ": " << e.what() << '\n';
        return 2;
    }

    const std::string hash = config_hash(doc);
    const fs::path dir = fs::path(out_dir) / sub / hash;
    try {
        fs::create_directories(dir);
        Output output(dir, hash);
        const auto start = std::chrono::steady_clock::now();
        plan(output, jobs);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json manifest = {{"subcommand", sub},
                         {"version", version},
                         {"config_hash", hash},
                         {"config", doc},
                         {"seed", doc["seed"]},
                         {"jobs", jobs},
                         {"files", output.files()},
                         {"timing_seconds", seconds}};
        std::ofstream m(dir / "manifest.json", std::ios::binary);
        m << manifest.dump(2) << '\n';
        if (!m) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
        out << dir.string() << '\n';
    } catch (const std::exception& e) {
        err << "ntkstop " << sub << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace ntkstop::cli

#include "ntkstop/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "ntkstop/csv.hpp"
#include "ntkstop/jacobian.hpp"
#include "ntkstop/ntk.hpp"
#include "ntkstop/parallel.hpp"
#include "ntkstop/rng.hpp"

namespace ntkstop {

RegressionDataset RegressionDataset::subset(std::span<const std::size_t> indices) const {
    RegressionDataset out;
    out.noise_sigma = noise_sigma;
    out.bound = bound;
    out.seed = seed;
    for (std::size_t i : indices) {
        out.inputs.push_back(inputs.at(i));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

std::vector<Matrix> gen_inputs(std::size_t n, std::size_t seq_len, std::size_t input_dim,
                               double bound, std::uint64_t seed) {
    if (!(bound > 0.0)) throw std::invalid_argument("gen_inputs: bound must be positive");
    Rng rng(seed);
    std::vector<Matrix> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix x(seq_len, input_dim);
        for (double& v : x.values()) v = rng.uniform(-bound, bound);
        out.push_back(std::move(x));
    }
    return out;
}

std::vector<Matrix> gen_region_inputs(std::size_t n, std::size_t seq_len, std::size_t input_dim,
                                      double bound, const InputRegion& region, std::uint64_t seed) {
    if (region.feature >= input_dim) throw std::invalid_argument("gen_region_inputs: feature out of range");
    if (region.margin < 0.0 || region.margin >= 1.0)
        throw std::invalid_argument("gen_region_inputs: margin must lie in [0, 1)");
    std::vector<Matrix> out = gen_inputs(n, seq_len, input_dim, bound, seed);
    const double sign = region.positive ? 1.0 : -1.0;
    for (Matrix& x : out)
        for (std::size_t t = 0; t < seq_len; ++t) {
            const double u = std::abs(x(t, region.feature)) / bound;  // uniform on [0, 1]
            x(t, region.feature) = sign * bound * (region.margin + (1.0 - region.margin) * u);
        }
    return out;
}

PlantedTarget::PlantedTarget(NetworkParams base, std::vector<Matrix> centers, Vector coefficients,
                             std::size_t jobs)
    : base_(std::move(base)), centers_(std::move(centers)), coefficients_(std::move(coefficients)) {
    if (centers_.size() != coefficients_.size())
        throw std::invalid_argument("PlantedTarget: one coefficient per center required");
    for (double z : coefficients_)
        if (!std::isfinite(z)) throw std::invalid_argument("PlantedTarget: non-finite coefficient");
    const double s = kernel_scale(base_.config());
    direction_.assign(base_.size(), 0.0);
    if (centers_.empty()) return;
    const Matrix jc = jacobian_matrix(base_, centers_, jobs);
    center_kernel_ = gram(jc);
    for (double& v : center_kernel_.values()) v *= s;
    for (std::size_t i = 0; i < centers_.size(); ++i) axpy(s * coefficients_[i], jc.row(i), direction_);
    const Vector kz = matvec(center_kernel_, coefficients_);
    rkhs_norm_ = std::sqrt(std::max(0.0, dot(coefficients_, kz)));
}

double PlantedTarget::offset(const Matrix& x) const {
    if (centers_.empty()) return 0.0;
    return dot(jacobian_row(base_, x), direction_);
}

double PlantedTarget::operator()(const Matrix& x) const {
    if (centers_.empty()) return ntkstop::evaluate(base_, x);
    const ForwardResult fr = forward(base_, x);
    const BackpropState st = backward(fr.trace, base_);
    return fr.output + dot(st.gradient, direction_);
}

Vector PlantedTarget::evaluate(std::span<const Matrix> inputs, std::size_t jobs) const {
    Vector out(inputs.size());
    parallel_for(inputs.size(), jobs, [&](std::size_t i) { out[i] = (*this)(inputs[i]); });
    return out;
}

Vector PlantedTarget::offsets(std::span<const Matrix> inputs, std::size_t jobs) const {
    Vector out(inputs.size());
    parallel_for(inputs.size(), jobs, [&](std::size_t i) { out[i] = offset(inputs[i]); });
    return out;
}

PlantedTarget plant_target(const NetworkParams& base, std::span<const Matrix> inputs,
                           std::size_t k, double scale, std::uint64_t seed, std::size_t jobs) {
    if (k > inputs.size()) throw std::invalid_argument("plant_target: more centers than inputs");
    Rng rng(seed);
    std::vector<Matrix> centers;
    for (std::size_t i : rng.sample_indices(inputs.size(), k)) centers.push_back(inputs[i]);
    Vector zeta(k);
    for (double& z : zeta) z = scale * rng.normal();
    PlantedTarget target(base, std::move(centers), std::move(zeta), jobs);
    if (k > 0) {
        const auto eig = sym_eig(target.center_kernel());
        if (!(eig.eigenvalues.back() > 1e-12 * eig.eigenvalues.front()))
            throw std::invalid_argument("plant_target: degenerate center kernel (min eigenvalue " +
                                        format_double(eig.eigenvalues.back()) + ")");
    }
    return target;
}

RegressionDataset sample_labels(const PlantedTarget& target, std::vector<Matrix> inputs,
                                double sigma, std::uint64_t seed, std::size_t jobs) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("sample_labels: sigma must be nonnegative");
    RegressionDataset d;
    d.labels = target.evaluate(inputs, jobs);
    Rng rng(seed);
    if (sigma > 0.0)
        for (double& y : d.labels) y += sigma * rng.normal();
    d.inputs = std::move(inputs);
    d.noise_sigma = sigma;
    d.seed = seed;
    double b = 0.0;
    for (const Matrix& x : d.inputs) b = std::max(b, max_abs(x));
    d.bound = b > 0.0 ? b : 1.0;
    return d;
}

void save_csv(const RegressionDataset& data, const std::filesystem::path& path, std::size_t seq_len,
              std::size_t input_dim) {
    if (!data.inputs.empty()) {
        seq_len = data.inputs[0].rows();
        input_dim = data.inputs[0].cols();
    }
    if (data.labels.size() != data.inputs.size())
        throw std::invalid_argument("save_csv: label count differs from input count");
    std::vector<std::string> header;
    for (std::size_t t = 0; t < seq_len; ++t)
        for (std::size_t f = 0; f < input_dim; ++f)
            header.push_back("t" + std::to_string(t) + "_f" + std::to_string(f));
    header.push_back("label");
    CsvWriter out(path, header);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Matrix& x = data.inputs[i];
        if (x.rows() != seq_len || x.cols() != input_dim)
            throw std::invalid_argument("save_csv: example " + std::to_string(i) + " has a different shape");
        std::vector<double> row(x.values().begin(), x.values().end());
        row.push_back(data.labels[i]);
        out.row(row);
    }
}

RegressionDataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument(path.string() + ": missing header");
    const auto header = split_commas(line);
    if (header.empty() || header.back() != "label")
        throw std::invalid_argument(path.string() + ":1: last column must be 'label'");
    std::size_t seq_len = 0, input_dim = 0;
    for (std::size_t c = 0; c + 1 < header.size(); ++c) {
        const std::string name(header[c]);
        std::size_t t = 0, f = 0;
        if (std::sscanf(name.c_str(), "t%zu_f%zu", &t, &f) != 2)
            throw std::invalid_argument(path.string() + ":1: bad column name '" + name + "'");
        seq_len = std::max(seq_len, t + 1);
        input_dim = std::max(input_dim, f + 1);
    }
    if (seq_len * input_dim + 1 != header.size())
        throw std::invalid_argument(path.string() + ":1: header is not a full T x d grid");
    for (std::size_t c = 0; c + 1 < header.size(); ++c) {
        const std::string want = "t" + std::to_string(c / input_dim) + "_f" + std::to_string(c % input_dim);
        if (header[c] != want)
            throw std::invalid_argument(path.string() + ":1: column " + std::to_string(c) + " should be '" +
                                        want + "'");
    }
    RegressionDataset d;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != header.size())
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                        std::to_string(header.size()) + " columns, found " +
                                        std::to_string(cells.size()));
        Matrix x(seq_len, input_dim);
        try {
            for (std::size_t c = 0; c + 1 < cells.size(); ++c) x.data()[c] = parse_double(cells[c]);
            d.labels.push_back(parse_double(cells.back()));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        d.inputs.push_back(std::move(x));
    }
    double b = 0.0;
    for (const Matrix& x : d.inputs) b = std::max(b, max_abs(x));
    d.bound = b > 0.0 ? b : 1.0;
    return d;
}

} // namespace ntkstop

#pragma once

// Straight-line re-implementation of the network forward pass, templated on
// the scalar type. It shares nothing with src/model.cpp except the parameter
// layout, and serves as an independent oracle: in double it cross-checks the
// production forward pass, in long double it provides central differences
// with roundoff far below the double-precision gradient scale.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ntkstop/model.hpp"

namespace ntkstop::testing {

template <class R>
class ReferenceModel {
public:
    using Mat = std::vector<std::vector<R>>;

    explicit ReferenceModel(const NetworkParams& params)
        : cfg_(params.config()), layout_(params.layout()), theta_(params.size()) {
        for (std::size_t i = 0; i < params.size(); ++i) theta_[i] = params.flat()[i];
    }

    std::vector<R>& theta() { return theta_; }
    const std::vector<R>& theta() const { return theta_; }

    static Mat from_matrix(const Matrix& x) {
        Mat m(x.rows(), std::vector<R>(x.cols()));
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) m[i][j] = x(i, j);
        return m;
    }

    R evaluate(const Matrix& x) const { return readout(run_blocks(0, from_matrix(x))); }

    // Output of blocks [first, L) applied to g.
    Mat run_blocks(std::size_t first, Mat g) const {
        for (std::size_t l = first; l < cfg_.num_blocks; ++l) g = block(l, g);
        return g;
    }

    Mat block(std::size_t l, const Mat& g) const {
        const auto& bs = layout_.block(l);
        const std::size_t t = g.size();
        const std::size_t n = cfg_.width;
        const std::size_t din = g[0].size();
        const bool pre = cfg_.layernorm_placement == NormPlacement::pre;
        const Mat a_in = pre ? layer_norm(g, bs.ln1_gamma, bs.ln1_beta) : g;

        Mat concat(t, std::vector<R>(cfg_.heads * n, R(0)));
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            const Mat q = mul(a_in, bs.query[h]);
            const Mat k = mul(a_in, bs.key[h]);
            const Mat v = mul(a_in, bs.value[h]);
            for (std::size_t i = 0; i < t; ++i) {
                const std::size_t last = cfg_.causal_mask ? i + 1 : t;
                std::vector<R> s(t, R(0));
                R mx = R(-1e300);
                for (std::size_t j = 0; j < last; ++j) {
                    R acc = 0;
                    for (std::size_t c = 0; c < n; ++c) acc += q[i][c] * k[j][c];
                    s[j] = acc / R(n);
                    mx = std::max(mx, s[j]);
                }
                R z = 0;
                for (std::size_t j = 0; j < last; ++j) {
                    s[j] = std::exp(s[j] - mx);
                    z += s[j];
                }
                for (std::size_t j = 0; j < last; ++j) {
                    const R p = s[j] / z;
                    for (std::size_t c = 0; c < n; ++c) concat[i][h * n + c] += p * v[j][c];
                }
            }
        }
        Mat r = mul(concat, bs.output);
        if (din == n)
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t c = 0; c < n; ++c) r[i][c] += g[i][c];
        const Mat z = pre ? r : layer_norm(r, bs.ln1_gamma, bs.ln1_beta);
        Mat u = mul(pre ? layer_norm(z, bs.ln2_gamma, bs.ln2_beta) : z, bs.ff_weight);
        const auto& bias = layout_.slot(bs.ff_bias);
        Mat out(t, std::vector<R>(n));
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < n; ++c)
                out[i][c] = z[i][c] + phi(u[i][c] + theta_[bias.offset + c]);
        return pre ? out : layer_norm(out, bs.ln2_gamma, bs.ln2_beta);
    }

    R readout(const Mat& g) const {
        const auto& ws = layout_.slot(layout_.readout_weight());
        const auto& bs = layout_.slot(layout_.readout_bias());
        const R scale = ws.use_scale;
        R acc = 0;
        for (std::size_t c = 0; c < g[0].size(); ++c) {
            R pooled = 0;
            for (const auto& row : g) pooled += row[c];
            pooled /= R(g.size());
            acc += scale * theta_[ws.offset + c] * pooled;
        }
        return acc + theta_[bs.offset];
    }

private:
    Mat mul(const Mat& x, std::size_t slot) const {
        const auto& s = layout_.slot(slot);
        const R scale = s.use_scale;
        Mat out(x.size(), std::vector<R>(s.cols, R(0)));
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t a = 0; a < s.rows; ++a)
                for (std::size_t b = 0; b < s.cols; ++b)
                    out[i][b] += x[i][a] * scale * theta_[s.offset + a * s.cols + b];
        return out;
    }

    Mat layer_norm(const Mat& x, std::size_t gamma, std::size_t beta) const {
        const auto& gs = layout_.slot(gamma);
        const auto& bts = layout_.slot(beta);
        Mat y = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t d = x[i].size();
            R mu = 0;
            for (R v : x[i]) mu += v;
            mu /= R(d);
            R var = 0;
            for (R v : x[i]) var += (v - mu) * (v - mu);
            var /= R(d);
            const R denom = std::sqrt(var + R(cfg_.layernorm_eps));
            for (std::size_t j = 0; j < d; ++j)
                y[i][j] = theta_[gs.offset + j] * (x[i][j] - mu) / denom + theta_[bts.offset + j];
        }
        return y;
    }

    R phi(R x) const {
        switch (cfg_.activation) {
        case Activation::gelu: return R(0.5) * x * (R(1) + std::erf(x / std::sqrt(R(2))));
        case Activation::softplus: return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        case Activation::tanh: return std::tanh(x);
        case Activation::identity: return x;
        case Activation::square: return x * x;
        }
        return x;
    }

    NetworkConfig cfg_;
    const ParamLayout& layout_;
    std::vector<R> theta_;
};

// Central differences with step h·max(1, |θ_i|), evaluated in long double.
// Blocks preceding the perturbed tensor are evaluated once and reused.
inline Vector reference_fd(const NetworkParams& params, const Matrix& x, double h = 1e-4) {
    using R = long double;
    ReferenceModel<R> model(params);
    const auto& layout = params.layout();
    const std::size_t blocks = params.config().num_blocks;
    std::vector<ReferenceModel<R>::Mat> inputs(blocks + 1);
    inputs[0] = ReferenceModel<R>::from_matrix(x);
    for (std::size_t l = 0; l < blocks; ++l) inputs[l + 1] = model.block(l, inputs[l]);
    Vector out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t first = layout.slot_of(i).block;  // readout reports block L
        R& v = model.theta()[i];
        const R orig = v;
        const R step = R(h) * std::max(R(1), std::abs(orig));
        v = orig + step;
        const R up = model.readout(model.run_blocks(first, inputs[first]));
        v = orig - step;
        const R down = model.readout(model.run_blocks(first, inputs[first]));
        v = orig;
        out[i] = static_cast<double>((up - down) / (R(2) * step));
    }
    return out;
}

} // namespace ntkstop::testing

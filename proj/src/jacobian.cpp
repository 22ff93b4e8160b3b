#include "ntkstop/jacobian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ntkstop/parallel.hpp"

namespace ntkstop {

Matrix softmax_jacobian(std::span<const double> p) {
    Matrix lam(p.size(), p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p.size(); ++j) lam(i, j) = (i == j ? p[i] : 0.0) - p[i] * p[j];
    return lam;
}

namespace {

// Backward through row-wise LayerNorm: accumulates ∂f/∂γ and ∂f/∂β into the
// flat gradient and returns ∂f/∂x.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormTrace& tr, MatrixView gamma,
                           double eps, std::span<double> d_gamma, std::span<double> d_beta) {
    const std::size_t t = dy.rows(), d = dy.cols();
    Matrix dx(t, d);
    Vector tilde(d);
    for (std::size_t i = 0; i < t; ++i) {
        const auto xh = tr.normalized.row(i);
        const auto g = dy.row(i);
        double mean_t = 0.0, mean_tx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            d_gamma[j] += g[j] * xh[j];
            d_beta[j] += g[j];
            tilde[j] = g[j] * gamma.data[j];
            mean_t += tilde[j];
            mean_tx += tilde[j] * xh[j];
        }
        mean_t /= static_cast<double>(d);
        mean_tx /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(tr.var[i] + eps);
        auto out = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) out[j] = inv * (tilde[j] - mean_t - mean_tx * xh[j]);
    }
    return dx;
}

std::span<double> grad_slot(Vector& grad, const TensorSlot& s) {
    return {grad.data() + s.offset, s.size()};
}

// grad(W) += scale · inputᵀ · upstream, for out = scale · input · W.
void weight_grad(Vector& grad, const TensorSlot& s, const Matrix& input, const Matrix& upstream) {
    add_matmul_tn(input, upstream, s.use_scale, grad_slot(grad, s));
}

// d_input += scale · upstream · Wᵀ.
void input_grad(Matrix& d_input, const Matrix& upstream, MatrixView w, double scale) {
    add_matmul_nt(upstream, w, scale, d_input.values());
}

} // namespace

BackpropState backward(const ForwardTrace& trace, const NetworkParams& params) {
    const auto& cfg = params.config();
    const auto& layout = params.layout();
    if (trace.param_count != params.size() || trace.blocks.size() != cfg.num_blocks ||
        trace.param_fingerprint != fingerprint(params.flat()))
        throw std::invalid_argument("backward: trace was produced by different parameters");

    BackpropState st;
    st.gradient.assign(params.size(), 0.0);
    Vector& grad = st.gradient;
    st.blocks.resize(cfg.num_blocks);

    const TensorSlot& rw = layout.slot(layout.readout_weight());
    const MatrixView w = params.tensor(layout.readout_weight());
    for (std::size_t j = 0; j < rw.size(); ++j) grad[rw.offset + j] = rw.use_scale * trace.pooled[j];
    grad[layout.slot(layout.readout_bias()).offset] = 1.0;
    st.d_pooled.resize(rw.size());
    for (std::size_t j = 0; j < rw.size(); ++j) st.d_pooled[j] = rw.use_scale * w.data[j];

    const std::size_t t = cfg.seq_len;
    const std::size_t n = cfg.width;
    const double c = 1.0 / static_cast<double>(n);
    Matrix dg(t, st.d_pooled.size());
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < dg.cols(); ++j) dg(i, j) = st.d_pooled[j] / static_cast<double>(t);

    const bool pre = cfg.layernorm_placement == NormPlacement::pre;
    for (std::size_t l = cfg.num_blocks; l-- > 0;) {
        const BlockTrace& tr = trace.blocks[l];
        const BlockSlots& bs = layout.block(l);
        BlockBackprop& bb = st.blocks[l];
        const auto& ffw = layout.slot(bs.ff_weight);

        // Feed-forward sublayer.
        Matrix d_stream;  // ∂f/∂z^l
        Matrix d_act;     // ∂f/∂φ(f^l)
        if (pre) {
            d_stream = dg;
            d_act = dg;
        } else {
            d_act = layer_norm_backward(dg, tr.norm2, params.tensor(bs.ln2_gamma), cfg.layernorm_eps,
                                        grad_slot(grad, layout.slot(bs.ln2_gamma)),
                                        grad_slot(grad, layout.slot(bs.ln2_beta)));
            d_stream = d_act;
        }
        bb.delta = Matrix(t, n);
        for (std::size_t i = 0; i < bb.delta.size(); ++i)
            bb.delta.data()[i] =
                d_act.data()[i] * activate_derivative(cfg.activation, tr.ff_preact.data()[i]);
        weight_grad(grad, ffw, tr.ff_input, bb.delta);
        auto db = grad_slot(grad, layout.slot(bs.ff_bias));
        for (std::size_t i = 0; i < t; ++i) axpy(1.0, bb.delta.row(i), db);
        if (pre) {
            Matrix d_ffin(t, n);
            input_grad(d_ffin, bb.delta, params.tensor(bs.ff_weight), ffw.use_scale);
            Matrix back = layer_norm_backward(d_ffin, tr.norm2, params.tensor(bs.ln2_gamma),
                                              cfg.layernorm_eps,
                                              grad_slot(grad, layout.slot(bs.ln2_gamma)),
                                              grad_slot(grad, layout.slot(bs.ln2_beta)));
            axpy(1.0, back.values(), d_stream.values());
        } else {
            input_grad(d_stream, bb.delta, params.tensor(bs.ff_weight), ffw.use_scale);
        }

        // Attention sublayer: d_stream is ∂f/∂z^l.
        Matrix d_att;  // ∂f/∂(residual sum) = ∂f/∂(concat · W^O)
        if (pre) {
            d_att = d_stream;
        } else {
            d_att = layer_norm_backward(d_stream, tr.norm1, params.tensor(bs.ln1_gamma),
                                        cfg.layernorm_eps, grad_slot(grad, layout.slot(bs.ln1_gamma)),
                                        grad_slot(grad, layout.slot(bs.ln1_beta)));
        }
        const std::size_t din = tr.input.cols();
        bb.d_input = tr.residual ? d_att : Matrix(t, din);

        const auto& os = layout.slot(bs.output);
        weight_grad(grad, os, tr.concat, d_att);
        Matrix d_concat(t, cfg.heads * n);
        input_grad(d_concat, d_att, params.tensor(bs.output), os.use_scale);

        Matrix d_ain(t, din);
        bb.d_probs.resize(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const HeadTrace& ht = tr.heads[h];
            Matrix d_a(t, n);
            for (std::size_t i = 0; i < t; ++i) {
                auto src = d_concat.row(i).subspan(h * n, n);
                std::copy(src.begin(), src.end(), d_a.row(i).begin());
            }
            Matrix& d_p = bb.d_probs[h];
            d_p = matmul_nt(d_a, ht.v);
            const Matrix d_v = matmul_tn(ht.probs, d_a);
            Matrix d_s(t, t);
            for (std::size_t i = 0; i < t; ++i) {
                const double inner = dot(ht.probs.row(i), d_p.row(i));
                for (std::size_t j = 0; j < t; ++j) d_s(i, j) = ht.probs(i, j) * (d_p(i, j) - inner);
            }
            Matrix d_q(t, n), d_k(t, n);
            add_matmul(d_s, ht.k, c, d_q.values());
            add_matmul_tn(d_s, ht.q, c, d_k.values());

            const auto& qs = layout.slot(bs.query[h]);
            const auto& ks = layout.slot(bs.key[h]);
            const auto& vs = layout.slot(bs.value[h]);
            weight_grad(grad, qs, tr.attention_input, d_q);
            weight_grad(grad, ks, tr.attention_input, d_k);
            weight_grad(grad, vs, tr.attention_input, d_v);
            input_grad(d_ain, d_q, params.tensor(bs.query[h]), qs.use_scale);
            input_grad(d_ain, d_k, params.tensor(bs.key[h]), ks.use_scale);
            input_grad(d_ain, d_v, params.tensor(bs.value[h]), vs.use_scale);
        }
        if (pre) {
            Matrix back = layer_norm_backward(d_ain, tr.norm1, params.tensor(bs.ln1_gamma),
                                              cfg.layernorm_eps,
                                              grad_slot(grad, layout.slot(bs.ln1_gamma)),
                                              grad_slot(grad, layout.slot(bs.ln1_beta)));
            axpy(1.0, back.values(), bb.d_input.values());
        } else {
            axpy(1.0, d_ain.values(), bb.d_input.values());
        }
        dg = bb.d_input;
    }
    return st;
}

Vector jacobian_row(const NetworkParams& params, const Matrix& x) {
    const ForwardResult fr = forward(params, x);
    BackpropState st = backward(fr.trace, params);
    for (std::size_t i = 0; i < st.gradient.size(); ++i) {
        if (!std::isfinite(st.gradient[i]))
            throw NumericalError("non-finite gradient in " + params.layout().slot_of(i).name);
    }
    return std::move(st.gradient);
}

Vector fd_jacobian(const NetworkParams& params, const Matrix& x, double h, std::size_t jobs) {
    if (!(h >= 1e-6 && h <= 1e-3)) throw std::invalid_argument("fd_jacobian: h must lie in [1e-6, 1e-3]");
    const std::size_t p = params.size();
    Vector out(p);
    jobs = std::max<std::size_t>(1, std::min(jobs, p));
    // One parameter copy per worker; coordinates are strided across workers.
    parallel_for(jobs, jobs, [&](std::size_t w) {
        NetworkParams local = params;
        auto flat = local.flat();
        for (std::size_t i = w; i < p; i += jobs) {
            const double orig = flat[i];
            const double step = h * std::max(1.0, std::abs(orig));
            const double hi = orig + step;
            const double lo = orig - step;
            flat[i] = hi;
            const double up = evaluate(local, x);
            flat[i] = lo;
            const double down = evaluate(local, x);
            flat[i] = orig;
            out[i] = (up - down) / (hi - lo);
        }
    });
    return out;
}

Matrix jacobian_matrix(const NetworkParams& params, std::span<const Matrix> inputs,
                       std::size_t jobs) {
    Matrix j(inputs.size(), params.size());
    parallel_for(inputs.size(), jobs, [&](std::size_t i) {
        const Vector row = jacobian_row(params, inputs[i]);
        std::copy(row.begin(), row.end(), j.row(i).begin());
    });
    return j;
}

GradientAgreement compare_gradients(std::span<const double> analytic, std::span<const double> reference,
                                    double floor) {
    if (analytic.size() != reference.size()) throw std::invalid_argument("compare_gradients: length mismatch");
    GradientAgreement g;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = std::abs(analytic[i] - reference[i]);
        if (std::abs(reference[i]) >= floor) {
            const double rel = d / std::abs(reference[i]);
            if (rel > g.max_rel_error) {
                g.max_rel_error = rel;
                g.worst_index = i;
            }
        } else {
            g.max_abs_error_small = std::max(g.max_abs_error_small, d);
        }
    }
    return g;
}

} // namespace ntkstop

#include "ntkstop/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

#include "ntkstop/parallel.hpp"
#include "ntkstop/rng.hpp"

namespace ntkstop {

std::string to_string(Activation a) {
    switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::softplus: return "softplus";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
    case Activation::square: return "square";
    }
    return "?";
}

std::string to_string(Parameterization p) {
    return p == Parameterization::standard ? "standard" : "ntk";
}

std::string to_string(NormPlacement p) { return p == NormPlacement::post ? "post" : "pre"; }

Activation parse_activation(std::string_view s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "softplus") return Activation::softplus;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    if (s == "square") return Activation::square;
    throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

Parameterization parse_parameterization(std::string_view s) {
    if (s == "standard") return Parameterization::standard;
    if (s == "ntk") return Parameterization::ntk;
    throw std::invalid_argument("unknown parameterization '" + std::string(s) + "'");
}

NormPlacement parse_norm_placement(std::string_view s) {
    if (s == "post") return NormPlacement::post;
    if (s == "pre") return NormPlacement::pre;
    throw std::invalid_argument("unknown layernorm placement '" + std::string(s) + "'");
}

double activate(Activation a, double x) {
    switch (a) {
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    case Activation::softplus: return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
    case Activation::square: return x * x;
    }
    return x;
}

double activate_derivative(Activation a, double x) {
    switch (a) {
    case Activation::gelu: {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        return cdf + x * pdf;
    }
    case Activation::softplus:
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
    }
    case Activation::identity: return 1.0;
    case Activation::square: return 2.0 * x;
    }
    return 1.0;
}

void NetworkConfig::validate() const {
    if (seq_len < 1) throw std::invalid_argument("seq_len must be >= 1");
    if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
    if (width < 1) throw std::invalid_argument("width must be >= 1");
    if (heads < 1) throw std::invalid_argument("heads must be >= 1");
    const auto& s = init_stddevs;
    for (double v : {s.sigma_q, s.sigma_k, s.sigma_v, s.sigma_o, s.sigma_w}) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("init_stddevs must be positive and finite");
    }
    if (!(layernorm_eps > 0.0) || !std::isfinite(layernorm_eps))
        throw std::invalid_argument("layernorm_eps must be positive");
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = nlohmann::json{
        {"seq_len", c.seq_len},
        {"input_dim", c.input_dim},
        {"width", c.width},
        {"heads", c.heads},
        {"num_blocks", c.num_blocks},
        {"activation", to_string(c.activation)},
        {"parameterization", to_string(c.parameterization)},
        {"init_stddevs",
         {{"sigma_q", c.init_stddevs.sigma_q},
          {"sigma_k", c.init_stddevs.sigma_k},
          {"sigma_v", c.init_stddevs.sigma_v},
          {"sigma_o", c.init_stddevs.sigma_o},
          {"sigma_w", c.init_stddevs.sigma_w}}},
        {"layernorm_eps", c.layernorm_eps},
        {"layernorm_placement", to_string(c.layernorm_placement)},
        {"causal_mask", c.causal_mask},
    };
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
    static const char* known[] = {"seq_len",          "input_dim",     "width",
                                  "heads",            "num_blocks",    "activation",
                                  "parameterization", "init_stddevs",  "layernorm_eps",
                                  "layernorm_placement", "causal_mask"};
    if (!j.is_object()) throw std::invalid_argument("network config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known))
            throw std::invalid_argument("unknown network config field '" + key + "'");
    }
    auto count = [&](const char* key, std::size_t fallback) -> std::size_t {
        if (!j.contains(key)) return fallback;
        const auto& v = j.at(key);
        if (!v.is_number_unsigned())
            throw std::invalid_argument(std::string("network config field '") + key + "' must be a nonnegative integer");
        return v.get<std::size_t>();
    };
    NetworkConfig out;
    out.seq_len = count("seq_len", out.seq_len);
    out.input_dim = count("input_dim", out.input_dim);
    out.width = count("width", out.width);
    out.heads = count("heads", out.heads);
    out.num_blocks = count("num_blocks", out.num_blocks);
    if (j.contains("activation")) out.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("parameterization"))
        out.parameterization = parse_parameterization(j.at("parameterization").get<std::string>());
    if (j.contains("init_stddevs")) {
        const auto& s = j.at("init_stddevs");
        out.init_stddevs.sigma_q = s.value("sigma_q", 1.0);
        out.init_stddevs.sigma_k = s.value("sigma_k", 1.0);
        out.init_stddevs.sigma_v = s.value("sigma_v", 1.0);
        out.init_stddevs.sigma_o = s.value("sigma_o", 1.0);
        out.init_stddevs.sigma_w = s.value("sigma_w", 1.0);
    }
    out.layernorm_eps = j.value("layernorm_eps", out.layernorm_eps);
    if (j.contains("layernorm_placement"))
        out.layernorm_placement = parse_norm_placement(j.at("layernorm_placement").get<std::string>());
    out.causal_mask = j.value("causal_mask", out.causal_mask);
    out.validate();
    c = out;
}

bool is_weight(TensorKind k) {
    switch (k) {
    case TensorKind::query:
    case TensorKind::key:
    case TensorKind::value:
    case TensorKind::output:
    case TensorKind::ff_weight:
    case TensorKind::readout_weight: return true;
    default: return false;
    }
}

ParamLayout::ParamLayout(const NetworkConfig& config) {
    config.validate();
    const bool ntk = config.parameterization == Parameterization::ntk;
    const std::size_t n = config.width;
    auto add = [&](std::string name, TensorKind kind, std::size_t block, std::size_t head,
                   std::size_t rows, std::size_t cols, double sigma, std::size_t fan_in) {
        TensorSlot s;
        s.name = std::move(name);
        s.kind = kind;
        s.block = block;
        s.head = head;
        s.rows = rows;
        s.cols = cols;
        s.offset = size_;
        if (is_weight(kind)) {
            const double sd = sigma / std::sqrt(static_cast<double>(fan_in));
            s.init_stddev = ntk ? 1.0 : sd;
            s.use_scale = ntk ? sd : 1.0;
        }
        size_ += s.size();
        slots_.push_back(std::move(s));
        return slots_.size() - 1;
    };
    const auto& sd = config.init_stddevs;
    for (std::size_t l = 0; l < config.num_blocks; ++l) {
        const std::size_t din = config.block_input_dim(l);
        const std::string pre = "block" + std::to_string(l) + ".";
        BlockSlots b;
        for (std::size_t h = 0; h < config.heads; ++h) {
            const std::string hp = pre + "head" + std::to_string(h) + ".";
            b.query.push_back(add(hp + "query", TensorKind::query, l, h, din, n, sd.sigma_q, din));
            b.key.push_back(add(hp + "key", TensorKind::key, l, h, din, n, sd.sigma_k, din));
            b.value.push_back(add(hp + "value", TensorKind::value, l, h, din, n, sd.sigma_v, din));
        }
        b.output = add(pre + "output", TensorKind::output, l, 0, config.heads * n, n, sd.sigma_o,
                       config.heads * n);
        b.ff_weight = add(pre + "ff.weight", TensorKind::ff_weight, l, 0, n, n, sd.sigma_w, n);
        b.ff_bias = add(pre + "ff.bias", TensorKind::ff_bias, l, 0, 1, n, 0.0, 1);
        // Post-norm normalizes the width-n residual stream; pre-norm normalizes
        // the block input.
        const std::size_t ln1 = config.layernorm_placement == NormPlacement::post ? n : din;
        b.ln1_gamma = add(pre + "ln1.gamma", TensorKind::ln_gamma, l, 0, 1, ln1, 0.0, 1);
        b.ln1_beta = add(pre + "ln1.beta", TensorKind::ln_beta, l, 0, 1, ln1, 0.0, 1);
        b.ln2_gamma = add(pre + "ln2.gamma", TensorKind::ln_gamma, l, 0, 1, n, 0.0, 1);
        b.ln2_beta = add(pre + "ln2.beta", TensorKind::ln_beta, l, 0, 1, n, 0.0, 1);
        blocks_.push_back(std::move(b));
    }
    const std::size_t dl = config.output_dim();
    readout_weight_ = add("readout.weight", TensorKind::readout_weight, config.num_blocks, 0, 1, dl,
                          sd.sigma_w, dl);
    readout_bias_ = add("readout.bias", TensorKind::readout_bias, config.num_blocks, 0, 1, 1, 0.0, 1);
}

const TensorSlot* ParamLayout::find(std::string_view name) const {
    for (const auto& s : slots_)
        if (s.name == name) return &s;
    return nullptr;
}

const TensorSlot& ParamLayout::slot_of(std::size_t flat_index) const {
    if (flat_index >= size_) throw std::out_of_range("flat index out of range");
    auto it = std::upper_bound(slots_.begin(), slots_.end(), flat_index,
                               [](std::size_t i, const TensorSlot& s) { return i < s.offset; });
    return *(it - 1);
}

NetworkParams::NetworkParams(NetworkConfig config)
    : config_(std::move(config)),
      layout_(std::make_shared<const ParamLayout>(config_)),
      flat_(layout_->size(), 0.0) {}

NetworkParams::NetworkParams(NetworkConfig config, std::vector<double> flat)
    : config_(std::move(config)),
      layout_(std::make_shared<const ParamLayout>(config_)),
      flat_(std::move(flat)) {
    if (flat_.size() != layout_->size())
        throw std::invalid_argument("parameter vector has " + std::to_string(flat_.size()) +
                                    " entries, architecture needs " +
                                    std::to_string(layout_->size()));
    for (std::size_t i = 0; i < flat_.size(); ++i) {
        if (!std::isfinite(flat_[i]))
            throw std::invalid_argument("non-finite parameter in " + layout_->slot_of(i).name);
    }
}

MatrixView NetworkParams::tensor(std::size_t slot) const {
    const auto& s = layout_->slot(slot);
    return {flat_.data() + s.offset, s.rows, s.cols};
}

MatrixView NetworkParams::tensor(std::string_view name) const {
    const TensorSlot* s = layout_->find(name);
    if (!s) throw std::invalid_argument("no tensor named '" + std::string(name) + "'");
    return {flat_.data() + s->offset, s->rows, s->cols};
}

std::span<double> NetworkParams::tensor_values(std::size_t slot) {
    const auto& s = layout_->slot(slot);
    return {flat_.data() + s.offset, s.size()};
}

std::span<double> NetworkParams::tensor_values(std::string_view name) {
    const TensorSlot* s = layout_->find(name);
    if (!s) throw std::invalid_argument("no tensor named '" + std::string(name) + "'");
    return {flat_.data() + s->offset, s->size()};
}

NetworkParams init_network(const NetworkConfig& config, std::uint64_t seed) {
    NetworkParams params(config);
    Rng rng(seed);
    auto flat = params.flat();
    for (const auto& s : params.layout().slots()) {
        auto out = flat.subspan(s.offset, s.size());
        if (is_weight(s.kind)) {
            for (double& v : out) v = s.init_stddev * rng.normal();
        } else if (s.kind == TensorKind::ln_gamma) {
            std::fill(out.begin(), out.end(), 1.0);
        }
    }
    return params;
}

std::uint64_t fingerprint(std::span<const double> values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        h ^= std::bit_cast<std::uint64_t>(v);
        h *= 0x100000001b3ULL;
        h ^= h >> 29;
    }
    return h;
}

Vector layer_norm(std::span<const double> x, std::span<const double> gamma,
                  std::span<const double> beta, double eps) {
    if (x.size() != gamma.size() || x.size() != beta.size())
        throw std::invalid_argument("layer_norm: length mismatch");
    const double d = static_cast<double>(x.size());
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= d;
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gamma[i] * (x[i] - mu) * inv + beta[i];
    return y;
}

namespace {

void check_finite(const Matrix& m, std::size_t block, const char* what) {
    for (double v : m.values()) {
        if (!std::isfinite(v))
            throw NumericalError("non-finite " + std::string(what) + " in block " +
                                 std::to_string(block));
    }
}

Matrix project(const Matrix& x, MatrixView w, double scale) {
    Matrix out(x.rows(), w.cols);
    add_matmul(x, w, scale, out.values());
    return out;
}

// Row-wise LayerNorm over a T×d matrix, filling `trace`.
Matrix layer_norm_rows(const Matrix& x, MatrixView gamma, MatrixView beta, double eps,
                       LayerNormTrace& trace) {
    const std::size_t t = x.rows(), d = x.cols();
    trace.mean.assign(t, 0.0);
    trace.var.assign(t, 0.0);
    trace.normalized = Matrix(t, d);
    Matrix y(t, d);
    for (std::size_t i = 0; i < t; ++i) {
        auto row = x.row(i);
        double mu = 0.0;
        for (double v : row) mu += v;
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mu) * (v - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        trace.mean[i] = mu;
        trace.var[i] = var;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mu) * inv;
            trace.normalized(i, j) = xh;
            y(i, j) = gamma.data[j] * xh + beta.data[j];
        }
    }
    return y;
}

void softmax_rows(const Matrix& scores, Matrix& probs, bool causal) {
    const std::size_t t = scores.rows();
    probs = Matrix(t, scores.cols());
    for (std::size_t i = 0; i < t; ++i) {
        const std::size_t last = causal ? i + 1 : scores.cols();
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < last; ++j) m = std::max(m, scores(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < last; ++j) {
            const double e = std::exp(scores(i, j) - m);
            probs(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < last; ++j) probs(i, j) /= z;
    }
}

} // namespace

AttentionOutput attention_block(const Matrix& g_prev, const NetworkParams& params,
                                std::size_t block) {
    const auto& cfg = params.config();
    const auto& layout = params.layout();
    const auto& bs = layout.block(block);
    const std::size_t t = g_prev.rows();
    const std::size_t n = cfg.width;
    const std::size_t din = cfg.block_input_dim(block);
    if (g_prev.cols() != din)
        throw std::invalid_argument("block " + std::to_string(block) + " expects input width " +
                                    std::to_string(din));
    check_finite(g_prev, block, "block input");

    AttentionOutput out;
    BlockTrace& tr = out.trace;
    tr.input = g_prev;
    tr.residual = din == n;
    const bool pre = cfg.layernorm_placement == NormPlacement::pre;
    if (pre) {
        tr.attention_input = layer_norm_rows(g_prev, params.tensor(bs.ln1_gamma),
                                             params.tensor(bs.ln1_beta), cfg.layernorm_eps, tr.norm1);
    } else {
        tr.attention_input = g_prev;
    }
    const Matrix& a_in = tr.attention_input;
    const double c = 1.0 / static_cast<double>(n);

    tr.concat = Matrix(t, cfg.heads * n);
    tr.heads.resize(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        HeadTrace& ht = tr.heads[h];
        ht.q = project(a_in, params.tensor(bs.query[h]), layout.slot(bs.query[h]).use_scale);
        ht.k = project(a_in, params.tensor(bs.key[h]), layout.slot(bs.key[h]).use_scale);
        ht.v = project(a_in, params.tensor(bs.value[h]), layout.slot(bs.value[h]).use_scale);
        ht.scores = Matrix(t, t);
        add_matmul_nt(ht.q, ht.k, c, ht.scores.values());
        check_finite(ht.scores, block, "attention score");
        softmax_rows(ht.scores, ht.probs, cfg.causal_mask);
        check_finite(ht.probs, block, "attention probability");
        ht.output = matmul(ht.probs, ht.v);
        for (std::size_t i = 0; i < t; ++i) {
            auto src = ht.output.row(i);
            std::copy(src.begin(), src.end(), tr.concat.row(i).begin() + h * n);
        }
    }
    tr.attention = project(tr.concat, params.tensor(bs.output), layout.slot(bs.output).use_scale);
    check_finite(tr.attention, block, "attention output");

    Matrix r = tr.attention;
    if (tr.residual) {
        for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] += g_prev.data()[i];
    }
    if (pre) {
        tr.stream = std::move(r);
    } else {
        tr.stream = layer_norm_rows(r, params.tensor(bs.ln1_gamma), params.tensor(bs.ln1_beta),
                                    cfg.layernorm_eps, tr.norm1);
    }
    out.output = tr.stream;
    return out;
}

Matrix feed_forward_block(const Matrix& z, const NetworkParams& params, std::size_t block,
                          BlockTrace& tr) {
    const auto& cfg = params.config();
    const auto& layout = params.layout();
    const auto& bs = layout.block(block);
    const bool pre = cfg.layernorm_placement == NormPlacement::pre;
    if (pre) {
        tr.ff_input = layer_norm_rows(z, params.tensor(bs.ln2_gamma), params.tensor(bs.ln2_beta),
                                      cfg.layernorm_eps, tr.norm2);
    } else {
        tr.ff_input = z;
    }
    tr.ff_preact = project(tr.ff_input, params.tensor(bs.ff_weight),
                           layout.slot(bs.ff_weight).use_scale);
    MatrixView bias = params.tensor(bs.ff_bias);
    for (std::size_t i = 0; i < tr.ff_preact.rows(); ++i) {
        auto row = tr.ff_preact.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias.data[j];
    }
    tr.ff_act = Matrix(tr.ff_preact.rows(), tr.ff_preact.cols());
    for (std::size_t i = 0; i < tr.ff_preact.size(); ++i)
        tr.ff_act.data()[i] = activate(cfg.activation, tr.ff_preact.data()[i]);
    check_finite(tr.ff_act, block, "feed-forward activation");

    Matrix r = tr.ff_act;
    for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] += z.data()[i];
    if (pre) {
        tr.output = std::move(r);
    } else {
        tr.output = layer_norm_rows(r, params.tensor(bs.ln2_gamma), params.tensor(bs.ln2_beta),
                                    cfg.layernorm_eps, tr.norm2);
    }
    check_finite(tr.output, block, "block output");
    return tr.output;
}

namespace {

ForwardResult run_forward(const NetworkParams& params, const Matrix& x, bool with_fingerprint) {
    const auto& cfg = params.config();
    if (x.rows() != cfg.seq_len || x.cols() != cfg.input_dim)
        throw std::invalid_argument("input must be " + std::to_string(cfg.seq_len) + "x" +
                                    std::to_string(cfg.input_dim));
    ForwardResult res;
    ForwardTrace& tr = res.trace;
    tr.input = x;
    tr.param_count = params.size();
    if (with_fingerprint) tr.param_fingerprint = fingerprint(params.flat());
    Matrix g = x;
    tr.blocks.reserve(cfg.num_blocks);
    for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
        AttentionOutput att = attention_block(g, params, l);
        g = feed_forward_block(att.output, params, l, att.trace);
        tr.blocks.push_back(std::move(att.trace));
    }
    const std::size_t t = g.rows();
    tr.pooled.assign(g.cols(), 0.0);
    for (std::size_t i = 0; i < t; ++i) axpy(1.0 / static_cast<double>(t), g.row(i), tr.pooled);
    const auto& layout = params.layout();
    const double scale = layout.slot(layout.readout_weight()).use_scale;
    const MatrixView w = params.tensor(layout.readout_weight());
    const double b = params.tensor(layout.readout_bias()).data[0];
    tr.output = scale * dot(w.row(0), tr.pooled) + b;
    if (!std::isfinite(tr.output)) throw NumericalError("non-finite network output");
    res.output = tr.output;
    return res;
}

} // namespace

ForwardResult forward(const NetworkParams& params, const Matrix& x) {
    return run_forward(params, x, true);
}

double evaluate(const NetworkParams& params, const Matrix& x) {
    return run_forward(params, x, false).output;
}

Vector evaluate_batch(const NetworkParams& params, std::span<const Matrix> inputs,
                      std::size_t jobs) {
    Vector out(inputs.size());
    parallel_for(inputs.size(), jobs, [&](std::size_t i) { out[i] = evaluate(params, inputs[i]); });
    return out;
}

} // namespace ntkstop

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ntkstop/linalg.hpp"

namespace ntkstop {

enum class Activation { gelu, softplus, tanh, identity, square };
enum class Parameterization { standard, ntk };
enum class NormPlacement { post, pre };

std::string to_string(Activation a);
std::string to_string(Parameterization p);
std::string to_string(NormPlacement p);
Activation parse_activation(std::string_view s);
Parameterization parse_parameterization(std::string_view s);
NormPlacement parse_norm_placement(std::string_view s);

double activate(Activation a, double x);
double activate_derivative(Activation a, double x);

struct InitStddevs {
    double sigma_q = 1.0;
    double sigma_k = 1.0;
    double sigma_v = 1.0;
    double sigma_o = 1.0;
    double sigma_w = 1.0;

    bool operator==(const InitStddevs&) const = default;
};

// Architecture of the decoder regression network. `width` is shared by the
// embedding dimension of every block and the attention scaling factor d^{l,G}.
struct NetworkConfig {
    std::size_t seq_len = 4;
    std::size_t input_dim = 4;
    std::size_t width = 32;
    std::size_t heads = 2;
    std::size_t num_blocks = 1;
    Activation activation = Activation::gelu;
    Parameterization parameterization = Parameterization::standard;
    InitStddevs init_stddevs;
    double layernorm_eps = 1e-5;
    NormPlacement layernorm_placement = NormPlacement::post;
    bool causal_mask = false;

    void validate() const;
    // Embedding dimension entering block `block` (0-based): input_dim for the
    // first block, width afterwards.
    std::size_t block_input_dim(std::size_t block) const {
        return block == 0 ? input_dim : width;
    }
    std::size_t output_dim() const { return num_blocks == 0 ? input_dim : width; }

    bool operator==(const NetworkConfig&) const = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

enum class TensorKind {
    query,
    key,
    value,
    output,
    ff_weight,
    ff_bias,
    ln_gamma,
    ln_beta,
    readout_weight,
    readout_bias,
};

bool is_weight(TensorKind k);

struct TensorSlot {
    std::string name;
    TensorKind kind;
    std::size_t block = 0;
    std::size_t head = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    double init_stddev = 0.0;  // stddev of the stored values at initialization
    double use_scale = 1.0;    // multiplier applied when the tensor is used

    std::size_t size() const { return rows * cols; }
};

struct BlockSlots {
    std::vector<std::size_t> query, key, value;
    std::size_t output = 0;
    std::size_t ff_weight = 0;
    std::size_t ff_bias = 0;
    std::size_t ln1_gamma = 0;
    std::size_t ln1_beta = 0;
    std::size_t ln2_gamma = 0;
    std::size_t ln2_beta = 0;
};

// Flat parameter ordering: blocks in depth order; within a block the
// query/key/value tensors of each head, then the output projection, the
// feed-forward weight and bias, the LayerNorm scales and shifts; the readout
// weight and bias come last.
class ParamLayout {
public:
    explicit ParamLayout(const NetworkConfig& config);

    const std::vector<TensorSlot>& slots() const { return slots_; }
    const TensorSlot& slot(std::size_t i) const { return slots_.at(i); }
    const BlockSlots& block(std::size_t l) const { return blocks_.at(l); }
    std::size_t num_blocks() const { return blocks_.size(); }
    std::size_t readout_weight() const { return readout_weight_; }
    std::size_t readout_bias() const { return readout_bias_; }
    std::size_t size() const { return size_; }

    const TensorSlot* find(std::string_view name) const;
    // Slot owning flat coordinate i.
    const TensorSlot& slot_of(std::size_t flat_index) const;

private:
    std::vector<TensorSlot> slots_;
    std::vector<BlockSlots> blocks_;
    std::size_t readout_weight_ = 0;
    std::size_t readout_bias_ = 0;
    std::size_t size_ = 0;
};

// All trainable weights, stored as one flat vector in ParamLayout order.
class NetworkParams {
public:
    explicit NetworkParams(NetworkConfig config);
    NetworkParams(NetworkConfig config, std::vector<double> flat);

    const NetworkConfig& config() const { return config_; }
    const ParamLayout& layout() const { return *layout_; }
    std::size_t size() const { return flat_.size(); }

    std::span<const double> flat() const { return flat_; }
    std::span<double> flat() { return flat_; }

    MatrixView tensor(std::size_t slot) const;
    MatrixView tensor(std::string_view name) const;
    std::span<double> tensor_values(std::size_t slot);
    std::span<double> tensor_values(std::string_view name);

    bool same_architecture(const NetworkParams& other) const {
        return config_ == other.config_;
    }
    bool operator==(const NetworkParams& other) const {
        return config_ == other.config_ && flat_ == other.flat_;
    }

private:
    NetworkConfig config_;
    std::shared_ptr<const ParamLayout> layout_;
    std::vector<double> flat_;
};

// Gaussian initialization: a weight with fan-in d and variance factor σ² is
// drawn as N(0, σ²/d) under standard parameterization; under NTK
// parameterization the stored tensor is N(0, 1) and σ/√d multiplies it at
// use. LayerNorm scales start at 1; shifts and biases start at 0.
NetworkParams init_network(const NetworkConfig& config, std::uint64_t seed);

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LayerNormTrace {
    Vector mean;        // per row
    Vector var;         // per row, population variance
    Matrix normalized;  // x̂
};

struct HeadTrace {
    Matrix q, k, v;
    Matrix scores;  // S_h = Q_h K_hᵀ / d^{l,G}
    Matrix probs;   // P_h = row-softmax(S_h)
    Matrix output;  // A_h = P_h V_h
};

struct BlockTrace {
    Matrix input;            // g^{l-1}
    Matrix attention_input;  // what the heads read: g^{l-1} (post-norm) or LN1(g^{l-1})
    std::vector<HeadTrace> heads;
    Matrix concat;     // [A_1, ..., A_H]
    Matrix attention;  // concat · W^{l,O}
    bool residual = false;
    LayerNormTrace norm1, norm2;
    Matrix stream;      // sublayer output z^l that feeds the feed-forward residual
    Matrix ff_input;    // z^l (post-norm) or LN2(z^l) (pre-norm)
    Matrix ff_preact;   // f^l
    Matrix ff_act;      // g = φ(f^l)
    Matrix output;      // block output
};

struct ForwardTrace {
    Matrix input;
    std::vector<BlockTrace> blocks;
    Vector pooled;
    double output = 0.0;
    std::size_t param_count = 0;
    std::uint64_t param_fingerprint = 0;
};

struct ForwardResult {
    double output = 0.0;
    ForwardTrace trace;
};

std::uint64_t fingerprint(std::span<const double> values);

// y = γ ⊙ (x − μ)/√(σ² + eps) + β with population variance σ².
Vector layer_norm(std::span<const double> x, std::span<const double> gamma,
                  std::span<const double> beta, double eps);

struct AttentionOutput {
    Matrix output;  // z^l
    BlockTrace trace;
};

// Multi-head attention sublayer of block `block` (0-based), including the
// residual connection and its LayerNorm.
AttentionOutput attention_block(const Matrix& g_prev, const NetworkParams& params,
                                std::size_t block);
// Feed-forward sublayer on z^l; completes `trace` and returns g^l.
Matrix feed_forward_block(const Matrix& z, const NetworkParams& params, std::size_t block,
                          BlockTrace& trace);

// Scalar output: blocks, then mean-pooling over the T positions, then the
// linear readout. Throws NumericalError on a non-finite intermediate.
ForwardResult forward(const NetworkParams& params, const Matrix& x);
// Output only.
double evaluate(const NetworkParams& params, const Matrix& x);
Vector evaluate_batch(const NetworkParams& params, std::span<const Matrix> inputs,
                      std::size_t jobs = 1);

nlohmann::json load_json_file(const std::filesystem::path& path);
NetworkConfig load_config(const std::filesystem::path& path);
void save_config(const NetworkConfig& config, const std::filesystem::path& path);

// Binary parameter file: "NTKP", u32 version, u32 tensor count, then per
// tensor (u32 name length, name bytes, u32 rows, u32 cols), then every value
// in flat order as a little-endian IEEE-754 double.
void save_params(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_params(const NetworkConfig& config, const std::filesystem::path& path);

} // namespace ntkstop

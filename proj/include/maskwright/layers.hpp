#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maskwright/tensor.hpp"

namespace maskwright {

enum class LayerKind {
    dense,
    conv2d,
    conv1d,
    gru,
    bigru,
    embedding,
    batchnorm,
    upsample2x,
    residual_block,
    activation,
    mean_over_time,
    sum_over_time,
    reshape,
    transpose,
    pool2x,
    global_pool,
    dropout,
};

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& text);

enum class Activation { identity, tanh, relu, selu, sigmoid, softplus };

std::string to_string(Activation a);
Activation parse_activation(const std::string& text);

// A layer description: kind, a model-unique name that prefixes its parameter
// names, and kind-specific hyperparameters stored as text.
//
// Hyperparameters by kind (all integers positive):
//   dense           in, units, activation, optional bias (true|false)
//   conv2d/conv1d   in, filters, kernel, activation, padding (same|valid)
//   gru/bigru       in, hidden
//   embedding       vocab, dim
//   batchnorm       features
//   residual_block  in, filters, kernel, layers, activation, dims (1|2)
//   activation      fn
//   reshape         shape (per-example dims, comma separated)
//   pool2x          mode (max|mean)
//   global_pool     mode (max|mean)
//   dropout         rate in [0,1)
//   upsample2x, mean_over_time, sum_over_time, transpose: none
struct LayerSpec {
    LayerKind kind = LayerKind::activation;
    std::string name;
    std::map<std::string, std::string> hyper;

    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;

    // "kind name=<name> key=value ..." with keys in sorted order.
    std::string to_line() const;
    static LayerSpec parse(const std::string& line);

    bool operator==(const LayerSpec&) const = default;
};

// Throws ConfigError when a required hyperparameter is missing or invalid.
void validate_layer(const LayerSpec& spec);

// Per-example output shape for a per-example input shape (batch axis
// excluded). Throws SizeError when the input violates the layer contract.
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

// Parameter names owned by the layer, in creation order.
std::vector<std::string> layer_param_names(const LayerSpec& spec);

bool is_buffer_name(const std::string& param_name);

enum class Mode { train, infer };

class ModelGraph {
public:
    std::vector<LayerSpec> layers;
    std::map<std::string, Tensor> params;
    std::map<std::string, bool> trainable;
    // Free-form metadata persisted with the model (task kind, split point...).
    std::map<std::string, std::string> meta;
    Mode mode = Mode::infer;

    // Validates the layers and initializes every parameter from `seed`.
    static ModelGraph build(std::vector<LayerSpec> layers, std::uint64_t seed);

    Shape output_shape(const Shape& input) const;
    std::vector<std::string> param_names() const;
    // Trainable (non-buffer) parameters in deterministic name order.
    std::vector<std::pair<std::string, Tensor>> trainable_params() const;
    const Tensor& param(const std::string& name) const;
    void set_trainable(const std::string& name, bool on);

    // Reseeds the generator used by stochastic layers in train mode.
    void reseed(std::uint64_t seed) { rng_.seed(seed); }
    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_{0};
};

// Sets every parameter's trainable flag (buffers always stay non-trainable).
void freeze_parameters(ModelGraph& model, bool frozen);

// ---- layer-level forward functions ---------------------------------------------

Tensor apply_activation(Activation kind, const Tensor& x);

// act(x W + b); x may carry extra leading axes, W applies to the last one.
Tensor forward_dense(const Tensor& x, const Tensor& weight, const Tensor& bias, Activation act);

// Gate order inside the stacked tensors is (update z, reset r, candidate).
struct GruParams {
    Tensor input_weight;      // [d, 3h]
    Tensor recurrent_weight;  // [h, 3h]
    Tensor bias;              // [3h]
};

// x: [T,d] with h0 [h] -> [T,h], or batched x: [B,T,d] with h0 [B,h] -> [B,T,h].
Tensor forward_gru(const Tensor& x, const Tensor& h0, const GruParams& params);
// Concatenates the forward pass and the re-reversed pass over reverse(x).
Tensor forward_bigru(const Tensor& x, const GruParams& forward_params, const GruParams& backward_params);

Tensor forward_embedding(const Tensor& ids, const Tensor& table);

struct BatchNormState {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// x: [n,d] (statistics over n) or [n,C,...] (statistics per channel over all
// other axes). Train mode updates the running statistics in place.
Tensor forward_batchnorm(const Tensor& x, BatchNormState& state, Mode mode);

Tensor forward_upsample2x(const Tensor& x);

struct ConvParams {
    Tensor kernel;
    Tensor bias;
};

// Runs the conv stack; output = act(z_first + z_last) where z_i are the
// pre-activation outputs and inner layers feed act(z_i) forward.
Tensor forward_residual_block(const Tensor& x, const std::vector<ConvParams>& convs, Activation act, int dims);

// Applies layers [begin, end) to a batched input (leading batch axis).
Tensor graph_forward_range(ModelGraph& model, const Tensor& x, std::size_t begin, std::size_t end);
Tensor graph_forward(ModelGraph& model, const Tensor& x);

}  // namespace maskwright

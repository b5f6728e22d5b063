#include "maskwright/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "maskwright/error.hpp"

namespace maskwright {

namespace {

struct KindName {
    LayerKind kind;
    const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::dense, "dense"},
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::conv1d, "conv1d"},
    {LayerKind::gru, "gru"},
    {LayerKind::bigru, "bigru"},
    {LayerKind::embedding, "embedding"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::upsample2x, "upsample2x"},
    {LayerKind::residual_block, "residual_block"},
    {LayerKind::activation, "activation"},
    {LayerKind::mean_over_time, "mean_over_time"},
    {LayerKind::sum_over_time, "sum_over_time"},
    {LayerKind::reshape, "reshape"},
    {LayerKind::transpose, "transpose"},
    {LayerKind::pool2x, "pool2x"},
    {LayerKind::global_pool, "global_pool"},
    {LayerKind::dropout, "dropout"},
};

struct ActivationName {
    Activation act;
    const char* name;
};

constexpr ActivationName kActivationNames[] = {
    {Activation::identity, "identity"}, {Activation::tanh, "tanh"},       {Activation::relu, "relu"},
    {Activation::selu, "selu"},         {Activation::sigmoid, "sigmoid"}, {Activation::softplus, "softplus"},
};

Shape parse_dims(const std::string& text) {
    Shape dims;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(part, &used);
            if (used != part.size() || v < 1) throw ConfigError("");
            dims.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("invalid dimension list '" + text + "'");
        }
    }
    if (dims.empty()) throw ConfigError("empty dimension list");
    return dims;
}

bool has_bias(const LayerSpec& s) { return s.get_or("bias", "true") != "false"; }

// Parameter name, shape and Glorot fan sizes (0 fans mean "not random").
struct ParamDecl {
    std::string name;
    Shape shape;
    int fan_in = 0;
    int fan_out = 0;
    double constant = 0.0;
};

std::vector<ParamDecl> declare_params(const LayerSpec& s) {
    const std::string& n = s.name;
    std::vector<ParamDecl> out;
    switch (s.kind) {
        case LayerKind::dense: {
            const int in = s.get_int("in"), units = s.get_int("units");
            out.push_back({n + ".weight", {in, units}, in, units});
            if (has_bias(s)) out.push_back({n + ".bias", {units}});
            break;
        }
        case LayerKind::conv2d:
        case LayerKind::conv1d: {
            const int in = s.get_int("in"), f = s.get_int("filters"), k = s.get_int("kernel");
            const int area = s.kind == LayerKind::conv2d ? k * k : k;
            Shape shape = s.kind == LayerKind::conv2d ? Shape{f, in, k, k} : Shape{f, in, k};
            out.push_back({n + ".kernel", shape, in * area, f * area});
            out.push_back({n + ".bias", {f}});
            break;
        }
        case LayerKind::gru:
        case LayerKind::bigru: {
            const int in = s.get_int("in"), h = s.get_int("hidden");
            std::vector<std::string> dirs = s.kind == LayerKind::gru ? std::vector<std::string>{n}
                                                                      : std::vector<std::string>{n + ".fwd", n + ".bwd"};
            for (const auto& d : dirs) {
                out.push_back({d + ".W", {in, 3 * h}, in, 3 * h});
                out.push_back({d + ".U", {h, 3 * h}, h, 3 * h});
                out.push_back({d + ".b", {3 * h}});
            }
            break;
        }
        case LayerKind::embedding: {
            const int v = s.get_int("vocab"), d = s.get_int("dim");
            out.push_back({n + ".table", {v, d}, v, d});
            break;
        }
        case LayerKind::batchnorm: {
            const int f = s.get_int("features");
            out.push_back({n + ".gamma", {f}, 0, 0, 1.0});
            out.push_back({n + ".beta", {f}});
            out.push_back({n + ".running_mean", {f}});
            out.push_back({n + ".running_var", {f}, 0, 0, 1.0});
            break;
        }
        case LayerKind::residual_block: {
            const int in = s.get_int("in"), f = s.get_int("filters"), k = s.get_int("kernel");
            const int layers = s.get_int("layers"), dims = s.get_int("dims");
            const int area = dims == 2 ? k * k : k;
            for (int i = 0; i < layers; ++i) {
                const int cin = i == 0 ? in : f;
                const std::string p = n + ".conv" + std::to_string(i);
                Shape shape = dims == 2 ? Shape{f, cin, k, k} : Shape{f, cin, k};
                out.push_back({p + ".kernel", shape, cin * area, f * area});
                out.push_back({p + ".bias", {f}});
            }
            break;
        }
        default: break;
    }
    return out;
}

void require_keys(const LayerSpec& s, std::initializer_list<const char*> keys) {
    for (const char* k : keys)
        if (!s.hyper.count(k))
            throw ConfigError("layer '" + s.name + "' (" + to_string(s.kind) + ") missing hyperparameter '" + k + "'");
}

void require_positive(const LayerSpec& s, std::initializer_list<const char*> keys) {
    require_keys(s, keys);
    for (const char* k : keys)
        if (s.get_int(k) < 1)
            throw ConfigError("layer '" + s.name + "': hyperparameter '" + k + "' must be positive");
}

Tensor conv_with_bias(const Tensor& x, const Tensor& kernel, const Tensor& bias, int dims, Padding padding) {
    Tensor y = dims == 2 ? conv2d(x, kernel, padding) : conv1d(x, kernel, padding);
    return add_along(y, bias, y.rank() - (dims + 1));
}

Padding parse_padding(const std::string& text) {
    if (text == "same") return Padding::same;
    if (text == "valid") return Padding::valid;
    throw ConfigError("unknown padding '" + text + "'");
}

Pool parse_pool(const std::string& text) {
    if (text == "max") return Pool::max;
    if (text == "mean") return Pool::mean;
    throw ConfigError("unknown pooling mode '" + text + "'");
}

Shape per_example(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

Shape with_batch(int batch, const Shape& s) {
    Shape out{batch};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

GruParams gru_params(ModelGraph& m, const std::string& prefix) {
    return {m.param(prefix + ".W"), m.param(prefix + ".U"), m.param(prefix + ".b")};
}

Tensor layer_forward(ModelGraph& model, const LayerSpec& s, const Tensor& x) {
    const int batch = x.dim(0);
    // Shape contract first so errors name the layer rather than an inner op.
    const Shape expected = layer_output_shape(s, per_example(x));
    Tensor y;
    switch (s.kind) {
        case LayerKind::dense:
            y = forward_dense(x, model.param(s.name + ".weight"),
                              has_bias(s) ? model.param(s.name + ".bias") : Tensor::zeros({s.get_int("units")}),
                              parse_activation(s.get("activation")));
            break;
        case LayerKind::conv2d:
        case LayerKind::conv1d: {
            const int dims = s.kind == LayerKind::conv2d ? 2 : 1;
            y = apply_activation(parse_activation(s.get("activation")),
                                 conv_with_bias(x, model.param(s.name + ".kernel"), model.param(s.name + ".bias"),
                                                dims, parse_padding(s.get_or("padding", "same"))));
            break;
        }
        case LayerKind::gru: {
            const int h = s.get_int("hidden");
            y = forward_gru(x, Tensor::zeros({batch, h}), gru_params(model, s.name));
            break;
        }
        case LayerKind::bigru:
            y = forward_bigru(x, gru_params(model, s.name + ".fwd"), gru_params(model, s.name + ".bwd"));
            break;
        case LayerKind::embedding: y = forward_embedding(x, model.param(s.name + ".table")); break;
        case LayerKind::batchnorm: {
            BatchNormState st{model.param(s.name + ".gamma"), model.param(s.name + ".beta"),
                              model.param(s.name + ".running_mean"), model.param(s.name + ".running_var")};
            y = forward_batchnorm(x, st, model.mode);
            break;
        }
        case LayerKind::upsample2x: y = forward_upsample2x(x); break;
        case LayerKind::residual_block: {
            std::vector<ConvParams> convs;
            for (int i = 0; i < s.get_int("layers"); ++i) {
                const std::string p = s.name + ".conv" + std::to_string(i);
                convs.push_back({model.param(p + ".kernel"), model.param(p + ".bias")});
            }
            y = forward_residual_block(x, convs, parse_activation(s.get("activation")), s.get_int("dims"));
            break;
        }
        case LayerKind::activation: y = apply_activation(parse_activation(s.get("fn")), x); break;
        case LayerKind::mean_over_time: y = reduce(Reduce::mean, x, {1}); break;
        case LayerKind::sum_over_time: y = reduce(Reduce::sum, x, {1}); break;
        case LayerKind::reshape: y = maskwright::reshape(x, with_batch(batch, expected)); break;
        case LayerKind::transpose: y = swap_axes(x, 1, 2); break;
        case LayerKind::pool2x: y = pool2x(x, parse_pool(s.get("mode"))); break;
        case LayerKind::global_pool: {
            std::vector<int> axes;
            for (int a = 2; a < x.rank(); ++a) axes.push_back(a);
            y = reduce(s.get("mode") == "max" ? Reduce::max : Reduce::mean, x, axes);
            break;
        }
        case LayerKind::dropout: {
            const double rate = s.get_double("rate");
            if (model.mode == Mode::infer || rate == 0.0) {
                y = x;
                break;
            }
            // Whole timesteps are dropped; survivors are rescaled by 1/(1-rate).
            const int steps = x.dim(1);
            std::bernoulli_distribution keep(1.0 - rate);
            std::vector<double> mask(static_cast<std::size_t>(batch) * steps);
            for (auto& v : mask) v = keep(model.rng()) ? 1.0 / (1.0 - rate) : 0.0;
            const Tensor m = Tensor::from({batch, steps}, std::move(mask));
            const Shape flat{batch, steps, static_cast<int>(x.numel() / (static_cast<std::size_t>(batch) * steps))};
            y = maskwright::reshape(mul_broadcast(maskwright::reshape(x, flat), m, 2), x.shape());
            break;
        }
    }
    if (per_example(y) != expected)
        throw SizeError("layer '" + s.name + "' produced " + shape_str(per_example(y)) + ", expected " +
                        shape_str(expected));
    return y;
}

}  // namespace

// ---- names ----------------------------------------------------------------------

std::string to_string(LayerKind kind) {
    for (const auto& k : kKindNames)
        if (k.kind == kind) return k.name;
    return "unknown";
}

LayerKind parse_layer_kind(const std::string& text) {
    for (const auto& k : kKindNames)
        if (text == k.name) return k.kind;
    throw ConfigError("unknown layer kind '" + text + "'");
}

std::string to_string(Activation a) {
    for (const auto& k : kActivationNames)
        if (k.act == a) return k.name;
    return "unknown";
}

Activation parse_activation(const std::string& text) {
    for (const auto& k : kActivationNames)
        if (text == k.name) return k.act;
    throw ConfigError("unknown activation '" + text + "'");
}

// ---- LayerSpec --------------------------------------------------------------------

const std::string& LayerSpec::get(const std::string& key) const {
    auto it = hyper.find(key);
    if (it == hyper.end()) throw ConfigError("layer '" + name + "' missing hyperparameter '" + key + "'");
    return it->second;
}

std::string LayerSpec::get_or(const std::string& key, const std::string& fallback) const {
    auto it = hyper.find(key);
    return it == hyper.end() ? fallback : it->second;
}

int LayerSpec::get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError("layer '" + name + "': '" + key + "' is not an integer: " + v);
}

double LayerSpec::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError("layer '" + name + "': '" + key + "' is not a number: " + v);
}

std::string LayerSpec::to_line() const {
    std::string line = to_string(kind) + " name=" + name;
    for (const auto& [k, v] : hyper) line += " " + k + "=" + v;
    return line;
}

LayerSpec LayerSpec::parse(const std::string& line) {
    std::istringstream is(line);
    std::string word;
    if (!(is >> word)) throw ConfigError("empty layer description");
    LayerSpec spec;
    spec.kind = parse_layer_kind(word);
    while (is >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value in layer line, got '" + word + "'");
        const std::string key = word.substr(0, eq), value = word.substr(eq + 1);
        if (key == "name")
            spec.name = value;
        else
            spec.hyper[key] = value;
    }
    return spec;
}

void validate_layer(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::dense:
            require_positive(s, {"in", "units"});
            require_keys(s, {"activation"});
            parse_activation(s.get("activation"));
            if (const auto b = s.get_or("bias", "true"); b != "true" && b != "false")
                throw ConfigError("layer '" + s.name + "': bias must be true or false");
            break;
        case LayerKind::conv2d:
        case LayerKind::conv1d:
            require_positive(s, {"in", "filters", "kernel"});
            require_keys(s, {"activation"});
            parse_activation(s.get("activation"));
            if (parse_padding(s.get_or("padding", "same")) == Padding::same && s.get_int("kernel") % 2 == 0)
                throw ConfigError("layer '" + s.name + "': same padding needs an odd kernel");
            break;
        case LayerKind::gru:
        case LayerKind::bigru: require_positive(s, {"in", "hidden"}); break;
        case LayerKind::embedding: require_positive(s, {"vocab", "dim"}); break;
        case LayerKind::batchnorm: require_positive(s, {"features"}); break;
        case LayerKind::residual_block: {
            require_positive(s, {"in", "filters", "kernel", "layers", "dims"});
            require_keys(s, {"activation"});
            parse_activation(s.get("activation"));
            const int dims = s.get_int("dims");
            if (dims != 1 && dims != 2) throw ConfigError("layer '" + s.name + "': dims must be 1 or 2");
            if (s.get_int("kernel") % 2 == 0) throw ConfigError("layer '" + s.name + "': residual kernels must be odd");
            break;
        }
        case LayerKind::activation:
            require_keys(s, {"fn"});
            parse_activation(s.get("fn"));
            break;
        case LayerKind::reshape:
            require_keys(s, {"shape"});
            parse_dims(s.get("shape"));
            break;
        case LayerKind::pool2x:
        case LayerKind::global_pool:
            require_keys(s, {"mode"});
            parse_pool(s.get("mode"));
            break;
        case LayerKind::dropout: {
            require_keys(s, {"rate"});
            const double r = s.get_double("rate");
            if (!(r >= 0.0 && r < 1.0)) throw ConfigError("layer '" + s.name + "': dropout rate must be in [0,1)");
            break;
        }
        case LayerKind::upsample2x:
        case LayerKind::mean_over_time:
        case LayerKind::sum_over_time:
        case LayerKind::transpose: break;
    }
}

Shape layer_output_shape(const LayerSpec& s, const Shape& in) {
    auto fail = [&](const std::string& why) -> SizeError {
        return SizeError("layer '" + s.name + "' (" + to_string(s.kind) + "): input " + shape_str(in) + " " + why);
    };
    switch (s.kind) {
        case LayerKind::dense: {
            if (in.empty() || in.back() != s.get_int("in")) throw fail("needs last dim " + s.get("in"));
            Shape out = in;
            out.back() = s.get_int("units");
            return out;
        }
        case LayerKind::conv2d:
        case LayerKind::conv1d: {
            const int dims = s.kind == LayerKind::conv2d ? 2 : 1;
            if (static_cast<int>(in.size()) != dims + 1 || in[0] != s.get_int("in"))
                throw fail("needs " + std::string(dims == 2 ? "[C,H,W]" : "[C,T]") + " with C=" + s.get("in"));
            const int k = s.get_int("kernel");
            const bool same = parse_padding(s.get_or("padding", "same")) == Padding::same;
            Shape out{s.get_int("filters")};
            for (int d = 1; d <= dims; ++d) {
                const int o = same ? in[d] : in[d] - k + 1;
                if (o < 1) throw fail("is smaller than the kernel");
                out.push_back(o);
            }
            return out;
        }
        case LayerKind::gru:
        case LayerKind::bigru: {
            if (in.size() != 2 || in[1] != s.get_int("in")) throw fail("needs [T," + s.get("in") + "]");
            return {in[0], s.get_int("hidden") * (s.kind == LayerKind::bigru ? 2 : 1)};
        }
        case LayerKind::embedding: {
            Shape out = in;
            out.push_back(s.get_int("dim"));
            return out;
        }
        case LayerKind::batchnorm:
            if (in.empty() || in[0] != s.get_int("features")) throw fail("needs leading dim " + s.get("features"));
            return in;
        case LayerKind::upsample2x: {
            if (in.size() < 2) throw fail("needs rank >= 2");
            Shape out = in;
            out[out.size() - 1] *= 2;
            out[out.size() - 2] *= 2;
            return out;
        }
        case LayerKind::residual_block: {
            const int dims = s.get_int("dims");
            if (static_cast<int>(in.size()) != dims + 1 || in[0] != s.get_int("in"))
                throw fail("needs channel-first input with C=" + s.get("in"));
            Shape out = in;
            out[0] = s.get_int("filters");
            return out;
        }
        case LayerKind::activation: return in;
        case LayerKind::mean_over_time:
        case LayerKind::sum_over_time:
            if (in.size() < 2) throw fail("needs [T,...]");
            return Shape(in.begin() + 1, in.end());
        case LayerKind::reshape: {
            Shape out = parse_dims(s.get("shape"));
            if (shape_numel(out) != shape_numel(in)) throw fail("cannot be reshaped to " + s.get("shape"));
            return out;
        }
        case LayerKind::transpose:
            if (in.size() != 2) throw fail("needs rank 2");
            return {in[1], in[0]};
        case LayerKind::pool2x: {
            if (in.size() < 2 || in[in.size() - 1] % 2 || in[in.size() - 2] % 2) throw fail("needs even spatial dims");
            Shape out = in;
            out[out.size() - 1] /= 2;
            out[out.size() - 2] /= 2;
            return out;
        }
        case LayerKind::global_pool:
            if (in.size() < 2) throw fail("needs [C,...]");
            return {in[0]};
        case LayerKind::dropout:
            if (in.size() < 2) throw fail("needs [T,...]");
            return in;
    }
    throw fail("unsupported layer");
}

std::vector<std::string> layer_param_names(const LayerSpec& spec) {
    std::vector<std::string> names;
    for (const auto& d : declare_params(spec)) names.push_back(d.name);
    return names;
}

bool is_buffer_name(const std::string& n) {
    auto ends_with = [&](const std::string& suffix) {
        return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return ends_with(".running_mean") || ends_with(".running_var");
}

// ---- ModelGraph -------------------------------------------------------------------

ModelGraph ModelGraph::build(std::vector<LayerSpec> layers, std::uint64_t seed) {
    ModelGraph m;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& s = layers[i];
        if (s.name.empty()) s.name = "l" + std::to_string(i) + "_" + to_string(s.kind);
        validate_layer(s);
        for (const auto& prior : m.layers)
            if (prior.name == s.name) throw ConfigError("duplicate layer name '" + s.name + "'");
        for (const auto& d : declare_params(s)) {
            std::vector<double> v(shape_numel(d.shape), d.constant);
            if (d.fan_in > 0) {
                const double limit = std::sqrt(6.0 / (d.fan_in + d.fan_out));
                std::uniform_real_distribution<double> dist(-limit, limit);
                for (auto& x : v) x = dist(rng);
            }
            const bool train = !is_buffer_name(d.name);
            m.params[d.name] = Tensor::from(d.shape, std::move(v), train);
            m.trainable[d.name] = train;
        }
        m.layers.push_back(s);
    }
    m.rng_.seed(seed ^ 0x9E3779B97F4A7C15ULL);
    return m;
}

Shape ModelGraph::output_shape(const Shape& input) const {
    Shape s = input;
    for (const auto& l : layers) s = layer_output_shape(l, s);
    return s;
}

std::vector<std::string> ModelGraph::param_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params) out.push_back(name);
    return out;
}

std::vector<std::pair<std::string, Tensor>> ModelGraph::trainable_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : params)
        if (trainable.at(name)) out.emplace_back(name, t);
    return out;
}

const Tensor& ModelGraph::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model has no parameter '" + name + "'");
    return it->second;
}

void ModelGraph::set_trainable(const std::string& name, bool on) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("model has no parameter '" + name + "'");
    const bool value = on && !is_buffer_name(name);
    trainable[name] = value;
    it->second.set_requires_grad(value);
}

void freeze_parameters(ModelGraph& model, bool frozen) {
    for (const auto& name : model.param_names()) model.set_trainable(name, !frozen);
}

// ---- forward functions ------------------------------------------------------------

Tensor apply_activation(Activation kind, const Tensor& x) {
    switch (kind) {
        case Activation::identity: return x;
        case Activation::tanh: return tanh(x);
        case Activation::relu: return relu(x);
        case Activation::selu: return selu(x);
        case Activation::sigmoid: return sigmoid(x);
        case Activation::softplus: return softplus(x);
    }
    throw ConfigError("unknown activation");
}

Tensor forward_dense(const Tensor& x, const Tensor& weight, const Tensor& bias, Activation act) {
    if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(1))
        throw SizeError("dense: weight " + shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()) +
                        " disagree");
    if (x.dim(-1) != weight.dim(0))
        throw SizeError("dense: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
    const int d_in = weight.dim(0), d_out = weight.dim(1);
    const int rows = static_cast<int>(x.numel() / d_in);
    Tensor flat = x.rank() == 2 ? x : reshape(x, {rows, d_in});
    Tensor y = add_along(matmul(flat, weight), bias, 1);
    if (x.rank() != 2) {
        Shape out = x.shape();
        out.back() = d_out;
        y = reshape(y, out);
    }
    return apply_activation(act, y);
}

Tensor forward_gru(const Tensor& x, const Tensor& h0, const GruParams& p) {
    if (x.rank() == 2) {
        if (h0.rank() != 1) throw SizeError("gru: unbatched input needs h0 of shape [h]");
        Tensor y = forward_gru(reshape(x, {1, x.dim(0), x.dim(1)}), reshape(h0, {1, h0.dim(0)}), p);
        return reshape(y, {x.dim(0), y.dim(2)});
    }
    if (x.rank() != 3) throw SizeError("gru: expected [T,d] or [B,T,d], got " + shape_str(x.shape()));
    const int batch = x.dim(0), steps = x.dim(1), d = x.dim(2);
    const int h = p.recurrent_weight.dim(0);
    if (p.input_weight.shape() != Shape{d, 3 * h} || p.recurrent_weight.shape() != Shape{h, 3 * h} ||
        p.bias.shape() != Shape{3 * h})
        throw SizeError("gru: parameter shapes do not match input width " + std::to_string(d) + " and hidden " +
                        std::to_string(h));
    if (h0.shape() != Shape{batch, h}) throw SizeError("gru: h0 must be [B,h], got " + shape_str(h0.shape()));

    // Input projections for every step at once: [B*T, 3h].
    const Tensor projected = reshape(add_along(matmul(reshape(x, {batch * steps, d}), p.input_weight), p.bias, 1),
                                     {batch, steps, 3 * h});
    const Tensor u_gates = slice(p.recurrent_weight, 1, 0, 2 * h);
    const Tensor u_cand = slice(p.recurrent_weight, 1, 2 * h, h);

    Tensor state = h0;
    std::vector<Tensor> outputs;
    outputs.reserve(steps);
    for (int t = 0; t < steps; ++t) {
        const Tensor xt = reshape(slice(projected, 1, t, 1), {batch, 3 * h});
        const Tensor gates = sigmoid(add(slice(xt, 1, 0, 2 * h), matmul(state, u_gates)));
        const Tensor z = slice(gates, 1, 0, h);
        const Tensor r = slice(gates, 1, h, h);
        const Tensor cand = tanh(add(slice(xt, 1, 2 * h, h), matmul(mul(r, state), u_cand)));
        state = add(mul(add_scalar(neg(z), 1.0), state), mul(z, cand));
        outputs.push_back(reshape(state, {batch, 1, h}));
    }
    return concat(outputs, 1);
}

Tensor forward_bigru(const Tensor& x, const GruParams& fwd, const GruParams& bwd) {
    const bool batched = x.rank() == 3;
    const Tensor xb = batched ? x : reshape(x, {1, x.dim(0), x.dim(1)});
    const int batch = xb.dim(0);
    const Tensor forward_out = forward_gru(xb, Tensor::zeros({batch, fwd.recurrent_weight.dim(0)}), fwd);
    const Tensor backward_out =
        reverse(forward_gru(reverse(xb, 1), Tensor::zeros({batch, bwd.recurrent_weight.dim(0)}), bwd), 1);
    const Tensor y = concat({forward_out, backward_out}, 2);
    return batched ? y : reshape(y, {y.dim(1), y.dim(2)});
}

Tensor forward_embedding(const Tensor& ids, const Tensor& table) { return embedding(ids, table); }

Tensor forward_batchnorm(const Tensor& x, BatchNormState& st, Mode mode) {
    if (x.rank() < 2) throw SizeError("batchnorm: expected [n,d] or [n,C,...], got " + shape_str(x.shape()));
    const int channels = x.dim(1);
    for (const Tensor* t : {&st.gamma, &st.beta, &st.running_mean, &st.running_var})
        if (t->shape() != Shape{channels})
            throw SizeError("batchnorm: state of shape " + shape_str(t->shape()) + " for " + std::to_string(channels) +
                            " features");
    const std::size_t outer = static_cast<std::size_t>(x.dim(0));
    const std::size_t inner = x.numel() / (outer * channels);
    const std::size_t count = outer * inner;
    auto xv = x.data();
    auto index = [&](std::size_t o, int c, std::size_t i) { return (o * channels + c) * inner + i; };

    std::vector<double> mu(channels), var(channels);
    if (mode == Mode::train) {
        if (count < 2) throw BatchError("batchnorm: train mode needs at least 2 values per feature");
        for (int c = 0; c < channels; ++c) {
            double s = 0.0;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) s += xv[index(o, c, i)];
            mu[c] = s / count;
            double q = 0.0;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const double d = xv[index(o, c, i)] - mu[c];
                    q += d * d;
                }
            var[c] = q / count;
        }
        auto rm = st.running_mean.mutable_data();
        auto rv = st.running_var.mutable_data();
        for (int c = 0; c < channels; ++c) {
            rm[c] = kBatchNormMomentum * rm[c] + (1.0 - kBatchNormMomentum) * mu[c];
            rv[c] = kBatchNormMomentum * rv[c] + (1.0 - kBatchNormMomentum) * var[c];
        }
    } else {
        for (int c = 0; c < channels; ++c) {
            mu[c] = st.running_mean.at(c);
            var[c] = st.running_var.at(c);
        }
    }
    std::vector<double> inv_std(channels);
    for (int c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEpsilon);

    auto gv = st.gamma.data(), bv = st.beta.data();
    std::vector<double> xhat(x.numel()), out(x.numel());
    for (std::size_t o = 0; o < outer; ++o)
        for (int c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t k = index(o, c, i);
                xhat[k] = (xv[k] - mu[c]) * inv_std[c];
                out[k] = gv[c] * xhat[k] + bv[c];
            }
    const Tensor gamma = st.gamma, beta = st.beta;
    const bool batch_stats = mode == Mode::train;
    return make_op_result(
        batch_stats ? "batchnorm_train" : "batchnorm_infer", x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std, outer, inner, channels, count,
         batch_stats](std::span<const double> g, std::span<const double>) {
            auto index = [&](std::size_t o, int c, std::size_t i) { return (o * channels + c) * inner + i; };
            std::vector<double> dgamma(channels, 0.0), dbeta(channels, 0.0);
            for (std::size_t o = 0; o < outer; ++o)
                for (int c = 0; c < channels; ++c)
                    for (std::size_t i = 0; i < inner; ++i) {
                        const std::size_t k = index(o, c, i);
                        dbeta[c] += g[k];
                        dgamma[c] += g[k] * xhat[k];
                    }
            gamma.accumulate_grad(dgamma);
            beta.accumulate_grad(dbeta);
            if (!x.requires_grad()) return;
            auto gv = gamma.data();
            std::vector<double> dx(g.size());
            for (int c = 0; c < channels; ++c) {
                if (!batch_stats) {
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < inner; ++i) {
                            const std::size_t k = index(o, c, i);
                            dx[k] = g[k] * gv[c] * inv_std[c];
                        }
                    continue;
                }
                // dxhat = g*gamma; dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                const double n = static_cast<double>(count);
                const double sum_d = dbeta[c] * gv[c];
                const double sum_dx = dgamma[c] * gv[c];
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < inner; ++i) {
                        const std::size_t k = index(o, c, i);
                        dx[k] = inv_std[c] / n * (n * g[k] * gv[c] - sum_d - xhat[k] * sum_dx);
                    }
            }
            x.accumulate_grad(dx);
        });
}

Tensor forward_upsample2x(const Tensor& x) { return upsample2x(x); }

Tensor forward_residual_block(const Tensor& x, const std::vector<ConvParams>& convs, Activation act, int dims) {
    if (convs.empty()) throw ConfigError("residual block needs at least one convolution");
    const Tensor first = conv_with_bias(x, convs.front().kernel, convs.front().bias, dims, Padding::same);
    Tensor last = first;
    for (std::size_t i = 1; i < convs.size(); ++i) {
        const Tensor input = apply_activation(act, last);
        last = conv_with_bias(input, convs[i].kernel, convs[i].bias, dims, Padding::same);
        if (last.shape() != first.shape())
            throw SizeError("residual block: layer " + std::to_string(i) + " changed shape to " +
                            shape_str(last.shape()));
    }
    return apply_activation(act, add(first, last));
}

Tensor graph_forward_range(ModelGraph& model, const Tensor& x, std::size_t begin, std::size_t end) {
    if (end > model.layers.size() || begin > end) throw IndexError("graph_forward_range: bad layer range");
    Tensor y = x;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& spec = model.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + spec.name + "): ";
        try {
            y = layer_forward(model, spec, y);
        } catch (const SizeError& e) {
            throw SizeError(where + e.what());
        } catch (const ShapeError& e) {
            throw ShapeError(where + e.what());
        } catch (const IndexError& e) {
            throw IndexError(where + e.what());
        } catch (const BatchError& e) {
            throw BatchError(where + e.what());
        } catch (const AxisError& e) {
            throw AxisError(where + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        } catch (const DomainError& e) {
            throw DomainError(where + e.what());
        }
    }
    return y;
}

Tensor graph_forward(ModelGraph& model, const Tensor& x) { return graph_forward_range(model, x, 0, model.layers.size()); }

}  // namespace maskwright

#include "maskwright/mask_model.hpp"

#include <cmath>

#include "maskwright/error.hpp"

namespace maskwright {

namespace {

ModelGraph sub_graph(const ModelGraph& base, std::size_t begin, std::size_t end) {
    ModelGraph g;
    g.layers.assign(base.layers.begin() + begin, base.layers.begin() + end);
    for (const auto& layer : g.layers)
        for (const auto& name : layer_param_names(layer)) {
            g.params[name] = base.params.at(name);
            g.trainable[name] = base.trainable.at(name);
        }
    g.meta = base.meta;
    g.mode = base.mode;
    return g;
}

Shape with_batch(int batch, const Shape& s) {
    Shape out{batch};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

std::string dims_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out;
}

LayerSpec layer(LayerKind kind, const std::string& name, std::map<std::string, std::string> hyper) {
    return {kind, name, std::move(hyper)};
}

}  // namespace

SplitModel split_model(const ModelGraph& base, int split_index) {
    const int count = static_cast<int>(base.layers.size());
    if (split_index <= 0 || split_index >= count)
        throw IndexError("split index " + std::to_string(split_index) + " outside (0, " + std::to_string(count) + ")");
    return {sub_graph(base, 0, split_index), sub_graph(base, split_index, count), split_index};
}

void validate_broadcast(const BroadcastSpec& spec) {
    Shape expected = spec.input_shape;
    if (spec.axis) {
        const int axis = *spec.axis;
        if (axis < 0 || axis >= static_cast<int>(expected.size()))
            throw SizeError("broadcast axis " + std::to_string(axis) + " outside input " +
                            shape_str(spec.input_shape));
        expected.erase(expected.begin() + axis);
    }
    if (expected != spec.mask_shape)
        throw SizeError("mask shape " + shape_str(spec.mask_shape) + " inconsistent with input " +
                        shape_str(spec.input_shape));
}

Tensor apply_mask(const Tensor& x, const Tensor& m, const BroadcastSpec& spec) {
    validate_broadcast(spec);
    const int lead = x.rank() - static_cast<int>(spec.input_shape.size());
    if (lead != 0 && lead != 1) throw SizeError("apply_mask: input " + shape_str(x.shape()) + " vs spec");
    if (Shape(x.shape().begin() + lead, x.shape().end()) != spec.input_shape)
        throw SizeError("apply_mask: input " + shape_str(x.shape()) + " does not match " +
                        shape_str(spec.input_shape));
    Shape mask_full = spec.mask_shape;
    if (lead) mask_full.insert(mask_full.begin(), x.dim(0));
    if (m.shape() != mask_full)
        throw SizeError("apply_mask: mask " + shape_str(m.shape()) + ", expected " + shape_str(mask_full));
    if (!spec.axis) return mul(x, m);
    return mul_broadcast(x, m, *spec.axis + lead);
}

std::string to_string(MaskPoint p) { return p == MaskPoint::raw_input ? "raw_input" : "post_embedding"; }

MaskPoint parse_mask_point(const std::string& text) {
    if (text == "raw_input") return MaskPoint::raw_input;
    if (text == "post_embedding") return MaskPoint::post_embedding;
    throw ConfigError("unknown mask point '" + text + "'");
}

std::size_t mask_prefix_layers(const MaskedModel& mm) { return mm.mask_point == MaskPoint::post_embedding ? 1 : 0; }

MaskedModel make_masked_model(const ModelGraph& base, int split_index, ModelGraph explainer,
                              const BroadcastSpec& broadcast, MaskPoint mask_point, const Shape& input_shape) {
    MaskedModel mm;
    mm.split = split_model(base, split_index);
    freeze_parameters(mm.split.feature_extractor, true);
    freeze_parameters(mm.split.classifier, true);
    mm.split.feature_extractor.mode = Mode::infer;
    mm.split.classifier.mode = Mode::infer;
    freeze_parameters(explainer, false);
    mm.explainer = std::move(explainer);
    mm.broadcast = broadcast;
    mm.mask_point = mask_point;
    mm.input_shape = input_shape;

    validate_broadcast(broadcast);
    const auto& f = mm.split.feature_extractor;
    if (mask_point == MaskPoint::post_embedding && f.layers.front().kind != LayerKind::embedding)
        throw ConfigError("post_embedding masking needs an embedding as the first layer");
    Shape maskable = input_shape;
    for (std::size_t i = 0; i < mask_prefix_layers(mm); ++i) maskable = layer_output_shape(f.layers[i], maskable);
    if (maskable != broadcast.input_shape)
        throw SizeError("maskable input " + shape_str(maskable) + " does not match broadcast input " +
                        shape_str(broadcast.input_shape));
    const Shape features = f.output_shape(input_shape);
    const Shape mask_out = mm.explainer.output_shape(features);
    if (mask_out != broadcast.mask_shape)
        throw SizeError("explainer emits " + shape_str(mask_out) + " for features " + shape_str(features) +
                        ", mask needs " + shape_str(broadcast.mask_shape));
    mm.split.classifier.output_shape(features);
    return mm;
}

Tensor compute_mask(MaskedModel& mm, const Tensor& x) {
    const int batch = x.dim(0);
    const Shape mask_shape = with_batch(batch, mm.broadcast.mask_shape);
    if (mm.forced_mask) return Tensor::full(mask_shape, *mm.forced_mask);
    Tensor features;
    {
        NoGradGuard guard;
        mm.split.feature_extractor.mode = Mode::infer;
        features = graph_forward(mm.split.feature_extractor, x).detach();
    }
    Tensor m = graph_forward(mm.explainer, features);
    if (m.shape() != mask_shape)
        throw SizeError("explainer output " + shape_str(m.shape()) + " is not the mask shape " +
                        shape_str(mask_shape));
    return m;
}

MaskedOutput masked_forward(MaskedModel& mm, const Tensor& x) {
    auto& f = mm.split.feature_extractor;
    auto& c = mm.split.classifier;
    f.mode = Mode::infer;
    c.mode = Mode::infer;
    const Tensor m = compute_mask(mm, x);
    const std::size_t prefix = mask_prefix_layers(mm);
    const Tensor maskable = graph_forward_range(f, x, 0, prefix);
    const Tensor masked = apply_mask(maskable, m, mm.broadcast);
    const Tensor features = graph_forward_range(f, masked, prefix, f.layers.size());
    return {graph_forward(c, features), m};
}

Tensor base_forward(MaskedModel& mm, const Tensor& x) {
    mm.split.feature_extractor.mode = Mode::infer;
    mm.split.classifier.mode = Mode::infer;
    return graph_forward(mm.split.classifier, graph_forward(mm.split.feature_extractor, x));
}

std::string to_string(ExplainerVariant v) {
    switch (v) {
        case ExplainerVariant::image: return "image";
        case ExplainerVariant::sequence: return "sequence";
        case ExplainerVariant::chars: return "chars";
    }
    return "unknown";
}

ExplainerVariant parse_explainer_variant(const std::string& text) {
    if (text == "image") return ExplainerVariant::image;
    if (text == "sequence") return ExplainerVariant::sequence;
    if (text == "chars") return ExplainerVariant::chars;
    throw ConfigError("unknown explainer variant '" + text + "'");
}

std::vector<LayerSpec> explainer_layers(ExplainerVariant variant, const ExplainerDims& dims) {
    const std::string w = std::to_string(dims.width), depth = std::to_string(dims.depth);
    const std::string head = to_string(dims.head);
    if (dims.width < 1 || dims.depth < 1) throw ConfigError("explainer width and depth must be positive");
    std::vector<LayerSpec> out;
    switch (variant) {
        case ExplainerVariant::image: {
            int channels = 0, side = 0;
            if (dims.feature_shape.size() == 1) {
                side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dims.feature_shape[0]))));
                if (side * side != dims.feature_shape[0])
                    throw ConfigError("image explainer: feature width " + std::to_string(dims.feature_shape[0]) +
                                      " is not a square");
                channels = 1;
                out.push_back(layer(LayerKind::reshape, "ex_map", {{"shape", "1," + std::to_string(side) + "," +
                                                                                 std::to_string(side)}}));
            } else if (dims.feature_shape.size() == 3 && dims.feature_shape[1] == dims.feature_shape[2]) {
                channels = dims.feature_shape[0];
                side = dims.feature_shape[1];
            } else {
                throw ConfigError("image explainer: features " + shape_str(dims.feature_shape) +
                                  " are not a square map");
            }
            if (dims.mask_shape != Shape{2 * side, 2 * side})
                throw ConfigError("image explainer: mask " + shape_str(dims.mask_shape) + " is not twice the " +
                                  std::to_string(side) + "x" + std::to_string(side) + " map");
            out.push_back(layer(LayerKind::residual_block, "ex_block1",
                                {{"in", std::to_string(channels)}, {"filters", w}, {"kernel", "3"},
                                 {"layers", depth}, {"activation", "tanh"}, {"dims", "2"}}));
            out.push_back(layer(LayerKind::upsample2x, "ex_up", {}));
            out.push_back(layer(LayerKind::residual_block, "ex_block2",
                                {{"in", w}, {"filters", w}, {"kernel", "3"}, {"layers", depth},
                                 {"activation", "tanh"}, {"dims", "2"}}));
            out.push_back(layer(LayerKind::conv2d, "ex_head",
                                {{"in", w}, {"filters", "1"}, {"kernel", "1"}, {"activation", head}}));
            out.push_back(layer(LayerKind::reshape, "ex_mask", {{"shape", dims_text(dims.mask_shape)}}));
            break;
        }
        case ExplainerVariant::sequence:
        case ExplainerVariant::chars: {
            if (dims.feature_shape.size() != 2)
                throw ConfigError("sequence explainer: features must be [T,d], got " + shape_str(dims.feature_shape));
            const int steps = dims.feature_shape[0], d = dims.feature_shape[1];
            if (dims.mask_shape != Shape{steps})
                throw ConfigError("sequence explainer: mask must be [" + std::to_string(steps) + "]");
            if (variant == ExplainerVariant::sequence) {
                for (int i = 0; i < dims.depth; ++i)
                    out.push_back(layer(LayerKind::bigru, "ex_gru" + std::to_string(i),
                                        {{"in", std::to_string(i == 0 ? d : 2 * dims.width)}, {"hidden", w}}));
                out.push_back(layer(LayerKind::dense, "ex_step",
                                    {{"in", std::to_string(2 * dims.width)}, {"units", w}, {"activation", "relu"}}));
                out.push_back(
                    layer(LayerKind::dense, "ex_head", {{"in", w}, {"units", "1"}, {"activation", "identity"}}));
            } else {
                out.push_back(layer(LayerKind::transpose, "ex_channels", {}));
                out.push_back(layer(LayerKind::residual_block, "ex_block",
                                    {{"in", std::to_string(d)}, {"filters", w}, {"kernel", "3"}, {"layers", depth},
                                     {"activation", "selu"}, {"dims", "1"}}));
                out.push_back(layer(LayerKind::conv1d, "ex_head",
                                    {{"in", w}, {"filters", "1"}, {"kernel", "1"}, {"activation", "identity"}}));
                out.push_back(layer(LayerKind::batchnorm, "ex_norm", {{"features", "1"}}));
            }
            out.push_back(layer(LayerKind::reshape, "ex_mask", {{"shape", std::to_string(steps)}}));
            out.push_back(layer(LayerKind::activation, "ex_squash", {{"fn", head}}));
            break;
        }
    }
    return out;
}

ModelGraph build_explainer(ExplainerVariant variant, const ExplainerDims& dims, std::uint64_t seed) {
    ModelGraph g = ModelGraph::build(explainer_layers(variant, dims), seed);
    g.meta["variant"] = to_string(variant);
    return g;
}

}  // namespace maskwright

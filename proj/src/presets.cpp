#include "maskwright/presets.hpp"

#include <sstream>

#include "maskwright/error.hpp"

namespace maskwright {

namespace {

LayerSpec line(const std::string& text) { return LayerSpec::parse(text); }

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

std::string dims_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out;
}

int parse_int(const std::string& text, const std::string& key) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw FormatError("bad integer '" + text + "' for " + key);
    return v;
}

Shape parse_dims(const std::string& text, const std::string& key) {
    Shape out;
    if (text.empty()) return out;
    std::istringstream in(text);
    for (std::string part; std::getline(in, part, ',');) out.push_back(parse_int(part, key));
    return out;
}

const std::string& need(const std::map<std::string, std::string>& meta, const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("explainer metadata lacks '" + key + "'");
    return it->second;
}

}  // namespace

std::vector<LayerSpec> default_base_layers(const LabeledDataset& data, const ArchConfig& arch) {
    const std::string w = std::to_string(arch.width), e = std::to_string(arch.embed_dim);
    switch (data.kind) {
        case TaskKind::planted_patch: {
            if (data.input_shape.size() != 3) throw ConfigError("planted_patch inputs must be [C,H,W]");
            const std::string c = std::to_string(data.input_shape[0]);
            return {line("conv2d name=c1 in=" + c + " filters=" + w + " kernel=3 activation=relu"),
                    line("pool2x name=p1 mode=max"),
                    line("conv2d name=c2 in=" + w + " filters=" + w + " kernel=3 activation=relu"),
                    line("global_pool name=gp mode=max"),
                    line("dense name=out in=" + w + " units=" + std::to_string(data.num_classes) +
                         " activation=identity")};
        }
        case TaskKind::keyword_seq:
        case TaskKind::char_count: {
            const int outputs = data.is_classification() ? data.num_classes : 1;
            std::vector<LayerSpec> layers{
                line("embedding name=emb vocab=" + std::to_string(data.vocabulary.size()) + " dim=" + e)};
            if (arch.word_dropout > 0.0 && data.is_classification()) {
                auto drop = line("dropout name=drop rate=0");
                drop.hyper["rate"] = format_double(arch.word_dropout);
                layers.push_back(drop);
            }
            // Regression heads carry no bias so a zeroed embedding contributes exactly nothing.
            const std::string step = data.is_classification() ? " activation=tanh" : " activation=identity bias=false";
            const std::string out = data.is_classification() ? " activation=identity" : " activation=identity bias=false";
            layers.push_back(line("dense name=step in=" + e + " units=" + w + step));
            layers.push_back(line("sum_over_time name=pool"));
            layers.push_back(line("dense name=out in=" + w + " units=" + std::to_string(outputs) + out));
            return layers;
        }
    }
    throw ConfigError("unknown task kind");
}

std::map<std::string, std::string> ExplainSetup::to_meta() const {
    return {{"explain.split", std::to_string(split_index)},
            {"explain.mask_point", to_string(mask_point)},
            {"explain.mask_shape", dims_text(broadcast.mask_shape)},
            {"explain.maskable_shape", dims_text(broadcast.input_shape)},
            {"explain.axis", broadcast.axis ? std::to_string(*broadcast.axis) : "none"},
            {"explain.variant", to_string(variant)},
            {"explain.feature_shape", dims_text(dims.feature_shape)},
            {"explain.width", std::to_string(dims.width)},
            {"explain.depth", std::to_string(dims.depth)},
            {"explain.head", to_string(dims.head)}};
}

ExplainSetup ExplainSetup::from_meta(const std::map<std::string, std::string>& meta) {
    ExplainSetup s;
    try {
        s.split_index = parse_int(need(meta, "explain.split"), "explain.split");
        s.mask_point = parse_mask_point(need(meta, "explain.mask_point"));
        s.broadcast.mask_shape = parse_dims(need(meta, "explain.mask_shape"), "explain.mask_shape");
        s.broadcast.input_shape = parse_dims(need(meta, "explain.maskable_shape"), "explain.maskable_shape");
        const auto& axis = need(meta, "explain.axis");
        if (axis != "none") s.broadcast.axis = parse_int(axis, "explain.axis");
        s.variant = parse_explainer_variant(need(meta, "explain.variant"));
        s.dims.feature_shape = parse_dims(need(meta, "explain.feature_shape"), "explain.feature_shape");
        s.dims.mask_shape = s.broadcast.mask_shape;
        s.dims.width = parse_int(need(meta, "explain.width"), "explain.width");
        s.dims.depth = parse_int(need(meta, "explain.depth"), "explain.depth");
        s.dims.head = parse_activation(need(meta, "explain.head"));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad explainer metadata: ") + e.what());
    }
    return s;
}

ExplainSetup default_explain_setup(const ModelGraph& base, const LabeledDataset& data, const ArchConfig& arch,
                                   std::optional<int> split) {
    ExplainSetup s;
    const bool small = data.kind == TaskKind::char_count;
    s.dims.width = arch.explainer_width.value_or(small ? 4 : 8);
    s.dims.depth = arch.explainer_depth.value_or(small ? 1 : 2);
    const auto first_of = [&](LayerKind kind) {
        for (std::size_t i = 0; i < base.layers.size(); ++i)
            if (base.layers[i].kind == kind) return static_cast<int>(i) + 1;
        throw ConfigError("base network has no " + to_string(kind) + " layer to split after");
    };
    if (data.kind == TaskKind::planted_patch) {
        s.split_index = first_of(LayerKind::pool2x);
        const Shape& in = data.input_shape;
        s.mask_point = MaskPoint::raw_input;
        s.broadcast = {{in[1], in[2]}, in, 0};
        s.variant = ExplainerVariant::image;
        s.dims.head = Activation::sigmoid;
    } else {
        s.split_index = first_of(LayerKind::dense);
        const int steps = data.input_shape[0];
        const int embed = base.layers.at(0).get_int("dim");
        s.mask_point = MaskPoint::post_embedding;
        s.broadcast = {{steps}, {steps, embed}, 1};
        s.variant = data.kind == TaskKind::keyword_seq ? ExplainerVariant::sequence : ExplainerVariant::chars;
        s.dims.head = data.kind == TaskKind::keyword_seq ? Activation::sigmoid : Activation::softplus;
    }
    if (split) {
        if (*split < 1 || *split >= static_cast<int>(base.layers.size()))
            throw IndexError("split " + std::to_string(*split) + " is outside 1.." +
                             std::to_string(base.layers.size() - 1));
        s.split_index = *split;
    }
    ModelGraph prefix;
    prefix.layers.assign(base.layers.begin(), base.layers.begin() + s.split_index);
    s.dims.feature_shape = prefix.output_shape(data.input_shape);
    s.dims.mask_shape = s.broadcast.mask_shape;
    return s;
}

MaskedModel build_masked_model(const ModelGraph& base, const ExplainSetup& setup, std::uint64_t seed) {
    auto explainer = build_explainer(setup.variant, setup.dims, seed);
    for (auto& [k, v] : setup.to_meta()) explainer.meta[k] = v;
    return restore_masked_model(base, std::move(explainer));
}

MaskedModel restore_masked_model(const ModelGraph& base, ModelGraph explainer) {
    const auto setup = ExplainSetup::from_meta(explainer.meta);
    Shape input = setup.broadcast.input_shape;
    if (setup.mask_point == MaskPoint::post_embedding) input.pop_back();
    return make_masked_model(base, setup.split_index, std::move(explainer), setup.broadcast, setup.mask_point, input);
}

TrainConfig default_base_training(TaskKind kind) {
    TrainConfig c;
    c.batch_size = 32;
    c.lr = 3e-3;
    c.epochs = kind == TaskKind::planted_patch ? 8 : 15;
    return c;
}

TrainConfig default_explainer_training(TaskKind kind) {
    TrainConfig c;
    c.batch_size = 32;
    c.lr = 3e-3;
    c.epochs = 10;
    switch (kind) {
        case TaskKind::planted_patch: c.reg.l2 = 1e-4; break;
        case TaskKind::keyword_seq:
            c.reg.entropy = 0.3;
            c.reg.l1 = 1e-3;
            break;
        case TaskKind::char_count:
            c.batch_size = 64;
            c.epochs = 800;
            c.reg.l1 = 1e-3;
            c.reg.l2 = 1e-4;
            break;
    }
    return c;
}

}  // namespace maskwright

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "maskwright/layers.hpp"

namespace maskwright {

struct SplitModel {
    ModelGraph feature_extractor;
    ModelGraph classifier;
    int split_index = 0;
};

// F = layers [0, split_index), C = the rest. Parameter tensors are shared with
// `base`, so updates through either view are visible in both.
SplitModel split_model(const ModelGraph& base, int split_index);

// Per-example shapes. With an axis, mask_shape equals input_shape with that
// axis removed and each mask value is replicated along it.
struct BroadcastSpec {
    Shape mask_shape;
    Shape input_shape;
    std::optional<int> axis;
};

void validate_broadcast(const BroadcastSpec& spec);

// x: per-example input_shape or batched [B, input_shape...]; m matches with mask_shape.
Tensor apply_mask(const Tensor& x, const Tensor& m, const BroadcastSpec& spec);

enum class MaskPoint { raw_input, post_embedding };

std::string to_string(MaskPoint p);
MaskPoint parse_mask_point(const std::string& text);

struct MaskedModel {
    SplitModel split;
    ModelGraph explainer;
    BroadcastSpec broadcast;
    MaskPoint mask_point = MaskPoint::raw_input;
    Shape input_shape;  // per-example raw input shape
    // Test hook: when set, every mask value is replaced by this constant.
    std::optional<double> forced_mask;
};

// Splits `base`, freezes every base parameter, marks explainer parameters
// trainable, and checks that all shapes line up for `input_shape`.
MaskedModel make_masked_model(const ModelGraph& base, int split_index, ModelGraph explainer,
                              const BroadcastSpec& broadcast, MaskPoint mask_point, const Shape& input_shape);

// Number of leading F layers that run before masking (0 or 1).
std::size_t mask_prefix_layers(const MaskedModel& mm);

// Batched x -> [B, mask_shape...], from features of the unmasked input.
Tensor compute_mask(MaskedModel& mm, const Tensor& x);

struct MaskedOutput {
    Tensor output;
    Tensor mask;
};

MaskedOutput masked_forward(MaskedModel& mm, const Tensor& x);

// C(F(x)) with the base path in infer mode.
Tensor base_forward(MaskedModel& mm, const Tensor& x);

enum class ExplainerVariant { image, sequence, chars };

std::string to_string(ExplainerVariant v);
ExplainerVariant parse_explainer_variant(const std::string& text);

struct ExplainerDims {
    Shape feature_shape;  // per-example F output
    Shape mask_shape;
    int width = 8;  // conv filters or GRU hidden width
    int depth = 4;  // conv layers per residual block, or stacked GRU layers
    Activation head = Activation::sigmoid;
};

// image:    [n] (n = s*s) or [C,s,s] -> residual conv (tanh) -> upsample2x -> residual conv
//           -> 1x1 conv + head -> [2s,2s]
// sequence: [T,d] -> bigru x depth -> per-step dense relu -> per-step linear -> head -> [T]
// chars:    [T,d] -> residual conv1d (selu) -> length-1 conv1d -> batchnorm -> head -> [T]
std::vector<LayerSpec> explainer_layers(ExplainerVariant variant, const ExplainerDims& dims);
ModelGraph build_explainer(ExplainerVariant variant, const ExplainerDims& dims, std::uint64_t seed);

}  // namespace maskwright

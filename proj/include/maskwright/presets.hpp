#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskwright/layers.hpp"
#include "maskwright/mask_model.hpp"
#include "maskwright/tasks.hpp"
#include "maskwright/training.hpp"

namespace maskwright {

// Toy-scale sizes shared by the default architectures.
struct ArchConfig {
    int width = 8;            // base conv filters or per-step hidden units
    int embed_dim = 8;        // token embedding width
    std::optional<int> explainer_width;  // explainer conv filters or GRU width; per-task default when unset
    std::optional<int> explainer_depth;  // conv layers per residual block, or stacked GRUs
    double word_dropout = 0.1;           // timestep dropout after keyword embeddings (train mode only)
};

// Default base network for a dataset:
//   planted_patch  conv3x3 relu -> max pool2x -> conv3x3 relu -> global max pool -> dense
//   keyword_seq    embedding -> word dropout -> per-step dense tanh -> sum over time -> dense
//   char_count     embedding -> per-step linear -> sum over time -> linear (1 output, no biases)
// Word dropout teaches the base that a zeroed embedding reads as an absent token.
std::vector<LayerSpec> default_base_layers(const LabeledDataset& data, const ArchConfig& arch = {});

// Everything needed to attach an explainer to a base network.
struct ExplainSetup {
    int split_index = 0;
    MaskPoint mask_point = MaskPoint::raw_input;
    BroadcastSpec broadcast;
    ExplainerVariant variant = ExplainerVariant::image;
    ExplainerDims dims;

    // Stored in the explainer's model metadata under "explain.*" keys.
    std::map<std::string, std::string> to_meta() const;
    // Throws FormatError when a key is missing or malformed.
    static ExplainSetup from_meta(const std::map<std::string, std::string>& meta);
};

// Split after the first pooling layer (images) or after the first dense layer
// (tokens) unless `split` is given;
// image masks use a sigmoid head broadcast over channels, keyword masks a
// sigmoid head over embeddings and char masks a softplus head over embeddings.
// Explainers default to width 8 and depth 2, or width 4 and depth 1 for char_count.
ExplainSetup default_explain_setup(const ModelGraph& base, const LabeledDataset& data, const ArchConfig& arch = {},
                                   std::optional<int> split = std::nullopt);

// Builds a fresh explainer for `setup` and the masked model around `base`.
MaskedModel build_masked_model(const ModelGraph& base, const ExplainSetup& setup, std::uint64_t seed);

// Reattaches a trained explainer using the setup recorded in its metadata.
MaskedModel restore_masked_model(const ModelGraph& base, ModelGraph explainer);

// Training defaults per task family.
TrainConfig default_base_training(TaskKind kind);
TrainConfig default_explainer_training(TaskKind kind);

}  // namespace maskwright

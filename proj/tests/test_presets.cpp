#include "maskwright/presets.hpp"

#include <gtest/gtest.h>

#include <random>

#include "maskwright/error.hpp"
#include "maskwright/model_io.hpp"
#include "test_util.hpp"

using namespace maskwright;
using maskwright::testing::bitwise_equal;

namespace {

LabeledDataset small(TaskKind kind) {
    auto spec = TaskSpec::defaults(kind);
    spec.n = 16;
    spec.seed = 4;
    return generate_task(spec);
}

}  // namespace

TEST(Presets, BaseNetworksFitEveryTask) {
    for (auto kind : {TaskKind::planted_patch, TaskKind::keyword_seq, TaskKind::char_count}) {
        const auto data = small(kind);
        const auto base = ModelGraph::build(default_base_layers(data), 1);
        const Shape expect{data.is_classification() ? data.num_classes : 1};
        EXPECT_EQ(base.output_shape(data.input_shape), expect) << to_string(kind);
    }
}

TEST(Presets, ExplainerMasksMatchRelevanceExtent) {
    for (auto kind : {TaskKind::planted_patch, TaskKind::keyword_seq, TaskKind::char_count}) {
        const auto data = small(kind);
        const auto base = ModelGraph::build(default_base_layers(data), 1);
        auto mm = build_masked_model(base, default_explain_setup(base, data), 2);
        std::vector<std::size_t> idx{0, 1, 2};
        const auto out = masked_forward(mm, data.input_batch(idx));
        EXPECT_EQ(out.mask.numel(), 3 * data.relevance_extent()) << to_string(kind);
    }
}

TEST(Presets, HeadsFollowTaskFamily) {
    const auto patch = small(TaskKind::planted_patch), chars = small(TaskKind::char_count);
    const auto pb = ModelGraph::build(default_base_layers(patch), 1);
    const auto cb = ModelGraph::build(default_base_layers(chars), 1);
    const auto ps = default_explain_setup(pb, patch), cs = default_explain_setup(cb, chars);
    EXPECT_EQ(ps.dims.head, Activation::sigmoid);
    EXPECT_EQ(ps.variant, ExplainerVariant::image);
    EXPECT_EQ(ps.split_index, 2);
    EXPECT_EQ(ps.dims.feature_shape, (Shape{8, 8, 8}));
    EXPECT_EQ(cs.dims.head, Activation::softplus);
    EXPECT_EQ(cs.mask_point, MaskPoint::post_embedding);
    EXPECT_EQ(cs.broadcast.axis, 1);
}

TEST(Presets, SplitOverrideIsChecked) {
    const auto data = small(TaskKind::planted_patch);
    const auto base = ModelGraph::build(default_base_layers(data), 1);
    EXPECT_THROW(default_explain_setup(base, data, {}, 0), IndexError);
    EXPECT_THROW(default_explain_setup(base, data, {}, 5), IndexError);
}

TEST(Presets, ExplainerSizeDefaultsPerTaskAndOverrides) {
    for (auto kind : {TaskKind::planted_patch, TaskKind::keyword_seq, TaskKind::char_count}) {
        const auto data = small(kind);
        const auto base = ModelGraph::build(default_base_layers(data), 1);
        const auto dims = default_explain_setup(base, data).dims;
        const bool chars = kind == TaskKind::char_count;
        EXPECT_EQ(dims.width, chars ? 4 : 8) << to_string(kind);
        EXPECT_EQ(dims.depth, chars ? 1 : 2) << to_string(kind);
        ArchConfig arch;
        arch.explainer_width = 5;
        arch.explainer_depth = 3;
        const auto custom = default_explain_setup(base, data, arch).dims;
        EXPECT_EQ(custom.width, 5);
        EXPECT_EQ(custom.depth, 3);
    }
}

TEST(Presets, SetupSurvivesModelFileRoundTrip) {
    const auto data = small(TaskKind::keyword_seq);
    const auto base = ModelGraph::build(default_base_layers(data), 1);
    auto mm = build_masked_model(base, default_explain_setup(base, data), 3);
    auto restored = restore_masked_model(base, deserialize_model(serialize_model(mm.explainer)));
    EXPECT_EQ(restored.broadcast.mask_shape, mm.broadcast.mask_shape);
    EXPECT_EQ(restored.broadcast.axis, mm.broadcast.axis);
    EXPECT_EQ(restored.mask_point, mm.mask_point);
    std::vector<std::size_t> idx{3, 4};
    const auto x = data.input_batch(idx);
    EXPECT_TRUE(bitwise_equal(masked_forward(mm, x).output.data(), masked_forward(restored, x).output.data()));
}

TEST(Presets, MissingSetupMetadataIsFormatError) {
    auto meta = ExplainSetup{}.to_meta();
    meta.erase("explain.axis");
    EXPECT_THROW(ExplainSetup::from_meta(meta), FormatError);
    meta = ExplainSetup{}.to_meta();
    meta["explain.width"] = "wide";
    EXPECT_THROW(ExplainSetup::from_meta(meta), FormatError);
}

TEST(Presets, TrainingDefaultsCarryTaskRegularizers) {
    EXPECT_EQ(default_explainer_training(TaskKind::planted_patch).reg.l2, 1e-4);
    const auto chars = default_explainer_training(TaskKind::char_count).reg;
    EXPECT_EQ(chars.l1, 1e-3);
    EXPECT_EQ(chars.l2, 1e-4);
    EXPECT_GT(default_explainer_training(TaskKind::keyword_seq).reg.entropy, 0.0);
}

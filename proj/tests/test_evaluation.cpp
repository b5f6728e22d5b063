#include "maskwright/evaluation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"
#include "maskwright/error.hpp"
#include "maskwright/training.hpp"
#include "test_util.hpp"

using namespace maskwright;
using maskwright::testing::random_values;

namespace {

LayerSpec spec(const std::string& line) { return LayerSpec::parse(line); }

Tensor masks_of(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from({static_cast<int>(rows.size()), static_cast<int>(rows.front().size())}, flat);
}

LabeledDataset two_class_points(int n) {
    LabeledDataset data;
    data.input_shape = {1};
    data.num_classes = 2;
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        data.inputs.push_back(label ? 1.0 : -1.0);
        data.targets.push_back(label);
        data.relevance.push_back({0});
    }
    return data;
}

LabeledDataset tiny_patch_data(int n, std::uint64_t seed) {
    auto s = TaskSpec::defaults(TaskKind::planted_patch);
    s.n = n;
    s.seed = seed;
    s.height = 4;
    s.width = 4;
    return gen_planted_patch(s);
}

ModelGraph tiny_image_base(std::uint64_t seed) {
    return ModelGraph::build({spec("conv2d name=c1 in=1 filters=2 kernel=3 activation=relu"),
                              spec("conv2d name=c2 in=2 filters=1 kernel=1 activation=identity"),
                              spec("pool2x name=p mode=mean"), spec("reshape name=flat shape=4"),
                              spec("dense name=h in=4 units=3 activation=tanh"),
                              spec("dense name=out in=3 units=2 activation=identity")},
                             seed);
}

MaskedModel tiny_image_masked(const ModelGraph& base, std::uint64_t seed) {
    ExplainerDims dims{{4}, {4, 4}, 3, 2, Activation::sigmoid};
    return make_masked_model(base, 4, build_explainer(ExplainerVariant::image, dims, seed),
                             {{4, 4}, {1, 4, 4}, 0}, MaskPoint::raw_input, {1, 4, 4});
}

TrainConfig quick_config(int epochs, int batch, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

// ---- accuracy ---------------------------------------------------------------------

TEST(Accuracy, ConstantPredictorOnBalancedData) {
    std::vector<double> logits;
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) {
        logits.insert(logits.end(), {2.0, -1.0});
        labels.push_back(i % 2);
    }
    EXPECT_DOUBLE_EQ(accuracy(logits, 2, labels), 0.5);
}

TEST(Accuracy, PerfectPredictorScoresOne) {
    std::vector<double> logits{0, 0, 5, 5, 0, 0, 0, 5, 0};
    std::vector<int> labels{2, 0, 1};
    EXPECT_DOUBLE_EQ(accuracy(logits, 3, labels), 1.0);
}

TEST(Accuracy, TiesGoToLowestClass) {
    std::vector<double> logits{1.0, 1.0, 1.0, 0.0, 3.0, 3.0};
    EXPECT_DOUBLE_EQ(accuracy(logits, 3, std::vector<int>{0, 1}), 1.0);
    EXPECT_DOUBLE_EQ(accuracy(logits, 3, std::vector<int>{1, 2}), 0.0);
}

TEST(Accuracy, MatchesLoopOracle) {
    std::mt19937_64 rng(4);
    const int n = 100, k = 4;
    const auto logits = random_values(n * k, rng);
    std::uniform_int_distribution<int> cls(0, k - 1);
    std::vector<int> labels(n);
    for (auto& l : labels) l = cls(rng);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (logits[i * k + c] > logits[i * k + best]) best = c;
        correct += best == labels[i];
    }
    EXPECT_DOUBLE_EQ(accuracy(logits, k, labels), correct / 100.0);
}

TEST(Accuracy, Errors) {
    EXPECT_THROW(accuracy({}, 2, {}), EmptyError);
    std::vector<double> logits{1, 2, 3};
    EXPECT_THROW(accuracy(logits, 2, std::vector<int>{0}), SizeError);
}

TEST(Accuracy, ModelLevelConstantPredictor) {
    auto model = ModelGraph::build({spec("dense name=out in=1 units=2 activation=identity")}, 1);
    Tensor w = model.param("out.weight");
    std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
    Tensor b = model.param("out.bias");
    b.mutable_data()[0] = 1.0;
    b.mutable_data()[1] = 0.0;
    EXPECT_DOUBLE_EQ(classification_accuracy(model, two_class_points(40)), 0.5);
    w.mutable_data()[0] = -10.0;
    w.mutable_data()[1] = 10.0;
    EXPECT_DOUBLE_EQ(classification_accuracy(model, two_class_points(40)), 1.0);
    LabeledDataset empty;
    empty.input_shape = {1};
    empty.num_classes = 2;
    EXPECT_THROW(classification_accuracy(model, empty), EmptyError);
}

// ---- rmse -----------------------------------------------------------------------------

TEST(Rmse, ZeroWhenExact) {
    std::vector<double> v{1.0, -2.0, 3.5};
    EXPECT_EQ(rmse(v, v), 0.0);
}

TEST(Rmse, ConstantOffsetGivesOne) {
    std::vector<double> t{1.0, -2.0, 3.5, 0.25};
    std::vector<double> p = t;
    for (auto& x : p) x += 1.0;
    EXPECT_DOUBLE_EQ(rmse(p, t), 1.0);
}

TEST(Rmse, MatchesHandFormula) {
    std::mt19937_64 rng(9);
    const auto p = random_values(10, rng, -3, 3);
    const auto t = random_values(10, rng, -3, 3);
    double s = 0;
    for (int i = 0; i < 10; ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
    EXPECT_NEAR(rmse(p, t), std::sqrt(s / 10), 1e-15);
}

TEST(Rmse, Errors) {
    EXPECT_THROW(rmse({}, {}), EmptyError);
    std::vector<double> a{1, 2}, b{1};
    EXPECT_THROW(rmse(a, b), SizeError);
}

// ---- sparsity --------------------------------------------------------------------------

TEST(MaskSparsity, SaturatedEmptyAndHandValues) {
    const auto ones = mask_sparsity_stats(Tensor::full({3, 4}, 1.0));
    EXPECT_EQ(ones.mean_mask, 1.0);
    EXPECT_EQ(ones.l0_at_half, 1.0);
    const auto zeros = mask_sparsity_stats(Tensor::full({3, 4}, 0.0));
    EXPECT_EQ(zeros.mean_mask, 0.0);
    EXPECT_EQ(zeros.l0_at_half, 0.0);
    const auto mixed = mask_sparsity_stats(Tensor::from({2}, {0.2, 0.8}));
    EXPECT_DOUBLE_EQ(mixed.mean_mask, 0.5);
    EXPECT_DOUBLE_EQ(mixed.l0_at_half, 0.5);
    EXPECT_EQ(mask_sparsity_stats(Tensor::from({1}, {0.5})).l0_at_half, 0.0);
}

TEST(MaskSparsity, MeanIsPermutationInvariant) {
    std::mt19937_64 rng(2);
    auto v = random_values(64, rng, 0.0, 1.0);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(v.begin(), v.end(), rng);
        EXPECT_NEAR(mask_sparsity_stats(v).mean_mask, mask_sparsity_stats(sorted).mean_mask, 1e-15);
        EXPECT_EQ(mask_sparsity_stats(v).l0_at_half, mask_sparsity_stats(sorted).l0_at_half);
    }
}

// ---- top-k ------------------------------------------------------------------------------

TEST(TopkIndices, DescendingWithLowIndexTies) {
    std::vector<double> v{0.5, 0.9, 0.5, 0.9, 0.1};
    EXPECT_EQ(topk_indices(v, 3), (std::vector<int>{1, 3, 0}));
    EXPECT_EQ(topk_indices(v, 5), (std::vector<int>{1, 3, 0, 2, 4}));
    EXPECT_THROW(topk_indices(v, 0), ConfigError);
    EXPECT_THROW(topk_indices(v, 6), ConfigError);
}

TEST(TopkAttribution, DirectHit) {
    EXPECT_DOUBLE_EQ(topk_attribution_accuracy(masks_of({{0.9, 0.1, 0.8, 0.7}}), {{0, 2}}, 2), 1.0);
    EXPECT_DOUBLE_EQ(topk_attribution_accuracy(masks_of({{0.9, 0.1, 0.8, 0.7}}), {{1}}, 3), 0.0);
}

TEST(TopkAttribution, UniformMaskTieBreakPicksIndexZero) {
    EXPECT_DOUBLE_EQ(topk_attribution_accuracy(masks_of({{0.3, 0.3, 0.3, 0.3}}), {{0}}, 1), 1.0);
    EXPECT_DOUBLE_EQ(topk_attribution_accuracy(masks_of({{0.3, 0.3, 0.3, 0.3}}), {{1}}, 1), 0.0);
}

TEST(TopkAttribution, AveragesOverExamples) {
    const auto m = masks_of({{0.9, 0.1, 0.2}, {0.1, 0.9, 0.2}, {0.1, 0.2, 0.9}, {0.9, 0.2, 0.1}});
    EXPECT_DOUBLE_EQ(topk_attribution_accuracy(m, {{0}, {0}, {2}, {1}}, 1), 0.5);
}

TEST(TopkAttribution, KAboveLengthIsConfigError) {
    EXPECT_THROW(topk_attribution_accuracy(masks_of({{0.1, 0.2}}), {{0}}, 3), ConfigError);
    EXPECT_THROW(topk_attribution_accuracy(masks_of({{0.1, 0.2}}), {{0}}, 0), ConfigError);
    EXPECT_THROW(topk_attribution_accuracy(masks_of({{0.1, 0.2}}), {{}}, 1), ConfigError);
    EXPECT_THROW(topk_attribution_accuracy(masks_of({{0.1, 0.2}}), {{2}}, 1), IndexError);
    EXPECT_THROW(topk_attribution_accuracy(masks_of({{0.1, 0.2, 0.3}}), {{0}, {1}}, 1), SizeError);
}

TEST(TopkAttribution, RandomMasksMatchMonteCarloRate) {
    std::mt19937_64 rng(77);
    const int n = 4000, len = 20;
    std::uniform_int_distribution<int> pos(0, len - 1);
    for (int k : {1, 3, 7}) {
        std::vector<std::vector<int>> rel(n);
        for (auto& r : rel) r = {pos(rng)};
        const auto m = Tensor::from({n, len}, random_values(static_cast<std::size_t>(n) * len, rng, 0.0, 1.0));
        const double p = static_cast<double>(k) / len;
        const double sigma = std::sqrt(p * (1 - p) / n);
        EXPECT_NEAR(topk_attribution_accuracy(m, rel, k), p, 3 * sigma) << "k=" << k;
    }
}

TEST(TopkAttribution, InvariantUnderIncreasingTransform) {
    std::mt19937_64 rng(5);
    const int n = 50, len = 12;
    std::uniform_int_distribution<int> pos(0, len - 1);
    std::vector<std::vector<int>> rel(n);
    for (auto& r : rel) r = {pos(rng), pos(rng)};
    auto v = random_values(static_cast<std::size_t>(n) * len, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < v.size(); i += 5) v[i] = 0.5;  // include ties
    const auto m = Tensor::from({n, len}, v);
    std::vector<double> w(v.size());
    std::transform(v.begin(), v.end(), w.begin(), [](double x) { return std::exp(3 * x) - 7.0 + x * x * x; });
    const auto mt = Tensor::from({n, len}, w);
    for (int k = 1; k <= len; ++k) {
        EXPECT_EQ(topk_attribution_accuracy(m, rel, k), topk_attribution_accuracy(mt, rel, k)) << k;
        EXPECT_EQ(topk_overlap(m, rel, k), topk_overlap(mt, rel, k)) << k;
    }
}

TEST(TopkAttribution, FullLengthAlwaysHits) {
    std::mt19937_64 rng(6);
    const int n = 30, len = 9;
    std::uniform_int_distribution<int> pos(0, len - 1);
    std::vector<std::vector<int>> rel(n);
    for (auto& r : rel) r = {pos(rng)};
    const auto m = Tensor::from({n, len}, random_values(static_cast<std::size_t>(n) * len, rng));
    EXPECT_EQ(topk_attribution_accuracy(m, rel, len), 1.0);
    EXPECT_EQ(topk_overlap(m, rel, len), 1.0);
}

TEST(TopkOverlap, HandValues) {
    const auto m = masks_of({{0.9, 0.8, 0.1, 0.7}, {0.1, 0.2, 0.3, 0.4}});
    // example 0: top2 {0,1}, relevance {1,2,3} -> 1/2; example 1: top2 {3,2}, relevance {3} -> 1/1
    EXPECT_DOUBLE_EQ(topk_overlap(m, {{1, 2, 3}, {3}}, 2), 0.75);
}

// ---- fidelity -----------------------------------------------------------------------------

TEST(Fidelity, SignConvention) {
    EXPECT_DOUBLE_EQ(fidelity_delta({MetricKind::accuracy, 0.9}, {MetricKind::accuracy, 0.85}), 0.85 - 0.9);
    EXPECT_DOUBLE_EQ(fidelity_delta({MetricKind::rmse, 1.0}, {MetricKind::rmse, 0.8}), 1.0 - 0.8);
    EXPECT_THROW(fidelity_delta({MetricKind::rmse, 1.0}, {MetricKind::accuracy, 0.8}), ConfigError);
}

TEST(Fidelity, ForcedIdentityMaskGivesZeroDelta) {
    const auto data = tiny_patch_data(40, 3);
    auto base = tiny_image_base(2);
    auto mm = tiny_image_masked(base, 3);
    mm.forced_mask = 1.0;
    EXPECT_EQ(fidelity_delta(mm, data), 0.0);
    const auto report = evaluate(mm, data, 3);
    EXPECT_EQ(report.fidelity_delta, 0.0);
    EXPECT_EQ(report.base_metric, report.masked_metric);
    EXPECT_EQ(report.mean_mask, 1.0);
}

TEST(Fidelity, ZeroMaskCannotHelpTrainedClassifier) {
    auto s = TaskSpec::defaults(TaskKind::planted_patch);
    s.n = 200;
    s.seed = 5;
    s.height = 4;
    s.width = 4;
    const auto data = gen_planted_patch(s);
    auto base = tiny_image_base(4);
    train_base(base, data, quick_config(15, 16, 1));
    auto mm = tiny_image_masked(base, 5);
    mm.forced_mask = 0.0;
    EXPECT_LE(fidelity_delta(mm, data), 0.0);
}

// ---- report ----------------------------------------------------------------------------------

TEST(MetricsReport, JsonRoundTripAndKeySet) {
    MetricsReport r{0.9375, 0.91, -0.0275, 0.123456789012345, 0.0625, 0.95, 0.7, 3, 400};
    const auto text = r.to_json();
    EXPECT_EQ(MetricsReport::from_json(text), r);
    const auto j = nlohmann::json::parse(text);
    std::vector<std::string> keys;
    for (const auto& [key, value] : j.items()) keys.push_back(key);
    std::vector<std::string> expected(std::begin(kMetricsKeys), std::end(kMetricsKeys));
    std::sort(keys.begin(), keys.end());
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(keys, expected);
    EXPECT_EQ(r.to_json(), text);
}

TEST(MetricsReport, RejectsMalformedJson) {
    EXPECT_THROW(MetricsReport::from_json("{"), FormatError);
    EXPECT_THROW(MetricsReport::from_json("[1,2]"), FormatError);
    auto j = nlohmann::json::parse(MetricsReport{}.to_json());
    j["extra"] = 1;
    EXPECT_THROW(MetricsReport::from_json(j.dump()), FormatError);
    j.erase("extra");
    j["k"] = "three";
    EXPECT_THROW(MetricsReport::from_json(j.dump()), FormatError);
}

TEST(MetricsReport, ValidateFractions) {
    MetricsReport r{0.9, 0.9, 0.0, 0.5, 0.5, 1.0, 1.0, 3, 10};
    EXPECT_NO_THROW(r.validate());
    auto bad = r;
    bad.topk_attr_acc = 1.5;
    EXPECT_THROW(bad.validate(), DomainError);
    bad = r;
    bad.mask_l0_at_half = -0.1;
    EXPECT_THROW(bad.validate(), DomainError);
    bad = r;
    bad.n_examples = 0;
    EXPECT_THROW(bad.validate(), DomainError);
}

TEST(Evaluate, DeterministicAndConsistent) {
    const auto data = tiny_patch_data(30, 8);
    auto base = tiny_image_base(6);
    auto mm = tiny_image_masked(base, 7);
    const auto a = evaluate(mm, data, 3);
    const auto b = evaluate(mm, data, 3);
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(a.n_examples, 30);
    const auto p = predict_masked(mm, data, 7);
    EXPECT_EQ(a.masked_metric, dataset_metric(p.masked, data).value);
    EXPECT_EQ(a.base_metric, classification_accuracy(base, data));
    EXPECT_EQ(a.topk_attr_acc, topk_attribution_accuracy(p.masks, data.relevance, 3));
}

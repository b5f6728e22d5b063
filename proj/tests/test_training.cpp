#include "maskwright/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "maskwright/error.hpp"
#include "test_util.hpp"

using namespace maskwright;
using maskwright::testing::bitwise_equal;
using maskwright::testing::random_values;

namespace {

LayerSpec spec(const std::string& line) { return LayerSpec::parse(line); }

Tensor leaf(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor::from({n}, std::move(v), true);
}

void set_grad(Tensor& t, const std::vector<double>& g) {
    t.accumulate_grad(g);
}

// Independent restatement of the bias-corrected Adam update.
struct ReferenceAdam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> m, v;
    int t = 0;

    void step(std::vector<double>& p, const std::vector<double>& g) {
        if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
        ++t;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, t));
            const double vh = v[i] / (1 - std::pow(b2, t));
            p[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
};

// Regression data y = x . w + c on [n, d] inputs.
LabeledDataset linear_regression_data(int n, int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LabeledDataset data;
    data.input_shape = {d};
    data.inputs = random_values(static_cast<std::size_t>(n) * d, rng);
    const auto w = random_values(d, rng);
    for (int i = 0; i < n; ++i) {
        double y = 0.3;
        for (int j = 0; j < d; ++j) y += data.inputs[i * d + j] * w[j];
        data.targets.push_back(y);
        data.relevance.push_back({0});
    }
    return data;
}

// Two Gaussian blobs separated along the first axis.
LabeledDataset separable_data(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    LabeledDataset data;
    data.input_shape = {2};
    data.num_classes = 2;
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        data.inputs.push_back((label ? 2.0 : -2.0) + noise(rng));
        data.inputs.push_back(noise(rng));
        data.targets.push_back(label);
        data.relevance.push_back({0});
    }
    return data;
}

ModelGraph small_classifier(std::uint64_t seed) {
    return ModelGraph::build({spec("dense name=h in=2 units=6 activation=tanh"),
                              spec("dense name=out in=6 units=2 activation=identity")},
                             seed);
}

// Per-example [3, 2] inputs so that timestep dropout has a time axis.
LabeledDataset separable_steps(int n, std::uint64_t seed) {
    auto flat = separable_data(3 * n, seed);
    LabeledDataset data;
    data.input_shape = {3, 2};
    data.num_classes = 2;
    data.inputs = flat.inputs;
    for (int i = 0; i < n; ++i) {
        data.targets.push_back(flat.targets[3 * i]);
        data.relevance.push_back({0});
    }
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < 3; ++t) data.inputs[(3 * i + t) * 2] = std::abs(data.inputs[(3 * i + t) * 2]) *
                                                                  (data.targets[i] ? 1.0 : -1.0);
    return data;
}

ModelGraph dropout_classifier(std::uint64_t seed) {
    return ModelGraph::build({spec("dense name=h in=2 units=6 activation=tanh"), spec("dropout name=drop rate=0.3"),
                              spec("mean_over_time name=pool"),
                              spec("dense name=out in=6 units=2 activation=identity")},
                             seed);
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

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

// ---- optimizer_step -------------------------------------------------------------

TEST(OptimizerStep, SgdHandValue) {
    auto p = leaf({1.0});
    set_grad(p, {2.0});
    auto opt = OptimizerState::make(OptimizerKind::sgd, 0.1);
    optimizer_step(opt, {{"p", p}});
    EXPECT_DOUBLE_EQ(p.item(), 0.8);
    EXPECT_EQ(opt.step, 1);
    EXPECT_TRUE(opt.first_moment.empty());
    EXPECT_TRUE(opt.second_moment.empty());
}

TEST(OptimizerStep, AdamFirstStepIsSignedLearningRate) {
    auto p = leaf({0.5, -0.5, 2.0});
    set_grad(p, {3.0, -0.25, 1e-3});
    auto opt = OptimizerState::make(OptimizerKind::adam, 0.01);
    optimizer_step(opt, {{"p", p}});
    const double expect[] = {0.5 - 0.01, -0.5 + 0.01, 2.0 - 0.01};
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.at(i), expect[i], 0.01 * 1e-4) << i;
}

TEST(OptimizerStep, AdamTrajectoryMatchesReferenceFormulas) {
    std::mt19937_64 rng(3);
    std::vector<double> ref = random_values(5, rng);
    auto p = leaf(ref);
    auto opt = OptimizerState::make(OptimizerKind::adam, 0.05);
    ReferenceAdam oracle{0.05};
    for (int step = 0; step < 3; ++step) {
        const auto g = random_values(5, rng, -2.0, 2.0);
        set_grad(p, g);
        optimizer_step(opt, {{"p", p}});
        oracle.step(ref, g);
        for (int i = 0; i < 5; ++i) EXPECT_NEAR(p.at(i), ref[i], 1e-14) << "step " << step << " i " << i;
    }
    ASSERT_EQ(opt.first_moment.at("p").size(), 5u);
    ASSERT_EQ(opt.second_moment.at("p").size(), 5u);
    EXPECT_EQ(opt.step, 3);
}

TEST(OptimizerStep, AdamUpdateWithinLearningRateAlongTraining) {
    const auto data = separable_data(128, 13);
    auto model = small_classifier(6);
    const auto params = model.trainable_params();
    const double lr = 0.01;
    auto opt = OptimizerState::make(OptimizerKind::adam, lr);
    std::mt19937_64 rng(2);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (int step = 0; step < 300; ++step) {
        std::shuffle(order.begin(), order.end(), rng);
        const std::span<const std::size_t> idx(order.data(), 16);
        backward(cross_entropy_loss(graph_forward(model, data.input_batch(idx)), data.label_batch(idx)));
        std::vector<std::vector<double>> before;
        for (const auto& [name, p] : params) before.emplace_back(p.data().begin(), p.data().end());
        optimizer_step(opt, params);
        for (std::size_t k = 0; k < params.size(); ++k)
            for (std::size_t i = 0; i < before[k].size(); ++i)
                ASSERT_LE(std::abs(params[k].second.at(i) - before[k][i]), 1.1 * lr)
                    << params[k].first << " step " << step;
    }
}

TEST(OptimizerStep, AdamUpdateWithinAnalyticBoundUnderGradientJumps) {
    std::mt19937_64 rng(11);
    auto p = leaf(random_values(40, rng));
    const double lr = 0.01;
    const double bound = lr * (1 - kAdamBeta1) / std::sqrt(1 - kAdamBeta2);
    auto opt = OptimizerState::make(OptimizerKind::adam, lr);
    std::lognormal_distribution<double> scale(0.0, 3.0);
    for (int step = 0; step < 200; ++step) {
        auto g = random_values(40, rng);
        for (auto& x : g) x *= scale(rng);
        const std::vector<double> before(p.data().begin(), p.data().end());
        set_grad(p, g);
        optimizer_step(opt, {{"p", p}});
        for (int i = 0; i < 40; ++i) ASSERT_LE(std::abs(p.at(i) - before[i]), bound * (1 + 1e-12)) << step;
    }
}

TEST(OptimizerStep, ZeroesGradientsAfterStep) {
    auto p = leaf({1.0, 2.0});
    set_grad(p, {0.5, -0.5});
    auto opt = OptimizerState::make(OptimizerKind::sgd, 0.1);
    optimizer_step(opt, {{"p", p}});
    ASSERT_TRUE(p.has_grad());
    for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(OptimizerStep, MissingGradientIsStateError) {
    auto p = Tensor::from({1}, {1.0}, true);
    p.impl()->grad.clear();
    auto opt = OptimizerState::make(OptimizerKind::adam);
    EXPECT_THROW(optimizer_step(opt, {{"p", p}}), StateError);
    EXPECT_EQ(p.item(), 1.0);
    EXPECT_EQ(opt.step, 0);
}

TEST(OptimizerStep, DefaultLearningRates) {
    EXPECT_EQ(OptimizerState::make(OptimizerKind::adam).lr, 1e-3);
    EXPECT_EQ(OptimizerState::make(OptimizerKind::sgd).lr, 1e-2);
    EXPECT_THROW(OptimizerState::make(OptimizerKind::sgd, 0.0), ConfigError);
    EXPECT_THROW(OptimizerState::make(OptimizerKind::sgd, -1.0), ConfigError);
    EXPECT_EQ(parse_optimizer_kind("adam"), OptimizerKind::adam);
    EXPECT_EQ(parse_optimizer_kind(to_string(OptimizerKind::sgd)), OptimizerKind::sgd);
    EXPECT_THROW(parse_optimizer_kind("rmsprop"), ConfigError);
}

// ---- freeze_parameters ------------------------------------------------------------

TEST(FreezeParameters, FrozenStepLeavesParametersUnchanged) {
    auto model = small_classifier(5);
    freeze_parameters(model, true);
    EXPECT_TRUE(model.trainable_params().empty());
    NamedParams all(model.params.begin(), model.params.end());
    for (auto& [name, p] : all) {
        EXPECT_FALSE(p.requires_grad()) << name;
        EXPECT_FALSE(model.trainable.at(name)) << name;
    }
    const auto before = parameter_checksum(model);
    auto opt = OptimizerState::make(OptimizerKind::sgd, 0.5);
    optimizer_step(opt, all);
    EXPECT_EQ(parameter_checksum(model), before);
}

TEST(FreezeParameters, UnfreezeRestoresTrainability) {
    auto model = small_classifier(5);
    freeze_parameters(model, true);
    freeze_parameters(model, false);
    const auto params = model.trainable_params();
    ASSERT_EQ(params.size(), model.params.size());
    const auto data = separable_data(8, 1);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto loss = cross_entropy_loss(graph_forward(model, data.input_batch(idx)), data.label_batch(idx));
    backward(loss);
    const auto before = parameter_checksum(model);
    auto opt = OptimizerState::make(OptimizerKind::sgd, 0.1);
    optimizer_step(opt, params);
    EXPECT_NE(parameter_checksum(model), before);
}

TEST(FreezeParameters, ChecksumSeesEveryByte) {
    auto model = small_classifier(5);
    const auto before = parameter_checksum(model);
    Tensor w = model.param("out.bias");
    w.mutable_data()[1] = std::nextafter(w.at(1), 1.0);
    EXPECT_NE(parameter_checksum(model), before);
}

// ---- train_base -------------------------------------------------------------------

TEST(TrainBase, ZeroStepsLeaveParametersUnchanged) {
    auto model = small_classifier(2);
    const auto before = parameter_checksum(model);
    auto cfg = quick_config(3, 4, 9);
    cfg.max_steps = 0;
    const auto log = train_base(model, separable_data(16, 3), cfg);
    EXPECT_EQ(log.steps, 0);
    EXPECT_EQ(parameter_checksum(model), before);
}

TEST(TrainBase, ConvexSgdLossDecreasesMonotonically) {
    const auto data = linear_regression_data(40, 3, 17);
    auto model = ModelGraph::build({spec("dense name=lin in=3 units=1 activation=identity")}, 4);
    TrainConfig cfg = quick_config(100, 40, 1);
    cfg.optimizer = OptimizerKind::sgd;
    cfg.lr = 0.01;
    cfg.shuffle = false;
    const auto log = train_base(model, data, cfg);
    ASSERT_EQ(log.steps, 100);
    ASSERT_EQ(log.epochs.size(), 100u);
    for (std::size_t i = 1; i < log.epochs.size(); ++i)
        EXPECT_LT(log.epochs[i].task_loss, log.epochs[i - 1].task_loss) << "epoch " << i + 1;
}

TEST(TrainBase, SeparableDataReachesFullAccuracy) {
    const auto data = separable_data(200, 8);
    auto model = small_classifier(3);
    const auto log = train_base(model, data, quick_config(50, 16, 4));
    int epochs_needed = 0;
    for (const auto& r : log.epochs)
        if (r.metric >= 0.99) {
            epochs_needed = r.epoch;
            break;
        }
    EXPECT_GT(epochs_needed, 0);
    EXPECT_LE(epochs_needed, 50);
    EXPECT_EQ(model.mode, Mode::infer);
}

TEST(TrainBase, SameSeedIsBitwiseDeterministic) {
    const auto data = separable_steps(64, 8);
    auto a = dropout_classifier(3);
    auto b = dropout_classifier(3);
    const auto la = train_base(a, data, quick_config(4, 8, 21));
    const auto lb = train_base(b, data, quick_config(4, 8, 21));
    EXPECT_EQ(parameter_checksum(a), parameter_checksum(b));
    EXPECT_EQ(la.to_tsv(), lb.to_tsv());
    for (const auto& name : a.param_names()) EXPECT_TRUE(bitwise_equal(a.param(name).data(), b.param(name).data()));
    auto c = dropout_classifier(3);
    train_base(c, data, quick_config(4, 8, 22));
    EXPECT_NE(parameter_checksum(a), parameter_checksum(c));
}

TEST(TrainBase, NanLossIsDivergenceErrorNamingEpochAndBatch) {
    auto data = separable_data(16, 2);
    data.inputs[5 * 2] = std::numeric_limits<double>::quiet_NaN();
    auto model = small_classifier(1);
    auto cfg = quick_config(2, 4, 0);
    cfg.shuffle = false;
    try {
        train_base(model, data, cfg);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("batch 1"), std::string::npos) << msg;
    }
    EXPECT_EQ(model.mode, Mode::infer);
}

TEST(TrainBase, RejectsEmptyDataAndBadConfig) {
    auto model = small_classifier(1);
    LabeledDataset empty;
    empty.input_shape = {2};
    empty.num_classes = 2;
    EXPECT_THROW(train_base(model, empty, quick_config(1, 4, 0)), EmptyError);
    const auto data = separable_data(8, 1);
    EXPECT_THROW(train_base(model, data, quick_config(0, 4, 0)), ConfigError);
    EXPECT_THROW(train_base(model, data, quick_config(1, 0, 0)), ConfigError);
    auto cfg = quick_config(1, 4, 0);
    cfg.eval_every = 0;
    EXPECT_THROW(train_base(model, data, cfg), ConfigError);
}

TEST(TrainBase, MaxStepsStopsMidEpoch) {
    auto model = small_classifier(1);
    auto cfg = quick_config(5, 4, 0);
    cfg.max_steps = 6;
    const auto log = train_base(model, separable_data(16, 1), cfg);
    EXPECT_EQ(log.steps, 6);
    EXPECT_EQ(log.epochs.size(), 2u);
}

// ---- training log -------------------------------------------------------------------

TEST(TrainingLog, TsvHasHeaderAndSevenColumns) {
    auto model = small_classifier(1);
    std::ostringstream progress;
    auto cfg = quick_config(4, 8, 0);
    cfg.eval_every = 2;
    const auto log = train_base(model, separable_data(16, 1), cfg, &progress);
    std::istringstream lines(log.to_tsv());
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "epoch\ttask_loss\tl1\tl2\tentropy\tmetric\tmean_mask");
    int rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 6) << line;
        EXPECT_EQ(line.substr(0, line.find('\t')), std::to_string(rows));
    }
    EXPECT_EQ(rows, 4);
    const std::string streamed = progress.str();
    EXPECT_EQ(std::count(streamed.begin(), streamed.end(), '\n'), 3);  // header, epochs 2 and 4
}

TEST(TrainingLog, FormatsRecord) {
    EpochRecord r{3, 0.5, 0.25, 0.125, 0.0, 1.0, 0.75};
    EXPECT_EQ(format_log_record(r), "3\t0.5\t0.25\t0.125\t0\t1\t0.75");
}

// ---- train_explainer ----------------------------------------------------------------

TEST(TrainExplainer, FrozenBaseChecksumNeverChanges) {
    const auto data = tiny_patch_data(48, 2);
    auto base = tiny_image_base(7);
    train_base(base, data, quick_config(2, 8, 1));
    const auto base_sum = parameter_checksum(base);
    auto mm = tiny_image_masked(base, 8);
    // A stale trainable flag is re-frozen before training starts.
    mm.split.classifier.set_trainable("out.weight", true);
    const auto explainer_before = parameter_checksum(mm.explainer);
    for (int round = 0; round < 3; ++round) {
        auto cfg = quick_config(1, 8, 10 + round);
        cfg.reg.l2 = 1e-4;
        train_explainer(mm, data, cfg);
        EXPECT_EQ(parameter_checksum(base), base_sum) << round;
        EXPECT_EQ(parameter_checksum(mm.split.feature_extractor) ^ 0u,
                  parameter_checksum(mm.split.feature_extractor));
    }
    EXPECT_FALSE(mm.split.classifier.trainable.at("out.weight"));
    EXPECT_NE(parameter_checksum(mm.explainer), explainer_before);
    EXPECT_EQ(mm.explainer.mode, Mode::infer);
}

TEST(TrainExplainer, LogRecordsPenaltiesAndMeanMask) {
    const auto data = tiny_patch_data(32, 4);
    auto base = tiny_image_base(1);
    auto mm = tiny_image_masked(base, 2);
    auto cfg = quick_config(2, 8, 3);
    cfg.reg = RegularizerConfig::parse("l1=1e-3,l2=1e-4");
    const auto log = train_explainer(mm, data, cfg);
    ASSERT_EQ(log.epochs.size(), 2u);
    for (const auto& r : log.epochs) {
        EXPECT_GT(r.l1, 0.0);
        EXPECT_GT(r.l2, 0.0);
        EXPECT_EQ(r.entropy, 0.0);
        EXPECT_GT(r.mean_mask, 0.0);
        EXPECT_LT(r.mean_mask, 1.0);
        EXPECT_GE(r.metric, 0.0);
        EXPECT_LE(r.metric, 1.0);
    }
}

TEST(TrainExplainer, L2LowersMeanMask) {
    const auto data = tiny_patch_data(64, 6);
    auto base = tiny_image_base(3);
    train_base(base, data, quick_config(3, 8, 2));
    auto run = [&](double l2) {
        auto mm = tiny_image_masked(base, 4);
        auto cfg = quick_config(3, 8, 5);
        cfg.reg.l2 = l2;
        train_explainer(mm, data, cfg);
        std::vector<std::size_t> idx(data.size());
        std::iota(idx.begin(), idx.end(), 0);
        const auto m = compute_mask(mm, data.input_batch(idx));
        return mean_of(std::vector<double>(m.data().begin(), m.data().end()));
    };
    const double without = run(0.0);
    const double with = run(1e-4);
    EXPECT_LT(with, without);
}

TEST(TrainExplainer, UnregularizedMaskKeepsAccuracy) {
    auto s = TaskSpec::defaults(TaskKind::planted_patch);
    s.n = 400;
    s.seed = 12;
    s.height = 6;
    s.width = 6;
    const auto [train, test] = split_dataset(gen_planted_patch(s));
    auto base = ModelGraph::build({spec("conv2d name=c1 in=1 filters=4 kernel=3 activation=relu"),
                                   spec("global_pool name=gp mode=max"),
                                   spec("dense name=out in=4 units=2 activation=identity")},
                                  2);
    train_base(base, train, quick_config(30, 16, 3));
    std::vector<std::size_t> idx(test.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto accuracy = [&](const Tensor& logits) {
        const auto labels = test.label_batch(idx);
        int correct = 0;
        for (std::size_t i = 0; i < idx.size(); ++i)
            correct += (logits.at(2 * i + 1) > logits.at(2 * i)) == (labels[i] == 1);
        return static_cast<double>(correct) / idx.size();
    };
    const double base_acc = accuracy(graph_forward(base, test.input_batch(idx)));
    ASSERT_GE(base_acc, 0.9);
    auto explainer = ModelGraph::build(
        {spec("conv2d name=e1 in=4 filters=4 kernel=3 activation=tanh"),
         spec("conv2d name=e2 in=4 filters=1 kernel=1 activation=sigmoid"), spec("reshape name=em shape=6,6")},
        9);
    auto mm = make_masked_model(base, 1, explainer, {{6, 6}, {1, 6, 6}, 0}, MaskPoint::raw_input, {1, 6, 6});
    train_explainer(mm, train, quick_config(10, 16, 4));
    const double masked_acc = accuracy(masked_forward(mm, test.input_batch(idx)).output);
    EXPECT_GE(masked_acc, base_acc - 0.01);
}

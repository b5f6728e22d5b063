#include "maskwright/gradient_suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "maskwright/gradcheck.hpp"
#include "maskwright/layers.hpp"
#include "maskwright/mask_model.hpp"
#include "maskwright/objectives.hpp"

namespace maskwright {

namespace {

struct LayerCase {
    std::string line;
    Shape input;
    bool integer_input = false;
};

const std::vector<LayerCase>& layer_cases() {
    static const std::vector<LayerCase> cases{
        {"dense name=d in=4 units=3 activation=tanh", {4}},
        {"dense name=d in=3 units=2 activation=sigmoid", {2, 3}},
        {"dense name=d in=3 units=2 activation=identity bias=false", {3}},
        {"conv2d name=c in=2 filters=3 kernel=3 activation=tanh", {2, 5, 5}},
        {"conv2d name=c in=2 filters=2 kernel=2 activation=identity padding=valid", {2, 4, 3}},
        {"conv1d name=c in=2 filters=3 kernel=3 activation=selu", {2, 6}},
        {"gru name=g in=3 hidden=4", {5, 3}},
        {"bigru name=g in=3 hidden=2", {4, 3}},
        {"embedding name=e vocab=6 dim=3", {4}, true},
        {"batchnorm name=b features=3", {3}},
        {"batchnorm name=b features=2", {2, 3, 2}},
        {"upsample2x name=u", {2, 2, 3}},
        {"residual_block name=r in=2 filters=3 kernel=3 layers=3 activation=tanh dims=2", {2, 4, 4}},
        {"residual_block name=r in=2 filters=2 kernel=3 layers=2 activation=selu dims=1", {2, 6}},
        {"activation name=a fn=softplus", {3, 2}},
        {"mean_over_time name=m", {4, 3}},
        {"sum_over_time name=s", {4, 3}},
        {"reshape name=r shape=3,4", {12}},
        {"transpose name=t", {3, 5}},
        {"pool2x name=p mode=mean", {2, 4, 4}},
        {"pool2x name=p mode=max", {2, 4, 4}},
        {"global_pool name=g mode=mean", {3, 2, 2}},
        {"global_pool name=g mode=max", {3, 2, 2}},
        {"dropout name=d rate=0.3", {4, 3}},
    };
    return cases;
}

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(shape, std::move(v), requires_grad);
}

Tensor case_input(const LayerCase& c, int batch, std::mt19937_64& rng) {
    Shape shape{batch};
    shape.insert(shape.end(), c.input.begin(), c.input.end());
    if (!c.integer_input) return uniform(shape, rng, -1.0, 1.0, true);
    std::uniform_int_distribution<int> id(0, 5);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = id(rng);
    return Tensor::from(shape, v);
}

// Train mode exercises batch statistics and dropout; dropout is made
// deterministic by reseeding before every evaluation.
double check_layer(const LayerCase& c, std::uint64_t seed, double h) {
    std::mt19937_64 rng(seed);
    auto m = ModelGraph::build({LayerSpec::parse(c.line)}, seed);
    m.mode = Mode::train;
    const Tensor x = case_input(c, 2, rng);
    std::vector<Tensor> leaves;
    if (!c.integer_input) leaves.push_back(x);
    for (auto& [name, t] : m.trainable_params()) {
        std::uniform_real_distribution<double> dist(-0.7, 0.7);
        for (auto& e : Tensor(t).mutable_data()) e = dist(rng);
        leaves.push_back(t);
    }
    const std::uint64_t drop_seed = seed ^ 0x5bd1e995ULL;
    m.reseed(drop_seed);
    const Tensor weights = uniform(graph_forward(m, x).shape(), rng, -1.0, 1.0);
    auto loss = [&] {
        m.reseed(drop_seed);
        return sum(mul(square(graph_forward(m, x)), weights));
    };
    return finite_diff_check_params(loss, leaves, h);
}

double check_infer_batchnorm(std::uint64_t seed, double h) {
    std::mt19937_64 rng(seed);
    auto m = ModelGraph::build({LayerSpec::parse("batchnorm name=b features=3")}, seed);
    Tensor(m.param("b.running_mean")).mutable_data()[0] = 0.3;
    Tensor(m.param("b.running_var")).mutable_data()[1] = 1.7;
    const Tensor x = uniform({4, 3}, rng, -1.0, 1.0, true);
    std::vector<Tensor> leaves{x, m.param("b.gamma"), m.param("b.beta")};
    for (std::size_t i = 1; i < leaves.size(); ++i)
        for (auto& e : leaves[i].mutable_data()) e = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    return finite_diff_check_params([&] { return sum(square(graph_forward(m, x))); }, leaves, h);
}

using CaseFn = std::function<double(std::uint64_t seed, double h)>;

std::vector<std::pair<std::string, CaseFn>> loss_cases() {
    std::vector<std::pair<std::string, CaseFn>> out;
    auto add = [&out](std::string name, CaseFn fn) { out.push_back({std::move(name), std::move(fn)}); };
    add("cross_entropy_loss", [](std::uint64_t seed, double h) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> cls(0, 3);
        std::vector<int> labels(5);
        for (auto& l : labels) l = cls(rng);
        const Tensor z = uniform({5, 4}, rng, -3.0, 3.0);
        return finite_diff_check([&](const Tensor& t) { return cross_entropy_loss(t, labels); }, z, h);
    });
    add("mse_loss", [](std::uint64_t seed, double h) {
        std::mt19937_64 rng(seed);
        const Tensor target = uniform({6}, rng, -2.0, 2.0);
        return finite_diff_check([&](const Tensor& t) { return mse_loss(t, target); }, uniform({6}, rng, -2.0, 2.0),
                                 h);
    });
    add("l1_penalty", [](std::uint64_t seed, double h) {
        std::mt19937_64 rng(seed);
        return finite_diff_check([](const Tensor& t) { return l1_penalty(t, 0.3); }, uniform({3, 4}, rng, 0.05, 1.0),
                                 h);
    });
    add("l2_penalty", [](std::uint64_t seed, double h) {
        std::mt19937_64 rng(seed);
        return finite_diff_check([](const Tensor& t) { return l2_penalty(t, 0.3); }, uniform({3, 4}, rng, -1.0, 1.0),
                                 h);
    });
    for (auto kind : {EntropyKind::distribution, EntropyKind::bernoulli}) {
        add("entropy_penalty " + to_string(kind), [kind](std::uint64_t seed, double h) {
            std::mt19937_64 rng(seed);
            return finite_diff_check([kind](const Tensor& t) { return entropy_penalty_rows(t, 0.7, kind, 3); },
                                     uniform({3, 5}, rng, 0.05, 0.95), h);
        });
    }
    add("total_objective", [](std::uint64_t seed, double h) {
        std::mt19937_64 rng(seed);
        const Tensor task = uniform({2, 3}, rng, -1.0, 1.0, true);
        const Tensor mask = uniform({2, 6}, rng, 0.05, 0.95, true);
        RegularizerConfig reg{1e-1, 2e-1, 3e-1, EntropyKind::bernoulli};
        auto loss = [&] { return total_objective(cross_entropy_loss(task, {0, 2}), mask, reg, 2).total; };
        return finite_diff_check_params(loss, {task, mask}, h);
    });
    add("apply_mask", [](std::uint64_t seed, double h) {
        std::mt19937_64 rng(seed);
        const Tensor x = uniform({2, 3, 4}, rng, -1.0, 1.0, true);
        const Tensor m = uniform({2, 4}, rng, 0.0, 1.0, true);
        const Tensor w = uniform({2, 3, 4}, rng, -1.0, 1.0);
        BroadcastSpec spec{{4}, {3, 4}, 0};
        auto loss = [&] { return sum(mul(square(apply_mask(x, m, spec)), w)); };
        return finite_diff_check_params(loss, {x, m}, h);
    });
    return out;
}

}  // namespace

bool GradientSuiteReport::passed() const {
    for (const auto& c : cases)
        if (c.passed != c.instances) return false;
    return !cases.empty();
}

std::string GradientSuiteReport::summary() const {
    std::string out;
    char buf[256];
    for (const auto& c : cases) {
        std::snprintf(buf, sizeof buf, "%-90s %2d/%2d  max_rel_err=%.3e\n", c.name.c_str(), c.passed, c.instances,
                      c.max_error);
        out += buf;
    }
    return out;
}

GradientSuiteReport run_gradient_suite(std::uint64_t seed, int instances, double h, double tolerance) {
    const auto start = std::chrono::steady_clock::now();
    GradientSuiteReport report;
    report.tolerance = tolerance;
    auto run = [&](const std::string& name, const CaseFn& fn) {
        GradientCaseResult r{name, instances, 0, 0.0};
        for (int i = 0; i < instances; ++i) {
            const double err = fn(seed * 1000003ULL + static_cast<std::uint64_t>(i), h);
            if (err < tolerance) ++r.passed;
            r.max_error = std::isnan(err) || std::isnan(r.max_error) ? NAN : std::max(r.max_error, err);
        }
        report.cases.push_back(r);
    };
    for (const auto& c : layer_cases())
        run(c.line, [&c](std::uint64_t s, double step) { return check_layer(c, s, step); });
    run("batchnorm (infer mode)", check_infer_batchnorm);
    for (const auto& [name, fn] : loss_cases()) run(name, fn);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace maskwright

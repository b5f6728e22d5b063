#include "maskwright/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "maskwright/error.hpp"

namespace maskwright {

namespace {

// Appends batch outputs into one [n, ...] tensor.
struct Collector {
    Shape tail;
    std::vector<double> values;
    int rows = 0;

    void add(const Tensor& t) {
        Shape rest(t.shape().begin() + 1, t.shape().end());
        if (rows == 0) tail = rest;
        if (rest != tail) throw ShapeError("batch outputs disagree in shape");
        values.insert(values.end(), t.data().begin(), t.data().end());
        rows += t.dim(0);
    }

    Tensor tensor() const {
        Shape s{rows};
        s.insert(s.end(), tail.begin(), tail.end());
        return Tensor::from(s, values);
    }
};

template <typename Fn>
void for_each_batch(const LabeledDataset& data, int batch_size, Fn&& fn) {
    if (data.size() == 0) throw EmptyError("dataset is empty");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        fn(data.input_batch(idx));
    }
}

std::size_t per_example(const Tensor& masks, std::size_t examples) {
    if (examples == 0) throw EmptyError("no masks to score");
    if (masks.numel() % examples != 0)
        throw SizeError(std::to_string(masks.numel()) + " mask values do not split into " + std::to_string(examples) +
                        " examples");
    return masks.numel() / examples;
}

void check_relevance(const std::vector<int>& rel, std::size_t length) {
    if (rel.empty()) throw ConfigError("relevance set is empty");
    for (int r : rel)
        if (r < 0 || static_cast<std::size_t>(r) >= length)
            throw IndexError("relevance index " + std::to_string(r) + " outside mask of length " +
                             std::to_string(length));
}

// Calls fn(topk, relevance) per example after validating k and the relevance sets.
template <typename Fn>
double mean_over_examples(const Tensor& masks, const std::vector<std::vector<int>>& relevance, int k, Fn&& fn) {
    const std::size_t len = per_example(masks, relevance.size());
    if (k < 1) throw ConfigError("k must be at least 1");
    if (static_cast<std::size_t>(k) > len)
        throw ConfigError("k=" + std::to_string(k) + " exceeds mask length " + std::to_string(len));
    const auto all = masks.data();
    double total = 0.0;
    for (std::size_t i = 0; i < relevance.size(); ++i) {
        check_relevance(relevance[i], len);
        total += fn(topk_indices(all.subspan(i * len, len), k), relevance[i]);
    }
    return total / static_cast<double>(relevance.size());
}

void check_fraction(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError(std::string(name) + " must lie in [0,1]");
}

}  // namespace

std::string to_string(MetricKind k) { return k == MetricKind::accuracy ? "accuracy" : "rmse"; }

double accuracy(std::span<const double> logits, int classes, std::span<const int> labels) {
    if (labels.empty()) throw EmptyError("no predictions to score");
    if (classes < 1) throw ConfigError("classes must be positive");
    if (logits.size() != labels.size() * static_cast<std::size_t>(classes))
        throw SizeError(std::to_string(logits.size()) + " logits for " + std::to_string(labels.size()) + " labels of " +
                        std::to_string(classes) + " classes");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = logits.subspan(i * classes, classes);
        correct += std::max_element(row.begin(), row.end()) - row.begin() == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double rmse(std::span<const double> predictions, std::span<const double> targets) {
    if (targets.empty()) throw EmptyError("no predictions to score");
    if (predictions.size() != targets.size())
        throw SizeError(std::to_string(predictions.size()) + " predictions for " + std::to_string(targets.size()) +
                        " targets");
    double sum = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) sum += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
    return std::sqrt(sum / static_cast<double>(targets.size()));
}

SparsityStats mask_sparsity_stats(std::span<const double> masks) {
    if (masks.empty()) throw EmptyError("no mask values");
    double sum = 0.0;
    std::size_t above = 0;
    for (double m : masks) {
        sum += m;
        above += m > 0.5;
    }
    const double n = static_cast<double>(masks.size());
    return {sum / n, above / n};
}

SparsityStats mask_sparsity_stats(const Tensor& masks) { return mask_sparsity_stats(masks.data()); }

std::vector<int> topk_indices(std::span<const double> values, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > values.size())
        throw ConfigError("k=" + std::to_string(k) + " outside [1," + std::to_string(values.size()) + "]");
    std::vector<int> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        return values[a] > values[b] || (values[a] == values[b] && a < b);
    });
    order.resize(k);
    return order;
}

double topk_attribution_accuracy(const Tensor& masks, const std::vector<std::vector<int>>& relevance, int k) {
    return mean_over_examples(masks, relevance, k, [](const std::vector<int>& top, const std::vector<int>& rel) {
        for (int t : top)
            if (std::find(rel.begin(), rel.end(), t) != rel.end()) return 1.0;
        return 0.0;
    });
}

double topk_overlap(const Tensor& masks, const std::vector<std::vector<int>>& relevance, int k) {
    return mean_over_examples(masks, relevance, k, [k](const std::vector<int>& top, const std::vector<int>& rel) {
        std::size_t hits = 0;
        for (int t : top) hits += std::find(rel.begin(), rel.end(), t) != rel.end();
        return static_cast<double>(hits) / static_cast<double>(std::min<std::size_t>(k, rel.size()));
    });
}

Tensor predict(ModelGraph& model, const LabeledDataset& data, int batch_size) {
    NoGradGuard guard;
    const Mode saved = model.mode;
    model.mode = Mode::infer;
    Collector out;
    try {
        for_each_batch(data, batch_size, [&](const Tensor& x) { out.add(graph_forward(model, x)); });
    } catch (...) {
        model.mode = saved;
        throw;
    }
    model.mode = saved;
    return out.tensor();
}

MaskedPredictions predict_masked(MaskedModel& mm, const LabeledDataset& data, int batch_size) {
    NoGradGuard guard;
    const Mode saved = mm.explainer.mode;
    mm.explainer.mode = Mode::infer;
    Collector base, masked, masks;
    try {
        for_each_batch(data, batch_size, [&](const Tensor& x) {
            base.add(base_forward(mm, x));
            const auto out = masked_forward(mm, x);
            masked.add(out.output);
            masks.add(out.mask);
        });
    } catch (...) {
        mm.explainer.mode = saved;
        throw;
    }
    mm.explainer.mode = saved;
    return {base.tensor(), masked.tensor(), masks.tensor()};
}

Metric dataset_metric(const Tensor& outputs, const LabeledDataset& data) {
    if (data.is_classification()) {
        std::vector<std::size_t> idx(data.size());
        std::iota(idx.begin(), idx.end(), 0);
        const auto labels = data.label_batch(idx);
        return {MetricKind::accuracy, accuracy(outputs.data(), data.num_classes, labels)};
    }
    return {MetricKind::rmse, rmse(outputs.data(), data.targets)};
}

double classification_accuracy(ModelGraph& model, const LabeledDataset& data) {
    if (!data.is_classification()) throw ConfigError("accuracy needs a classification dataset");
    return dataset_metric(predict(model, data), data).value;
}

double regression_rmse(ModelGraph& model, const LabeledDataset& data) {
    if (data.is_classification()) throw ConfigError("rmse needs a regression dataset");
    return dataset_metric(predict(model, data), data).value;
}

double fidelity_delta(const Metric& base, const Metric& masked) {
    if (base.kind != masked.kind)
        throw ConfigError("cannot compare " + to_string(base.kind) + " with " + to_string(masked.kind));
    return base.kind == MetricKind::accuracy ? masked.value - base.value : base.value - masked.value;
}

double fidelity_delta(MaskedModel& mm, const LabeledDataset& data) {
    const auto p = predict_masked(mm, data);
    return fidelity_delta(dataset_metric(p.base, data), dataset_metric(p.masked, data));
}

void MetricsReport::validate() const {
    if (!(mean_mask >= 0.0)) throw DomainError("mean_mask must be nonnegative");
    check_fraction(mask_l0_at_half, "mask_l0_at_half");
    check_fraction(topk_attr_acc, "topk_attr_acc");
    check_fraction(topk_overlap, "topk_overlap");
    if (k < 1) throw DomainError("k must be at least 1");
    if (n_examples < 1) throw DomainError("n_examples must be positive");
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["base_metric"] = base_metric;
    j["masked_metric"] = masked_metric;
    j["fidelity_delta"] = fidelity_delta;
    j["mean_mask"] = mean_mask;
    j["mask_l0_at_half"] = mask_l0_at_half;
    j["topk_attr_acc"] = topk_attr_acc;
    j["topk_overlap"] = topk_overlap;
    j["k"] = k;
    j["n_examples"] = n_examples;
    return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("metrics JSON is not an object");
    if (j.size() != std::size(kMetricsKeys)) throw FormatError("metrics JSON has unexpected keys");
    MetricsReport r;
    try {
        r.base_metric = j.at("base_metric").get<double>();
        r.masked_metric = j.at("masked_metric").get<double>();
        r.fidelity_delta = j.at("fidelity_delta").get<double>();
        r.mean_mask = j.at("mean_mask").get<double>();
        r.mask_l0_at_half = j.at("mask_l0_at_half").get<double>();
        r.topk_attr_acc = j.at("topk_attr_acc").get<double>();
        r.topk_overlap = j.at("topk_overlap").get<double>();
        r.k = j.at("k").get<int>();
        r.n_examples = j.at("n_examples").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics JSON: ") + e.what());
    }
    return r;
}

MetricsReport evaluate(MaskedModel& mm, const LabeledDataset& data, int k) {
    const auto p = predict_masked(mm, data);
    const Metric base = dataset_metric(p.base, data);
    const Metric masked = dataset_metric(p.masked, data);
    const auto stats = mask_sparsity_stats(p.masks);
    MetricsReport r;
    r.base_metric = base.value;
    r.masked_metric = masked.value;
    r.fidelity_delta = fidelity_delta(base, masked);
    r.mean_mask = stats.mean_mask;
    r.mask_l0_at_half = stats.l0_at_half;
    r.topk_attr_acc = topk_attribution_accuracy(p.masks, data.relevance, k);
    r.topk_overlap = topk_overlap(p.masks, data.relevance, k);
    r.k = k;
    r.n_examples = static_cast<int>(data.size());
    return r;
}

}  // namespace maskwright

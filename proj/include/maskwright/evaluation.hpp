#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskwright/layers.hpp"
#include "maskwright/mask_model.hpp"
#include "maskwright/tasks.hpp"

namespace maskwright {

enum class MetricKind { accuracy, rmse };

std::string to_string(MetricKind k);

struct Metric {
    MetricKind kind = MetricKind::accuracy;
    double value = 0.0;
};

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(std::span<const double> logits, int classes, std::span<const int> labels);
double rmse(std::span<const double> predictions, std::span<const double> targets);

struct SparsityStats {
    double mean_mask = 0.0;
    double l0_at_half = 0.0;  // fraction strictly above 0.5
};

SparsityStats mask_sparsity_stats(std::span<const double> masks);
SparsityStats mask_sparsity_stats(const Tensor& masks);

// Indices of the k largest values, descending, lower index first on ties.
std::vector<int> topk_indices(std::span<const double> values, int k);

// `masks` holds one flattened mask per relevance set. An example scores 1 when
// any of its top-k mask positions is relevant.
double topk_attribution_accuracy(const Tensor& masks, const std::vector<std::vector<int>>& relevance, int k = 3);

// Mean of |topk ∩ relevance| / min(k, |relevance|).
double topk_overlap(const Tensor& masks, const std::vector<std::vector<int>>& relevance, int k);

// Infer-mode outputs for every example, computed in batches without a tape.
Tensor predict(ModelGraph& model, const LabeledDataset& data, int batch_size = 256);

struct MaskedPredictions {
    Tensor base;    // outputs of the unmasked base path
    Tensor masked;  // outputs with the mask applied
    Tensor masks;   // [n, mask_shape...]
};

MaskedPredictions predict_masked(MaskedModel& mm, const LabeledDataset& data, int batch_size = 256);

// Accuracy for classification data, RMSE for regression data.
Metric dataset_metric(const Tensor& outputs, const LabeledDataset& data);

double classification_accuracy(ModelGraph& model, const LabeledDataset& data);
double regression_rmse(ModelGraph& model, const LabeledDataset& data);

// masked - base for accuracy, base - masked for RMSE; positive is better.
double fidelity_delta(const Metric& base, const Metric& masked);
double fidelity_delta(MaskedModel& mm, const LabeledDataset& data);

struct MetricsReport {
    double base_metric = 0.0;
    double masked_metric = 0.0;
    double fidelity_delta = 0.0;
    double mean_mask = 0.0;
    double mask_l0_at_half = 0.0;
    double topk_attr_acc = 0.0;
    double topk_overlap = 0.0;
    int k = 3;
    int n_examples = 0;

    bool operator==(const MetricsReport&) const = default;

    // Throws DomainError when a fraction leaves [0,1] or counts are invalid.
    // mean_mask is only bounded below since softplus heads exceed 1.
    void validate() const;
    std::string to_json() const;
    static MetricsReport from_json(const std::string& text);
};

inline constexpr const char* kMetricsKeys[] = {"base_metric",     "masked_metric", "fidelity_delta",
                                               "mean_mask",       "mask_l0_at_half", "topk_attr_acc",
                                               "topk_overlap",    "k",             "n_examples"};

MetricsReport evaluate(MaskedModel& mm, const LabeledDataset& data, int k = 3);

}  // namespace maskwright

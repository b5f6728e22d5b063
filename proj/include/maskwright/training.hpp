#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "maskwright/layers.hpp"
#include "maskwright/mask_model.hpp"
#include "maskwright/objectives.hpp"
#include "maskwright/tasks.hpp"

namespace maskwright {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& text);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;
inline constexpr double kDefaultAdamLr = 1e-3;
inline constexpr double kDefaultSgdLr = 1e-2;

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = kDefaultAdamLr;
    double beta1 = kAdamBeta1;
    double beta2 = kAdamBeta2;
    double epsilon = kAdamEpsilon;
    std::map<std::string, std::vector<double>> first_moment;
    std::map<std::string, std::vector<double>> second_moment;
    long step = 0;

    // lr defaults per kind when not given.
    static OptimizerState make(OptimizerKind kind, std::optional<double> lr = std::nullopt);
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Applies one update to every parameter, then zeroes the gradients.
// Throws StateError when a trainable parameter carries no gradient.
void optimizer_step(OptimizerState& opt, const NamedParams& params);

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 0;
    bool shuffle = true;
    RegularizerConfig reg;
    int eval_every = 1;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::optional<double> lr;
    // Stops after this many optimizer steps (the partial epoch is still logged).
    std::optional<long> max_steps;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double task_loss = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double entropy = 0.0;
    double metric = 0.0;  // running train accuracy or RMSE over the epoch
    double mean_mask = 0.0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    long steps = 0;

    // One header line then one tab-separated record per epoch.
    std::string to_tsv() const;
};

std::string format_log_record(const EpochRecord& r);
inline constexpr const char* kLogHeader = "epoch\ttask_loss\tl1\tl2\tentropy\tmetric\tmean_mask";

// Trains every trainable parameter of `model` on the task loss. The model is
// left in infer mode. Progress records go to `progress` every eval_every epochs.
TrainingLog train_base(ModelGraph& model, const LabeledDataset& data, const TrainConfig& cfg,
                       std::ostream* progress = nullptr);

// Trains the explainer against the frozen base path (re-frozen here).
TrainingLog train_explainer(MaskedModel& mm, const LabeledDataset& data, const TrainConfig& cfg,
                            std::ostream* progress = nullptr);

// CRC32 over every parameter name and its float64 bytes, in name order.
std::uint32_t parameter_checksum(const ModelGraph& model);

// Per-batch task loss: cross entropy for classification data, MSE otherwise.
Tensor task_loss(const Tensor& output, const LabeledDataset& data, std::span<const std::size_t> indices);

}  // namespace maskwright

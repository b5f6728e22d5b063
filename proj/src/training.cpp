#include "maskwright/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <zlib.h>

#include "maskwright/error.hpp"

namespace maskwright {

namespace {

// Accumulates the epoch's running loss terms and train metric.
struct EpochAccumulator {
    bool classification = true;
    double task = 0, l1 = 0, l2 = 0, entropy = 0, mask_sum = 0;
    std::size_t examples = 0, batches = 0, mask_values = 0, correct = 0;
    double squared_error = 0;

    void add_batch(const ObjectiveTerms& terms, std::size_t batch) {
        task += terms.task * batch;
        l1 += terms.l1 * batch;
        l2 += terms.l2 * batch;
        entropy += terms.entropy * batch;
        examples += batch;
        ++batches;
    }

    void add_outputs(const Tensor& output, const LabeledDataset& data, std::span<const std::size_t> indices) {
        auto v = output.data();
        if (classification) {
            const int k = output.dim(-1);
            for (std::size_t i = 0; i < indices.size(); ++i) {
                const double* row = v.data() + i * k;
                const int pred = static_cast<int>(std::max_element(row, row + k) - row);
                correct += pred == static_cast<int>(data.targets[indices[i]]);
            }
        } else {
            for (std::size_t i = 0; i < indices.size(); ++i) {
                const double d = v[i] - data.targets[indices[i]];
                squared_error += d * d;
            }
        }
    }

    void add_mask(const Tensor& mask) {
        for (double m : mask.data()) mask_sum += m;
        mask_values += mask.numel();
    }

    EpochRecord finish(int epoch) const {
        EpochRecord r;
        r.epoch = epoch;
        const double n = static_cast<double>(std::max<std::size_t>(examples, 1));
        r.task_loss = task / n;
        r.l1 = l1 / n;
        r.l2 = l2 / n;
        r.entropy = entropy / n;
        r.metric = classification ? correct / n : std::sqrt(squared_error / n);
        r.mean_mask = mask_values ? mask_sum / mask_values : 0.0;
        return r;
    }
};

std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) std::shuffle(order.begin(), order.end(), rng);
    return order;
}

void check_finite(double loss, int epoch, std::size_t batch) {
    if (!std::isfinite(loss))
        throw DivergenceError("loss became " + std::string(std::isnan(loss) ? "NaN" : "infinite") + " at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch));
}

void emit(std::ostream* progress, const EpochRecord& r, const TrainConfig& cfg, bool last) {
    if (!progress) return;
    if (r.epoch % cfg.eval_every == 0 || last) *progress << format_log_record(r) << '\n';
}

template <typename StepFn>
TrainingLog run_epochs(const LabeledDataset& data, const TrainConfig& cfg, std::ostream* progress, StepFn&& step) {
    cfg.validate();
    if (data.size() == 0) throw EmptyError("training dataset is empty");
    std::mt19937_64 rng(cfg.seed);
    TrainingLog log;
    if (progress) *progress << kLogHeader << '\n';
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.max_steps && log.steps >= *cfg.max_steps) break;
        EpochAccumulator acc;
        acc.classification = data.is_classification();
        const auto order = epoch_order(data.size(), cfg.shuffle, rng);
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
            if (cfg.max_steps && log.steps >= *cfg.max_steps) break;
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            step(idx, acc, epoch, batch_no);
            ++log.steps;
        }
        log.epochs.push_back(acc.finish(epoch));
        emit(progress, log.epochs.back(), cfg, epoch == cfg.epochs);
    }
    return log;
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer_kind(const std::string& text) {
    if (text == "adam") return OptimizerKind::adam;
    if (text == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + text + "'");
}

OptimizerState OptimizerState::make(OptimizerKind kind, std::optional<double> lr) {
    OptimizerState s;
    s.kind = kind;
    s.lr = lr.value_or(kind == OptimizerKind::adam ? kDefaultAdamLr : kDefaultSgdLr);
    if (!(s.lr > 0.0) || !std::isfinite(s.lr)) throw ConfigError("learning rate must be positive");
    return s;
}

void optimizer_step(OptimizerState& opt, const NamedParams& params) {
    for (const auto& [name, p] : params)
        if (p.requires_grad() && !p.has_grad()) throw StateError("parameter '" + name + "' has no gradient");
    ++opt.step;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (const auto& [name, param] : params) {
        if (!param.requires_grad()) continue;
        Tensor p = param;
        auto value = p.mutable_data();
        auto grad = p.grad();
        if (opt.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < value.size(); ++i) value[i] -= opt.lr * grad[i];
        } else {
            auto& m = opt.first_moment[name];
            auto& v = opt.second_moment[name];
            if (m.empty()) {
                m.assign(value.size(), 0.0);
                v.assign(value.size(), 0.0);
            }
            if (m.size() != value.size()) throw StateError("moment buffer for '" + name + "' has the wrong size");
            for (std::size_t i = 0; i < value.size(); ++i) {
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
                const double mhat = m[i] / c1, vhat = v[i] / c2;
                value[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.epsilon);
            }
        }
        p.zero_grad();
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (max_steps && *max_steps < 0) throw ConfigError("max_steps must be nonnegative");
    if (lr && !(*lr > 0.0)) throw ConfigError("learning rate must be positive");
    reg.validate();
}

std::string format_log_record(const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", r.epoch, r.task_loss, r.l1, r.l2,
                  r.entropy, r.metric, r.mean_mask);
    return buf;
}

std::string TrainingLog::to_tsv() const {
    std::string out = std::string(kLogHeader) + "\n";
    for (const auto& r : epochs) out += format_log_record(r) + "\n";
    return out;
}

std::uint32_t parameter_checksum(const ModelGraph& model) {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto& [name, t] : model.params) {
        crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
        auto v = t.data();
        crc = crc32(crc, reinterpret_cast<const Bytef*>(v.data()), static_cast<uInt>(v.size_bytes()));
    }
    return static_cast<std::uint32_t>(crc);
}

Tensor task_loss(const Tensor& output, const LabeledDataset& data, std::span<const std::size_t> indices) {
    if (data.is_classification()) return cross_entropy_loss(output, data.label_batch(indices));
    return mse_loss(output, data.target_batch(indices));
}

TrainingLog train_base(ModelGraph& model, const LabeledDataset& data, const TrainConfig& cfg, std::ostream* progress) {
    auto opt = OptimizerState::make(cfg.optimizer, cfg.lr);
    const NamedParams params = model.trainable_params();
    model.reseed(cfg.seed ^ 0xD1B54A32D192ED03ULL);
    model.mode = Mode::train;
    TrainingLog log;
    try {
        log = run_epochs(data, cfg, progress,
                         [&](std::span<const std::size_t> idx, EpochAccumulator& acc, int epoch, std::size_t batch) {
                             const Tensor out = graph_forward(model, data.input_batch(idx));
                             const Tensor loss = task_loss(out, data, idx);
                             check_finite(loss.item(), epoch, batch);
                             ObjectiveTerms terms;
                             terms.task = loss.item();
                             acc.add_batch(terms, idx.size());
                             acc.add_outputs(out, data, idx);
                             backward(loss);
                             optimizer_step(opt, params);
                         });
    } catch (...) {
        model.mode = Mode::infer;
        throw;
    }
    model.mode = Mode::infer;
    return log;
}

TrainingLog train_explainer(MaskedModel& mm, const LabeledDataset& data, const TrainConfig& cfg,
                            std::ostream* progress) {
    freeze_parameters(mm.split.feature_extractor, true);
    freeze_parameters(mm.split.classifier, true);
    auto opt = OptimizerState::make(cfg.optimizer, cfg.lr);
    const NamedParams params = mm.explainer.trainable_params();
    mm.explainer.reseed(cfg.seed ^ 0xD1B54A32D192ED03ULL);
    mm.explainer.mode = Mode::train;
    TrainingLog log;
    try {
        log = run_epochs(data, cfg, progress,
                         [&](std::span<const std::size_t> idx, EpochAccumulator& acc, int epoch, std::size_t batch) {
                             const auto out = masked_forward(mm, data.input_batch(idx));
                             const Tensor loss = task_loss(out.output, data, idx);
                             const auto terms =
                                 total_objective(loss, out.mask, cfg.reg, static_cast<int>(idx.size()));
                             check_finite(terms.total.item(), epoch, batch);
                             acc.add_batch(terms, idx.size());
                             acc.add_outputs(out.output, data, idx);
                             acc.add_mask(out.mask);
                             backward(terms.total);
                             optimizer_step(opt, params);
                         });
    } catch (...) {
        mm.explainer.mode = Mode::infer;
        throw;
    }
    mm.explainer.mode = Mode::infer;
    return log;
}

}  // namespace maskwright

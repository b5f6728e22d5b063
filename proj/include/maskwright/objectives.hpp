#pragma once

#include <string>
#include <vector>

#include "maskwright/tensor.hpp"

namespace maskwright {

enum class EntropyKind { distribution, bernoulli };

std::string to_string(EntropyKind k);
EntropyKind parse_entropy_kind(const std::string& text);

struct RegularizerConfig {
    double l1 = 0.0;
    double l2 = 0.0;
    double entropy = 0.0;
    EntropyKind entropy_kind = EntropyKind::distribution;

    // Throws ConfigError for negative or non-finite coefficients.
    void validate() const;
    // "l1=…,l2=…,entropy=…,entropy_kind=…"; omitted keys keep their defaults.
    static RegularizerConfig parse(const std::string& text);
    static RegularizerConfig parse(const std::string& text, RegularizerConfig base);
    std::string to_string() const;
};

// Mean over rows of -log softmax(logits)[label], logits [n,K].
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

// Mean squared error; pred and target must hold the same number of values.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

Tensor l1_penalty(const Tensor& m, double coeff);
Tensor l2_penalty(const Tensor& m, double coeff);
// Treats all of m as one mask.
Tensor entropy_penalty(const Tensor& m, double coeff, EntropyKind kind);
// Splits m into `rows` equal masks and returns coeff times their mean entropy.
Tensor entropy_penalty_rows(const Tensor& m, double coeff, EntropyKind kind, int rows);

struct ObjectiveTerms {
    Tensor total;
    double task = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double entropy = 0.0;
};

// task_loss + penalties. With batch_size > 1 the mask holds one mask per
// example and each penalty is averaged over examples.
ObjectiveTerms total_objective(const Tensor& task_loss, const Tensor& mask, const RegularizerConfig& reg,
                               int batch_size = 1);

}  // namespace maskwright

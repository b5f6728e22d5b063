#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskwright/evaluation.hpp"
#include "maskwright/tensor.hpp"

namespace maskwright {

// ---- PGM heatmaps ---------------------------------------------------------------

struct PgmImage {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<int> pixels;  // row-major

    bool operator==(const PgmImage&) const = default;
};

// round(255 * clamp(m, 0, 1)), halves rounded away from zero.
int mask_to_gray(double m);

// Plain "P2" text for a [H,W] mask. Throws ShapeError for other ranks and
// DomainError for negative or NaN values.
std::string pgm_text(const Tensor& mask);
PgmImage parse_pgm(const std::string& text);
void export_pgm(const Tensor& mask, const std::filesystem::path& path);
PgmImage read_pgm(const std::filesystem::path& path);

// ---- token weights -----------------------------------------------------------------

inline constexpr const char* kTokenHeader = "token\tweight";
inline constexpr int kTopTokens = 5;

struct TokenSummary {
    std::string label;
    std::vector<std::pair<std::string, double>> top;  // descending mean weight

    bool operator==(const TokenSummary&) const = default;
};

struct TokenWeights {
    std::vector<std::string> tokens;
    std::vector<double> weights;
    std::vector<TokenSummary> summaries;
};

// Mean weight of every token within the examples of each label, best `top`
// first with ties broken by token text. Labels keep first-appearance order.
std::vector<TokenSummary> top_tokens_by_label(const std::vector<std::vector<std::string>>& tokens,
                                              const std::vector<std::vector<double>>& weights,
                                              const std::vector<std::string>& labels, int top = kTopTokens);

// Header, one "token<TAB>weight" line per token (6 fractional digits), then one
// "#top5<TAB>label<TAB>token=weight..." line per summary. Throws SizeError when
// tokens and mask lengths differ.
std::string token_weights_text(const std::vector<std::string>& tokens, std::span<const double> weights,
                               const std::vector<TokenSummary>& summaries = {});
std::string token_weights_text(const std::vector<std::string>& tokens, const Tensor& mask,
                               const std::vector<TokenSummary>& summaries = {});
TokenWeights parse_token_weights(const std::string& text);
void export_token_weights(const std::vector<std::string>& tokens, std::span<const double> weights,
                          const std::filesystem::path& path, const std::vector<TokenSummary>& summaries = {});
void export_token_weights(const std::vector<std::string>& tokens, const Tensor& mask,
                          const std::filesystem::path& path, const std::vector<TokenSummary>& summaries = {});

// ---- metrics ---------------------------------------------------------------------------

void export_metrics(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_metrics(const std::filesystem::path& path);

}  // namespace maskwright

#include "maskwright/exports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "maskwright/error.hpp"
#include "maskwright/file_io.hpp"

namespace maskwright {

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
        out.push_back(line.substr(start, tab - start));
    out.push_back(line.substr(start));
    return out;
}

double parse_number(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw FormatError("bad " + what + " '" + text + "'");
    return v;
}

}  // namespace

int mask_to_gray(double m) { return static_cast<int>(std::round(255.0 * std::clamp(m, 0.0, 1.0))); }

std::string pgm_text(const Tensor& mask) {
    if (mask.rank() != 2) throw ShapeError("heatmap needs a [H,W] mask, got " + shape_str(mask.shape()));
    const int h = mask.dim(0), w = mask.dim(1);
    std::string out = "P2\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const auto v = mask.data();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double m = v[r * w + c];
            if (!(m >= 0.0)) throw DomainError("heatmap mask values must be nonnegative");
            out += (c ? " " : "") + std::to_string(mask_to_gray(m));
        }
        out += "\n";
    }
    return out;
}

PgmImage parse_pgm(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    PgmImage img;
    if (!(in >> magic) || magic != "P2") throw FormatError("not a plain PGM file: bad magic");
    if (!(in >> img.width >> img.height >> img.maxval) || img.width < 0 || img.height < 0 || img.maxval < 1)
        throw FormatError("bad PGM header");
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (auto& p : img.pixels)
        if (!(in >> p) || p < 0 || p > img.maxval) throw FormatError("bad or missing PGM pixel");
    std::string extra;
    if (in >> extra) throw FormatError("trailing data after PGM pixels");
    return img;
}

void export_pgm(const Tensor& mask, const std::filesystem::path& path) { write_text_file(path, pgm_text(mask)); }

PgmImage read_pgm(const std::filesystem::path& path) { return parse_pgm(read_text_file(path)); }

std::vector<TokenSummary> top_tokens_by_label(const std::vector<std::vector<std::string>>& tokens,
                                              const std::vector<std::vector<double>>& weights,
                                              const std::vector<std::string>& labels, int top) {
    if (tokens.size() != weights.size() || tokens.size() != labels.size())
        throw SizeError("token, weight and label lists differ in length");
    if (top < 1) throw ConfigError("top must be positive");
    std::vector<std::string> order;
    std::map<std::string, std::map<std::string, std::pair<double, int>>> totals;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].size() != weights[i].size())
            throw SizeError("example " + std::to_string(i) + " has " + std::to_string(tokens[i].size()) +
                            " tokens but " + std::to_string(weights[i].size()) + " weights");
        if (!totals.count(labels[i])) order.push_back(labels[i]);
        auto& bucket = totals[labels[i]];
        for (std::size_t t = 0; t < tokens[i].size(); ++t) {
            auto& [sum, count] = bucket[tokens[i][t]];
            sum += weights[i][t];
            ++count;
        }
    }
    std::vector<TokenSummary> out;
    for (const auto& label : order) {
        TokenSummary s{label, {}};
        for (const auto& [tok, sc] : totals[label]) s.top.emplace_back(tok, sc.first / sc.second);
        std::stable_sort(s.top.begin(), s.top.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        if (s.top.size() > static_cast<std::size_t>(top)) s.top.resize(top);
        out.push_back(std::move(s));
    }
    return out;
}

std::string token_weights_text(const std::vector<std::string>& tokens, const Tensor& mask,
                               const std::vector<TokenSummary>& summaries) {
    return token_weights_text(tokens, mask.data(), summaries);
}

std::string token_weights_text(const std::vector<std::string>& tokens, std::span<const double> w,
                               const std::vector<TokenSummary>& summaries) {
    if (tokens.size() != w.size())
        throw SizeError(std::to_string(tokens.size()) + " tokens but " + std::to_string(w.size()) + " mask weights");
    std::string out = std::string(kTokenHeader) + "\n";
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].find_first_of("\t\n") != std::string::npos || (!tokens[i].empty() && tokens[i][0] == '#'))
            throw FormatError("token '" + tokens[i] + "' cannot be written to TSV");
        out += tokens[i] + "\t" + fixed6(w[i]) + "\n";
    }
    for (const auto& s : summaries) {
        out += "#top" + std::to_string(kTopTokens) + "\t" + s.label;
        for (const auto& [tok, weight] : s.top) out += "\t" + tok + "=" + fixed6(weight);
        out += "\n";
    }
    return out;
}

TokenWeights parse_token_weights(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kTokenHeader) throw FormatError("token weights file lacks its header");
    TokenWeights out;
    const std::string summary_tag = "#top" + std::to_string(kTopTokens);
    while (std::getline(in, line)) {
        const auto fields = split_tabs(line);
        if (fields[0] == summary_tag) {
            if (fields.size() < 2) throw FormatError("summary line without a label");
            TokenSummary s{fields[1], {}};
            for (std::size_t i = 2; i < fields.size(); ++i) {
                const auto eq = fields[i].rfind('=');
                if (eq == std::string::npos) throw FormatError("bad summary entry '" + fields[i] + "'");
                s.top.emplace_back(fields[i].substr(0, eq), parse_number(fields[i].substr(eq + 1), "summary weight"));
            }
            out.summaries.push_back(std::move(s));
            continue;
        }
        if (fields.size() != 2) throw FormatError("expected token<TAB>weight, got '" + line + "'");
        out.tokens.push_back(fields[0]);
        out.weights.push_back(parse_number(fields[1], "token weight"));
    }
    return out;
}

void export_token_weights(const std::vector<std::string>& tokens, std::span<const double> weights,
                          const std::filesystem::path& path, const std::vector<TokenSummary>& summaries) {
    write_text_file(path, token_weights_text(tokens, weights, summaries));
}

void export_token_weights(const std::vector<std::string>& tokens, const Tensor& mask,
                          const std::filesystem::path& path, const std::vector<TokenSummary>& summaries) {
    export_token_weights(tokens, mask.data(), path, summaries);
}

void export_metrics(const MetricsReport& report, const std::filesystem::path& path) {
    report.validate();
    write_text_file(path, report.to_json());
}

MetricsReport read_metrics(const std::filesystem::path& path) { return MetricsReport::from_json(read_text_file(path)); }

}  // namespace maskwright

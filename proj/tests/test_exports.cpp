#include "maskwright/exports.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>

#include "maskwright/error.hpp"
#include "maskwright/file_io.hpp"
#include "test_util.hpp"

using namespace maskwright;
using maskwright::testing::random_values;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "maskwright_test_exports";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

// ---- PGM ----------------------------------------------------------------------------

TEST(Pgm, SaturatedAndZeroMasks) {
    EXPECT_EQ(pgm_text(Tensor::full({2, 2}, 1.0)), "P2\n2 2\n255\n255 255\n255 255\n");
    EXPECT_EQ(pgm_text(Tensor::full({2, 2}, 0.0)), "P2\n2 2\n255\n0 0\n0 0\n");
}

TEST(Pgm, RoundsHalfAwayFromZero) {
    EXPECT_EQ(mask_to_gray(0.5), 128);
    EXPECT_EQ(mask_to_gray(1.5 / 255.0), 2);
    EXPECT_EQ(mask_to_gray(2.0), 255);
    EXPECT_EQ(pgm_text(Tensor::from({1, 3}, {0.5, 0.25, 0.75})), "P2\n3 1\n255\n128 64 191\n");
}

TEST(Pgm, WidthBeforeHeightRowMajor) {
    const auto img = parse_pgm(pgm_text(Tensor::from({2, 3}, {0, 0.2, 0.4, 0.6, 0.8, 1.0})));
    EXPECT_EQ(img.width, 3);
    EXPECT_EQ(img.height, 2);
    EXPECT_EQ(img.pixels, (std::vector<int>{0, 51, 102, 153, 204, 255}));
}

TEST(Pgm, Errors) {
    EXPECT_THROW(pgm_text(Tensor::full({4}, 0.5)), ShapeError);
    EXPECT_THROW(pgm_text(Tensor::full({1, 2, 2}, 0.5)), ShapeError);
    EXPECT_THROW(pgm_text(Tensor::from({1, 2}, {0.5, -0.1})), DomainError);
    EXPECT_THROW(parse_pgm("P5\n1 1\n255\n0\n"), FormatError);
    EXPECT_THROW(parse_pgm("P2\n2 1\n255\n0\n"), FormatError);
    EXPECT_THROW(parse_pgm("P2\n1 1\n255\n300\n"), FormatError);
}

TEST(Pgm, FileRoundTripIsByteDeterministic) {
    std::mt19937_64 rng(3);
    const auto mask = Tensor::from({5, 7}, random_values(35, rng, 0.0, 1.0));
    const auto a = scratch("a.pgm"), b = scratch("b.pgm");
    export_pgm(mask, a);
    export_pgm(mask, b);
    EXPECT_EQ(read_file(a), read_file(b));
    const auto img = read_pgm(a);
    for (int i = 0; i < 35; ++i) EXPECT_EQ(img.pixels[i], mask_to_gray(mask.at(i)));
    EXPECT_EQ(pgm_text(mask), read_text_file(a));
}

// ---- token weights -------------------------------------------------------------------

TEST(TokenWeights, FormatsSixDigits) {
    EXPECT_EQ(token_weights_text({"a", "b"}, Tensor::from({2}, {0.1, 0.9})), "token\tweight\na\t0.100000\nb\t0.900000\n");
}

TEST(TokenWeights, EmptySequenceIsHeaderOnly) {
    EXPECT_EQ(token_weights_text({}, std::span<const double>{}), "token\tweight\n");
}

TEST(TokenWeights, LengthMismatchIsSizeError) {
    EXPECT_THROW(token_weights_text({"a"}, Tensor::from({2}, {0.1, 0.2})), SizeError);
}

TEST(TokenWeights, SummaryMatchesSortOracle) {
    std::mt19937_64 rng(12);
    const std::vector<std::string> vocab{"good", "bad", "film", "plot", "great", "awful", "the", "a"};
    std::uniform_int_distribution<int> pick(0, static_cast<int>(vocab.size()) - 1);
    std::vector<std::vector<std::string>> tokens(30);
    std::vector<std::vector<double>> weights(30);
    std::vector<std::string> labels(30);
    for (int i = 0; i < 30; ++i) {
        labels[i] = i % 3 ? "positive" : "negative";
        for (int t = 0; t < 6; ++t) {
            tokens[i].push_back(vocab[pick(rng)]);
            weights[i].push_back(std::round(random_values(1, rng, 0.0, 1.0)[0] * 8) / 8);  // provoke ties
        }
    }
    const auto summaries = top_tokens_by_label(tokens, weights, labels);
    ASSERT_EQ(summaries.size(), 2u);
    EXPECT_EQ(summaries[0].label, "negative");
    for (const auto& s : summaries) {
        std::map<std::string, std::vector<double>> seen;
        for (int i = 0; i < 30; ++i)
            if (labels[i] == s.label)
                for (int t = 0; t < 6; ++t) seen[tokens[i][t]].push_back(weights[i][t]);
        std::vector<std::pair<double, std::string>> oracle;
        for (const auto& [tok, ws] : seen) {
            double sum = 0;
            for (double w : ws) sum += w;
            oracle.emplace_back(-(sum / ws.size()), tok);
        }
        std::sort(oracle.begin(), oracle.end());
        ASSERT_EQ(s.top.size(), 5u);
        for (int r = 0; r < 5; ++r) {
            EXPECT_EQ(s.top[r].first, oracle[r].second) << s.label << " rank " << r;
            EXPECT_DOUBLE_EQ(s.top[r].second, -oracle[r].first);
        }
    }
}

TEST(TokenWeights, FileRoundTripWithSummaries) {
    const std::vector<std::string> tokens{"pos0", "w12", "neg3", "w40"};
    const auto mask = Tensor::from({4}, {0.912345678, 0.0000004, 0.5, 0.25});
    const std::vector<TokenSummary> summaries{{"positive", {{"pos0", 0.8}, {"pos1", 0.75}}},
                                              {"negative", {{"neg3", 0.5}}}};
    const auto path = scratch("tokens.tsv");
    export_token_weights(tokens, mask, path, summaries);
    const auto text = read_text_file(path);
    EXPECT_NE(text.find("#top5\tpositive\tpos0=0.800000\tpos1=0.750000\n"), std::string::npos);
    const auto parsed = parse_token_weights(text);
    EXPECT_EQ(parsed.tokens, tokens);
    EXPECT_EQ(parsed.weights, (std::vector<double>{0.912346, 0.0, 0.5, 0.25}));
    EXPECT_EQ(parsed.summaries, summaries);
    EXPECT_EQ(token_weights_text(parsed.tokens, parsed.weights, parsed.summaries), text);
}

TEST(TokenWeights, ParseErrors) {
    EXPECT_THROW(parse_token_weights("word\tweight\n"), FormatError);
    EXPECT_THROW(parse_token_weights("token\tweight\na\tzero\n"), FormatError);
    EXPECT_THROW(parse_token_weights("token\tweight\na\t0.1\t0.2\n"), FormatError);
    EXPECT_THROW(token_weights_text({"a\tb"}, Tensor::from({1}, {0.1})), FormatError);
}

// ---- metrics ------------------------------------------------------------------------------

TEST(MetricsExport, FileRoundTrip) {
    MetricsReport r{0.95, 0.94, -0.01, 0.31, 0.12, 0.97, 0.71, 3, 400};
    const auto path = scratch("metrics.json");
    export_metrics(r, path);
    EXPECT_EQ(read_metrics(path), r);
    EXPECT_EQ(read_text_file(path), r.to_json());
    EXPECT_THROW(export_metrics(r, scratch("nope") / "m.json"), IoError);
    r.topk_attr_acc = 2.0;
    EXPECT_THROW(export_metrics(r, path), DomainError);
}

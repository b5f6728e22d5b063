#include "maskwright/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "maskwright/evaluation.hpp"
#include "maskwright/exports.hpp"
#include "maskwright/file_io.hpp"
#include "maskwright/model_io.hpp"
#include "maskwright/presets.hpp"
#include "maskwright/tasks.hpp"

using namespace maskwright;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "maskwright_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// gen-task -> train-base -> train-explainer -> eval in `dir`.
void pipeline(const fs::path& dir, const std::string& task, const std::string& seed) {
    const auto d = (dir / "data").string(), base = (dir / "base.mskm").string(),
               ex = (dir / "explainer.mskm").string(), metrics = (dir / "metrics.json").string();
    ASSERT_EQ(run({"gen-task", "--task", task, "--out", d, "--n", "120", "--seed", seed}).code, 0);
    ASSERT_EQ(run({"train-base", "--data", d, "--out", base, "--epochs", "2", "--seed", seed}).code, 0);
    ASSERT_EQ(run({"train-explainer", "--data", d, "--base", base, "--out", ex, "--epochs", "2", "--seed", seed}).code, 0);
    ASSERT_EQ(run({"eval", "--data", d, "--base", base, "--explainer", ex, "--out", metrics}).code, 0);
}

}  // namespace

TEST(Cli, NoArgumentsPrintsUsageToErrorStream) {
    const auto r = run({});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_TRUE(r.out.empty());
    EXPECT_NE(r.err.find("gen-task"), std::string::npos);
    EXPECT_NE(r.err.find("gradcheck"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
    EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(run({"eval", "--bogus-flag"}).code, kExitUsage);
    EXPECT_EQ(run({"eval"}).code, kExitUsage);  // required options missing
}

TEST(Cli, HelpForEverySubcommand) {
    for (const std::string sub : {"gen-task", "train-base", "train-explainer", "explain", "eval", "gradcheck"}) {
        const auto r = run({sub, "--help"});
        EXPECT_EQ(r.code, kExitOk) << sub;
        EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
    }
}

TEST(Cli, BadValuesAreUsageErrors) {
    EXPECT_EQ(run({"gen-task", "--task", "mnist", "--out", "x"}).code, kExitUsage);
    EXPECT_EQ(run({"train-explainer", "--data", "d", "--base", "b", "--out", "o", "--reg", "l1=-1"}).code, kExitUsage);
    EXPECT_EQ(run({"train-base", "--data", "d", "--out", "o", "--optimizer", "rmsprop"}).code, kExitUsage);
}

TEST(Cli, GradcheckRunsFullSuite) {
    const auto r = run({"gradcheck", "--seed", "7"});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("apply_mask"), std::string::npos);
    EXPECT_NE(r.out.find("20/20"), std::string::npos);
}

TEST(Cli, MissingModelIsRuntimeErrorNamingPath) {
    const auto dir = fresh_dir("missing");
    const auto model = (dir / "absent_model.mskm").string();
    const auto r = run({"explain", "--data", dir.string(), "--base", model, "--explainer", model, "--out",
                        (dir / "out").string()});
    EXPECT_EQ(r.code, kExitRuntime);
    EXPECT_NE(r.err.find("absent_model.mskm"), std::string::npos);
}

TEST(Cli, PipelineIsByteDeterministic) {
    const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
    pipeline(a, "planted_patch", "5");
    pipeline(b, "planted_patch", "5");
    for (const char* f : {"base.mskm", "explainer.mskm", "metrics.json"})
        EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
    const auto report = read_metrics(a / "metrics.json");
    EXPECT_EQ(report.n_examples, 24);
}

TEST(Cli, DifferentSeedChangesModels) {
    const auto a = fresh_dir("seed_a"), b = fresh_dir("seed_b");
    pipeline(a, "keyword_seq", "1");
    pipeline(b, "keyword_seq", "2");
    EXPECT_NE(read_file(a / "base.mskm"), read_file(b / "base.mskm"));
}

TEST(Cli, ExplainWritesHeatmapsAndTokenWeights) {
    const auto img = fresh_dir("explain_img");
    pipeline(img, "planted_patch", "3");
    auto r = run({"explain", "--data", (img / "data").string(), "--base", (img / "base.mskm").string(), "--explainer",
                  (img / "explainer.mskm").string(), "--out", (img / "heat").string(), "--limit", "3"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(read_pgm(img / "heat" / "mask_0002.pgm").width, 16);
    EXPECT_FALSE(fs::exists(img / "heat" / "mask_0003.pgm"));

    const auto seq = fresh_dir("explain_seq");
    pipeline(seq, "keyword_seq", "3");
    r = run({"explain", "--data", (seq / "data").string(), "--base", (seq / "base.mskm").string(), "--explainer",
             (seq / "explainer.mskm").string(), "--out", (seq / "tok").string(), "--limit", "2"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto parsed = parse_token_weights(read_text_file(seq / "tok" / "tokens_0000.tsv"));
    EXPECT_EQ(parsed.tokens.size(), 30u);
    ASSERT_EQ(parsed.summaries.size(), 2u);
    EXPECT_EQ(parsed.summaries[0].top.size(), 5u);
}

TEST(Cli, ConfigFileWithFlagOverrides) {
    const auto dir = fresh_dir("config");
    const auto d = (dir / "data").string();
    ASSERT_EQ(run({"gen-task", "--task", "char_count", "--out", d, "--n", "60", "--seed", "2"}).code, 0);
    write_text_file(dir / "cfg.json", R"({"epochs": 2, "seed": 11, "lr": 0.01, "no-shuffle": true})");
    const auto cfg = (dir / "cfg.json").string();
    ASSERT_EQ(run({"train-base", "--data", d, "--out", (dir / "a.mskm").string(), "--config", cfg}).code, 0);
    ASSERT_EQ(run({"train-base", "--data", d, "--out", (dir / "b.mskm").string(), "--epochs", "2", "--seed", "11",
                   "--lr", "0.01", "--no-shuffle"})
                  .code,
              0);
    ASSERT_EQ(run({"train-base", "--data", d, "--out", (dir / "c.mskm").string(), "--config", cfg, "--seed", "12"}).code,
              0);
    EXPECT_EQ(read_file(dir / "a.mskm"), read_file(dir / "b.mskm"));
    EXPECT_NE(read_file(dir / "a.mskm"), read_file(dir / "c.mskm"));

    write_text_file(dir / "bad.json", R"({"no-such-flag": 1})");
    EXPECT_EQ(run({"train-base", "--data", d, "--out", "x", "--config", (dir / "bad.json").string()}).code, kExitUsage);
    write_text_file(dir / "broken.json", "{epochs: ");
    EXPECT_EQ(run({"train-base", "--data", d, "--out", "x", "--config", (dir / "broken.json").string()}).code,
              kExitUsage);
    EXPECT_EQ(run({"train-base", "--data", d, "--out", "x", "--config", (dir / "absent.json").string()}).code,
              kExitRuntime);
}

TEST(Cli, SeedFallsBackToEnvironment) {
    const auto dir = fresh_dir("env");
    const auto d = (dir / "data").string();
    ASSERT_EQ(run({"gen-task", "--task", "char_count", "--out", d, "--n", "60", "--seed", "2"}).code, 0);
    ASSERT_EQ(run({"train-base", "--data", d, "--out", (dir / "flag.mskm").string(), "--epochs", "1", "--seed", "31"})
                  .code,
              0);
    ::setenv(kSeedEnv, "31", 1);
    const auto r = run({"train-base", "--data", d, "--out", (dir / "env.mskm").string(), "--epochs", "1"});
    ::setenv(kSeedEnv, "32", 1);
    const auto overridden =
        run({"train-base", "--data", d, "--out", (dir / "over.mskm").string(), "--epochs", "1", "--seed", "31"});
    ::unsetenv(kSeedEnv);
    ASSERT_EQ(r.code, 0);
    ASSERT_EQ(overridden.code, 0);
    EXPECT_EQ(read_file(dir / "flag.mskm"), read_file(dir / "env.mskm"));
    EXPECT_EQ(read_file(dir / "flag.mskm"), read_file(dir / "over.mskm"));
}

TEST(Cli, IdentityMaskReportHasZeroFidelityDelta) {
    const auto dir = fresh_dir("identity");
    pipeline(dir, "planted_patch", "4");
    auto mm = restore_masked_model(load_model(dir / "base.mskm"), load_model(dir / "explainer.mskm"));
    mm.forced_mask = 1.0;
    const auto test = load_dataset(dir / "data" / "test");
    export_metrics(evaluate(mm, test), dir / "identity.json");
    const auto report = read_metrics(dir / "identity.json");
    EXPECT_EQ(report.fidelity_delta, 0.0);
    EXPECT_EQ(report.base_metric, report.masked_metric);
}

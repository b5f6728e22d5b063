#include "maskwright/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "maskwright/error.hpp"
#include "maskwright/evaluation.hpp"
#include "maskwright/exports.hpp"
#include "maskwright/file_io.hpp"
#include "maskwright/gradient_suite.hpp"
#include "maskwright/model_io.hpp"
#include "maskwright/presets.hpp"

namespace maskwright {

namespace {

namespace fs = std::filesystem;

constexpr const char* kTrainDir = "train";
constexpr const char* kTestDir = "test";

// Raised for problems with the command line itself (exit 1).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class Parse>
CLI::Validator parses_as(const std::string& what, Parse parse) {
    return CLI::Validator(
        [what, parse](std::string& value) -> std::string {
            try {
                parse(value);
            } catch (const std::exception& e) {
                return "invalid " + what + ": " + e.what();
            }
            return {};
        },
        what);
}

struct TrainFlags {
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<std::string> optimizer;
    std::optional<long> max_steps;
    bool no_shuffle = false;

    void add(CLI::App* app) {
        app->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
        app->add_option("--batch-size", batch_size, "Minibatch size")->check(CLI::PositiveNumber);
        app->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber);
        app->add_option("--optimizer", optimizer, "adam or sgd")
            ->check(parses_as("optimizer", [](const std::string& s) { parse_optimizer_kind(s); }));
        app->add_option("--max-steps", max_steps, "Stop after this many optimizer steps")
            ->check(CLI::NonNegativeNumber);
        app->add_flag("--no-shuffle", no_shuffle, "Keep dataset order within epochs");
    }

    void apply(TrainConfig& cfg) const {
        if (epochs) cfg.epochs = *epochs;
        if (batch_size) cfg.batch_size = *batch_size;
        if (lr) cfg.lr = *lr;
        if (optimizer) cfg.optimizer = parse_optimizer_kind(*optimizer);
        if (max_steps) cfg.max_steps = *max_steps;
        if (no_shuffle) cfg.shuffle = false;
    }
};

struct Options {
    std::uint64_t seed = 0;
    // gen-task
    std::string task;
    std::string out;
    std::optional<int> n;
    std::optional<double> noise;
    std::optional<int> length;
    std::optional<int> vocab;
    std::optional<int> classes;
    std::optional<int> image_size;
    std::optional<int> channels;
    double train_fraction = 0.8;
    // training
    std::string data;
    std::string base;
    std::string explainer;
    std::string log;
    std::vector<std::string> layers;
    ArchConfig arch;
    std::optional<int> split;
    std::optional<std::string> head;
    std::optional<std::string> reg;
    TrainFlags train;
    // explain and eval
    std::string split_name = kTestDir;
    int limit = 8;
    int k = 3;
    // gradcheck
    int instances = kGradientInstances;
};

void add_seed(CLI::App* app, Options& o) {
    app->add_option("--seed", o.seed, "Random seed")->envname(kSeedEnv)->capture_default_str();
}

void add_config(CLI::App* app) {
    app->add_option("--config", "JSON object whose keys name long flags; explicit flags win");
}

std::string scalar_text(const nlohmann::json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        return buf;
    }
    throw UsageError("config key '" + key + "' must be a string, number, boolean or list of strings");
}

// Appends the config file entries as flags for every option not already given.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> given;
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const auto& a = args[i];
        if (a.rfind("--", 0) != 0) continue;
        const auto eq = a.find('=');
        const std::string name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
        given.push_back(name);
        if (name == "config") {
            if (eq != std::string::npos)
                path = a.substr(eq + 1);
            else if (i + 1 < args.size())
                path = args[i + 1];
            else
                throw UsageError("--config needs a file name");
        }
    }
    if (!path) return args;
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(read_text_file(*path));
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config file " + *path + " is not valid JSON: " + e.what());
    }
    if (!cfg.is_object()) throw UsageError("config file " + *path + " must hold a JSON object");
    std::vector<std::string> out = args;
    for (const auto& [key, value] : cfg.items()) {
        if (key == "config") throw UsageError("config file " + *path + " cannot name another config");
        if (std::find(given.begin(), given.end(), key) != given.end()) continue;
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back(flag);
        } else if (value.is_array()) {
            for (const auto& item : value) {
                out.push_back(flag);
                out.push_back(scalar_text(item, key));
            }
        } else {
            out.push_back(flag);
            out.push_back(scalar_text(value, key));
        }
    }
    return out;
}

fs::path split_dir(const std::string& data, const std::string& name) { return fs::path(data) / name; }

std::vector<LayerSpec> parse_layers(const std::vector<std::string>& lines) {
    std::vector<LayerSpec> out;
    for (const auto& l : lines) out.push_back(LayerSpec::parse(l));
    return out;
}

void write_log(const std::string& path, const TrainingLog& log) {
    if (!path.empty()) write_text_file(path, log.to_tsv());
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

int run_gen_task(const Options& o, std::ostream& out) {
    auto spec = TaskSpec::defaults(parse_task_kind(o.task));
    spec.seed = o.seed;
    if (o.n) spec.n = *o.n;
    if (o.noise) spec.noise = *o.noise;
    if (o.length) spec.length = *o.length;
    if (o.vocab) spec.vocab = *o.vocab;
    if (o.classes) spec.classes = *o.classes;
    if (o.image_size) spec.height = spec.width = *o.image_size;
    if (o.channels) spec.channels = *o.channels;
    const auto data = generate_task(spec);
    const auto [train, test] = split_dataset(data, o.train_fraction);
    write_dataset(split_dir(o.out, kTrainDir), train);
    write_dataset(split_dir(o.out, kTestDir), test);
    out << "wrote " << train.size() << " train and " << test.size() << " test examples to " << o.out << "\n";
    return kExitOk;
}

int run_train_base(const Options& o, std::ostream& out) {
    const auto train = load_dataset(split_dir(o.data, kTrainDir));
    const auto test = load_dataset(split_dir(o.data, kTestDir));
    auto layers = o.layers.empty() ? default_base_layers(train, o.arch) : parse_layers(o.layers);
    auto model = ModelGraph::build(std::move(layers), o.seed);
    model.meta["task"] = to_string(train.kind);
    auto cfg = default_base_training(train.kind);
    cfg.seed = o.seed;
    o.train.apply(cfg);
    const auto log = train_base(model, train, cfg);
    save_model(o.out, model);
    write_log(o.log, log);
    const auto metric = dataset_metric(predict(model, test), test);
    out << "base " << to_string(metric.kind) << " on test split: " << fmt(metric.value) << "\n";
    return kExitOk;
}

int run_train_explainer(const Options& o, std::ostream& out) {
    const auto train = load_dataset(split_dir(o.data, kTrainDir));
    const auto base = load_model(o.base);
    auto setup = default_explain_setup(base, train, o.arch, o.split);
    if (o.head) setup.dims.head = parse_activation(*o.head);
    auto mm = build_masked_model(base, setup, o.seed);
    auto cfg = default_explainer_training(train.kind);
    cfg.seed = o.seed;
    if (o.reg) cfg.reg = RegularizerConfig::parse(*o.reg, cfg.reg);
    o.train.apply(cfg);
    mm.explainer.meta["reg"] = cfg.reg.to_string();
    const auto log = train_explainer(mm, train, cfg);
    save_model(o.out, mm.explainer);
    write_log(o.log, log);
    const auto& last = log.epochs.back();
    out << "explainer trained for " << log.steps << " steps; final mean mask " << fmt(last.mean_mask) << "\n";
    return kExitOk;
}

MaskedModel load_masked(const Options& o) {
    const auto base = load_model(o.base);
    return restore_masked_model(base, load_model(o.explainer));
}

int run_explain(const Options& o, std::ostream& out) {
    auto mm = load_masked(o);
    const auto data = load_dataset(split_dir(o.data, o.split_name));
    const auto pred = predict_masked(mm, data);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    const std::size_t count = std::min<std::size_t>(data.size(), static_cast<std::size_t>(o.limit));
    const std::size_t per = pred.masks.numel() / std::max<std::size_t>(1, data.size());
    const auto masks = pred.masks.data();
    char name[64];
    if (!data.has_token_inputs()) {
        const Shape& shape = mm.broadcast.mask_shape;
        for (std::size_t i = 0; i < count; ++i) {
            const std::vector<double> m(masks.begin() + i * per, masks.begin() + (i + 1) * per);
            std::snprintf(name, sizeof name, "mask_%04zu.pgm", i);
            export_pgm(Tensor::from(shape, m), dir / name);
        }
        out << "wrote " << count << " heatmaps to " << o.out << "\n";
        return kExitOk;
    }
    std::vector<std::vector<std::string>> tokens(data.size());
    std::vector<std::vector<double>> weights(data.size());
    std::vector<std::string> labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t t = 0; t < per; ++t) {
            tokens[i].push_back(data.vocabulary.at(static_cast<std::size_t>(data.inputs[i * per + t])));
            weights[i].push_back(masks[i * per + t]);
        }
        if (data.is_classification()) labels[i] = data.targets[i] > 0.5 ? "positive" : "negative";
    }
    std::vector<TokenSummary> summaries;
    if (data.kind == TaskKind::keyword_seq) summaries = top_tokens_by_label(tokens, weights, labels);
    for (std::size_t i = 0; i < count; ++i) {
        std::snprintf(name, sizeof name, "tokens_%04zu.tsv", i);
        export_token_weights(tokens[i], weights[i], dir / name, summaries);
    }
    out << "wrote " << count << " token weight files to " << o.out << "\n";
    return kExitOk;
}

int run_eval(const Options& o, std::ostream& out) {
    auto mm = load_masked(o);
    const auto data = load_dataset(split_dir(o.data, o.split_name));
    const auto report = evaluate(mm, data, o.k);
    if (!o.out.empty()) export_metrics(report, o.out);
    out << report.to_json();
    return kExitOk;
}

int run_gradcheck(const Options& o, std::ostream& out) {
    const auto report = run_gradient_suite(o.seed, o.instances);
    out << report.summary();
    if (!report.passed()) throw DomainError("gradient check failed");
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learned explanation masks for frozen networks", "maskwright"};
    app.require_subcommand(1);
    app.fallthrough(false);
    Options o;
    auto validated = [](auto parse, const std::string& what) { return parses_as(what, parse); };

    auto* gen = app.add_subcommand("gen-task", "Generate a synthetic task as train/test dataset directories");
    gen->add_option("--task", o.task, "planted_patch, keyword_seq or char_count")
        ->required()
        ->check(validated([](const std::string& s) { parse_task_kind(s); }, "task"));
    gen->add_option("--out", o.out, "Output directory")->required();
    gen->add_option("--n", o.n, "Number of examples")->check(CLI::PositiveNumber);
    gen->add_option("--noise", o.noise, "Noise level in [0,1]");
    gen->add_option("--length", o.length, "Sequence length");
    gen->add_option("--vocab", o.vocab, "Vocabulary size (keyword_seq)");
    gen->add_option("--classes", o.classes, "Classes (planted_patch)");
    gen->add_option("--image-size", o.image_size, "Image side (planted_patch)");
    gen->add_option("--channels", o.channels, "Image channels (planted_patch)");
    gen->add_option("--train-fraction", o.train_fraction, "Leading fraction used for training")
        ->capture_default_str();
    add_seed(gen, o);
    add_config(gen);

    auto* tb = app.add_subcommand("train-base", "Train the base network");
    tb->add_option("--data", o.data, "Dataset directory from gen-task")->required();
    tb->add_option("--out", o.out, "Model file to write")->required();
    tb->add_option("--layer", o.layers, "Layer line (repeat in order); defaults to the task's preset");
    tb->add_option("--width", o.arch.width, "Preset hidden width")->capture_default_str();
    tb->add_option("--embed-dim", o.arch.embed_dim, "Preset embedding width")->capture_default_str();
    tb->add_option("--word-dropout", o.arch.word_dropout, "Preset timestep dropout")->capture_default_str();
    tb->add_option("--log", o.log, "Write the per-epoch training log (TSV)");
    o.train.add(tb);
    add_seed(tb, o);
    add_config(tb);

    auto* te = app.add_subcommand("train-explainer", "Train an explanation network against a frozen base");
    te->add_option("--data", o.data, "Dataset directory from gen-task")->required();
    te->add_option("--base", o.base, "Trained base model file")->required();
    te->add_option("--out", o.out, "Explainer model file to write")->required();
    te->add_option("--reg", o.reg, "Regularizers, e.g. l1=1e-3,l2=1e-4,entropy=0,entropy_kind=distribution")
        ->check(validated([](const std::string& s) { RegularizerConfig::parse(s).validate(); }, "regularizer"));
    te->add_option("--split", o.split, "Base layer index where the feature extractor ends");
    te->add_option("--explainer-width", o.arch.explainer_width, "Explainer width (default 8, char_count 4)")
        ->check(CLI::PositiveNumber);
    te->add_option("--explainer-depth", o.arch.explainer_depth, "Explainer depth (default 2, char_count 1)")
        ->check(CLI::PositiveNumber);
    te->add_option("--head", o.head, "Mask head activation (sigmoid, softplus, identity)")
        ->check(validated([](const std::string& s) { parse_activation(s); }, "activation"));
    te->add_option("--log", o.log, "Write the per-epoch training log (TSV)");
    o.train.add(te);
    add_seed(te, o);
    add_config(te);

    auto* ex = app.add_subcommand("explain", "Export masks as PGM heatmaps or token weight TSV files");
    ex->add_option("--data", o.data, "Dataset directory from gen-task")->required();
    ex->add_option("--base", o.base, "Base model file")->required();
    ex->add_option("--explainer", o.explainer, "Explainer model file")->required();
    ex->add_option("--out", o.out, "Output directory")->required();
    ex->add_option("--split-name", o.split_name, "train or test")
        ->check(CLI::IsMember({kTrainDir, kTestDir}))
        ->capture_default_str();
    ex->add_option("--limit", o.limit, "Number of examples to export")->capture_default_str();
    add_config(ex);

    auto* ev = app.add_subcommand("eval", "Compute the metrics report");
    ev->add_option("--data", o.data, "Dataset directory from gen-task")->required();
    ev->add_option("--base", o.base, "Base model file")->required();
    ev->add_option("--explainer", o.explainer, "Explainer model file")->required();
    ev->add_option("--out", o.out, "Metrics JSON file to write");
    ev->add_option("--split-name", o.split_name, "train or test")
        ->check(CLI::IsMember({kTrainDir, kTestDir}))
        ->capture_default_str();
    ev->add_option("--k", o.k, "Top-k size")->check(CLI::PositiveNumber)->capture_default_str();
    add_config(ev);

    auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    gc->add_option("--instances", o.instances, "Seeded instances per case")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    add_seed(gc, o);
    add_config(gc);

    if (raw_args.empty()) {
        err << app.help();
        return kExitUsage;
    }
    try {
        auto args = expand_config(raw_args);
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }

    try {
        if (gen->parsed()) return run_gen_task(o, out);
        if (tb->parsed()) return run_train_base(o, out);
        if (te->parsed()) return run_train_explainer(o, out);
        if (ex->parsed()) return run_explain(o, out);
        if (ev->parsed()) return run_eval(o, out);
        return run_gradcheck(o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace maskwright

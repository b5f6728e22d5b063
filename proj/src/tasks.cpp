#include "maskwright/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "maskwright/error.hpp"
#include "maskwright/file_io.hpp"

namespace maskwright {

namespace fs = std::filesystem;

namespace {

std::string join_dims(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out;
}

std::vector<std::string> split_on(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, sep)) out.push_back(part);
    return out;
}

int parse_int(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError(what + ": '" + text + "' is not an integer");
}

std::vector<std::string> keyword_vocabulary(int vocab) {
    std::vector<std::string> names;
    for (int i = 0; i < kKeywordsPerPolarity; ++i) names.push_back("pos" + std::to_string(i));
    for (int i = 0; i < kKeywordsPerPolarity; ++i) names.push_back("neg" + std::to_string(i));
    for (int i = kFirstFillerToken; i < vocab; ++i) names.push_back("w" + std::to_string(i));
    return names;
}

LabeledDataset empty_dataset(const TaskSpec& spec, Shape input_shape, int classes) {
    LabeledDataset d;
    d.kind = spec.kind;
    d.input_shape = std::move(input_shape);
    d.num_classes = classes;
    d.params = spec.params();
    d.inputs.reserve(static_cast<std::size_t>(spec.n) * shape_numel(d.input_shape));
    d.targets.reserve(spec.n);
    d.relevance.reserve(spec.n);
    return d;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint64_t get_be(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
    if (offset + width > bytes.size())
        throw FormatError("IDX truncated at byte offset " + std::to_string(bytes.size()) + " (needed " +
                          std::to_string(offset + width) + ")");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v = (v << 8) | bytes[offset + i];
    return v;
}

}  // namespace

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::planted_patch: return "planted_patch";
        case TaskKind::keyword_seq: return "keyword_seq";
        case TaskKind::char_count: return "char_count";
    }
    return "unknown";
}

TaskKind parse_task_kind(const std::string& text) {
    for (auto k : {TaskKind::planted_patch, TaskKind::keyword_seq, TaskKind::char_count})
        if (text == to_string(k)) return k;
    throw ConfigError("unknown task '" + text + "'");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::all: return "all";
        case Split::train: return "train";
        case Split::test: return "test";
    }
    return "unknown";
}

Split parse_split(const std::string& text) {
    for (auto s : {Split::all, Split::train, Split::test})
        if (text == to_string(s)) return s;
    throw FormatError("unknown split '" + text + "'");
}

TaskSpec TaskSpec::defaults(TaskKind kind) {
    TaskSpec s;
    s.kind = kind;
    switch (kind) {
        case TaskKind::planted_patch: s.noise = 0.5; break;
        case TaskKind::keyword_seq:
            s.noise = 0.0;
            s.length = 30;
            s.vocab = 50;
            break;
        case TaskKind::char_count:
            s.noise = 0.1;
            s.length = 20;
            break;
    }
    return s;
}

void TaskSpec::validate() const {
    if (n < 1) throw ConfigError("task needs at least one example");
    if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must lie in [0,1]");
    switch (kind) {
        case TaskKind::planted_patch:
            if (classes < 2) throw ConfigError("planted_patch needs at least 2 classes");
            if (channels < 1) throw ConfigError("planted_patch needs at least 1 channel");
            if (height < kPatchSize || width < kPatchSize)
                throw ConfigError("3x3 patch does not fit a " + std::to_string(height) + "x" + std::to_string(width) +
                                  " image");
            if (classes > 512) throw ConfigError("at most 512 distinct 3x3 templates exist");
            break;
        case TaskKind::keyword_seq:
            if (vocab <= kFirstFillerToken)
                throw ConfigError("keyword_seq vocab " + std::to_string(vocab) + " leaves no filler tokens (need >= " +
                                  std::to_string(kFirstFillerToken + 1) + ")");
            if (length < 8) throw ConfigError("keyword_seq length must be at least 8");
            break;
        case TaskKind::char_count: {
            if (length < 1) throw ConfigError("char_count length must be positive");
            std::set<char> unique(alphabet.begin(), alphabet.end());
            if (alphabet.size() < 6 || unique.size() != alphabet.size())
                throw ConfigError("char_count alphabet needs at least 6 distinct characters");
            for (char c : {'C', 'N', 'O'})
                if (!unique.count(c)) throw ConfigError(std::string("char_count alphabet must contain '") + c + "'");
            break;
        }
    }
}

std::map<std::string, std::string> TaskSpec::params() const {
    std::ostringstream noise_text;
    noise_text.precision(17);
    noise_text << noise;
    std::map<std::string, std::string> p{{"seed", std::to_string(seed)},
                                         {"n_generated", std::to_string(n)},
                                         {"noise", noise_text.str()}};
    switch (kind) {
        case TaskKind::planted_patch:
            p["classes"] = std::to_string(classes);
            p["channels"] = std::to_string(channels);
            p["height"] = std::to_string(height);
            p["width"] = std::to_string(width);
            break;
        case TaskKind::keyword_seq:
            p["length"] = std::to_string(length);
            p["vocab"] = std::to_string(vocab);
            break;
        case TaskKind::char_count:
            p["length"] = std::to_string(length);
            p["alphabet"] = alphabet;
            break;
    }
    return p;
}

std::size_t LabeledDataset::relevance_extent() const {
    if (kind == TaskKind::planted_patch && input_shape.size() == 3)
        return static_cast<std::size_t>(input_shape[1]) * input_shape[2];
    return input_shape.empty() ? 0 : static_cast<std::size_t>(input_shape[0]);
}

Tensor LabeledDataset::input_batch(std::span<const std::size_t> indices) const {
    const std::size_t per = example_numel();
    std::vector<double> v;
    v.reserve(indices.size() * per);
    for (std::size_t i : indices) {
        if (i >= size()) throw IndexError("example " + std::to_string(i) + " out of range");
        v.insert(v.end(), inputs.begin() + i * per, inputs.begin() + (i + 1) * per);
    }
    Shape shape{static_cast<int>(indices.size())};
    shape.insert(shape.end(), input_shape.begin(), input_shape.end());
    return Tensor::from(shape, std::move(v));
}

std::vector<int> LabeledDataset::label_batch(std::span<const std::size_t> indices) const {
    if (!is_classification()) throw ConfigError("regression dataset has no class labels");
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(static_cast<int>(targets.at(i)));
    return out;
}

Tensor LabeledDataset::target_batch(std::span<const std::size_t> indices) const {
    std::vector<double> v;
    v.reserve(indices.size());
    for (std::size_t i : indices) v.push_back(targets.at(i));
    return Tensor::from({static_cast<int>(indices.size())}, std::move(v));
}

LabeledDataset LabeledDataset::subset(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw IndexError("dataset subset out of range");
    LabeledDataset d = *this;
    const std::size_t per = example_numel();
    d.inputs.assign(inputs.begin() + begin * per, inputs.begin() + end * per);
    d.targets.assign(targets.begin() + begin, targets.begin() + end);
    d.relevance.assign(relevance.begin() + begin, relevance.begin() + end);
    return d;
}

void LabeledDataset::validate() const {
    if (input_shape.empty()) throw FormatError("dataset has no input shape");
    if (inputs.size() != size() * example_numel() || relevance.size() != size())
        throw FormatError("dataset counts disagree: " + std::to_string(inputs.size()) + " input values, " +
                          std::to_string(size()) + " targets, " + std::to_string(relevance.size()) +
                          " relevance sets");
    const std::size_t extent = relevance_extent();
    for (const auto& r : relevance)
        for (int idx : r)
            if (idx < 0 || static_cast<std::size_t>(idx) >= extent)
                throw FormatError("relevance index " + std::to_string(idx) + " outside input bounds");
    if (is_classification())
        for (double t : targets)
            if (t != std::floor(t) || t < 0 || t >= num_classes)
                throw FormatError("class target outside [0," + std::to_string(num_classes) + ")");
    if (has_token_inputs()) {
        const double limit = vocabulary.empty() ? INFINITY : static_cast<double>(vocabulary.size());
        for (double t : inputs)
            if (t != std::floor(t) || t < 0 || t >= limit) throw FormatError("token id outside the vocabulary");
    }
}

// ---- generators ----------------------------------------------------------------

std::vector<double> patch_template(int class_id, int classes) {
    if (class_id < 0 || class_id >= classes) throw IndexError("class id outside range");
    // Class 0 is a plus, class 1 an X; further classes use distinct seeded sign patterns.
    static const std::vector<double> plus{-1, 1, -1, 1, 1, 1, -1, 1, -1};
    static const std::vector<double> cross{1, -1, 1, -1, 1, -1, 1, -1, 1};
    if (class_id == 0) return plus;
    if (class_id == 1) return cross;
    std::set<std::vector<double>> used{plus, cross};
    std::mt19937_64 rng(0x5EED);
    std::vector<double> t(9);
    for (int c = 2;; ++c) {
        do {
            for (auto& v : t) v = (rng() & 1) ? 1.0 : -1.0;
        } while (used.count(t));
        used.insert(t);
        if (c == class_id) return t;
    }
}

LabeledDataset gen_planted_patch(const TaskSpec& spec) {
    if (spec.kind != TaskKind::planted_patch) throw ConfigError("gen_planted_patch: wrong task kind");
    spec.validate();
    LabeledDataset d = empty_dataset(spec, {spec.channels, spec.height, spec.width}, spec.classes);
    std::vector<std::vector<double>> templates;
    for (int c = 0; c < spec.classes; ++c) templates.push_back(patch_template(c, spec.classes));
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> background(-spec.noise, spec.noise);
    std::uniform_int_distribution<int> row(0, spec.height - kPatchSize), col(0, spec.width - kPatchSize);
    const std::size_t plane = static_cast<std::size_t>(spec.height) * spec.width;
    for (int i = 0; i < spec.n; ++i) {
        const int label = i % spec.classes;
        std::vector<double> img(plane * spec.channels);
        for (auto& v : img) v = spec.noise > 0 ? background(rng) : 0.0;
        const int r0 = row(rng), c0 = col(rng);
        std::vector<int> rel;
        for (int a = 0; a < kPatchSize; ++a)
            for (int b = 0; b < kPatchSize; ++b) {
                const int pixel = (r0 + a) * spec.width + c0 + b;
                rel.push_back(pixel);
                for (int ch = 0; ch < spec.channels; ++ch)
                    img[ch * plane + pixel] = templates[label][a * kPatchSize + b];
            }
        d.inputs.insert(d.inputs.end(), img.begin(), img.end());
        d.targets.push_back(label);
        d.relevance.push_back(std::move(rel));
    }
    return d;
}

LabeledDataset gen_keyword_seq(const TaskSpec& spec) {
    if (spec.kind != TaskKind::keyword_seq) throw ConfigError("gen_keyword_seq: wrong task kind");
    spec.validate();
    LabeledDataset d = empty_dataset(spec, {spec.length}, 2);
    d.vocabulary = keyword_vocabulary(spec.vocab);
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> filler(kFirstFillerToken, spec.vocab - 1);
    std::uniform_int_distribution<int> planted_count(1, 3), keyword(0, kKeywordsPerPolarity - 1);
    std::bernoulli_distribution positive(0.5);
    for (int i = 0; i < spec.n; ++i) {
        std::vector<double> seq(spec.length);
        std::vector<int> positions;
        int pos_count = 0, neg_count = 0;
        do {
            for (auto& t : seq) t = filler(rng);
            const int k = planted_count(rng);
            std::vector<int> order(spec.length);
            for (int t = 0; t < spec.length; ++t) order[t] = t;
            std::shuffle(order.begin(), order.end(), rng);
            positions.assign(order.begin(), order.begin() + k);
            std::sort(positions.begin(), positions.end());
            pos_count = neg_count = 0;
            for (int p : positions) {
                const bool is_pos = positive(rng);
                (is_pos ? pos_count : neg_count) += 1;
                seq[p] = keyword(rng) + (is_pos ? 0 : kKeywordsPerPolarity);
            }
        } while (pos_count == neg_count);
        d.inputs.insert(d.inputs.end(), seq.begin(), seq.end());
        d.targets.push_back(pos_count > neg_count ? 1.0 : 0.0);
        d.relevance.push_back(std::move(positions));
    }
    return d;
}

int char_count_score(std::string_view text) {
    int score = 0;
    for (char c : text) score += (c == 'O') + (c == 'N') - (c == 'C');
    return score;
}

LabeledDataset gen_char_count(const TaskSpec& spec) {
    if (spec.kind != TaskKind::char_count) throw ConfigError("gen_char_count: wrong task kind");
    spec.validate();
    LabeledDataset d = empty_dataset(spec, {spec.length}, 0);
    for (char c : spec.alphabet) d.vocabulary.emplace_back(1, c);
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> letter(0, static_cast<int>(spec.alphabet.size()) - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < spec.n; ++i) {
        std::vector<double> seq(spec.length);
        std::string text(spec.length, ' ');
        std::vector<int> rel;
        do {
            rel.clear();
            for (int t = 0; t < spec.length; ++t) {
                const int c = letter(rng);
                seq[t] = c;
                text[t] = spec.alphabet[c];
                if (text[t] == 'O' || text[t] == 'N' || text[t] == 'C') rel.push_back(t);
            }
        } while (rel.empty());
        const double eps = noise(rng);
        d.inputs.insert(d.inputs.end(), seq.begin(), seq.end());
        d.targets.push_back(char_count_score(text) + spec.noise * eps);
        d.relevance.push_back(std::move(rel));
    }
    return d;
}

LabeledDataset generate_task(const TaskSpec& spec) {
    switch (spec.kind) {
        case TaskKind::planted_patch: return gen_planted_patch(spec);
        case TaskKind::keyword_seq: return gen_keyword_seq(spec);
        case TaskKind::char_count: return gen_char_count(spec);
    }
    throw ConfigError("unknown task kind");
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0,1)");
    const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
    if (cut == 0 || cut == data.size()) throw ConfigError("split leaves an empty side");
    auto train = data.subset(0, cut), test = data.subset(cut, data.size());
    train.split = Split::train;
    test.split = Split::test;
    return {std::move(train), std::move(test)};
}

// ---- IDX -----------------------------------------------------------------------

std::vector<std::uint8_t> encode_idx(const IdxArray& a) {
    if (a.type != kIdxFloat64 && a.type != kIdxInt32) throw FormatError("IDX type must be 0x0D or 0x0C");
    if (a.dims.empty() || a.dims.size() > 255) throw FormatError("IDX needs 1..255 dimensions");
    std::size_t count = 1;
    for (int d : a.dims) {
        if (d < 0) throw FormatError("IDX dimension must be nonnegative");
        count *= static_cast<std::size_t>(d);
    }
    const bool f64 = a.type == kIdxFloat64;
    if ((f64 ? a.f64.size() : a.i32.size()) != count) throw FormatError("IDX payload does not match dimensions");
    std::vector<std::uint8_t> out{0, 0, a.type, static_cast<std::uint8_t>(a.dims.size())};
    out.reserve(4 + 4 * a.dims.size() + count * (f64 ? 8 : 4));
    for (int d : a.dims) put_u32(out, static_cast<std::uint32_t>(d));
    if (f64) {
        for (double v : a.f64) {
            if (!std::isfinite(v)) throw DomainError("IDX payload must be finite");
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(bits >> shift));
        }
    } else {
        for (std::int32_t v : a.i32) put_u32(out, static_cast<std::uint32_t>(v));
    }
    return out;
}

IdxArray decode_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw FormatError("IDX header truncated at byte offset " + std::to_string(bytes.size()));
    if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("IDX bad magic at byte offset 0");
    IdxArray a;
    a.type = bytes[2];
    if (a.type != kIdxFloat64 && a.type != kIdxInt32)
        throw FormatError("IDX unsupported type byte at byte offset 2");
    const int ndims = bytes[3];
    if (ndims == 0) throw FormatError("IDX zero dimensions at byte offset 3");
    std::size_t offset = 4, count = 1;
    for (int i = 0; i < ndims; ++i, offset += 4) {
        const auto d = get_be(bytes, offset, 4);
        if (d > 0x7fffffffULL) throw FormatError("IDX dimension too large at byte offset " + std::to_string(offset));
        a.dims.push_back(static_cast<int>(d));
        count *= d;
    }
    const int width = a.type == kIdxFloat64 ? 8 : 4;
    if (bytes.size() - offset != count * width) {
        if (bytes.size() - offset < count * width)
            throw FormatError("IDX payload truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                              std::to_string(offset + count * width) + " bytes)");
        throw FormatError("IDX trailing bytes at byte offset " + std::to_string(offset + count * width));
    }
    if (width == 8) {
        a.f64.resize(count);
        for (std::size_t i = 0; i < count; ++i) a.f64[i] = std::bit_cast<double>(get_be(bytes, offset + 8 * i, 8));
    } else {
        a.i32.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            a.i32[i] = static_cast<std::int32_t>(static_cast<std::uint32_t>(get_be(bytes, offset + 4 * i, 4)));
    }
    return a;
}

void write_idx(const fs::path& path, const IdxArray& array) { write_file(path, encode_idx(array)); }

IdxArray read_idx(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_idx(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---- dataset directories -------------------------------------------------------

std::string manifest_text(const LabeledDataset& d) {
    std::map<std::string, std::string> kv = d.params;
    kv["task"] = to_string(d.kind);
    kv["split"] = to_string(d.split);
    kv["n"] = std::to_string(d.size());
    kv["input_shape"] = join_dims(d.input_shape);
    kv["num_classes"] = std::to_string(d.num_classes);
    kv["inputs"] = "inputs.idx";
    kv["targets"] = "targets.idx";
    kv["relevance"] = "relevance.idx";
    if (!d.vocabulary.empty() && d.kind == TaskKind::keyword_seq) kv["vocab"] = std::to_string(d.vocabulary.size());
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

void write_dataset(const fs::path& dir, const LabeledDataset& d) {
    d.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

    IdxArray inputs;
    inputs.dims = {static_cast<int>(d.size())};
    inputs.dims.insert(inputs.dims.end(), d.input_shape.begin(), d.input_shape.end());
    if (d.has_token_inputs()) {
        inputs.type = kIdxInt32;
        for (double v : d.inputs) inputs.i32.push_back(static_cast<std::int32_t>(v));
    } else {
        inputs.f64 = d.inputs;
    }
    IdxArray targets;
    targets.dims = {static_cast<int>(d.size())};
    if (d.is_classification()) {
        targets.type = kIdxInt32;
        for (double v : d.targets) targets.i32.push_back(static_cast<std::int32_t>(v));
    } else {
        targets.f64 = d.targets;
    }
    std::size_t width = 1;
    for (const auto& r : d.relevance) width = std::max(width, r.size());
    IdxArray relevance;
    relevance.type = kIdxInt32;
    relevance.dims = {static_cast<int>(d.size()), static_cast<int>(width)};
    for (const auto& r : d.relevance) {
        relevance.i32.insert(relevance.i32.end(), r.begin(), r.end());
        relevance.i32.insert(relevance.i32.end(), width - r.size(), -1);
    }
    write_idx(dir / "inputs.idx", inputs);
    write_idx(dir / "targets.idx", targets);
    write_idx(dir / "relevance.idx", relevance);
    const std::string text = manifest_text(d);
    write_file(dir / kManifestName, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

LabeledDataset load_dataset(const fs::path& dir) {
    const fs::path manifest = dir / kManifestName;
    if (!fs::exists(manifest)) throw IoError("no manifest at '" + manifest.string() + "'");
    std::map<std::string, std::string> kv;
    {
        std::ifstream in(manifest);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos || eq == 0)
                throw FormatError(manifest.string() + ": line " + std::to_string(line_no) + " is not key=value");
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(manifest.string() + ": missing key '" + key + "'");
        return it->second;
    };
    LabeledDataset d;
    try {
        d.kind = parse_task_kind(need("task"));
    } catch (const ConfigError& e) {
        throw FormatError(manifest.string() + ": " + e.what());
    }
    d.split = parse_split(need("split"));
    for (const auto& part : split_on(need("input_shape"), ',')) d.input_shape.push_back(parse_int(part, "input_shape"));
    d.num_classes = parse_int(need("num_classes"), "num_classes");
    const int n = parse_int(need("n"), "n");
    for (const auto& [k, v] : kv)
        if (k != "task" && k != "split" && k != "n" && k != "input_shape" && k != "num_classes" && k != "inputs" &&
            k != "targets" && k != "relevance")
            d.params[k] = v;
    d.params.erase("vocab");
    if (d.kind == TaskKind::keyword_seq) {
        const int vocab = parse_int(need("vocab"), "vocab");
        d.vocabulary = keyword_vocabulary(vocab);
        d.params["vocab"] = std::to_string(vocab);
    } else if (d.kind == TaskKind::char_count) {
        for (char c : need("alphabet")) d.vocabulary.emplace_back(1, c);
    }

    auto component = [&](const std::string& key) {
        const fs::path p = dir / need(key);
        if (!fs::exists(p)) throw FormatError(manifest.string() + ": referenced file '" + p.string() + "' is missing");
        return read_idx(p);
    };
    const IdxArray inputs = component("inputs"), targets = component("targets"), relevance = component("relevance");
    Shape expected{n};
    expected.insert(expected.end(), d.input_shape.begin(), d.input_shape.end());
    if (inputs.dims != expected) throw FormatError("inputs.idx dims disagree with the manifest");
    if (targets.dims != Shape{n}) throw FormatError("targets.idx dims disagree with the manifest");
    if (relevance.dims.size() != 2 || relevance.dims[0] != n || relevance.type != kIdxInt32)
        throw FormatError("relevance.idx must be an int32 [n,width] matrix");
    if (inputs.type == kIdxInt32)
        d.inputs.assign(inputs.i32.begin(), inputs.i32.end());
    else
        d.inputs = inputs.f64;
    if (targets.type == kIdxInt32)
        d.targets.assign(targets.i32.begin(), targets.i32.end());
    else
        d.targets = targets.f64;
    const int width = relevance.dims[1];
    for (int i = 0; i < n; ++i) {
        std::vector<int> r;
        for (int j = 0; j < width; ++j) {
            const int v = relevance.i32[static_cast<std::size_t>(i) * width + j];
            if (v >= 0) r.push_back(v);
        }
        d.relevance.push_back(std::move(r));
    }
    d.validate();
    return d;
}

}  // namespace maskwright

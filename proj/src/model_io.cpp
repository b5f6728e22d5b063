#include "maskwright/model_io.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include <zlib.h>

#include "maskwright/error.hpp"
#include "maskwright/file_io.hpp"

namespace maskwright {

namespace {

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

class Writer {
public:
    std::vector<std::uint8_t> bytes;

    void put(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void text(const std::string& s) {
        put(s.size(), 4);
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t get(int width) {
        need(width);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }
    std::string text() {
        const auto n = get(4);
        need(n);
        std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::uint64_t n) const {
        if (n > bytes_.size() - pos_)
            throw CorruptionError("model file truncated at byte offset " + std::to_string(pos_));
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::string header_text(const ModelGraph& model) {
    std::string out;
    for (const auto& [k, v] : model.meta) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ConfigError("model metadata '" + k + "' cannot be stored");
        out += "#" + k + "=" + v + "\n";
    }
    for (const auto& layer : model.layers) out += layer.to_line() + "\n";
    return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelGraph& model) {
    Writer w;
    w.bytes.insert(w.bytes.end(), std::begin(kModelMagic), std::end(kModelMagic));
    w.put(kModelVersion, 2);
    w.text(header_text(model));
    w.put(model.params.size(), 4);
    for (const auto& [name, t] : model.params) {
        w.text(name);
        const auto flag = model.trainable.find(name);
        w.put(flag != model.trainable.end() && flag->second ? 1 : 0, 1);
        w.put(t.shape().size(), 1);
        for (int d : t.shape()) w.put(static_cast<std::uint32_t>(d), 4);
        for (double v : t.data()) w.put(std::bit_cast<std::uint64_t>(v), 8);
    }
    w.put(crc_of(w.bytes), 4);
    return std::move(w.bytes);
}

ModelGraph deserialize_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0)
        throw FormatError("not a model file: bad magic at byte offset 0");
    if (bytes.size() < 4 + 2 + 4) throw CorruptionError("model file truncated at byte offset " + std::to_string(bytes.size()));
    const auto body = bytes.first(bytes.size() - 4);
    Reader trailer(bytes.subspan(bytes.size() - 4));
    if (crc_of(body) != trailer.get(4)) throw CorruptionError("model file CRC32 mismatch");

    Reader r(body);
    r.get(4);
    const auto version = r.get(2);
    if (version > kModelVersion)
        throw VersionError("model file version " + std::to_string(version) + " is newer than supported version " +
                           std::to_string(kModelVersion));
    if (version == 0) throw FormatError("model file version 0 is invalid");

    std::vector<LayerSpec> layers;
    std::map<std::string, std::string> meta;
    std::istringstream header(r.text());
    for (std::string line; std::getline(header, line);) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw FormatError("malformed metadata line '" + line + "'");
            meta[line.substr(1, eq - 1)] = line.substr(eq + 1);
        } else {
            try {
                layers.push_back(LayerSpec::parse(line));
            } catch (const ConfigError& e) {
                throw FormatError(std::string("bad layer line in model file: ") + e.what());
            }
        }
    }
    ModelGraph model;
    try {
        model = ModelGraph::build(layers, 0);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("model file layers are invalid: ") + e.what());
    }
    model.meta = std::move(meta);

    const auto count = r.get(4);
    if (count != model.params.size())
        throw FormatError("model file holds " + std::to_string(count) + " parameters, layers need " +
                          std::to_string(model.params.size()));
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name = r.text();
        const auto it = model.params.find(name);
        if (it == model.params.end()) throw FormatError("unexpected parameter '" + name + "'");
        const bool trainable = r.get(1) != 0;
        const auto rank = r.get(1);
        Shape shape;
        for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.get(4)));
        if (shape != it->second.shape())
            throw FormatError("parameter '" + name + "' has shape " + shape_str(shape) + ", layers need " +
                              shape_str(it->second.shape()));
        Tensor t = it->second;
        for (auto& v : t.mutable_data()) v = std::bit_cast<double>(r.get(8));
        if (!is_buffer_name(name)) model.set_trainable(name, trainable);
    }
    if (r.pos() != body.size()) throw FormatError("trailing bytes after parameters at offset " + std::to_string(r.pos()));
    return model;
}

void save_model(const std::filesystem::path& path, const ModelGraph& model) { write_file(path, serialize_model(model)); }

ModelGraph load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace maskwright

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskwright/tensor.hpp"

namespace maskwright {

enum class TaskKind { planted_patch, keyword_seq, char_count };

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& text);

enum class Split { all, train, test };

std::string to_string(Split s);
Split parse_split(const std::string& text);

struct TaskSpec {
    TaskKind kind = TaskKind::planted_patch;
    int n = 2000;
    std::uint64_t seed = 0;
    double noise = 0.5;
    // planted_patch
    int classes = 2;
    int channels = 1;
    int height = 16;
    int width = 16;
    // keyword_seq and char_count
    int length = 30;
    int vocab = 50;
    std::string alphabet = "CNOSPFHIKLBZ";

    // Defaults for each task family (sizes used by the acceptance runs).
    static TaskSpec defaults(TaskKind kind);
    // Throws ConfigError when the task cannot be generated.
    void validate() const;
    // Generation parameters recorded in the manifest.
    std::map<std::string, std::string> params() const;
};

inline constexpr int kPatchSize = 3;
inline constexpr int kKeywordsPerPolarity = 5;
inline constexpr int kFirstFillerToken = 2 * kKeywordsPerPolarity;

struct LabeledDataset {
    TaskKind kind = TaskKind::planted_patch;
    Split split = Split::all;
    Shape input_shape;            // per example
    std::vector<double> inputs;   // row-major, n * numel(input_shape); token ids for sequence tasks
    std::vector<double> targets;  // class ids or regression values
    std::vector<std::vector<int>> relevance;
    int num_classes = 0;  // 0 for regression
    std::vector<std::string> vocabulary;
    std::map<std::string, std::string> params;

    std::size_t size() const { return targets.size(); }
    std::size_t example_numel() const { return shape_numel(input_shape); }
    bool is_classification() const { return num_classes > 0; }
    bool has_token_inputs() const { return kind != TaskKind::planted_patch; }
    // Number of mask positions a relevance index may address.
    std::size_t relevance_extent() const;

    Tensor input_batch(std::span<const std::size_t> indices) const;
    std::vector<int> label_batch(std::span<const std::size_t> indices) const;
    Tensor target_batch(std::span<const std::size_t> indices) const;
    LabeledDataset subset(std::size_t begin, std::size_t end) const;

    // Throws FormatError when counts or relevance indices are inconsistent.
    void validate() const;
};

LabeledDataset gen_planted_patch(const TaskSpec& spec);
LabeledDataset gen_keyword_seq(const TaskSpec& spec);
LabeledDataset gen_char_count(const TaskSpec& spec);
LabeledDataset generate_task(const TaskSpec& spec);

// #O + #N - #C, the noise-free char_count target.
int char_count_score(std::string_view text);

// The fixed 3x3 +/-1 template for a class (row-major).
std::vector<double> patch_template(int class_id, int classes);

// First round(train_fraction * n) examples train, the rest test.
std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data, double train_fraction = 0.8);

// ---- IDX -----------------------------------------------------------------------

inline constexpr std::uint8_t kIdxFloat64 = 0x0D;
inline constexpr std::uint8_t kIdxInt32 = 0x0C;

struct IdxArray {
    std::uint8_t type = kIdxFloat64;
    Shape dims;
    std::vector<double> f64;
    std::vector<std::int32_t> i32;
};

std::vector<std::uint8_t> encode_idx(const IdxArray& array);
IdxArray decode_idx(std::span<const std::uint8_t> bytes);
void write_idx(const std::filesystem::path& path, const IdxArray& array);
IdxArray read_idx(const std::filesystem::path& path);

// ---- dataset directories -------------------------------------------------------

inline constexpr const char* kManifestName = "manifest.txt";

// Writes manifest.txt, inputs.idx, targets.idx and relevance.idx into dir.
void write_dataset(const std::filesystem::path& dir, const LabeledDataset& data);
std::string manifest_text(const LabeledDataset& data);
LabeledDataset load_dataset(const std::filesystem::path& dir);

}  // namespace maskwright

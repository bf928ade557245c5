#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include "taprune/data/dataset.hpp"

namespace taprune::workbench {

// No cap, an absolute example count, or a fraction in (0, 1].
using TrainSizeCap = std::variant<std::monostate, std::size_t, double>;

/// A task read from newline-delimited JSON. Each line is an object
/// {"text": string, "label": int or float} with an optional
/// "split": "train" | "dev" | "test". Without split fields the examples are
/// shuffled with `seed` and divided 80/10/10.
struct TaskSpec {
    std::string name;
    data::TaskType type;
    std::filesystem::path path;
    TrainSizeCap train_cap;
    std::size_t vocab_size = 128;
    std::size_t seq_len = 16;
    std::uint64_t seed = 0;

    [[nodiscard]] data::Metric metric() const { return type.metric(); }
    void validate() const;
};

// Whitespace token -> id. A decimal integer below vocab_size is taken as the
// id itself (so exported synthetic tasks round-trip); anything else maps to
// 2 + fnv1a64(token) % (vocab_size - 2), keeping the pad and mask ids free.
int token_id(const std::string& token, std::size_t vocab_size);

std::uint64_t fnv1a64(std::string_view bytes);

// Throws FormatError naming the offending line on malformed records, labels
// outside the task's class range, or fractional labels for a classification
// task.
data::TaskData load_task(const TaskSpec& spec);

// Writes every split of `task` as JSONL with "split" fields; token ids are
// written as decimal integers.
void export_task(const data::TaskData& task, const std::filesystem::path& path);

// Seeded subsample of the train split (dev and test untouched). A fraction
// of 1 or no cap returns the task unchanged.
data::TaskData cap_train(const data::TaskData& task, const TrainSizeCap& cap, std::uint64_t seed);

}  // namespace taprune::workbench

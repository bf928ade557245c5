#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace taprune::data {

// Reserved token ids. Content tokens start at first_content_token.
inline constexpr int pad_token = 0;
inline constexpr int mask_token = 1;
inline constexpr int first_content_token = 2;

enum class TaskKind { classification, regression };
enum class Metric { accuracy, pearson };

struct TaskType {
    TaskKind kind = TaskKind::classification;
    std::size_t num_classes = 2;  // classification only

    [[nodiscard]] Metric metric() const
    {
        return kind == TaskKind::classification ? Metric::accuracy : Metric::pearson;
    }
    [[nodiscard]] std::size_t output_arity() const
    {
        return kind == TaskKind::classification ? num_classes : 1;
    }
    friend bool operator==(const TaskType&, const TaskType&) = default;
};

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);
std::string to_string(Metric metric);

/// A batch of fixed-length token sequences with their labels.
struct TokenBatch {
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<int> ids;           // [batch_size * seq_len]
    std::vector<int> labels;        // classification
    std::vector<double> targets;    // regression
};

/// Column-major store of fixed-length examples for one task split.
struct Dataset {
    TaskType type;
    std::size_t seq_len = 0;
    std::vector<int> tokens;        // [size() * seq_len]
    std::vector<int> labels;        // classification, one per example
    std::vector<double> targets;    // regression, one per example

    [[nodiscard]] std::size_t size() const { return seq_len == 0 ? 0 : tokens.size() / seq_len; }
    [[nodiscard]] std::span<const int> sequence(std::size_t i) const
    {
        return std::span<const int>(tokens).subspan(i * seq_len, seq_len);
    }

    // Appends one example; label is cast to int for classification.
    void push(std::span<const int> sequence, double label);
    [[nodiscard]] double label_value(std::size_t i) const;

    [[nodiscard]] TokenBatch batch(std::span<const std::size_t> indices) const;
    [[nodiscard]] TokenBatch all() const;
    [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;

    // Throws FormatError on inconsistent columns.
    void validate() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct TaskData {
    std::string name;
    TaskType type;
    Dataset train;
    Dataset dev;
    Dataset test;
};

// The data-limited target task T and the auxiliary task A.
struct TaskPair {
    TaskData target;
    TaskData auxiliary;
};

}  // namespace taprune::data

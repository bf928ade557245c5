#include "taprune/data/dataset.hpp"

#include <cmath>

#include "taprune/error.hpp"

namespace taprune::data {

std::string to_string(TaskKind kind)
{
    return kind == TaskKind::classification ? "classification" : "regression";
}

TaskKind parse_task_kind(const std::string& text)
{
    if (text == "classification") return TaskKind::classification;
    if (text == "regression") return TaskKind::regression;
    throw ConfigError("unknown task kind '" + text + "'");
}

std::string to_string(Metric metric) { return metric == Metric::accuracy ? "accuracy" : "pearson"; }

void Dataset::push(std::span<const int> sequence, double label)
{
    if (seq_len == 0) seq_len = sequence.size();
    if (sequence.size() != seq_len) {
        throw FormatError("sequence of length " + std::to_string(sequence.size()) +
                          " in a dataset of length " + std::to_string(seq_len));
    }
    tokens.insert(tokens.end(), sequence.begin(), sequence.end());
    if (type.kind == TaskKind::classification) {
        labels.push_back(static_cast<int>(label));
    } else {
        targets.push_back(label);
    }
}

double Dataset::label_value(std::size_t i) const
{
    return type.kind == TaskKind::classification ? static_cast<double>(labels[i]) : targets[i];
}

TokenBatch Dataset::batch(std::span<const std::size_t> indices) const
{
    TokenBatch b;
    b.batch_size = indices.size();
    b.seq_len = seq_len;
    b.ids.reserve(indices.size() * seq_len);
    for (auto i : indices) {
        const auto s = sequence(i);
        b.ids.insert(b.ids.end(), s.begin(), s.end());
        if (type.kind == TaskKind::classification) {
            b.labels.push_back(labels[i]);
        } else {
            b.targets.push_back(targets[i]);
        }
    }
    return b;
}

TokenBatch Dataset::all() const
{
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const
{
    Dataset out;
    out.type = type;
    out.seq_len = seq_len;
    for (auto i : indices) out.push(sequence(i), label_value(i));
    return out;
}

void Dataset::validate() const
{
    if (seq_len == 0) {
        if (!tokens.empty()) throw FormatError("dataset has tokens but zero sequence length");
        return;
    }
    if (tokens.size() % seq_len != 0) throw FormatError("token count is not a multiple of seq_len");
    const std::size_t n = size();
    if (type.kind == TaskKind::classification) {
        if (labels.size() != n || !targets.empty()) throw FormatError("classification labels do not match examples");
        for (int y : labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= type.num_classes) {
                throw FormatError("class label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(type.num_classes) + ")");
            }
        }
    } else {
        if (targets.size() != n || !labels.empty()) throw FormatError("regression targets do not match examples");
        for (double t : targets) {
            if (!std::isfinite(t)) throw FormatError("non-finite regression target");
        }
    }
}

}  // namespace taprune::data

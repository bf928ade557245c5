#include "taprune/workbench/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "taprune/error.hpp"
#include "taprune/random.hpp"

namespace taprune::workbench {

namespace {

using nlohmann::json;

struct Row {
    std::vector<int> tokens;
    double label = 0.0;
    int split = -1;  // 0 train, 1 dev, 2 test, -1 unassigned
};

std::vector<int> tokenize(const std::string& text, const TaskSpec& spec)
{
    std::vector<int> ids;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok && ids.size() < spec.seq_len) ids.push_back(token_id(tok, spec.vocab_size));
    ids.resize(spec.seq_len, data::pad_token);
    return ids;
}

Row parse_row(const std::string& line, std::size_t line_no, const TaskSpec& spec)
{
    auto fail = [&](const std::string& what) {
        return FormatError(spec.path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception&) {
        throw fail("not valid JSON");
    }
    if (!j.is_object()) throw fail("record must be a JSON object");
    if (!j.contains("text") || !j["text"].is_string()) throw fail("missing string field 'text'");
    if (!j.contains("label") || !j["label"].is_number()) throw fail("missing numeric field 'label'");

    Row row;
    row.tokens = tokenize(j["text"].get<std::string>(), spec);
    row.label = j["label"].get<double>();
    if (spec.type.kind == data::TaskKind::classification) {
        if (!j["label"].is_number_integer()) throw fail("regression label given for a classification task");
        const auto c = j["label"].get<long long>();
        if (c < 0 || static_cast<std::size_t>(c) >= spec.type.num_classes) {
            throw fail("label " + std::to_string(c) + " outside [0, " + std::to_string(spec.type.num_classes) + ")");
        }
    } else if (!std::isfinite(row.label)) {
        throw fail("label is not finite");
    }
    if (j.contains("split")) {
        const auto s = j["split"].is_string() ? j["split"].get<std::string>() : std::string();
        if (s == "train") {
            row.split = 0;
        } else if (s == "dev") {
            row.split = 1;
        } else if (s == "test") {
            row.split = 2;
        } else {
            throw fail("split must be \"train\", \"dev\" or \"test\"");
        }
    }
    return row;
}

data::Dataset empty_split(const TaskSpec& spec)
{
    data::Dataset d;
    d.type = spec.type;
    d.seq_len = spec.seq_len;
    return d;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

int token_id(const std::string& token, std::size_t vocab_size)
{
    if (vocab_size <= static_cast<std::size_t>(data::first_content_token)) {
        throw ConfigError("vocab_size must exceed the reserved ids");
    }
    std::size_t v = 0;
    const auto* end = token.data() + token.size();
    const auto [ptr, ec] = std::from_chars(token.data(), end, v);
    if (ec == std::errc() && ptr == end && v < vocab_size) return static_cast<int>(v);
    const auto buckets = vocab_size - data::first_content_token;
    return data::first_content_token + static_cast<int>(fnv1a64(token) % buckets);
}

void TaskSpec::validate() const
{
    if (name.empty()) throw ConfigError("task needs a name");
    if (type.kind == data::TaskKind::classification && type.num_classes < 2) {
        throw ConfigError("classification task needs at least 2 classes");
    }
    if (vocab_size <= static_cast<std::size_t>(data::first_content_token)) {
        throw ConfigError("vocab_size must exceed the reserved ids");
    }
    if (seq_len == 0) throw ConfigError("seq_len must be positive");
    if (const auto* f = std::get_if<double>(&train_cap); f && !(*f > 0.0 && *f <= 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1]");
    }
    if (const auto* n = std::get_if<std::size_t>(&train_cap); n && *n == 0) {
        throw ConfigError("train cap must be positive");
    }
}

data::TaskData load_task(const TaskSpec& spec)
{
    spec.validate();
    std::ifstream in(spec.path);
    if (!in) throw FormatError("cannot open " + spec.path.string());

    std::vector<Row> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        rows.push_back(parse_row(line, line_no, spec));
    }
    if (rows.empty()) throw FormatError(spec.path.string() + ": no records");
    const bool any_split = std::any_of(rows.begin(), rows.end(), [](const Row& r) { return r.split >= 0; });
    const bool all_split = std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.split >= 0; });
    if (any_split && !all_split) throw FormatError(spec.path.string() + ": 'split' must be given on every line or none");

    if (!all_split) {
        std::vector<std::size_t> order(rows.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(spec.seed);
        std::shuffle(order.begin(), order.end(), rng.engine());
        const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(rows.size())));
        const auto n_dev = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(rows.size())));
        for (std::size_t k = 0; k < order.size(); ++k) {
            rows[order[k]].split = k < n_train ? 0 : (k < n_train + n_dev ? 1 : 2);
        }
    }

    data::TaskData task;
    task.name = spec.name;
    task.type = spec.type;
    task.train = empty_split(spec);
    task.dev = empty_split(spec);
    task.test = empty_split(spec);
    data::Dataset* splits[] = {&task.train, &task.dev, &task.test};
    for (const auto& r : rows) splits[r.split]->push(r.tokens, r.label);
    if (task.train.size() == 0) throw FormatError(spec.path.string() + ": empty train split");
    return cap_train(task, spec.train_cap, spec.seed);
}

void export_task(const data::TaskData& task, const std::filesystem::path& path)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    const std::pair<const char*, const data::Dataset*> splits[] = {
        {"train", &task.train}, {"dev", &task.dev}, {"test", &task.test}};
    for (const auto& [name, d] : splits) {
        for (std::size_t i = 0; i < d->size(); ++i) {
            std::string text;
            for (int id : d->sequence(i)) {
                if (!text.empty()) text += ' ';
                text += std::to_string(id);
            }
            json j{{"text", text}, {"split", name}};
            if (task.type.kind == data::TaskKind::classification) {
                j["label"] = d->labels[i];
            } else {
                j["label"] = d->targets[i];
            }
            out << j.dump() << '\n';
        }
    }
}

data::TaskData cap_train(const data::TaskData& task, const TrainSizeCap& cap, std::uint64_t seed)
{
    const std::size_t n = task.train.size();
    std::size_t keep = n;
    if (const auto* c = std::get_if<std::size_t>(&cap)) keep = std::min(n, *c);
    if (const auto* f = std::get_if<double>(&cap)) {
        if (!(*f > 0.0 && *f <= 1.0)) throw ConfigError("train fraction must lie in (0, 1]");
        keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(*f * static_cast<double>(n))));
    }
    if (keep >= n) return task;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed ^ 0x5eed5eedULL);
    std::shuffle(order.begin(), order.end(), rng.engine());
    order.resize(keep);
    std::sort(order.begin(), order.end());
    data::TaskData out = task;
    out.train = task.train.subset(order);
    return out;
}

}  // namespace taprune::workbench

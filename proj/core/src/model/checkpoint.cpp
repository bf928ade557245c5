#include "taprune/model/checkpoint.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

#include "taprune/error.hpp"

namespace taprune::model {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

struct Blob {
    std::vector<double> values;

    json add(const std::string& name, const ad::Tensor& t)
    {
        const auto d = t.data();
        json entry{{"name", name}, {"shape", t.shape()}, {"offset", values.size()}};
        values.insert(values.end(), d.begin(), d.end());
        return entry;
    }
};

std::vector<double> read_blob(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(double) != 0) throw FormatError(path.string() + ": size is not a multiple of 8");
    std::vector<double> values(bytes / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw FormatError("short read on " + path.string());
    return values;
}

void fill(ad::Tensor& dst, const json& entry, const std::vector<double>& blob)
{
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != dst.shape()) {
        throw FormatError("tensor '" + entry.at("name").get<std::string>() + "' has unexpected shape");
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    auto out = dst.mutable_data();
    if (offset + out.size() > blob.size()) {
        throw FormatError("tensor '" + entry.at("name").get<std::string>() + "' runs past the end of tensors.bin");
    }
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
}

json config_to_json(const ModelConfig& c)
{
    return {{"num_layers", c.num_layers}, {"hidden_dim", c.hidden_dim}, {"num_heads", c.num_heads},
            {"ffn_dim", c.ffn_dim},       {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len}};
}

ModelConfig config_from_json(const json& j)
{
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    return c;
}

}  // namespace

const TaskHead* Checkpoint::find_head(const std::string& task_id) const
{
    for (const auto& h : heads) {
        if (h.task_id == task_id) return &h;
    }
    return nullptr;
}

const GateValues* Checkpoint::find_gates(const std::string& name) const
{
    for (const auto& [n, g] : gates) {
        if (n == name) return &g;
    }
    return nullptr;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint)
{
    const auto& config = checkpoint.model.config();
    const auto layout = GateLayout::of(config);
    Blob blob;
    json tensors = json::array();
    for (const auto& p : checkpoint.model.named_parameters(true)) tensors.push_back(blob.add(p.name, p.tensor));

    json heads = json::array();
    for (const auto& h : checkpoint.heads) {
        heads.push_back({{"task_id", h.task_id},
                         {"kind", data::to_string(h.type.kind)},
                         {"num_classes", h.type.num_classes},
                         {"weight", blob.add("heads." + h.task_id + ".weight", h.weight)},
                         {"bias", blob.add("heads." + h.task_id + ".bias", h.bias)}});
    }

    json gates = json::array();
    for (const auto& [name, g] : checkpoint.gates) {
        if (!(g.layout() == layout)) throw ShapeError("gate vector '" + name + "' does not match the model layout");
        const auto v = g.values();
        gates.push_back({{"name", name}, {"offset", blob.values.size()}, {"size", v.size()}});
        blob.values.insert(blob.values.end(), v.begin(), v.end());
    }

    json manifest{{"format", "taprune-checkpoint"},
                  {"format_version", checkpoint_format_version},
                  {"byte_order", "little"},
                  {"dtype", "float64"},
                  {"config", config_to_json(config)},
                  {"tensors", tensors},
                  {"heads", heads},
                  {"gates", gates},
                  {"total_elements", blob.values.size()}};

    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(blob.values.data()),
                  static_cast<std::streamsize>(blob.values.size() * sizeof(double)));
        if (!out) throw Error("failed to write " + (dir / "tensors.bin").string());
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw Error("failed to write " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("cannot open " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    try {
        if (manifest.at("format") != "taprune-checkpoint") throw FormatError("not a taprune checkpoint");
        const int version = manifest.at("format_version").get<int>();
        if (version != checkpoint_format_version) {
            throw FormatError("unsupported checkpoint format version " + std::to_string(version));
        }
        const auto blob = read_blob(dir / "tensors.bin");
        if (manifest.at("total_elements").get<std::size_t>() != blob.size()) {
            throw FormatError("tensors.bin size disagrees with the manifest");
        }

        const auto config = config_from_json(manifest.at("config"));
        config.validate();
        Checkpoint ck;
        ck.model = GatedTransformer(config, 0);
        auto params = ck.model.named_parameters(true);
        const auto& entries = manifest.at("tensors");
        if (entries.size() != params.size()) throw FormatError("manifest lists the wrong number of tensors");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (entries[i].at("name") != params[i].name) {
                throw FormatError("expected tensor '" + params[i].name + "', found '" +
                                  entries[i].at("name").get<std::string>() + "'");
            }
            fill(params[i].tensor, entries[i], blob);
        }

        Rng rng(0);
        for (const auto& h : manifest.at("heads")) {
            data::TaskType type;
            type.kind = data::parse_task_kind(h.at("kind").get<std::string>());
            type.num_classes = h.at("num_classes").get<std::size_t>();
            auto head = TaskHead::create(h.at("task_id").get<std::string>(), type, config.hidden_dim, rng);
            fill(head.weight, h.at("weight"), blob);
            fill(head.bias, h.at("bias"), blob);
            ck.heads.push_back(std::move(head));
        }

        const auto layout = GateLayout::of(config);
        for (const auto& g : manifest.at("gates")) {
            const auto offset = g.at("offset").get<std::size_t>();
            const auto size = g.at("size").get<std::size_t>();
            if (size != layout.count() || offset + size > blob.size()) {
                throw FormatError("gate vector '" + g.at("name").get<std::string>() + "' is malformed");
            }
            std::vector<double> values(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                       blob.begin() + static_cast<std::ptrdiff_t>(offset + size));
            ck.gates.emplace_back(g.at("name").get<std::string>(), GateValues(layout, std::move(values)));
        }
        return ck;
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
}

}  // namespace taprune::model

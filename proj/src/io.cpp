#include "gradclust/io.hpp"

#include <bit>
#include <cerrno>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace gradclust {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "dataset payloads are raw little-endian doubles");

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path);
    return contents;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed on " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

namespace {

constexpr const char* kDatasetMagic = "gradclust-dataset v1";

}  // namespace

// 17 significant digits: the shortest length guaranteed to reparse any
// double to the identical bits.
std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

double parse_double(const std::string& text, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || text.empty())
        throw IoError(where + ": bad number '" + text + "'");
    // ERANGE with an infinite result marks a finite literal that overflowed;
    // a literal "inf" parses without errno, and underflow to a denormal is a
    // faithful reparse, so both stay accepted.
    if (errno == ERANGE && std::isinf(x))
        throw IoError(where + ": number out of range '" + text + "'");
    return x;
}

long parse_long(const std::string& text, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const long x = std::strtol(text.c_str(), &end, 10);
    if (end != text.c_str() + text.size() || text.empty() || errno == ERANGE)
        throw IoError(where + ": bad integer '" + text + "'");
    return x;
}

namespace {

const char* tag_name(ProvenanceTag tag) {
    switch (tag) {
        case ProvenanceTag::original: return "original";
        case ProvenanceTag::duplicate: return "duplicate";
        case ProvenanceTag::corrupted: return "corrupted";
        case ProvenanceTag::margin: return "margin";
    }
    throw ContractError("unknown provenance tag");
}

ProvenanceTag tag_from_name(const std::string& name, const std::string& path) {
    if (name == "original") return ProvenanceTag::original;
    if (name == "duplicate") return ProvenanceTag::duplicate;
    if (name == "corrupted") return ProvenanceTag::corrupted;
    if (name == "margin") return ProvenanceTag::margin;
    throw IoError(path + ": unknown provenance tag '" + name + "'");
}

json require_object(const std::string& text, const std::string& path) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw IoError(path + ": not a JSON object");
    return doc;
}

void check_format(const json& doc, const std::string& format, const std::string& path) {
    if (doc.value("format", "") != format || doc.value("version", 0) != 1)
        throw IoError(path + ": expected " + format + " v1");
}

std::vector<double> double_list(const json& node, const std::string& path) {
    if (!node.is_array()) throw IoError(path + ": expected an array of numbers");
    std::vector<double> out;
    out.reserve(node.size());
    for (const auto& v : node) {
        if (!v.is_number()) throw IoError(path + ": expected an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

void save_dataset(const Dataset& d, const std::string& path) {
    d.validate();
    json header;
    header["examples"] = d.size();
    header["features"] = d.feature_dim();
    header["label_kind"] =
        d.label_kind == LabelKind::plus_minus_one ? "plus_minus_one" : "class_index";
    header["num_classes"] = d.num_classes;
    header["seed"] = d.seed;
    header["labels"] = d.labels;
    json prov = json::array();
    for (const Provenance& p : d.provenance) {
        json entry;
        entry["tag"] = tag_name(p.tag);
        if (p.tag == ProvenanceTag::duplicate) entry["source"] = p.source;
        prov.push_back(std::move(entry));
    }
    header["provenance"] = std::move(prov);

    std::string contents = kDatasetMagic;
    contents += '\n';
    contents += header.dump();
    contents += '\n';
    const std::size_t bytes = d.features.size() * sizeof(double);
    const std::size_t offset = contents.size();
    contents.resize(offset + bytes);
    std::memcpy(contents.data() + offset, d.features.data(), bytes);
    write_file_atomic(path, contents);
}

Dataset load_dataset(const std::string& path) {
    const std::string contents = read_file(path);
    const std::size_t magic_end = contents.find('\n');
    if (magic_end == std::string::npos || contents.substr(0, magic_end) != kDatasetMagic)
        throw IoError(path + ": not a dataset file");
    const std::size_t header_end = contents.find('\n', magic_end + 1);
    if (header_end == std::string::npos) throw IoError(path + ": truncated header");
    const json header =
        require_object(contents.substr(magic_end + 1, header_end - magic_end - 1), path);

    Dataset d;
    const std::size_t n = header.at("examples").get<std::size_t>();
    const std::size_t m = header.at("features").get<std::size_t>();
    const std::string kind = header.at("label_kind").get<std::string>();
    if (kind == "plus_minus_one")
        d.label_kind = LabelKind::plus_minus_one;
    else if (kind == "class_index")
        d.label_kind = LabelKind::class_index;
    else
        throw IoError(path + ": unknown label kind '" + kind + "'");
    d.num_classes = header.at("num_classes").get<int>();
    d.seed = header.at("seed").get<std::uint64_t>();
    d.labels = header.at("labels").get<std::vector<int>>();
    for (const auto& entry : header.at("provenance")) {
        Provenance p;
        p.tag = tag_from_name(entry.at("tag").get<std::string>(), path);
        if (p.tag == ProvenanceTag::duplicate) p.source = entry.at("source").get<std::size_t>();
        d.provenance.push_back(p);
    }

    const std::size_t bytes = n * m * sizeof(double);
    if (contents.size() - header_end - 1 != bytes)
        throw IoError(path + ": payload is " + std::to_string(contents.size() - header_end - 1) +
                      " bytes, header promises " + std::to_string(bytes));
    d.features = Matrix(n, m);
    std::memcpy(d.features.data(), contents.data() + header_end + 1, bytes);
    d.validate();
    return d;
}

namespace {

json layer_to_json(const LayerSpec& spec) {
    json out;
    out["kind"] = spec.kind == LayerKind::fully_connected ? "fc" : "conv";
    out["input_dim"] = spec.input_dim;
    out["output_dim"] = spec.output_dim;
    out["activation"] = spec.activation == Activation::relu ? "relu" : "identity";
    out["has_bias"] = spec.has_bias;
    out["trainable"] = spec.trainable;
    if (spec.kind == LayerKind::convolution) {
        out["kernel_h"] = spec.kernel_h;
        out["kernel_w"] = spec.kernel_w;
        out["in_channels"] = spec.in_channels;
        out["in_height"] = spec.in_height;
        out["in_width"] = spec.in_width;
    }
    return out;
}

LayerSpec layer_from_json(const json& node, const std::string& path) {
    LayerSpec spec;
    const std::string kind = node.at("kind").get<std::string>();
    if (kind == "fc")
        spec.kind = LayerKind::fully_connected;
    else if (kind == "conv")
        spec.kind = LayerKind::convolution;
    else
        throw IoError(path + ": unknown layer kind '" + kind + "'");
    spec.input_dim = node.at("input_dim").get<std::size_t>();
    spec.output_dim = node.at("output_dim").get<std::size_t>();
    const std::string act = node.at("activation").get<std::string>();
    if (act == "relu")
        spec.activation = Activation::relu;
    else if (act == "identity")
        spec.activation = Activation::identity;
    else
        throw IoError(path + ": unknown activation '" + act + "'");
    spec.has_bias = node.at("has_bias").get<bool>();
    spec.trainable = node.at("trainable").get<bool>();
    if (spec.kind == LayerKind::convolution) {
        spec.kernel_h = node.at("kernel_h").get<std::size_t>();
        spec.kernel_w = node.at("kernel_w").get<std::size_t>();
        spec.in_channels = node.at("in_channels").get<std::size_t>();
        spec.in_height = node.at("in_height").get<std::size_t>();
        spec.in_width = node.at("in_width").get<std::size_t>();
    }
    spec.validate();
    return spec;
}

}  // namespace

void save_model(const ModelSnapshot& m, const std::string& path) {
    json doc;
    doc["format"] = "gradclust-model";
    doc["version"] = 1;
    json layers = json::array();
    json weights = json::array();
    json biases = json::array();
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        layers.push_back(layer_to_json(m.layers()[l]));
        weights.push_back(m.weight(l).values());
        biases.push_back(m.bias(l));
    }
    doc["layers"] = std::move(layers);
    doc["weights"] = std::move(weights);
    doc["biases"] = std::move(biases);
    write_file_atomic(path, doc.dump() + "\n");
}

ModelSnapshot load_model(const std::string& path) {
    const json doc = require_object(read_file(path), path);
    check_format(doc, "gradclust-model", path);
    std::vector<LayerSpec> layers;
    for (const auto& node : doc.at("layers")) layers.push_back(layer_from_json(node, path));
    const auto& weight_nodes = doc.at("weights");
    const auto& bias_nodes = doc.at("biases");
    if (weight_nodes.size() != layers.size() || bias_nodes.size() != layers.size())
        throw IoError(path + ": layer list and parameter lists disagree");
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::vector<double> w = double_list(weight_nodes[l], path);
        if (w.size() != layers[l].input_dim * layers[l].output_dim)
            throw IoError(path + ": weight size mismatch in layer " + std::to_string(l));
        Matrix wm(layers[l].input_dim, layers[l].output_dim);
        std::memcpy(wm.data(), w.data(), w.size() * sizeof(double));
        weights.push_back(std::move(wm));
        biases.push_back(double_list(bias_nodes[l], path));
    }
    return ModelSnapshot(std::move(layers), std::move(weights), std::move(biases));
}

void save_cluster_state(const ClusterState& state, const RankOneCenters& centers,
                        const std::string& path) {
    state.validate();
    json doc;
    doc["format"] = "gradclust-clusters";
    doc["version"] = 1;
    doc["assignments"] = state.assignments;
    doc["sizes"] = state.sizes;
    doc["objective"] = state.objective;
    doc["iterations"] = state.iterations;
    doc["objective_trace"] = state.objective_trace;
    doc["degenerate"] = state.degenerate;
    json center_nodes = json::array();
    for (const auto& cluster : centers.centers) {
        json blocks = json::array();
        for (const RankOneBlockCenter& block : cluster) {
            require(all_finite(block.c) && all_finite(block.d),
                    "save_cluster_state: non-finite center");
            json node;
            node["c"] = block.c;
            node["d"] = block.d;
            blocks.push_back(std::move(node));
        }
        center_nodes.push_back(std::move(blocks));
    }
    doc["centers"] = std::move(center_nodes);
    write_file_atomic(path, doc.dump() + "\n");
}

std::pair<ClusterState, RankOneCenters> load_cluster_state(const std::string& path) {
    const json doc = require_object(read_file(path), path);
    check_format(doc, "gradclust-clusters", path);
    ClusterState state;
    state.assignments = doc.at("assignments").get<std::vector<std::size_t>>();
    state.sizes = doc.at("sizes").get<std::vector<std::size_t>>();
    state.objective = doc.at("objective").get<double>();
    state.iterations = doc.at("iterations").get<int>();
    state.objective_trace = doc.at("objective_trace").get<std::vector<double>>();
    state.degenerate = doc.at("degenerate").get<bool>();
    state.validate();
    RankOneCenters centers;
    for (const auto& cluster : doc.at("centers")) {
        std::vector<RankOneBlockCenter> blocks;
        for (const auto& node : cluster) {
            RankOneBlockCenter block;
            block.c = double_list(node.at("c"), path);
            block.d = double_list(node.at("d"), path);
            block.norm2_c = norm2(block.c);
            block.norm2_d = norm2(block.d);
            blocks.push_back(std::move(block));
        }
        centers.centers.push_back(std::move(blocks));
    }
    if (centers.num_clusters() != state.num_clusters())
        throw IoError(path + ": center count disagrees with cluster count");
    return {std::move(state), std::move(centers)};
}

namespace {

constexpr const char* kCsvHeader = "step,estimator,avg_var,e_g2,norm_var,draws";

}  // namespace

std::string variance_csv(const std::vector<VarianceReport>& rows) {
    std::string out = kCsvHeader;
    out += '\n';
    for (const VarianceReport& r : rows) {
        require(r.estimator.find_first_of(",\n") == std::string::npos,
                "variance_csv: estimator name '" + r.estimator + "' breaks the format");
        require(!std::isnan(r.avg_var) && !std::isnan(r.e_g2) && !std::isnan(r.norm_var),
                "variance_csv: refusing to serialize NaN");
        out += std::to_string(r.step);
        out += ',';
        out += r.estimator;
        out += ',';
        out += format_double(r.avg_var);
        out += ',';
        out += format_double(r.e_g2);
        out += ',';
        out += format_double(r.norm_var);
        out += ',';
        out += std::to_string(r.draws);
        out += '\n';
    }
    return out;
}

std::vector<VarianceReport> parse_variance_csv(const std::string& text) {
    std::vector<VarianceReport> rows;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line_no == 1) {
            if (line != kCsvHeader)
                throw IoError("variance csv row 1: bad header '" + line + "'");
            continue;
        }
        if (line.empty()) continue;
        const std::string where = "variance csv row " + std::to_string(line_no);
        std::vector<std::string> fields;
        std::size_t field_start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', field_start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(field_start));
                break;
            }
            fields.push_back(line.substr(field_start, comma - field_start));
            field_start = comma + 1;
        }
        if (fields.size() != 6) throw IoError(where + ": expected 6 fields, got " +
                                              std::to_string(fields.size()));
        VarianceReport r;
        r.step = parse_long(fields[0], where);
        r.estimator = fields[1];
        if (r.estimator.empty()) throw IoError(where + ": empty estimator name");
        r.avg_var = parse_double(fields[2], where);
        r.e_g2 = parse_double(fields[3], where);
        r.norm_var = parse_double(fields[4], where);
        r.draws = static_cast<int>(parse_long(fields[5], where));
        rows.push_back(std::move(r));
    }
    if (line_no == 0) throw IoError("variance csv row 1: missing header");
    return rows;
}

}  // namespace gradclust

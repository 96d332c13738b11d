#ifndef FLATVI_IO_HPP_
#define FLATVI_IO_HPP_

#include "datagen.hpp"
#include "gae.hpp"
#include "otcfm.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <fstream>
#include <sstream>

namespace flatvi {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// "<base><suffix>", e.g. with_suffix("out/data", ".csv").
inline fs::path with_suffix(const fs::path &base, const std::string &suffix)
{
    return fs::path(base.string() + suffix);
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string &line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::string read_text(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ParseError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path &p, const std::string &text)
{
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + p.string());
}

inline Json read_json(const fs::path &p)
{
    const std::string text = read_text(p);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error &e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

}  // namespace detail

/// Header line then one line per row, comma separated, LF endings.
inline void write_matrix_csv(const fs::path &path, const Matrix &m, const std::vector<std::string> &header)
{
    require_dims(static_cast<Eigen::Index>(header.size()) == m.cols(), "write_matrix_csv: header width mismatch");
    std::string out;
    for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
    out += '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + format_double(m(i, j));
        out += '\n';
    }
    detail::write_text(path, out);
}

struct CsvMatrix {
    std::vector<std::string> header;
    Matrix values;
};

inline CsvMatrix read_matrix_csv(const fs::path &path)
{
    std::istringstream in(detail::read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": line 1: missing header");
    CsvMatrix out;
    out.header = detail::split_csv_line(line);
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != out.header.size())
            throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": expected " +
                             std::to_string(out.header.size()) + " fields");
        std::vector<double> row;
        for (const auto &f : fields) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(f, &used);
            } catch (...) {
                used = 0;
            }
            if (used == 0 || used != f.size())
                throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": bad number '" + f + "'");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(out.header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return out;
}

struct DatasetMeta {
    std::optional<std::size_t> d_true;
    std::optional<std::uint64_t> seed;
};

/// `<base>.csv` (gene-name header, integer counts) plus `<base>.meta.json`.
inline void write_dataset(const fs::path &base, const CountMatrix &data, const DatasetMeta &meta = {})
{
    data.validate();
    std::string csv;
    for (std::size_t j = 0; j < data.gene_names.size(); ++j) csv += (j ? "," : "") + data.gene_names[j];
    csv += '\n';
    for (Eigen::Index i = 0; i < data.counts.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.counts.cols(); ++j)
            csv += (j ? "," : "") + std::to_string(static_cast<long long>(data.counts(i, j)));
        csv += '\n';
    }
    detail::write_text(with_suffix(base, ".csv"), csv);
    Json j;
    j["gene_names"] = data.gene_names;
    j["time_labels"] = data.time_labels;
    if (meta.d_true) j["d_true"] = *meta.d_true;
    if (meta.seed) j["seed"] = *meta.seed;
    detail::write_text(with_suffix(base, ".meta.json"), j.dump(2) + "\n");
}

inline CountMatrix read_dataset(const fs::path &base, DatasetMeta *meta_out = nullptr)
{
    const fs::path csv_path = with_suffix(base, ".csv");
    const fs::path meta_path = with_suffix(base, ".meta.json");
    if (!fs::exists(meta_path)) throw ParseError(meta_path.string() + ": sidecar metadata missing");
    const Json meta = detail::read_json(meta_path);
    CountMatrix out;
    try {
        out.gene_names = meta.at("gene_names").get<std::vector<std::string>>();
        out.time_labels = meta.at("time_labels").get<std::vector<int>>();
        if (meta_out) {
            if (meta.contains("d_true")) meta_out->d_true = meta.at("d_true").get<std::size_t>();
            if (meta.contains("seed")) meta_out->seed = meta.at("seed").get<std::uint64_t>();
        }
    } catch (const Json::exception &e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }

    std::istringstream in(detail::read_text(csv_path));
    std::string line;
    if (!std::getline(in, line)) throw ParseError(csv_path.string() + ": line 1: missing header");
    const auto header = detail::split_csv_line(line);
    if (header != out.gene_names) throw ParseError(csv_path.string() + ": line 1: header does not match gene_names");
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw ParseError(csv_path.string() + ": line " + std::to_string(lineno) + ": expected " +
                             std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto &f : fields) {
            long long v = 0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc() || res.ptr != f.data() + f.size() || f.empty())
                throw ParseError(csv_path.string() + ": line " + std::to_string(lineno) + ": '" + f +
                                 "' is not an integer count");
            if (v < 0)
                throw ParseError(csv_path.string() + ": line " + std::to_string(lineno) + ": negative count " + f);
            row.push_back(static_cast<double>(v));
        }
        rows.push_back(std::move(row));
    }
    if (rows.size() != out.time_labels.size())
        throw ParseError(csv_path.string() + ": " + std::to_string(rows.size()) + " rows but " +
                         std::to_string(out.time_labels.size()) + " time labels");
    out.counts.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < header.size(); ++j)
            out.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    for (int t : out.time_labels)
        if (t < 0) throw ParseError(meta_path.string() + ": negative time label");
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: `<base>.manifest.json` + `<base>.bin` (little-endian f32).

struct Checkpoint {
    std::string model_type;
    std::uint64_t seed = 0;
    Json hyperparameters = Json::object();
    Json architecture = Json::object();
    std::vector<std::pair<std::string, Matrix>> tensors;

    const Matrix &tensor(const std::string &name) const
    {
        for (const auto &[n, m] : tensors)
            if (n == name) return m;
        throw ParseError("checkpoint: missing tensor '" + name + "'");
    }
};

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_f32(std::string &blob, double v)
{
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    if constexpr (std::endian::native == std::endian::big)
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    char b[4];
    std::memcpy(b, &bits, 4);
    blob.append(b, 4);
}

inline double get_f32(const char *p)
{
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    if constexpr (std::endian::native == std::endian::big)
        bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint &ckpt, const fs::path &base)
{
    std::string blob;
    Json tensors = Json::array();
    for (const auto &[name, m] : ckpt.tensors) {
        const std::size_t offset = blob.size();
        for (Eigen::Index k = 0; k < m.size(); ++k) detail::put_f32(blob, m.data()[k]);
        tensors.push_back({{"name", name},
                           {"shape", {m.rows(), m.cols()}},
                           {"dtype", "f32"},
                           {"offset", offset},
                           {"length", blob.size() - offset}});
    }
    Json manifest;
    manifest["format"] = "flatvi-checkpoint";
    manifest["version"] = kCheckpointVersion;
    manifest["model_type"] = ckpt.model_type;
    manifest["seed"] = ckpt.seed;
    manifest["hyperparameters"] = ckpt.hyperparameters;
    manifest["architecture"] = ckpt.architecture;
    manifest["tensors"] = tensors;
    detail::write_text(with_suffix(base, ".bin"), blob);
    detail::write_text(with_suffix(base, ".manifest.json"), manifest.dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const fs::path &base)
{
    const fs::path mpath = with_suffix(base, ".manifest.json");
    const Json manifest = detail::read_json(mpath);
    const std::string blob = detail::read_text(with_suffix(base, ".bin"));
    Checkpoint out;
    struct Span {
        std::size_t offset, length;
        std::string name;
    };
    std::vector<Span> spans;
    try {
        if (manifest.at("format").get<std::string>() != "flatvi-checkpoint")
            throw ParseError(mpath.string() + ": unknown format");
        if (manifest.at("version").get<int>() != kCheckpointVersion)
            throw ParseError(mpath.string() + ": unsupported version");
        out.model_type = manifest.at("model_type").get<std::string>();
        out.seed = manifest.at("seed").get<std::uint64_t>();
        out.hyperparameters = manifest.at("hyperparameters");
        out.architecture = manifest.at("architecture");
        std::size_t total = 0;
        for (const auto &t : manifest.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            const auto dtype = t.at("dtype").get<std::string>();
            if (dtype != "f32") throw ParseError(mpath.string() + ": tensor '" + name + "' has unknown dtype " + dtype);
            const auto shape = t.at("shape").get<std::vector<std::int64_t>>();
            if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0)
                throw ParseError(mpath.string() + ": tensor '" + name + "' needs a 2-d shape");
            const auto offset = t.at("offset").get<std::size_t>();
            const auto length = t.at("length").get<std::size_t>();
            const auto count = static_cast<std::size_t>(shape[0] * shape[1]);
            if (length != 4 * count) throw ParseError(mpath.string() + ": tensor '" + name + "' length does not match shape");
            if (offset > blob.size() || length > blob.size() - offset)
                throw ParseError(mpath.string() + ": tensor '" + name + "' lies outside the blob");
            spans.push_back({offset, length, name});
            total += length;
            Matrix m(shape[0], shape[1]);
            for (std::size_t k = 0; k < count; ++k) m.data()[k] = detail::get_f32(blob.data() + offset + 4 * k);
            out.tensors.emplace_back(name, std::move(m));
        }
        if (total != blob.size())
            throw ParseError(mpath.string() + ": blob has " + std::to_string(blob.size()) + " bytes, manifest lists " +
                             std::to_string(total));
    } catch (const Json::exception &e) {
        throw ParseError(mpath.string() + ": " + e.what());
    }
    std::sort(spans.begin(), spans.end(), [](const Span &a, const Span &b) { return a.offset < b.offset; });
    for (std::size_t i = 1; i < spans.size(); ++i)
        if (spans[i - 1].offset + spans[i - 1].length > spans[i].offset)
            throw ParseError(mpath.string() + ": tensors '" + spans[i - 1].name + "' and '" + spans[i].name + "' overlap");
    return out;
}

// Model <-> checkpoint conversion. Networks are stored as <prefix>.<i>.weight
// and <prefix>.<i>.bias with the activations listed under architecture[prefix].

inline void put_mlp(Checkpoint &ckpt, const std::string &prefix, const Mlp &net)
{
    Json acts = Json::array();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto &l = net.layers[i];
        ckpt.tensors.emplace_back(prefix + "." + std::to_string(i) + ".weight", l.weight);
        ckpt.tensors.emplace_back(prefix + "." + std::to_string(i) + ".bias", Matrix(l.bias));
        acts.push_back(std::string(to_string(l.activation)));
    }
    ckpt.architecture[prefix] = acts;
}

inline Mlp get_mlp(const Checkpoint &ckpt, const std::string &prefix)
{
    if (!ckpt.architecture.contains(prefix)) throw ParseError("checkpoint: missing architecture for '" + prefix + "'");
    Mlp net;
    const auto acts = ckpt.architecture.at(prefix).get<std::vector<std::string>>();
    for (std::size_t i = 0; i < acts.size(); ++i) {
        Layer l;
        l.weight = ckpt.tensor(prefix + "." + std::to_string(i) + ".weight");
        const Matrix &b = ckpt.tensor(prefix + "." + std::to_string(i) + ".bias");
        if (b.rows() != 1) throw ParseError("checkpoint: bias '" + prefix + "' must be a row");
        l.bias = b.row(0);
        l.activation = activation_from_string(acts[i]);
        net.layers.push_back(std::move(l));
    }
    try {
        check_mlp_shapes(net);
    } catch (const DimensionError &e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return net;
}

inline void require_model_type(const Checkpoint &ckpt, const std::string &type)
{
    if (ckpt.model_type != type)
        throw ParseError("checkpoint: expected model_type '" + type + "', found '" + ckpt.model_type + "'");
}

inline Checkpoint to_checkpoint(const FlatVIModel &model, std::uint64_t seed, Json hyper = Json::object())
{
    Checkpoint c;
    c.model_type = "flatvi";
    c.seed = seed;
    c.hyperparameters = std::move(hyper);
    put_mlp(c, "encoder", model.encoder);
    put_mlp(c, "decoder", model.decoder);
    c.tensors.emplace_back("log_theta", Matrix(model.log_theta));
    c.tensors.emplace_back("log_alpha", Matrix::Constant(1, 1, model.log_alpha));
    return c;
}

inline FlatVIModel flatvi_from_checkpoint(const Checkpoint &c)
{
    require_model_type(c, "flatvi");
    FlatVIModel m;
    m.encoder = get_mlp(c, "encoder");
    m.decoder = get_mlp(c, "decoder");
    m.log_theta = c.tensor("log_theta").row(0);
    m.log_alpha = c.tensor("log_alpha")(0, 0);
    if (m.log_theta.size() != m.genes() || m.encoder.out_dim() != 2 * m.latent_dim())
        throw ParseError("checkpoint: flatvi tensor shapes are inconsistent");
    return m;
}

inline Checkpoint to_checkpoint(const VelocityNet &field, std::uint64_t seed, Json hyper = Json::object())
{
    Checkpoint c;
    c.model_type = "velocity";
    c.seed = seed;
    c.hyperparameters = std::move(hyper);
    put_mlp(c, "velocity", field.net);
    return c;
}

inline VelocityNet velocity_from_checkpoint(const Checkpoint &c)
{
    require_model_type(c, "velocity");
    VelocityNet v{get_mlp(c, "velocity")};
    if (v.net.in_dim() != v.net.out_dim() + 1) throw ParseError("checkpoint: velocity net must map (t, s) to ds/dt");
    return v;
}

inline Checkpoint to_checkpoint(const GaeModel &model, std::uint64_t seed, Json hyper = Json::object())
{
    Checkpoint c;
    c.model_type = "gae";
    c.seed = seed;
    c.hyperparameters = std::move(hyper);
    put_mlp(c, "encoder", model.encoder);
    put_mlp(c, "decoder", model.decoder);
    return c;
}

inline GaeModel gae_from_checkpoint(const Checkpoint &c)
{
    require_model_type(c, "gae");
    GaeModel m{get_mlp(c, "encoder"), get_mlp(c, "decoder")};
    if (m.decoder.in_dim() != m.encoder.out_dim()) throw ParseError("checkpoint: gae encoder/decoder widths differ");
    return m;
}

}  // namespace flatvi

#endif  // FLATVI_IO_HPP_

#include "fwsvd/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <system_error>
#include <variant>

namespace fwsvd {

namespace fs = std::filesystem;

namespace {

using Kind = CorruptFileError::Kind;

constexpr char kMagic[4] = {'F', 'W', 'S', 'V'};

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void uint(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (n > in_.size() - pos_) {
            std::ostringstream os;
            os << "container truncated while reading " << what << " at byte " << pos_;
            throw CorruptFileError(Kind::Truncated, os.str());
        }
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    template <class T>
    T uint(const char* what) {
        auto s = take(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
        return v;
    }
    std::size_t remaining() const { return in_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

Tensor matrix_tensor(std::string name, const Matrix& m, DType dtype) {
    return Tensor{std::move(name), dtype, {m.rows(), m.cols()},
                  std::vector<double>(m.data().begin(), m.data().end())};
}

Tensor vector_tensor(std::string name, const std::vector<double>& v, DType dtype) {
    return Tensor{std::move(name), dtype, {v.size()}, v};
}

const Tensor& require_tensor(const TensorContainer& c, const std::string& name) {
    const Tensor* t = c.find(name);
    if (!t)
        throw CorruptFileError(Kind::ManifestMismatch,
                               "manifest expects tensor '" + name + "' which the container lacks");
    return *t;
}

Matrix tensor_matrix(const Tensor& t) {
    if (t.dims.size() != 2)
        throw CorruptFileError(Kind::ManifestMismatch, "tensor '" + t.name + "' is not a matrix");
    return Matrix(t.dims[0], t.dims[1], t.values);
}

std::vector<double> tensor_vector(const Tensor& t) {
    if (t.dims.size() != 1)
        throw CorruptFileError(Kind::ManifestMismatch, "tensor '" + t.name + "' is not a vector");
    return t.values;
}

class ManifestView {
public:
    explicit ManifestView(Manifest m) : m_(std::move(m)) {}

    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : m_)
            if (k == key) return v;
        throw CorruptFileError(Kind::ManifestMismatch, "manifest lacks key '" + key + "'");
    }
    std::optional<std::string> find(const std::string& key) const {
        for (const auto& [k, v] : m_)
            if (k == key) return v;
        return std::nullopt;
    }
    std::uint64_t get_uint(const std::string& key) const {
        const std::string& s = get(key);
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size())
            throw CorruptFileError(Kind::BadValue, "manifest key '" + key + "' is not an integer");
        return v;
    }
    const Manifest& entries() const { return m_; }

private:
    Manifest m_;
};

void expect_format(const ManifestView& m, std::string_view format) {
    if (m.get("format") != format)
        throw CorruptFileError(Kind::ManifestMismatch,
                               "manifest describes '" + m.get("format") + "', expected '" +
                                   std::string(format) + "'");
    if (m.get_uint("version") != kContainerVersion)
        throw CorruptFileError(Kind::VersionMismatch, "unsupported manifest version");
}

// Every container tensor must be claimed by the manifest.
void expect_exact_tensors(const TensorContainer& c, const std::set<std::string>& expected) {
    for (const auto& t : c.entries)
        if (!expected.contains(t.name))
            throw CorruptFileError(Kind::ManifestMismatch,
                                   "container tensor '" + t.name + "' is not described by the manifest");
}

void save_pair(const TensorContainer& c, const Manifest& m, const fs::path& path) {
    const auto bytes = encode_container(c);
    const std::string text = encode_manifest(m);
    write_file_atomic(path, bytes);
    write_file_atomic(manifest_path(path),
                      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::pair<TensorContainer, ManifestView> load_pair(const fs::path& path) {
    TensorContainer c = decode_container(read_file(path));
    const auto raw = read_file(manifest_path(path));
    ManifestView m(decode_manifest(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size())));
    return {std::move(c), std::move(m)};
}

std::string csv_field(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

std::string meta_line(const CsvMeta& meta) {
    std::string line = "#";
    for (const auto& [k, v] : meta) line += " " + k + "=" + v;
    return line + "\n";
}

std::string metric_name(Metric m) { return m == Metric::Loss ? "loss" : "accuracy"; }

std::string drop_convention(Metric m) {
    return m == Metric::Loss ? "metric_minus_baseline" : "baseline_minus_metric";
}

void write_text(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

const Tensor* TensorContainer::find(std::string_view name) const {
    for (const auto& t : entries)
        if (t.name == name) return &t;
    return nullptr;
}

std::vector<std::uint8_t> encode_container(const TensorContainer& c) {
    Writer w;
    w.bytes(kMagic, 4);
    w.uint<std::uint32_t>(c.version);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(c.entries.size()));
    std::set<std::string> seen;
    for (const auto& t : c.entries) {
        if (!seen.insert(t.name).second)
            throw CorruptFileError(Kind::DuplicateName, "duplicate tensor name '" + t.name + "'");
        if (t.name.size() > UINT16_MAX) throw ValidationError("tensor name too long");
        if (t.dims.size() > UINT8_MAX) throw ValidationError("tensor rank too large");
        std::uint64_t count = 1;
        for (auto d : t.dims) count *= d;
        if (count != t.values.size())
            throw ValidationError("tensor '" + t.name + "' dims disagree with its value count");

        w.uint<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) w.uint<std::uint64_t>(d);
        for (double v : t.values) {
            if (t.dtype == DType::F64)
                w.uint<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
            else
                w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    return w.take();
}

TensorContainer decode_container(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CorruptFileError(Kind::BadMagic, "not an FWSV container (bad magic)");
    r.take(4, "magic");
    TensorContainer c;
    c.version = r.uint<std::uint32_t>("version");
    if (c.version != kContainerVersion)
        throw CorruptFileError(Kind::VersionMismatch,
                               "container version " + std::to_string(c.version) + " unsupported (expected " +
                                   std::to_string(kContainerVersion) + ")");
    const auto count = r.uint<std::uint32_t>("entry count");
    std::set<std::string> seen;
    for (std::uint32_t e = 0; e < count; ++e) {
        Tensor t;
        const auto name_len = r.uint<std::uint16_t>("name length");
        auto name = r.take(name_len, "name");
        t.name.assign(name.begin(), name.end());
        if (!seen.insert(t.name).second)
            throw CorruptFileError(Kind::DuplicateName, "duplicate tensor name '" + t.name + "'");
        const auto dtype = r.uint<std::uint8_t>("dtype");
        if (dtype > 1)
            throw CorruptFileError(Kind::BadDtype, "tensor '" + t.name + "' has unknown dtype " +
                                                       std::to_string(dtype));
        t.dtype = static_cast<DType>(dtype);
        const auto rank = r.uint<std::uint8_t>("rank");
        std::uint64_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            t.dims.push_back(r.uint<std::uint64_t>("dims"));
            if (t.dims.back() != 0 && n > UINT64_MAX / t.dims.back())
                throw CorruptFileError(Kind::Truncated, "tensor '" + t.name + "' dims overflow");
            n *= t.dims.back();
        }
        const std::size_t width = t.dtype == DType::F64 ? 8 : 4;
        if (n > r.remaining() / width)
            throw CorruptFileError(Kind::Truncated, "container truncated inside payload of '" + t.name + "'");
        auto payload = r.take(n * width, "payload");
        t.values.resize(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint8_t* p = payload.data() + i * width;
            if (t.dtype == DType::F64) {
                std::uint64_t bits = 0;
                for (std::size_t b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
                t.values[i] = std::bit_cast<double>(bits);
            } else {
                std::uint32_t bits = 0;
                for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
                t.values[i] = static_cast<double>(std::bit_cast<float>(bits));
            }
        }
        c.entries.push_back(std::move(t));
    }
    if (r.remaining() != 0)
        throw CorruptFileError(Kind::TrailingBytes,
                               std::to_string(r.remaining()) + " unexpected bytes after the last entry");
    return c;
}

std::string encode_manifest(const Manifest& m) {
    std::string out;
    for (const auto& [k, v] : m) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ValidationError("manifest key/value '" + k + "' contains a reserved character");
        out += k + "=" + v + "\n";
    }
    return out;
}

Manifest decode_manifest(std::string_view text) {
    Manifest m;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw CorruptFileError(Kind::BadValue, "manifest line " + std::to_string(line_no) + " lacks '='");
        m.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    }
    return m;
}

fs::path manifest_path(const fs::path& container) {
    fs::path p = container;
    p += ".manifest";
    return p;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    return bytes;
}

void save_model(const NetModel& model, const fs::path& path, DType dtype) {
    TensorContainer c;
    Manifest m{{"format", "fwsvd-model"},
               {"version", std::to_string(kContainerVersion)},
               {"loss", std::string(to_string(model.loss_head()))},
               {"layers", std::to_string(model.layers().size())}};
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto& slot = model.layers()[i];
        const std::string prefix = "layer." + std::to_string(i) + ".";
        const std::string& name = layer_name(slot.layer);
        m.emplace_back(prefix + "name", name);
        std::visit(overloaded{[&](const LinearLayer& l) {
                                  m.emplace_back(prefix + "kind", "dense");
                                  c.entries.push_back(matrix_tensor(name + ".weight", l.weight, dtype));
                              },
                              [&](const FactorizedLinear& l) {
                                  m.emplace_back(prefix + "kind", "factorized");
                                  c.entries.push_back(matrix_tensor(name + ".weight_a", l.a, dtype));
                                  c.entries.push_back(matrix_tensor(name + ".weight_b", l.b, dtype));
                              }},
                   slot.layer);
        m.emplace_back(prefix + "activation", std::string(to_string(slot.activation)));
        const auto& bias = std::visit([](const auto& l) -> const auto& { return l.bias; }, slot.layer);
        m.emplace_back(prefix + "bias", bias ? "1" : "0");
        if (bias) c.entries.push_back(vector_tensor(name + ".bias", *bias, dtype));
    }
    for (const auto& [k, v] : model.provenance) m.emplace_back("provenance." + k, v);
    save_pair(c, m, path);
}

NetModel load_model(const fs::path& path) {
    auto [c, m] = load_pair(path);
    expect_format(m, "fwsvd-model");
    const LossHead head = parse_loss_head(m.get("loss"));
    const std::uint64_t count = m.get_uint("layers");
    std::vector<LayerSlot> layers;
    std::set<std::string> expected;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string prefix = "layer." + std::to_string(i) + ".";
        const std::string name = m.get(prefix + "name");
        const std::string kind = m.get(prefix + "kind");
        const bool has_bias = m.get(prefix + "bias") == "1";
        std::optional<std::vector<double>> bias;
        if (has_bias) {
            bias = tensor_vector(require_tensor(c, name + ".bias"));
            expected.insert(name + ".bias");
        }
        LayerSlot slot;
        slot.activation = parse_activation(m.get(prefix + "activation"));
        if (kind == "dense") {
            slot.layer = LinearLayer{name, tensor_matrix(require_tensor(c, name + ".weight")), std::move(bias)};
            expected.insert(name + ".weight");
        } else if (kind == "factorized") {
            slot.layer = FactorizedLinear{name, tensor_matrix(require_tensor(c, name + ".weight_a")),
                                          tensor_matrix(require_tensor(c, name + ".weight_b")),
                                          std::move(bias)};
            expected.insert(name + ".weight_a");
            expected.insert(name + ".weight_b");
        } else {
            throw CorruptFileError(Kind::BadValue, "layer '" + name + "' has unknown kind '" + kind + "'");
        }
        layers.push_back(std::move(slot));
    }
    expect_exact_tensors(c, expected);
    NetModel model(std::move(layers), head);
    for (const auto& [k, v] : m.entries())
        if (k.starts_with("provenance.")) model.provenance[k.substr(11)] = v;
    return model;
}

void save_fisher(const FisherMap& fisher, const fs::path& path) {
    TensorContainer c;
    Manifest m{{"format", "fwsvd-fisher"},
               {"version", std::to_string(kContainerVersion)},
               {"examples", std::to_string(fisher.example_count)},
               {"layers", std::to_string(fisher.weights.size())}};
    std::size_t i = 0;
    for (const auto& [name, w] : fisher.weights) {
        m.emplace_back("layer." + std::to_string(i++), name);
        c.entries.push_back(matrix_tensor(name + ".fisher", w, DType::F64));
        if (auto it = fisher.biases.find(name); it != fisher.biases.end())
            c.entries.push_back(vector_tensor(name + ".bias_fisher", it->second, DType::F64));
    }
    save_pair(c, m, path);
}

FisherMap load_fisher(const fs::path& path) {
    auto [c, m] = load_pair(path);
    expect_format(m, "fwsvd-fisher");
    FisherMap f;
    f.example_count = m.get_uint("examples");
    const std::uint64_t count = m.get_uint("layers");
    std::set<std::string> expected;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = m.get("layer." + std::to_string(i));
        Matrix w = tensor_matrix(require_tensor(c, name + ".fisher"));
        for (double v : w.data())
            if (!(v >= 0.0) || !std::isfinite(v))
                throw CorruptFileError(Kind::BadValue, "Fisher entry for layer '" + name +
                                                           "' is negative or non-finite");
        expected.insert(name + ".fisher");
        f.weights.emplace(name, std::move(w));
        if (const Tensor* b = c.find(name + ".bias_fisher")) {
            expected.insert(b->name);
            f.biases.emplace(name, tensor_vector(*b));
        }
    }
    expect_exact_tensors(c, expected);
    return f;
}

FisherMap load_fisher(const fs::path& path, const NetModel& model) {
    FisherMap f = load_fisher(path);
    check_fisher_covers(f, model);
    return f;
}

void save_dataset(const Dataset& data, const fs::path& path) {
    data.validate();
    TensorContainer c;
    Manifest m{{"format", "fwsvd-dataset"},
               {"version", std::to_string(kContainerVersion)},
               {"split", std::string(to_string(data.split))},
               {"kind", data.is_classification() ? "classification" : "regression"},
               {"examples", std::to_string(data.size())}};
    c.entries.push_back(matrix_tensor("inputs", data.inputs, DType::F64));
    if (data.is_classification()) {
        std::vector<double> labels(data.labels.begin(), data.labels.end());
        c.entries.push_back(vector_tensor("labels", labels, DType::F64));
    } else {
        c.entries.push_back(matrix_tensor("targets", data.targets, DType::F64));
    }
    save_pair(c, m, path);
}

Dataset load_dataset(const fs::path& path) {
    auto [c, m] = load_pair(path);
    expect_format(m, "fwsvd-dataset");
    Dataset d;
    d.split = parse_split(m.get("split"));
    d.inputs = tensor_matrix(require_tensor(c, "inputs"));
    if (m.get("kind") == "classification") {
        for (double v : tensor_vector(require_tensor(c, "labels"))) {
            if (!(v >= 0.0) || v != std::floor(v))
                throw CorruptFileError(Kind::BadValue, "dataset label is not a class index");
            d.labels.push_back(static_cast<std::size_t>(v));
        }
        expect_exact_tensors(c, {"inputs", "labels"});
    } else {
        d.targets = tensor_matrix(require_tensor(c, "targets"));
        expect_exact_tensors(c, {"inputs", "targets"});
    }
    if (m.get_uint("examples") != d.size())
        throw CorruptFileError(Kind::ManifestMismatch, "manifest example count disagrees with the container");
    d.validate();
    return d;
}

std::string format_real(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw ValidationError("cannot format real");
    return std::string(buf, p);
}

std::string to_csv(const CompressionReport& report) {
    std::string out = "layer,N,M,r,params_before,params_after,err_unweighted,err_weighted\n";
    for (const auto& row : report.layers) {
        out += row.layer + "," + std::to_string(row.inputs) + "," + std::to_string(row.outputs) + "," +
               std::to_string(row.rank) + "," + std::to_string(row.params_before) + "," +
               std::to_string(row.params_after) + "," + format_real(row.err_unweighted) + "," +
               csv_field(row.err_weighted) + "\n";
    }
    return out;
}

std::string to_csv(const GroupTruncationReport& report, const CsvMeta& meta) {
    CsvMeta all = meta;
    all.emplace_back("groups", std::to_string(report.groups));
    all.emplace_back("metric", metric_name(report.metric));
    all.emplace_back("drop", drop_convention(report.metric));
    all.emplace_back("baseline", format_real(report.baseline));
    std::string out = meta_line(all);
    out += "method,group,drop,recon_err_mean\n";
    for (const auto& row : report.rows)
        out += std::string(to_string(row.method)) + "," + std::to_string(row.group) + "," +
               format_real(row.drop) + "," + format_real(row.recon_err_mean) + "\n";
    return out;
}

std::string to_csv(const RankSweepReport& report, const CsvMeta& meta) {
    CsvMeta all = meta;
    std::string ratios;
    for (std::size_t i = 0; i < report.ratios.size(); ++i)
        ratios += (i ? ";" : "") + format_real(report.ratios[i]);
    all.emplace_back("ratios", ratios);
    all.emplace_back("metric", metric_name(report.metric));
    all.emplace_back("baseline", format_real(report.baseline));
    std::string out = meta_line(all);
    out += "method,ratio,metric_raw,metric_finetuned\n";
    for (const auto& row : report.rows)
        out += std::string(to_string(row.method)) + "," + format_real(row.ratio) + "," +
               format_real(row.metric_raw) + "," + csv_field(row.metric_finetuned) + "\n";
    return out;
}

void write_csv(const CompressionReport& report, const fs::path& path) { write_text(path, to_csv(report)); }

void write_csv(const GroupTruncationReport& report, const fs::path& path, const CsvMeta& meta) {
    write_text(path, to_csv(report, meta));
}

void write_csv(const RankSweepReport& report, const fs::path& path, const CsvMeta& meta) {
    write_text(path, to_csv(report, meta));
}

}  // namespace fwsvd

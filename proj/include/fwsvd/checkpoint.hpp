#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fwsvd/analyzer.hpp"
#include "fwsvd/error.hpp"
#include "fwsvd/factorizer.hpp"
#include "fwsvd/fisher.hpp"
#include "fwsvd/net.hpp"

namespace fwsvd {

// Container layout, all integers little-endian:
//
//   "FWSV" | u32 version | u32 entry count
//   per entry: u16 name length | UTF-8 name | u8 dtype | u8 rank |
//              rank × u64 dims | row-major payload
//
// dtype 0 stores 32-bit reals (lossy, upconverted on load), dtype 1 stores
// 64-bit reals.

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct Tensor {
    std::string name;
    DType dtype = DType::F64;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};

struct TensorContainer {
    std::uint32_t version = kContainerVersion;
    std::vector<Tensor> entries;

    const Tensor* find(std::string_view name) const;
};

/// Distinct diagnostics for malformed containers and manifests.
class CorruptFileError : public FormatError {
public:
    enum class Kind {
        BadMagic,
        VersionMismatch,
        Truncated,
        TrailingBytes,
        DuplicateName,
        BadDtype,
        ManifestMismatch,
        BadValue,
    };

    CorruptFileError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::vector<std::uint8_t> encode_container(const TensorContainer& c);
/// Rejects any byte sequence that is not exactly one well-formed container.
TensorContainer decode_container(std::span<const std::uint8_t> bytes);

/// Ordered key=value lines.
using Manifest = std::vector<std::pair<std::string, std::string>>;

std::string encode_manifest(const Manifest& m);
Manifest decode_manifest(std::string_view text);

/// Path of the text manifest that accompanies a container.
std::filesystem::path manifest_path(const std::filesystem::path& container);

/// Writes to a temporary sibling and renames into place, creating missing
/// parent directories.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Model tensors are "<layer>.weight" (or "<layer>.weight_a" and
/// "<layer>.weight_b" for factorized layers) and "<layer>.bias".
void save_model(const NetModel& model, const std::filesystem::path& path, DType dtype = DType::F64);
NetModel load_model(const std::filesystem::path& path);

/// Tensors "<layer>.fisher" and "<layer>.bias_fisher"; example count in the manifest.
void save_fisher(const FisherMap& fisher, const std::filesystem::path& path);
FisherMap load_fisher(const std::filesystem::path& path);
/// Also checks the map covers exactly the model's dense layers.
FisherMap load_fisher(const std::filesystem::path& path, const NetModel& model);

void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Shortest decimal that round-trips to the same double (at most 17
/// significant digits).
std::string format_real(double v);

/// Extra "# key=value" metadata written above the CSV column header.
using CsvMeta = std::vector<std::pair<std::string, std::string>>;

std::string to_csv(const CompressionReport& report);
std::string to_csv(const GroupTruncationReport& report, const CsvMeta& meta = {});
std::string to_csv(const RankSweepReport& report, const CsvMeta& meta = {});

void write_csv(const CompressionReport& report, const std::filesystem::path& path);
void write_csv(const GroupTruncationReport& report, const std::filesystem::path& path,
               const CsvMeta& meta = {});
void write_csv(const RankSweepReport& report, const std::filesystem::path& path,
               const CsvMeta& meta = {});

}  // namespace fwsvd

#pragma once

// File formats shared by the pipeline stages.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fvb/ewh_sim.hpp"
#include "fvb/vb_core.hpp"

namespace fvb {

using Json = nlohmann::ordered_json;

std::uint64_t fnv1a64(std::span<const std::byte> bytes);
std::string hex64(std::uint64_t v);

/// Shortest round-trippable decimal form; stable across runs.
std::string format_double(double v);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

/// magic | u64 header length | JSON header | f64 blob. The header written is `header`
/// plus "blob_doubles" and "blob_fnv1a64".
void write_blob_file(const std::filesystem::path& path, std::string_view magic, Json header,
                     std::span<const double> blob);

struct BlobFile {
    Json header;
    std::vector<double> blob;
};
/// Verifies magic, sizes and checksum; any mismatch is a DataError.
BlobFile read_blob_file(const std::filesystem::path& path, std::string_view magic);

/// Regulation signal CSV: optional header line, then "time_s,value" rows at a uniform
/// step. Values are multiplied by `scale` (normalized signal -> kW).
SignalSeries read_regulation_csv(const std::filesystem::path& path, double scale);

/// Episode trace CSV: t, T_1..T_N, s_1..s_N, P_agg, r, baseline.
void write_trace_csv(const std::filesystem::path& path, const EnsembleTrace& trace);
/// Inverse of write_trace_csv; setpoints and truncation index are not in the CSV and
/// must be supplied from the manifest.
EnsembleTrace read_trace_csv(const std::filesystem::path& path, std::span<const double> setpoints,
                             std::size_t truncation_index);

}  // namespace fvb

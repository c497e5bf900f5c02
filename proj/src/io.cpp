#include "fvb/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fvb/error.hpp"

namespace fvb {

std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json_file(const std::filesystem::path& path) {
    try {
        return Json::parse(read_text_file(path));
    } catch (const Json::parse_error& e) {
        throw DataError(path.string() + ": invalid JSON: " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

void write_blob_file(const std::filesystem::path& path, std::string_view magic, Json header,
                     std::span<const double> blob) {
    header["blob_doubles"] = blob.size();
    header["blob_fnv1a64"] = hex64(fnv1a64(std::as_bytes(blob)));
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size_bytes()));
    if (!out) throw DataError("write failed: " + path.string());
}

BlobFile read_blob_file(const std::filesystem::path& path, std::string_view magic) {
    const std::string bytes = read_text_file(path);
    const std::string where = path.string() + ": ";
    if (bytes.size() < magic.size() + 8 || bytes.compare(0, magic.size(), magic) != 0)
        throw DataError(where + "bad magic (expected " + std::string(magic) + ")");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + magic.size(), sizeof len);
    const std::size_t body = magic.size() + 8;
    if (len > bytes.size() - body) throw DataError(where + "truncated header");
    BlobFile f;
    try {
        f.header = Json::parse(bytes.substr(body, len));
    } catch (const Json::parse_error&) {
        throw DataError(where + "corrupted header");
    }
    const std::size_t n = f.header.value("blob_doubles", std::size_t{0});
    if (bytes.size() - body - len != n * sizeof(double)) throw DataError(where + "blob size mismatch");
    f.blob.resize(n);
    std::memcpy(f.blob.data(), bytes.data() + body + len, n * sizeof(double));
    const std::string expect = f.header.value("blob_fnv1a64", std::string{});
    if (hex64(fnv1a64(std::as_bytes(std::span<const double>(f.blob)))) != expect)
        throw DataError(where + "checksum mismatch");
    return f;
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

bool parse_number(std::string_view s, double& v) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

}  // namespace

SignalSeries read_regulation_csv(const std::filesystem::path& path, double scale) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open regulation signal " + path.string());
    std::vector<double> times, values;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv(line);
        double t = 0.0, v = 0.0;
        const bool ok = fields.size() == 2 && parse_number(fields[0], t) && parse_number(fields[1], v);
        if (!ok) {
            if (lineno == 1 && times.empty()) continue;  // header
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'time_s,value'");
        }
        if (!std::isfinite(t) || !std::isfinite(v))
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-finite value");
        times.push_back(t);
        values.push_back(v * scale);
    }
    if (times.size() < 2) throw DataError(path.string() + ": need at least two samples");
    const double dt = times[1] - times[0];
    if (!(dt > 0.0)) throw DataError(path.string() + ":2: time must increase");
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (std::abs(times[k] - times[k - 1] - dt) > 1e-6 * dt)
            throw DataError(path.string() + ": non-uniform time step near sample " + std::to_string(k + 1));
    }
    return {dt, std::move(values)};
}

void write_trace_csv(const std::filesystem::path& path, const EnsembleTrace& tr) {
    std::string out;
    out.reserve(tr.steps() * tr.n_devices * 24);
    out += "t";
    for (std::size_t i = 1; i <= tr.n_devices; ++i) out += ",T_" + std::to_string(i);
    for (std::size_t i = 1; i <= tr.n_devices; ++i) out += ",s_" + std::to_string(i);
    out += ",P_agg,r,baseline\n";
    for (std::size_t k = 0; k < tr.steps(); ++k) {
        out += format_double(static_cast<double>(k) * tr.dt);
        for (std::size_t i = 0; i < tr.n_devices; ++i) {
            out += ',';
            out += format_double(tr.temperature(k, i));
        }
        for (std::size_t i = 0; i < tr.n_devices; ++i) out += tr.is_on(k, i) ? ",1" : ",0";
        out += ',' + format_double(tr.aggregate_power[k]) + ',' + format_double(tr.regulation[k]) + ',' +
               format_double(tr.baseline[k]) + '\n';
    }
    write_text_file(path, out);
}

EnsembleTrace read_trace_csv(const std::filesystem::path& path, std::span<const double> setpoints,
                             std::size_t truncation_index) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open trace " + path.string());
    const std::size_t n = setpoints.size();
    EnsembleTrace tr;
    tr.n_devices = n;
    tr.setpoints.assign(setpoints.begin(), setpoints.end());
    std::string line;
    std::size_t lineno = 0;
    std::vector<double> t;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = split_csv(line);
        if (fields.size() != 2 * n + 4)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(2 * n + 4) + " columns");
        if (lineno == 1) continue;
        std::vector<double> v(fields.size());
        for (std::size_t c = 0; c < fields.size(); ++c)
            if (!parse_number(fields[c], v[c]))
                throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        t.push_back(v[0]);
        for (std::size_t i = 0; i < n; ++i) tr.temperatures.push_back(v[1 + i]);
        for (std::size_t i = 0; i < n; ++i) tr.on_off.push_back(v[1 + n + i] != 0.0 ? 1 : 0);
        tr.aggregate_power.push_back(v[1 + 2 * n]);
        tr.regulation.push_back(v[2 + 2 * n]);
        tr.baseline.push_back(v[3 + 2 * n]);
    }
    tr.dt = t.size() >= 2 ? t[1] - t[0] : 1.0;
    if (truncation_index > tr.steps()) throw DataError(path.string() + ": truncation index beyond trace length");
    tr.truncation_index = truncation_index;
    return tr;
}

}  // namespace fvb

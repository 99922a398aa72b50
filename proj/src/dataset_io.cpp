#include "crowdflow/data.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace crowdflow {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Kind = DatasetLoadError::Kind;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kFlowsFile = "flows.bin";
constexpr const char* kExternalsFile = "externals.csv";
constexpr const char* kExternalsHeader = "t_index,weather,temperature,wind,holiday";

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DatasetLoadError(Kind::Io, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("write failed for " + path.string());
    }
}

std::uint32_t checksum(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) {
            r = (r << 8) | ((v >> (8 * i)) & 0xFFu);
        }
        return r;
    }
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view field, std::size_t line) {
    T value{};
    auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw DatasetLoadError(Kind::Externals, "externals.csv line " + std::to_string(line) + ": bad number '" +
                                                    std::string(field) + "'");
    }
    return value;
}

} // namespace

void save_dataset(const Dataset& dataset, const fs::path& dir) {
    const auto& m = dataset.manifest;
    if (dataset.flows.size() != dataset.externals.size()) {
        throw DataError("save_dataset: flow and external record counts differ");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw DataError("cannot create " + dir.string() + ": " + ec.message());
    }

    const std::size_t per_map = 2 * m.height * m.width;
    std::string flows;
    flows.reserve(dataset.flows.size() * per_map * 8);
    for (const auto& g : dataset.flows) {
        if (g.values.size() != per_map) {
            throw DataError("save_dataset: flow map at t=" + std::to_string(g.t_index) + " has shape " +
                            shape_to_string(g.values.shape()));
        }
        for (double v : g.values.data()) {
            const std::uint64_t le = to_little_endian(std::bit_cast<std::uint64_t>(v));
            char bytes[8];
            std::memcpy(bytes, &le, 8);
            flows.append(bytes, 8);
        }
    }

    std::string csv = std::string(kExternalsHeader) + "\n";
    for (std::size_t i = 0; i < dataset.externals.size(); ++i) {
        const auto& e = dataset.externals[i];
        csv += std::to_string(dataset.flows[i].t_index) + "," + std::to_string(e.weather_category()) + "," +
               format_double(e.temperature) + "," + format_double(e.wind) + "," +
               std::to_string(e.holiday_category()) + "\n";
    }

    json manifest = {
        {"format", "crowdflow-dataset"},
        {"version", 1},
        {"height", m.height},
        {"width", m.width},
        {"intervals_per_day", m.intervals_per_day},
        {"k_holiday", m.k_holiday},
        {"flow_min", m.flow_min},
        {"flow_max", m.flow_max},
        {"split_index", m.split_index},
        {"record_count", dataset.flows.size()},
        {"flows_file", kFlowsFile},
        {"flows_crc32", checksum(flows)},
        {"externals_file", kExternalsFile},
        {"externals_crc32", checksum(csv)},
    };
    write_file(dir / kFlowsFile, flows);
    write_file(dir / kExternalsFile, csv);
    write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    auto& m = ds.manifest;
    std::uint32_t flows_crc = 0;
    std::uint32_t externals_crc = 0;
    try {
        const json manifest = json::parse(read_file(dir / kManifestFile));
        if (manifest.value("format", std::string()) != "crowdflow-dataset") {
            throw DatasetLoadError(Kind::Manifest, "manifest.json is not a crowdflow dataset manifest");
        }
        m.height = manifest.at("height").get<std::size_t>();
        m.width = manifest.at("width").get<std::size_t>();
        m.intervals_per_day = manifest.at("intervals_per_day").get<std::size_t>();
        m.k_holiday = manifest.at("k_holiday").get<std::size_t>();
        m.flow_min = manifest.at("flow_min").get<double>();
        m.flow_max = manifest.at("flow_max").get<double>();
        m.split_index = manifest.at("split_index").get<std::size_t>();
        m.record_count = manifest.at("record_count").get<std::size_t>();
        flows_crc = manifest.at("flows_crc32").get<std::uint32_t>();
        externals_crc = manifest.at("externals_crc32").get<std::uint32_t>();
    } catch (const json::exception& e) {
        throw DatasetLoadError(Kind::Manifest, std::string("malformed manifest.json: ") + e.what());
    }
    if (m.height == 0 || m.width == 0 || m.intervals_per_day == 0 || m.k_holiday == 0) {
        throw DatasetLoadError(Kind::Manifest, "manifest.json has zero-sized dimensions");
    }
    if (!(m.flow_min < m.flow_max)) {
        throw DatasetLoadError(Kind::Manifest, "manifest.json requires flow_min < flow_max");
    }

    const std::string flows = read_file(dir / kFlowsFile);
    const std::size_t per_map = 2 * m.height * m.width;
    const std::size_t expected_values = m.record_count * per_map;
    if (flows.size() % 8 != 0 || flows.size() / 8 != expected_values) {
        throw DatasetLoadError(Kind::Truncated, "flows.bin length mismatch: expected " +
                                                    std::to_string(expected_values) + " values, found " +
                                                    std::to_string(flows.size() / 8) +
                                                    (flows.size() % 8 ? " plus a partial value" : ""));
    }
    if (checksum(flows) != flows_crc) {
        throw DatasetLoadError(Kind::Checksum, "flows.bin checksum mismatch");
    }
    const std::string csv = read_file(dir / kExternalsFile);
    if (checksum(csv) != externals_crc) {
        throw DatasetLoadError(Kind::Checksum, "externals.csv checksum mismatch");
    }

    std::istringstream lines(csv);
    std::string line;
    if (!std::getline(lines, line) || line != kExternalsHeader) {
        throw DatasetLoadError(Kind::Externals, "externals.csv header must be '" + std::string(kExternalsHeader) + "'");
    }
    std::size_t line_no = 1;
    std::size_t offset = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 5) {
            throw DatasetLoadError(Kind::Externals, "externals.csv line " + std::to_string(line_no) + ": expected 5 fields");
        }
        if (ds.flows.size() == m.record_count) {
            throw DatasetLoadError(Kind::Externals, "externals.csv has more rows than record_count");
        }
        const auto t = parse_number<std::size_t>(fields[0], line_no);
        if (!ds.flows.empty() && t <= ds.flows.back().t_index) {
            throw DatasetLoadError(Kind::Externals, "externals.csv t_index values must increase");
        }
        try {
            ds.externals.push_back(ExternalRecord::make(parse_number<std::size_t>(fields[1], line_no),
                                                        parse_number<double>(fields[2], line_no),
                                                        parse_number<double>(fields[3], line_no),
                                                        parse_number<std::size_t>(fields[4], line_no), m.k_holiday));
        } catch (const std::invalid_argument& e) {
            throw DatasetLoadError(Kind::Externals, "externals.csv line " + std::to_string(line_no) + ": " + e.what());
        }
        Tensor values({2, m.height, m.width});
        for (double& v : values.data()) {
            std::uint64_t raw;
            std::memcpy(&raw, flows.data() + offset, 8);
            v = std::bit_cast<double>(to_little_endian(raw));
            offset += 8;
        }
        ds.flows.push_back({t, std::move(values)});
    }
    if (ds.flows.size() != m.record_count) {
        throw DatasetLoadError(Kind::Externals, "externals.csv has " + std::to_string(ds.flows.size()) +
                                                    " rows, manifest declares " + std::to_string(m.record_count));
    }
    return ds;
}

} // namespace crowdflow

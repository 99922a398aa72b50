#include "crowdflow/errors.hpp"
#include "crowdflow/train.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace crowdflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.json";
constexpr const char* kParamsFile = "params.bin";

std::uint32_t checksum(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void dump(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

} // namespace

void save_checkpoint(Model& model, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw DataError("cannot create " + dir.string() + ": " + ec.message());
    }
    std::string blob;
    json tensors = json::array();
    for (const Parameter* p : model.params.list()) {
        tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", blob.size() / 8}});
        const auto values = p->value.data();
        blob.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
    }
    json meta = {
        {"format", "crowdflow-checkpoint"},
        {"version", 1},
        {"variant", variant_name(model.variant)},
        {"config", json::parse(config_to_json(model.config))},
        {"tensors", tensors},
        {"params_file", kParamsFile},
        {"params_crc32", checksum(blob)},
    };
    dump(dir / kParamsFile, blob);
    dump(dir / kCheckpointFile, meta.dump(2) + "\n");
}

Model load_checkpoint(const fs::path& dir) {
    json meta;
    try {
        meta = json::parse(slurp(dir / kCheckpointFile));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint.json: ") + e.what());
    }
    if (meta.value("format", std::string()) != "crowdflow-checkpoint") {
        throw DataError(dir.string() + " is not a crowdflow checkpoint");
    }
    Model model;
    try {
        model.variant = parse_variant(meta.at("variant").get<std::string>());
        model.config = config_from_json(meta.at("config").dump());
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint.json: ") + e.what());
    }
    model.params = init_params(model.config, model.variant, 0);

    const std::string blob = slurp(dir / kParamsFile);
    if (checksum(blob) != meta.value("params_crc32", std::uint32_t{0})) {
        throw DataError("params.bin checksum mismatch");
    }
    ParamList params = model.params.list();
    const json& tensors = meta.at("tensors");
    if (tensors.size() != params.size()) {
        throw DataError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, model has " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        const json& t = tensors[i];
        if (t.at("name").get<std::string>() != p.name || t.at("shape").get<Shape>() != p.value.shape()) {
            throw DataError("checkpoint tensor " + std::to_string(i) + " does not match parameter " + p.name);
        }
        const auto offset = t.at("offset").get<std::size_t>();
        auto values = p.value.data();
        if ((offset + values.size()) * sizeof(double) > blob.size()) {
            throw DataError("params.bin is truncated at tensor " + p.name);
        }
        std::memcpy(values.data(), blob.data() + offset * sizeof(double), values.size() * sizeof(double));
        p.zero_grad();
    }
    return model;
}

} // namespace crowdflow

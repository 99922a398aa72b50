#include "crowdflow/export.hpp"

#include "crowdflow/errors.hpp"
#include "crowdflow/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace crowdflow {

namespace fs = std::filesystem;

namespace {

std::pair<std::size_t, std::size_t> map_dims(const Tensor& map) {
    if (map.rank() == 2) {
        return {map.dim(0), map.dim(1)};
    }
    if (map.rank() == 3 && map.dim(0) == 1) {
        return {map.dim(1), map.dim(2)};
    }
    throw std::invalid_argument("expected a 1 x h x w map, got " + shape_to_string(map.shape()));
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    out.close();
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

} // namespace

int gray_level(double v) {
    if (!std::isfinite(v)) {
        throw std::invalid_argument("gray_level: non-finite value");
    }
    return static_cast<int>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

std::string render_pgm(const Tensor& map) {
    const auto [h, w] = map_dims(map);
    std::string out = "P2\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (x) {
                out += ' ';
            }
            out += std::to_string(gray_level(map[y * w + x]));
        }
        out += '\n';
    }
    return out;
}

std::string render_csv(const Tensor& map) {
    const auto [h, w] = map_dims(map);
    std::string out;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (x) {
                out += ',';
            }
            out += format_double(map[y * w + x]);
        }
        out += '\n';
    }
    return out;
}

std::vector<Tensor> residual_maps(const std::vector<Tensor>& inputs, const Tensor& target) {
    if (target.rank() != 3 || target.dim(0) != 2) {
        throw std::invalid_argument("residual_maps: target must be 2 x h x w");
    }
    const std::size_t h = target.dim(1);
    const std::size_t w = target.dim(2);
    const std::size_t plane = h * w;
    std::vector<Tensor> out;
    for (const auto& x : inputs) {
        if (x.shape() != target.shape()) {
            throw std::invalid_argument("residual_maps: input " + shape_to_string(x.shape()) + " vs target " +
                                        shape_to_string(target.shape()));
        }
        Tensor r({1, h, w});
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = std::abs(x[i] - target[i]) + std::abs(x[plane + i] - target[plane + i]);
            r[i] = std::min(1.0, d / 4.0);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<fs::path> export_attention(const AcfmTrace& trace, const fs::path& dir,
                                       const std::vector<Tensor>* residuals) {
    if (trace.steps() == 0) {
        throw std::invalid_argument("export_attention: empty trace");
    }
    if (residuals && residuals->size() != trace.steps()) {
        throw std::invalid_argument("export_attention: residual count differs from trace length");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw DataError("cannot create " + dir.string() + ": " + ec.message());
    }
    std::vector<fs::path> written;
    auto emit = [&](const std::string& stem, const Tensor& map) {
        for (const auto& [ext, text] : {std::pair{".pgm", render_pgm(map)}, std::pair{".csv", render_csv(map)}}) {
            const fs::path p = dir / (stem + ext);
            write_text(p, text);
            written.push_back(p);
        }
    };
    for (std::size_t k = 0; k < trace.steps(); ++k) {
        emit("attention_" + std::to_string(k), trace.attention[k]);
        if (residuals) {
            emit("residual_" + std::to_string(k), (*residuals)[k]);
        }
    }
    return written;
}

std::vector<FusionBin> fusion_profile(Model& model, const std::vector<Sample>& samples,
                                      const DatasetManifest& manifest) {
    if (model.variant != Variant::SPN) {
        throw std::invalid_argument("fusion_profile requires the SPN variant, got " +
                                    std::string(variant_name(model.variant)));
    }
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    constexpr std::size_t batch = 64;
    for (std::size_t start = 0; start < samples.size(); start += batch) {
        const std::size_t stop = std::min(samples.size(), start + batch);
        std::vector<ModelInput> inputs;
        for (std::size_t k = start; k < stop; ++k) {
            inputs.push_back(to_model_input(samples[k], manifest));
        }
        Tape tape;
        const ForwardResult res = forward(tape, stack_inputs(inputs), model);
        const Tensor& r = res.fusion_weight->value();
        for (std::size_t k = start; k < stop; ++k) {
            auto& slot = acc[samples[k].interval];
            slot.first += r[k - start];
            slot.second += 1;
        }
    }
    std::vector<FusionBin> bins;
    for (const auto& [interval, sum_count] : acc) {
        bins.push_back({interval, sum_count.first / static_cast<double>(sum_count.second), sum_count.second});
    }
    return bins;
}

void write_fusion_profile(const std::vector<FusionBin>& bins, std::ostream& out) {
    out << "interval,mean_r,count\n";
    for (const auto& b : bins) {
        out << b.interval << ',' << format_double(b.mean_r) << ',' << b.count << '\n';
    }
}

} // namespace crowdflow

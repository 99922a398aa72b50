#include "crowdflow/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace crowdflow {

using json = nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

template <typename T>
Setter bind(T& field) {
    return [&field](const json& v) { field = v.get<T>(); };
}

void apply_section(const json& section, const std::string& section_name, const std::map<std::string, Setter>& keys) {
    if (!section.is_object()) {
        throw std::invalid_argument("config section '" + section_name + "' must be an object");
    }
    for (const auto& [key, value] : section.items()) {
        auto it = keys.find(key);
        if (it == keys.end()) {
            throw std::invalid_argument("unknown config key '" + section_name + "." + key + "'");
        }
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw std::invalid_argument("config key '" + section_name + "." + key + "': " + e.what());
        }
    }
}

} // namespace

RunConfig default_run_config() {
    RunConfig c;
    c.gradcheck_model.height = 4;
    c.gradcheck_model.width = 4;
    c.gradcheck_model.seq_len = 2;
    c.gradcheck_model.period_len = 2;
    c.gradcheck_model.residual_units = 1;
    c.variants.assign(kAllVariants.begin(), kAllVariants.end());
    c.seeds = {0, 1, 2};
    return c;
}

RunConfig parse_run_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) {
        throw std::invalid_argument("config must be a JSON object");
    }
    RunConfig c = default_run_config();
    for (const auto& [key, value] : root.items()) {
        if (key == "synth") {
            auto& s = c.synth;
            apply_section(value, key,
                          {{"days", bind(s.days)},
                           {"intervals_per_day", bind(s.intervals_per_day)},
                           {"height", bind(s.height)},
                           {"width", bind(s.width)},
                           {"k_holiday", bind(s.k_holiday)},
                           {"test_days", bind(s.test_days)},
                           {"base", bind(s.base)},
                           {"amplitude", bind(s.amplitude)},
                           {"rho", bind(s.rho)},
                           {"noise_sigma", bind(s.noise_sigma)},
                           {"rain_probability", bind(s.rain_probability)},
                           {"rain_persistence", bind(s.rain_persistence)},
                           {"rain_effect", bind(s.rain_effect)},
                           {"seed", bind(c.synth_seed)}});
        } else if (key == "train") {
            auto& t = c.train;
            apply_section(value, key,
                          {{"seq_len", bind(t.seq_len)},
                           {"period_len", bind(t.period_len)},
                           {"residual_units", bind(t.residual_units)},
                           {"channels", bind(t.channels)},
                           {"ext_hidden", bind(t.ext_hidden)},
                           {"fusion_hidden", bind(t.fusion_hidden)},
                           {"epochs", bind(t.epochs)},
                           {"batch_size", bind(t.batch_size)},
                           {"lr", bind(t.lr)},
                           {"beta1", bind(t.beta1)},
                           {"beta2", bind(t.beta2)},
                           {"eps", bind(t.eps)},
                           {"validation_fraction", bind(t.validation_fraction)},
                           {"train_limit", bind(t.train_limit)},
                           {"seed", bind(t.seed)}});
        } else if (key == "gradcheck") {
            auto& m = c.gradcheck_model;
            auto& g = c.gradcheck;
            apply_section(value, key,
                          {{"height", bind(m.height)},
                           {"width", bind(m.width)},
                           {"seq_len", bind(m.seq_len)},
                           {"period_len", bind(m.period_len)},
                           {"residual_units", bind(m.residual_units)},
                           {"intervals_per_day", bind(m.intervals_per_day)},
                           {"ext_len", bind(m.ext_len)},
                           {"channels", bind(m.channels)},
                           {"ext_hidden", bind(m.ext_hidden)},
                           {"fusion_hidden", bind(m.fusion_hidden)},
                           {"step", bind(g.step)},
                           {"threshold", bind(g.threshold)},
                           {"floor", bind(g.floor)},
                           {"max_coords", bind(g.max_coords)}});
        } else if (key == "variants") {
            c.variants.clear();
            try {
                for (const auto& v : value) {
                    c.variants.push_back(parse_variant(v.get<std::string>()));
                }
            } catch (const json::exception& e) {
                throw std::invalid_argument(std::string("config key 'variants': ") + e.what());
            }
        } else if (key == "seeds") {
            try {
                c.seeds = value.get<std::vector<std::uint64_t>>();
            } catch (const json::exception& e) {
                throw std::invalid_argument(std::string("config key 'seeds': ") + e.what());
            }
        } else {
            throw std::invalid_argument("unknown config section '" + key + "'");
        }
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("cannot open config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

} // namespace crowdflow

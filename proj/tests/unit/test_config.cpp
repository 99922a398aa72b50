#include "crowdflow/config.hpp"

#include "helpers.hpp"

#include <fstream>
#include <stdexcept>

using namespace crowdflow;

TEST_SUITE("config") {

TEST_CASE("defaults") {
    const RunConfig c = default_run_config();
    CHECK(c.variants.size() == 8);
    CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(c.gradcheck_model.height == 4);
    CHECK(c.gradcheck_model.residual_units == 1);
    CHECK(c.train.lr == 1e-4);
    CHECK(c.train.batch_size == 64);
}

TEST_CASE("sections override individual keys") {
    const RunConfig c = parse_run_config(R"({
        "synth": {"days": 7, "seed": 11, "rain_probability": 0.0},
        "train": {"epochs": 3, "lr": 0.01, "channels": 4},
        "gradcheck": {"max_coords": 0, "threshold": 1e-6},
        "variants": ["SPN", "SRNN-w/o-Attention"],
        "seeds": [5]
    })");
    CHECK(c.synth.days == 7);
    CHECK(c.synth_seed == 11);
    CHECK(c.synth.rain_probability == 0.0);
    CHECK(c.synth.intervals_per_day == 48);
    CHECK(c.train.epochs == 3);
    CHECK(c.train.lr == 0.01);
    CHECK(c.train.channels == 4);
    CHECK(c.train.batch_size == 64);
    CHECK(c.gradcheck.max_coords == 0);
    CHECK(c.gradcheck.threshold == 1e-6);
    CHECK(c.variants == std::vector<Variant>{Variant::SPN, Variant::SRNN_NO_ATTN});
    CHECK(c.seeds == std::vector<std::uint64_t>{5});
}

TEST_CASE("bad configs are rejected") {
    CHECK_THROWS_AS(parse_run_config("{"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("[]"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"trian": {}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"epoch": 3}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"train": {"epochs": "many"}})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"train": 3})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"variants": ["SPN", "XYZ"]})"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config(R"({"variants": [3]})"), std::invalid_argument);
}

TEST_CASE("loading from a file") {
    const auto dir = test::temp_dir("config");
    std::ofstream(dir / "run.json") << R"({"seeds": [1, 2]})";
    CHECK(load_run_config(dir / "run.json").seeds == std::vector<std::uint64_t>{1, 2});
    CHECK_THROWS_AS(load_run_config(dir / "absent.json"), std::invalid_argument);
}

} // TEST_SUITE

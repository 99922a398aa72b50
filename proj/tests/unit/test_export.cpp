#include "crowdflow/export.hpp"
#include "crowdflow/gradcheck.hpp"
#include "crowdflow/train.hpp"

#include "helpers.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

using namespace crowdflow;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

AcfmTrace uniform_trace(std::size_t steps, std::size_t h, std::size_t w, double v) {
    AcfmTrace t;
    for (std::size_t k = 0; k < steps; ++k) {
        t.attention.push_back(Tensor({1, h, w}, v));
    }
    return t;
}

} // namespace

TEST_SUITE("export") {

TEST_CASE("gray levels") {
    CHECK(gray_level(0.5) == 128);
    CHECK(gray_level(1.0) == 255);
    CHECK(gray_level(0.0) == 0);
    CHECK(gray_level(-0.2) == 0);
    CHECK(gray_level(1.7) == 255);
    CHECK(gray_level(0.25) == 64);
    CHECK(gray_level(3.0 / 255.0) == 3);
    for (int k = 0; k <= 255; ++k) {
        CHECK(gray_level(k / 255.0) == k);
    }
    CHECK_THROWS_AS(gray_level(std::nan("")), std::invalid_argument);
}

TEST_CASE("graymap text") {
    Tensor m({1, 2, 3});
    m[0] = 0.0;
    m[1] = 0.5;
    m[2] = 1.0;
    m[3] = 0.2;
    m[4] = 0.999;
    m[5] = 0.001;
    CHECK(render_pgm(m) == "P2\n3 2\n255\n0 128 255\n51 255 0\n");
    CHECK(render_csv(Tensor({1, 1, 2}, 0.25)) == "0.25,0.25\n");
    CHECK_THROWS_AS(render_pgm(Tensor({2, 2, 2})), std::invalid_argument);
}

TEST_CASE("uniform attention exports all-128 graymaps") {
    const auto dir = test::temp_dir("export_uniform");
    const AcfmTrace trace = uniform_trace(3, 4, 5, 0.5);
    const auto files = export_attention(trace, dir);
    REQUIRE(files.size() == 3 * 2);
    std::size_t graymaps = 0;
    for (const auto& f : files) {
        CHECK(std::filesystem::exists(f));
        if (f.extension() != ".pgm") {
            continue;
        }
        ++graymaps;
        std::istringstream in(read_file(f));
        std::string magic;
        int w = 0, h = 0, maxval = 0;
        in >> magic >> w >> h >> maxval;
        CHECK(magic == "P2");
        CHECK(w == 5);
        CHECK(h == 4);
        CHECK(maxval == 255);
        int px = 0;
        int n = 0;
        while (in >> px) {
            CHECK(px == 128);
            ++n;
        }
        CHECK(n == 20);
    }
    CHECK(graymaps == 3);
}

TEST_CASE("residual maps double the file count") {
    const auto dir = test::temp_dir("export_residual");
    const AcfmTrace trace = uniform_trace(2, 2, 2, 1.0);
    Tensor target({2, 2, 2}, 0.0);
    Tensor a({2, 2, 2}, 0.0);
    Tensor b({2, 2, 2}, 0.0);
    b[0] = 1.0;
    b[4] = -1.0;
    b[1] = 2.0;
    b[5] = 2.0;
    const auto res = residual_maps({a, b}, target);
    REQUIRE(res.size() == 2);
    CHECK(res[0] == Tensor({1, 2, 2}, 0.0));
    CHECK(res[1][0] == 0.5);
    CHECK(res[1][1] == 1.0);
    CHECK(res[1][2] == 0.0);
    const auto files = export_attention(trace, dir, &res);
    CHECK(files.size() == 2 * 4);
    CHECK(read_file(dir / "attention_1.pgm") == "P2\n2 2\n255\n255 255\n255 255\n");
    CHECK(read_file(dir / "residual_1.pgm") == "P2\n2 2\n255\n128 255\n0 0\n");
    std::vector<Tensor> short_res(1, res[0]);
    CHECK_THROWS_AS(export_attention(trace, dir, &short_res), std::invalid_argument);
    CHECK_THROWS_AS(residual_maps({Tensor({2, 2, 3})}, target), std::invalid_argument);
}

TEST_CASE("export errors") {
    CHECK_THROWS_AS(export_attention(AcfmTrace{}, test::temp_dir("export_empty")), std::invalid_argument);
    const auto dir = test::temp_dir("export_blocked");
    std::ofstream(dir / "file") << "x";
    CHECK_THROWS_AS(export_attention(uniform_trace(1, 2, 2, 0.5), dir / "file" / "sub"), DataError);
}

TEST_CASE("exported trace of a real forward pass") {
    SpnConfig c;
    c.height = 4;
    c.width = 4;
    c.seq_len = 2;
    c.period_len = 2;
    c.residual_units = 1;
    c.channels = 3;
    c.ext_hidden = 4;
    c.fusion_hidden = 4;
    Model m = make_model(c, Variant::SPN, 1);
    Tape tape;
    const ForwardResult r = forward(tape, random_model_input(c, 2), m);
    const AcfmTrace t = r.seq->trace();
    CHECK(t.steps() == 2);
    CHECK(t.attention[0].shape() == Shape{1, 4, 4});
    const auto files = export_attention(t, test::temp_dir("export_forward"));
    CHECK(files.size() == 4);
}

TEST_CASE("fusion profile") {
    SynthConfig sc;
    sc.days = 5;
    sc.intervals_per_day = 6;
    sc.height = 3;
    sc.width = 3;
    sc.test_days = 2;
    const Dataset ds = synthesize(sc, 3);
    TrainConfig t;
    t.seq_len = 2;
    t.period_len = 1;
    t.residual_units = 1;
    t.channels = 2;
    t.ext_hidden = 4;
    t.fusion_hidden = 3;
    const SampleSplit split = split_samples(ds, make_window(ds.manifest, t), 0.0);
    REQUIRE(split.test.size() == 12);
    Model m = make_model(make_spn_config(ds.manifest, t), Variant::SPN, 5);

    const auto bins = fusion_profile(m, split.test, ds.manifest);
    std::size_t total = 0;
    std::set<std::size_t> intervals;
    for (const auto& b : bins) {
        total += b.count;
        intervals.insert(b.interval);
        CHECK(b.mean_r > 0.0);
        CHECK(b.mean_r < 1.0);
        CHECK(b.count == 2);
    }
    CHECK(total == split.test.size());
    CHECK(intervals.size() == 6);

    ParamList fusion;
    m.params.fusion->collect(fusion);
    for (Parameter* p : fusion) {
        p->value.fill(0.0);
    }
    for (const auto& b : fusion_profile(m, split.test, ds.manifest)) {
        CHECK(b.mean_r == 0.5);
    }
    std::ostringstream out;
    write_fusion_profile(fusion_profile(m, split.test, ds.manifest), out);
    CHECK(out.str().rfind("interval,mean_r,count\n0,0.5,2\n", 0) == 0);

    Model srnn = make_model(make_spn_config(ds.manifest, t), Variant::SRNN, 5);
    CHECK_THROWS_AS(fusion_profile(srnn, split.test, ds.manifest), std::invalid_argument);
}

} // TEST_SUITE

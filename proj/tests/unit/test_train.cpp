#include "crowdflow/train.hpp"

#include "helpers.hpp"

#include <fstream>
#include <stdexcept>

using namespace crowdflow;

namespace {

Dataset tiny_dataset(std::uint64_t seed, std::size_t days = 6) {
    SynthConfig c;
    c.days = days;
    c.intervals_per_day = 8;
    c.height = 3;
    c.width = 3;
    c.test_days = 1;
    return synthesize(c, seed);
}

TrainConfig tiny_train(std::uint64_t seed) {
    TrainConfig t;
    t.seq_len = 2;
    t.period_len = 1;
    t.residual_units = 1;
    t.channels = 3;
    t.ext_hidden = 6;
    t.fusion_hidden = 5;
    t.epochs = 2;
    t.batch_size = 8;
    t.lr = 1e-3;
    t.seed = seed;
    return t;
}

} // namespace

TEST_SUITE("train") {

TEST_CASE("euclidean loss examples") {
    std::mt19937_64 rng(1);
    Tensor target = test::random_tensor({2, 3, 3}, rng);
    Tape t;
    CHECK(euclidean_loss(t.constant(target), target).value()[0] == 0.0);
    Tensor plus_one = target;
    for (double& v : plus_one.data()) {
        v += 1.0;
    }
    CHECK(euclidean_loss(t.constant(plus_one), target).value()[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(euclidean_loss(t.constant(Tensor::vector({0, 0})), Tensor::vector({1, 3})).value()[0] == 5.0);
    CHECK_THROWS_AS(euclidean_loss(t.constant(Tensor({2, 3, 3})), Tensor({2, 3, 4})), std::invalid_argument);
}

TEST_CASE("adam with zero gradient only advances the step") {
    Parameter p("p", Tensor::vector({1.0, -2.0}));
    Parameter* list[] = {&p};
    AdamState s;
    adam_step(list, s);
    CHECK(s.step == 1);
    CHECK(p.value.values() == std::vector<double>{1.0, -2.0});
}

TEST_CASE("adam single step matches the hand recurrence") {
    Parameter p("p", Tensor::vector({0.5, -0.25, 2.0}));
    const std::vector<double> g = {0.3, -4.0, 1e-9};
    for (std::size_t i = 0; i < 3; ++i) {
        p.grad[i] = g[i];
    }
    Parameter* list[] = {&p};
    AdamState s;
    s.lr = 0.01;
    adam_step(list, s);
    const std::vector<double> start = {0.5, -0.25, 2.0};
    for (std::size_t i = 0; i < 3; ++i) {
        const double m = (1 - 0.9) * g[i];
        const double v = (1 - 0.999) * g[i] * g[i];
        const double m_hat = m / (1 - 0.9);
        const double v_hat = v / (1 - 0.999);
        const double expect = start[i] - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
        CHECK(p.value[i] == doctest::Approx(expect).epsilon(1e-14));
    }
    // Nearly the sign step for gradients well above eps.
    CHECK(p.value[0] == doctest::Approx(0.49).epsilon(1e-7));
    CHECK(p.value[1] == doctest::Approx(-0.24).epsilon(1e-7));
}

TEST_CASE("adam rejects a parameter without a gradient") {
    Parameter p("p", Tensor::vector({1.0}));
    p.grad = Tensor();
    Parameter* list[] = {&p};
    AdamState s;
    CHECK_THROWS_AS(adam_step(list, s), InvalidState);
}

TEST_CASE("sample split by day") {
    SynthConfig c;
    const Dataset ds = synthesize(c, 1);
    TrainConfig t;
    const SampleSplit split = split_samples(ds, make_window(ds.manifest, t), 0.1);
    CHECK(split.test.size() == 96);
    CHECK(split.validation.size() == 48);
    CHECK(split.train.size() == 720);
    for (const Sample& s : split.validation) {
        CHECK(s.day == 17);
    }
    for (const Sample& s : split.train) {
        CHECK(s.day < 17);
    }
    CHECK_THROWS_AS(split_samples(ds, make_window(ds.manifest, t), 1.0), std::invalid_argument);
}

TEST_CASE("training rejects an empty sample list") {
    const Dataset ds = tiny_dataset(1);
    CHECK_THROWS_AS(train_on_samples({}, {}, ds.manifest, tiny_train(0), Variant::SPN), std::invalid_argument);
    TrainConfig zero_batch = tiny_train(0);
    zero_batch.batch_size = 0;
    const SampleSplit split = split_samples(ds, make_window(ds.manifest, zero_batch), 0.0);
    CHECK_THROWS_AS(train_on_samples(split.train, {}, ds.manifest, zero_batch, Variant::SPN), std::invalid_argument);
}

TEST_CASE("one epoch lowers the training loss for most seeds") {
    const Dataset ds = tiny_dataset(2);
    int improved = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig t = tiny_train(seed);
        t.epochs = 1;
        const TrainResult r = train(ds, t, Variant::SPN);
        improved += r.report.final_train_rmse * r.report.final_train_rmse < r.report.initial_loss ? 1 : 0;
    }
    CHECK(improved >= 4);
}

TEST_CASE("identical seeds give identical reports and parameters") {
    const Dataset ds = tiny_dataset(3);
    for (Variant v : {Variant::SPN, Variant::PCNN}) {
        const TrainResult a = train(ds, tiny_train(7), v);
        const TrainResult b = train(ds, tiny_train(7), v);
        CHECK(a.report.to_json(false) == b.report.to_json(false));
        Model ma = a.model;
        Model mb = b.model;
        ParamList la = ma.params.list();
        ParamList lb = mb.params.list();
        REQUIRE(la.size() == lb.size());
        for (std::size_t i = 0; i < la.size(); ++i) {
            CHECK(la[i]->value == lb[i]->value);
        }
        const TrainResult c = train(ds, tiny_train(8), v);
        CHECK(c.report.to_json(false) != a.report.to_json(false));
    }
}

TEST_CASE("report contents") {
    const Dataset ds = tiny_dataset(4);
    TrainConfig t = tiny_train(1);
    t.epochs = 3;
    t.validation_fraction = 0.25;
    std::vector<std::size_t> seen;
    const TrainResult r = train(ds, t, Variant::SRNN, [&](std::size_t e, double, std::optional<double> v) {
        seen.push_back(e);
        CHECK(v.has_value());
    });
    CHECK(seen == std::vector<std::size_t>{1, 2, 3});
    CHECK(r.report.epoch_loss.size() == 3);
    CHECK(r.report.epoch_validation_rmse.size() == 3);
    CHECK(r.report.best_epoch >= 1);
    CHECK(r.report.best_validation_rmse ==
          *std::min_element(r.report.epoch_validation_rmse.begin(), r.report.epoch_validation_rmse.end()));
    for (double l : r.report.epoch_loss) {
        CHECK(std::isfinite(l));
    }
    CHECK(r.report.variant == "SRNN");
    CHECK(r.report.to_json(false).find("wall_seconds") == std::string::npos);
    CHECK(r.report.to_json(true).find("wall_seconds") != std::string::npos);
}

TEST_CASE("evaluate_rmse on constructed predictions") {
    const Dataset ds = tiny_dataset(5);
    const TrainConfig t = tiny_train(0);
    const SampleSplit split = split_samples(ds, make_window(ds.manifest, t), 0.0);
    Model m = make_model(make_spn_config(ds.manifest, t), Variant::SPN, 3);

    std::vector<Sample> exact = split.test;
    std::vector<Sample> shifted = split.test;
    for (std::size_t i = 0; i < exact.size(); ++i) {
        const Tensor pred = denormalize_flow(predict(to_model_input(exact[i], ds.manifest), m), ds.manifest.flow_min,
                                             ds.manifest.flow_max);
        exact[i].target.values = pred;
        Tensor minus_two = pred;
        for (double& v : minus_two.data()) {
            v -= 2.0;
        }
        shifted[i].target.values = minus_two;
    }
    CHECK(evaluate_rmse(m, exact, ds.manifest) < 1e-12);
    CHECK(evaluate_rmse(m, shifted, ds.manifest) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(evaluate_rmse(m, {}, ds.manifest), std::invalid_argument);
}

TEST_CASE("evaluate_rmse matches a naive accumulator") {
    const Dataset ds = tiny_dataset(6);
    const TrainConfig t = tiny_train(0);
    const SampleSplit split = split_samples(ds, make_window(ds.manifest, t), 0.0);
    Model m = make_model(make_spn_config(ds.manifest, t), Variant::SRNN, 4);
    double sum = 0.0;
    double n = 0.0;
    for (const Sample& s : split.test) {
        const Tensor p = denormalize_flow(predict(to_model_input(s, ds.manifest), m), ds.manifest.flow_min,
                                          ds.manifest.flow_max);
        for (std::size_t i = 0; i < p.size(); ++i) {
            sum += (p[i] - s.target.values[i]) * (p[i] - s.target.values[i]);
            n += 1.0;
        }
    }
    CHECK(std::abs(evaluate_rmse(m, split.test, ds.manifest) - std::sqrt(sum / n)) < 1e-10);
    CHECK(evaluate_rmse(m, split.test, ds.manifest, {true}) <= evaluate_rmse(m, split.test, ds.manifest) + 1e-12);
}

TEST_CASE("checkpoints round trip and detect corruption") {
    const Dataset ds = tiny_dataset(7);
    Model m = make_model(make_spn_config(ds.manifest, tiny_train(0)), Variant::SPN, 9);
    const auto dir = test::temp_dir("checkpoint");
    save_checkpoint(m, dir);
    Model back = load_checkpoint(dir);
    CHECK(back.variant == Variant::SPN);
    ParamList a = m.params.list();
    ParamList b = back.params.list();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name == b[i]->name);
        CHECK(a[i]->value == b[i]->value);
    }
    {
        std::fstream f(dir / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        f.put('\x7f');
    }
    CHECK_THROWS_AS(load_checkpoint(dir), DataError);
    std::filesystem::resize_file(dir / "params.bin", 16);
    CHECK_THROWS_AS(load_checkpoint(dir), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing"), DataError);
}

TEST_CASE("model config json round trip") {
    SpnConfig c = bikenyc_config();
    c.channels = 5;
    const SpnConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(back.period_len == 7);
}

} // TEST_SUITE

#include "crowdflow/ops.hpp"

#include "helpers.hpp"

#include <stdexcept>

using namespace crowdflow;

TEST_SUITE("autodiff") {

TEST_CASE("d(x^2)/dx at 3 is 6") {
    Parameter x("x", Tensor::vector({3.0}));
    Tape t;
    Var v = t.param(x);
    t.backward(mul(v, v));
    CHECK(x.grad[0] == 6.0);
}

TEST_CASE("shared parameters accumulate by addition") {
    Parameter x("x", Tensor::vector({2.0}));
    Tape t;
    Var v = t.param(x);
    t.backward(add(scale(v, 3.0), mul(v, v)));
    CHECK(x.grad[0] == 3.0 + 4.0);
}

TEST_CASE("gradients accumulate across passes until zero_grad") {
    Parameter x("x", Tensor::vector({1.5}));
    for (int pass = 0; pass < 2; ++pass) {
        Tape t;
        t.backward(scale(t.param(x), 2.0));
    }
    CHECK(x.grad[0] == 4.0);
    x.zero_grad();
    CHECK(x.grad[0] == 0.0);
}

TEST_CASE("an unused parameter keeps an exactly zero gradient") {
    Parameter used("used", Tensor::vector({1.0, 2.0}));
    Parameter unused("unused", Tensor::vector({5.0, 6.0}));
    Tape t;
    t.param(unused);
    t.backward(mean_squared_error(t.param(used), t.constant(Tensor::vector({0.0, 0.0}))));
    CHECK(unused.grad.values() == std::vector<double>{0.0, 0.0});
    CHECK(used.grad.values() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("backward requires a scalar loss from the same tape") {
    Tape t;
    Var v = t.constant(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
    Tape other;
    Var s = other.constant(Tensor::vector({1.0}));
    CHECK_THROWS_AS(t.backward(s), std::invalid_argument);
}

TEST_CASE("tape records inputs before outputs") {
    Tape t;
    Var a = t.constant(Tensor::vector({1.0}));
    Var b = t.constant(Tensor::vector({2.0}));
    Var c = mul(add(a, b), a);
    for (std::size_t id = 0; id < t.size(); ++id) {
        for (std::size_t in : t.inputs(id)) {
            CHECK(in < id);
        }
    }
    CHECK(t.kind(c.id()) == OpKind::Mul);
}

TEST_CASE("finite differences of sum of squares") {
    Parameter th("theta", Tensor::vector({1.0, 2.0}));
    Parameter* params[] = {&th};
    auto f = [&] { return th.value[0] * th.value[0] + th.value[1] * th.value[1]; };
    const auto g = finite_difference_gradient(f, params, 1e-5);
    CHECK(std::abs(g[0][0] - 2.0) < 1e-8);
    CHECK(std::abs(g[0][1] - 4.0) < 1e-8);
    CHECK(th.value.values() == std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(finite_difference_gradient(f, params, 0.0), std::invalid_argument);
}

TEST_CASE("finite differences of a linear function are exact to roundoff") {
    Parameter th("theta", Tensor::vector({0.3, -1.7, 4.0}));
    Parameter* params[] = {&th};
    auto f = [&] { return 2.0 * th.value[0] - 3.0 * th.value[1] + 0.5 * th.value[2]; };
    for (double step : {1e-3, 1e-5, 1e-1}) {
        const auto g = finite_difference_gradient(f, params, step);
        CHECK(std::abs(g[0][0] - 2.0) < 1e-9);
        CHECK(std::abs(g[0][1] + 3.0) < 1e-9);
        CHECK(std::abs(g[0][2] - 0.5) < 1e-9);
    }
}

TEST_CASE("sigmoid(w x) chain matches central differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        Parameter w("w", test::random_tensor({3, 4}, rng));
        Parameter x("x", test::random_tensor({4}, rng));
        Parameter* params[] = {&w, &x};
        auto loss = [&](Tape& t) {
            Var y = sigmoid(fully_connected(t.param(x), t.param(w)));
            return mean_squared_error(y, t.constant(Tensor({3}, 0.25)));
        };
        CHECK(test::grad_rel_error(loss, params) < 1e-6);
    }
}

TEST_CASE("fault injection corrupts exactly the chosen rule") {
    Parameter x("x", Tensor::vector({0.4, -0.2}));
    auto run = [&](std::optional<OpKind> fault) {
        x.zero_grad();
        Tape t;
        if (fault) {
            t.inject_fault(*fault, 2.0);
        }
        t.backward(mean_squared_error(tanh(t.param(x)), t.constant(Tensor({2}))));
        return x.grad;
    };
    const Tensor clean = run(std::nullopt);
    const Tensor faulty = run(OpKind::Tanh);
    const Tensor other = run(OpKind::Conv2d);
    CHECK(other == clean);
    CHECK(std::abs(faulty[0] - 2.0 * clean[0]) < 1e-15);
}

} // TEST_SUITE

#include <doctest.h>

#include <cmath>
#include <vector>

#include "bafo/layers.hpp"
#include "bafo/rng.hpp"

using namespace bafo;

namespace {

struct ModeGuard {
    NumericMode saved = engine_mode();
    explicit ModeGuard(NumericMode m) { set_engine_mode(m); }
    ~ModeGuard() { set_engine_mode(saved); }
};

ParamStore single_param(const std::string& name, const Tensor& value) {
    ParamStore store;
    store.insert(name, value.with_requires_grad(true));
    return store;
}

}  // namespace

TEST_CASE("init_params is deterministic and zero-biased") {
    ModeGuard guard(NumericMode::f64);
    std::vector<LayerSpec> specs = {
        LayerSpec::conv("c1", 3, 8, 4, 2, 1, Activation::LeakyRelu),
        LayerSpec::dense("d1", 10, 10, Activation::Relu),
        LayerSpec::dense("d2", 10, 4, Activation::Sigmoid),
    };
    ParamStore a = init_params(specs, 42);
    ParamStore b = init_params(specs, 42);
    for (const auto& [name, entry] : a) {
        CHECK(entry.value.same_values(b.value(name)));
    }
    ParamStore c = init_params(specs, 43);
    CHECK(!a.value("d1.weight").same_values(c.value("d1.weight")));

    for (const auto& [name, entry] : a) {
        if (name.ends_with(".bias")) {
            for (std::int64_t i = 0; i < entry.value.size(); ++i) {
                CHECK(entry.value.at(i) == 0.0);
            }
        }
    }
}

TEST_CASE("He initialization hits its target deviation") {
    ModeGuard guard(NumericMode::f64);
    // relu-family dense 10->10: std should track sqrt(2/10) across seeds
    double expected = std::sqrt(2.0 / 10.0);
    double acc = 0.0;
    int count = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        ParamStore store = init_params(
            {LayerSpec::dense("d", 10, 10, Activation::Relu)}, seed);
        const Tensor& w = store.value("d.weight");
        double sq = 0.0;
        for (std::int64_t i = 0; i < w.size(); ++i) sq += w.at(i) * w.at(i);
        acc += std::sqrt(sq / static_cast<double>(w.size()));
        ++count;
    }
    double mean_std = acc / count;
    CHECK(mean_std > expected * 0.8);
    CHECK(mean_std < expected * 1.2);
}

TEST_CASE("adam first step moves by roughly -lr per coordinate") {
    ModeGuard guard(NumericMode::f64);
    Tensor p = Tensor::from_values({3}, std::vector<double>{1.0, -2.0, 0.5});
    ParamStore store = single_param("p", p);
    std::map<std::string, Tensor> grads{
        {"p", Tensor::from_values({3}, std::vector<double>{0.3, -4.0, 1e-3})}};
    ParamStore next = adam_step(store, grads, 0.1, 0.9, 0.999, 1e-8);
    CHECK(next.step_count() == 1);
    // bias-corrected first step: p -= lr * g / (|g| + eps) = lr * sign(g)
    CHECK(next.value("p").at(0) == doctest::Approx(1.0 - 0.1).epsilon(1e-3));
    CHECK(next.value("p").at(1) == doctest::Approx(-2.0 + 0.1).epsilon(1e-3));
    CHECK(next.value("p").at(2) == doctest::Approx(0.5 - 0.1).epsilon(1e-3));
}

TEST_CASE("adam with zero gradient leaves parameters alone") {
    ModeGuard guard(NumericMode::f64);
    Tensor p = Tensor::from_values({2}, std::vector<double>{3.0, -1.0});
    ParamStore store = single_param("p", p);
    std::map<std::string, Tensor> grads{{"p", Tensor::zeros({2})}};
    ParamStore next = adam_step(store, grads, 0.1, 0.9, 0.999, 1e-8);
    CHECK(next.step_count() == 1);
    CHECK(next.value("p").same_values(store.value("p")));

    std::map<std::string, Tensor> bad{{"q", Tensor::zeros({2})}};
    CHECK_THROWS_AS(adam_step(store, bad, 0.1, 0.9, 0.999, 1e-8), ContractError);
    std::map<std::string, Tensor> wrong_shape{{"p", Tensor::zeros({3})}};
    CHECK_THROWS_AS(adam_step(store, wrong_shape, 0.1, 0.9, 0.999, 1e-8),
                    ContractError);
}

TEST_CASE("adam trajectory matches an independent scalar computation") {
    ModeGuard guard(NumericMode::f64);
    // Oracle: plain scalar Adam on f(p) = p^2, grad 2p, from p = 1, lr = 0.1.
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double p_ref = 1.0, m = 0.0, v = 0.0;
    std::vector<double> expected;
    for (int t = 1; t <= 3; ++t) {
        double g = 2.0 * p_ref;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double m_hat = m / (1 - std::pow(b1, t));
        double v_hat = v / (1 - std::pow(b2, t));
        p_ref -= lr * m_hat / (std::sqrt(v_hat) + eps);
        expected.push_back(p_ref);
    }

    ParamStore store =
        single_param("p", Tensor::from_values({1}, std::vector<double>{1.0}));
    for (int t = 0; t < 3; ++t) {
        double g = 2.0 * store.value("p").at(0);
        std::map<std::string, Tensor> grads{
            {"p", Tensor::from_values({1}, std::vector<double>{g})}};
        store = adam_step(store, grads, lr, b1, b2, eps);
        CHECK(store.value("p").at(0) ==
              doctest::Approx(expected[t]).epsilon(1e-12));
    }
    CHECK(store.step_count() == 3);
}

// Adam's first step is scale-free up to eps: g and 100g give updates within
// 1% of each other per coordinate.
TEST_CASE("adam first-step scale invariance") {
    ModeGuard guard(NumericMode::f64);
    Pcg32 rng(77);
    std::vector<double> g(8);
    for (double& x : g) x = 2.0 * rng.next_double() - 1.0;
    std::vector<double> g100 = g;
    for (double& x : g100) x *= 100.0;

    Tensor p = Tensor::zeros({8});
    ParamStore s1 = single_param("p", p);
    ParamStore s2 = single_param("p", p);
    ParamStore r1 = adam_step(s1, {{"p", Tensor::from_values({8}, g)}}, 1e-3,
                              0.9, 0.999, 1e-8);
    ParamStore r2 = adam_step(s2, {{"p", Tensor::from_values({8}, g100)}}, 1e-3,
                              0.9, 0.999, 1e-8);
    for (std::int64_t i = 0; i < 8; ++i) {
        double u1 = r1.value("p").at(i);
        double u2 = r2.value("p").at(i);
        CHECK(std::abs(u1 - u2) < 0.01 * std::abs(u1));
    }
}

TEST_CASE("forward_layer identity dense passes input through") {
    ModeGuard guard(NumericMode::f64);
    LayerSpec spec = LayerSpec::dense("id", 7, 7, Activation::Linear);
    std::vector<double> eye(49, 0.0);
    for (int i = 0; i < 7; ++i) eye[i * 7 + i] = 1.0;
    ParamStore store;
    store.insert("id.weight",
                 Tensor::from_values({7, 7}, eye).with_requires_grad(true));
    store.insert("id.bias", Tensor::zeros({7}).with_requires_grad(true));

    Pcg32 rng(5);
    std::vector<double> xv(14);
    for (double& v : xv) v = rng.next_double();
    Tensor x = Tensor::from_values({2, 7}, xv);
    ParamVars vars = ParamVars::constants(store);
    Tensor y = forward_layer(spec, vars, Var::constant(x)).value();
    CHECK(y.same_values(x));
}

TEST_CASE("forward_layer conv spec reproduces the declared shape") {
    ModeGuard guard(NumericMode::f64);
    LayerSpec spec = LayerSpec::conv("c", 3, 32, 4, 2, 1, Activation::LeakyRelu);
    ParamStore store = init_params({spec}, 3);
    ParamVars vars = ParamVars::constants(store);
    Tensor x = Tensor::zeros({1, 3, 56, 56});
    Tensor y = forward_layer(spec, vars, Var::constant(x)).value();
    CHECK(y.shape() == Shape{1, 32, 28, 28});
    CHECK(propagate_shape({spec}, {1, 3, 56, 56}) == Shape{1, 32, 28, 28});
}

TEST_CASE("gradient check through a two-layer stack") {
    ModeGuard guard(NumericMode::f64);
    std::vector<LayerSpec> specs = {
        LayerSpec::dense("l1", 6, 5, Activation::LeakyRelu),
        LayerSpec::dense("l2", 5, 3, Activation::Sigmoid),
    };
    ParamStore store = init_params(specs, 11);
    Pcg32 rng(12);
    std::vector<double> xv(12);
    for (double& v : xv) v = 2.0 * rng.next_double() - 1.0;
    Tensor x = Tensor::from_values({2, 6}, xv);

    std::vector<Tensor> inputs = {
        x,
        store.value("l1.weight"),
        store.value("l1.bias"),
        store.value("l2.weight"),
        store.value("l2.bias"),
    };
    double err = grad_check(
        [&specs](Tape&, const std::vector<Var>& in) {
            ParamVars vars;
            vars.vars.emplace("l1.weight", in[1]);
            vars.vars.emplace("l1.bias", in[2]);
            vars.vars.emplace("l2.weight", in[3]);
            vars.vars.emplace("l2.bias", in[4]);
            Var h = forward_layer(specs[0], vars, in[0]);
            Var y = forward_layer(specs[1], vars, h);
            return sum(mul(y, y));
        },
        inputs, 1e-5);
    CHECK(err <= 1e-4);
}

TEST_CASE("shape propagation rejects inconsistent spec lists") {
    std::vector<LayerSpec> bad = {
        LayerSpec::conv("c1", 3, 8, 4, 2, 1, Activation::LeakyRelu),
        LayerSpec::conv("c2", 16, 8, 4, 2, 1, Activation::LeakyRelu),
    };
    CHECK_THROWS_AS(propagate_shape(bad, {1, 3, 56, 56}), ConfigError);
    CHECK_THROWS_AS(init_params({LayerSpec::dense("d", 0, 4, Activation::Relu)},
                                1),
                    ConfigError);
}

// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fdnas/optim.hpp"

using namespace fdnas;

namespace {

Parameter scalar_param(const std::string& id, double v) {
    return {id, Tensor::from_data({1}, {v}), true};
}

Gradients grads_for(const std::string& id, std::vector<double> g) {
    Gradients out;
    out.by_id[id] = std::move(g);
    out.reached.insert(id);
    return out;
}

}  // namespace

TEST_CASE("plain sgd step") {
    Parameter w = scalar_param("w", 1.0);
    auto state = OptimizerState::sgd(0.1, 0.0, 0.0);
    std::vector<Parameter*> ps{&w};
    sgd_momentum_step(ps, grads_for("w", {0.5}), state);
    CHECK(w.value.data()[0] == doctest::Approx(0.95));
}

TEST_CASE("zero grad with fresh buffers is identity") {
    Parameter w = scalar_param("w", 2.5);
    auto state = OptimizerState::sgd(0.1, 0.9, 0.0);
    std::vector<Parameter*> ps{&w};
    sgd_momentum_step(ps, grads_for("w", {0.0}), state);
    CHECK(w.value.data()[0] == 2.5);

    Parameter a = scalar_param("a", -1.25);
    auto adam = OptimizerState::adam(0.01);
    std::vector<Parameter*> pa{&a};
    adam_step(pa, grads_for("a", {0.0}), adam);
    CHECK(a.value.data()[0] == -1.25);
}

TEST_CASE("momentum accumulates over identical grads") {
    // mu=0.9, lr=0.1, g=1: step 1 moves 0.1, step 2 moves 0.19
    Parameter w = scalar_param("w", 0.0);
    auto state = OptimizerState::sgd(0.1, 0.9, 0.0);
    std::vector<Parameter*> ps{&w};
    sgd_momentum_step(ps, grads_for("w", {1.0}), state);
    CHECK(w.value.data()[0] == doctest::Approx(-0.1));
    sgd_momentum_step(ps, grads_for("w", {1.0}), state);
    CHECK(w.value.data()[0] == doctest::Approx(-0.29));
}

TEST_CASE("coupled weight decay enters the gradient") {
    Parameter w = scalar_param("w", 2.0);
    auto state = OptimizerState::sgd(0.1, 0.0, 0.5);
    std::vector<Parameter*> ps{&w};
    sgd_momentum_step(ps, grads_for("w", {0.0}), state);
    // g_eff = 0 + 0.5*2 = 1 -> w = 2 - 0.1
    CHECK(w.value.data()[0] == doctest::Approx(1.9));
}

TEST_CASE("missing grad id is rejected") {
    Parameter w = scalar_param("w", 1.0);
    auto state = OptimizerState::sgd(0.1, 0.0, 0.0);
    std::vector<Parameter*> ps{&w};
    CHECK_THROWS(sgd_momentum_step(ps, grads_for("other", {1.0}), state));
    auto adam = OptimizerState::adam(0.01);
    CHECK_THROWS(adam_step(ps, grads_for("other", {1.0}), adam));
}

TEST_CASE("adam first step equals -lr within bias-corrected formula") {
    Parameter w = scalar_param("w", 0.0);
    auto state = OptimizerState::adam(0.01, 0.9, 0.999, 1e-8);
    std::vector<Parameter*> ps{&w};
    adam_step(ps, grads_for("w", {1.0}), state);
    // mhat = 1, vhat = 1 -> step = -lr/(1 + eps)
    CHECK(w.value.data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam update magnitude approaches lr under constant gradient") {
    Parameter w = scalar_param("w", 0.0);
    auto state = OptimizerState::adam(0.01, 0.9, 0.999, 1e-8);
    std::vector<Parameter*> ps{&w};
    double prev = 0.0;
    double step = 0.0;
    for (int t = 0; t < 200; ++t) {
        adam_step(ps, grads_for("w", {2.0}), state);
        step = std::abs(w.value.data()[0] - prev);
        prev = w.value.data()[0];
    }
    CHECK(step == doctest::Approx(0.01).epsilon(0.01));
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0, 10, 0.05) == doctest::Approx(0.05));
    CHECK(cosine_lr(10, 10, 0.05) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_lr(5, 10, 0.05) == doctest::Approx(0.025));
    CHECK_THROWS(cosine_lr(11, 10, 0.05));
    CHECK_THROWS(cosine_lr(0, 0, 0.05));
}

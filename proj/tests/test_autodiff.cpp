// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fdnas/ops.hpp"
#include "fdnas/rng.hpp"
#include "fdnas/tape.hpp"
#include "oracle_helpers.hpp"

using namespace fdnas;
using fdnas::testing::max_rel_err;
using fdnas::testing::rel_err;

namespace {

Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("relu6 clamps to [0, 6]") {
    Tensor x = Tensor::from_data({4}, {-1.0, 0.0, 2.0, 9.0});
    Tensor y = relu6(x, nullptr);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 2.0);
    CHECK(y.data()[3] == 6.0);
}

TEST_CASE("conv2d all-ones 5x5 kernel-3 center is 9") {
    Tensor x = Tensor::full({1, 1, 5, 5}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, w, nullptr, 1, nullptr);
    CHECK(y.shape() == std::vector<std::int64_t>{1, 1, 5, 5});
    // center sees the full window, corners a 2x2 one
    CHECK(y.data()[2 * 5 + 2] == doctest::Approx(9.0));
    CHECK(y.data()[0] == doctest::Approx(4.0));
}

TEST_CASE("unknown primitive kind and shape mismatches are rejected") {
    Tensor x = Tensor::full({2, 3}, 1.0);
    CHECK_THROWS(apply_primitive("does_not_exist", std::vector<Tensor>{x}, {}, nullptr));
    Tensor w = Tensor::full({4, 7}, 1.0);  // wrong inner dim
    Tensor b = Tensor::full({4}, 0.0);
    CHECK_THROWS(linear(x, w, b, nullptr));
    Tensor empty_batch({0, 3});
    CHECK_THROWS(linear(empty_batch, w, b, nullptr));
}

TEST_CASE("linear gradient structure: dL/dW = x broadcast") {
    // loss = sum(W x): grad_W[o, c] = sum_b x[b, c]
    Rng rng(1);
    Tensor x = randn({3, 4}, rng);
    Parameter w{"w", randn({2, 4}, rng), true};
    w.value.set_requires_grad(true);
    Parameter b{"b", Tensor::zeros({2}), true};
    b.value.set_requires_grad(true);

    Tape tape;
    Tensor y = linear(x, w.value, b.value, &tape);
    // reduce to scalar via a sum expressed as scale+add chain
    Tensor flat = flatten(y, &tape);
    // sum = ones . flat via linear with unit weight row
    Tensor ones_w = Tensor::full({1, flat.dim(1)}, 1.0);
    Tensor zero_b = Tensor::zeros({1});
    Tensor rows = linear(flat, ones_w, zero_b, &tape);  // [3,1]
    Tensor ones_w2 = Tensor::full({1, 1}, 1.0);
    Tensor total3 = linear(rows.reshaped({1, 3}), Tensor::full({1, 3}, 1.0), zero_b, &tape);

    Tensor loss = total3.reshaped({1});
    loss.set_requires_grad(true);
    std::vector<Parameter*> params{&w, &b};
    auto grads = backward(tape, loss, params);

    for (int o = 0; o < 2; ++o) {
        for (int c = 0; c < 4; ++c) {
            double want = 0.0;
            for (int r = 0; r < 3; ++r) want += x.data()[static_cast<std::size_t>(r * 4 + c)];
            CHECK(rel_err(grads.at("w")[static_cast<std::size_t>(o * 4 + c)], want) < 1e-12);
        }
    }
    CHECK(grads.at("b")[0] == doctest::Approx(3.0));
}

TEST_CASE("loss independent of a parameter gives zero grad and unreached") {
    Rng rng(2);
    Tensor x = randn({2, 3}, rng);
    Parameter used{"used", randn({2, 3}, rng), true};
    used.value.set_requires_grad(true);
    Parameter unused{"unused", randn({5}, rng), true};
    unused.value.set_requires_grad(true);

    Tape tape;
    Tensor y = add(x, used.value, &tape);
    std::vector<std::int64_t> labels = {0, 1};
    Tensor loss = softmax_cross_entropy(y.reshaped({2, 3}), labels, &tape);
    std::vector<Parameter*> params{&used, &unused};
    auto grads = backward(tape, loss, params);

    CHECK(grads.reached.count("used") == 1);
    CHECK(grads.reached.count("unused") == 0);
    for (double g : grads.at("unused")) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar loss and empty tape") {
    Tape tape;
    Tensor v = Tensor::full({2}, 1.0);
    std::vector<Parameter*> none;
    CHECK_THROWS(backward(tape, v, none));  // empty tape
    tape.record("noop", [] {});
    CHECK_THROWS(backward(tape, v, none));  // non-scalar
}

TEST_CASE("every primitive matches the finite-difference oracle") {
    // A small net exercising conv2d, depthwise, batch_norm, relu6, add,
    // global_avg_pool, linear and softmax-cross-entropy end to end.
    constexpr double kEps = 1e-5;
    constexpr double kTol = 1e-4;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const int B = 2, C = 2, H = 5, W = 5, Co = 3, K = 2;
        Tensor x = randn({B, C, H, W}, rng, 0.5);
        std::vector<std::int64_t> labels;
        for (int b = 0; b < B; ++b)
            labels.push_back(static_cast<std::int64_t>(rng.next_below(K)));

        Parameter cw{"conv.w", randn({Co, C, 3, 3}, rng, 0.4), true};
        Parameter cb{"conv.b", randn({Co}, rng, 0.1), true};
        Parameter dw{"dw.w", randn({Co, 1, 3, 3}, rng, 0.4), true};
        Parameter gamma{"bn.g", Tensor::full({Co}, 1.0), true};
        Parameter beta{"bn.b", randn({Co}, rng, 0.1), true};
        Parameter rm{"bn.rm", Tensor::zeros({Co}), false};
        Parameter rv{"bn.rv", Tensor::full({Co}, 1.0), false};
        Parameter lw{"lin.w", randn({K, Co}, rng, 0.5), true};
        Parameter lb{"lin.b", randn({K}, rng, 0.1), true};
        std::vector<Parameter*> params{&cw, &cb, &dw, &gamma, &beta, &lw, &lb};
        for (auto* p : params) p->value.set_requires_grad(true);

        const int stride = seed % 2 == 0 ? 1 : 2;
        auto run = [&](Tape* tape) {
            BatchNormOpts bo;
            bo.update_running_stats = false;  // keep f side-effect free
            Tensor h = conv2d(x, cw.value, &cb.value, stride, tape);
            h = batch_norm(h, gamma.value, beta.value, rm.value, rv.value, bo, tape);
            h = relu6(h, tape);
            Tensor d = depthwise_conv2d(h, dw.value, 1, tape);
            h = add(h, d, tape);
            h = global_avg_pool(h, tape);
            h = linear(h, lw.value, lb.value, tape);
            return softmax_cross_entropy(h, labels, tape);
        };

        for (auto* p : params) p->value.drop_grad();
        Tape tape;
        Tensor loss = run(&tape);
        auto grads = backward(tape, loss, params);

        auto theta0 = fdnas::testing::flatten_params(params);
        auto f = [&](std::span<const double> theta) {
            fdnas::testing::unflatten_params(theta, params);
            const double v = run(nullptr).item();
            fdnas::testing::unflatten_params(theta0, params);
            return v;
        };
        auto fd = finite_diff_grad(f, theta0, kEps);

        std::vector<double> analytic;
        for (auto* p : params) {
            const auto& g = grads.at(p->id);
            analytic.insert(analytic.end(), g.begin(), g.end());
        }
        REQUIRE(analytic.size() == fd.size());
        CHECK(max_rel_err(analytic, fd) < kTol);
    }
}

TEST_CASE("backward is deterministic across replays") {
    Rng rng(9);
    Tensor x = randn({2, 2, 5, 5}, rng, 0.5);
    Parameter cw{"w", randn({2, 2, 3, 3}, rng, 0.4), true};
    cw.value.set_requires_grad(true);
    Parameter lw{"lw", randn({3, 2}, rng, 0.5), true};
    lw.value.set_requires_grad(true);
    Parameter lb{"lb", Tensor::zeros({3}), true};
    lb.value.set_requires_grad(true);
    std::vector<std::int64_t> labels = {0, 2};
    std::vector<Parameter*> params{&cw, &lw, &lb};

    auto run = [&]() {
        for (auto* p : params) p->value.drop_grad();
        Tape tape;
        Tensor h = conv2d(x, cw.value, nullptr, 1, &tape);
        h = relu6(h, &tape);
        h = global_avg_pool(h, &tape);
        h = linear(h, lw.value, lb.value, &tape);
        Tensor loss = softmax_cross_entropy(h, labels, &tape);
        return backward(tape, loss, params);
    };
    auto g1 = run();
    auto g2 = run();
    for (auto* p : params) {
        const auto& a = g1.at(p->id);
        const auto& b = g2.at(p->id);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("softmax cross entropy is nonnegative, zero iff one-hot-correct") {
    std::vector<std::int64_t> labels = {1};
    Tensor good = Tensor::from_data({1, 3}, {-100.0, 100.0, -100.0});
    CHECK(softmax_cross_entropy(good, labels, nullptr).item() ==
          doctest::Approx(0.0).epsilon(1e-12));
    Tensor uniform = Tensor::zeros({1, 3});
    CHECK(softmax_cross_entropy(uniform, labels, nullptr).item() ==
          doctest::Approx(std::log(3.0)));
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        Tensor logits = randn({1, 3}, rng, 2.0);
        CHECK(softmax_cross_entropy(logits, labels, nullptr).item() >= 0.0);
    }
}

TEST_CASE("finite_diff_grad basics") {
    auto sq = [](std::span<const double> t) { return t[0] * t[0]; };
    std::vector<double> theta = {3.0};
    auto g = finite_diff_grad(sq, theta, 1e-5);
    CHECK(std::abs(g[0] - 6.0) < 1e-6);

    auto constant = [](std::span<const double>) { return 2.5; };
    std::vector<double> t4 = {1.0, -2.0, 0.5, 9.0};
    for (double gi : finite_diff_grad(constant, t4, 1e-5)) CHECK(gi == 0.0);

    auto bad = [](std::span<const double>) { return std::nan(""); };
    CHECK_THROWS(finite_diff_grad(bad, theta, 1e-5));
}

TEST_CASE("batch_norm eval mode uses running statistics") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor gamma = Tensor::full({1}, 2.0);
    Tensor beta = Tensor::full({1}, 0.5);
    Tensor rm = Tensor::full({1}, 1.0);
    Tensor rv = Tensor::full({1}, 4.0);
    BatchNormOpts bo;
    bo.training = false;
    Tensor y = batch_norm(x, gamma, beta, rm, rv, bo, nullptr);
    // (x - 1)/sqrt(4 + eps) * 2 + 0.5
    CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(y.data()[3] == doctest::Approx(3.5).epsilon(1e-4));
}

TEST_CASE("batch_norm training mode updates running stats only when asked") {
    Rng rng(6);
    Tensor x = randn({4, 2, 3, 3}, rng);
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    Tensor rm = Tensor::zeros({2});
    Tensor rv = Tensor::full({2}, 1.0);

    BatchNormOpts frozen;
    frozen.update_running_stats = false;
    (void)batch_norm(x, gamma, beta, rm, rv, frozen, nullptr);
    CHECK(rm.data()[0] == 0.0);
    CHECK(rv.data()[0] == 1.0);

    BatchNormOpts on;
    (void)batch_norm(x, gamma, beta, rm, rv, on, nullptr);
    CHECK(rm.data()[0] != 0.0);
    CHECK(rv.data()[0] != 1.0);
}

#include <doctest.h>

#include <cmath>

#include "sdgzsl/adam.hpp"
#include "sdgzsl/tensor.hpp"

using namespace sdgzsl;

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    auto w = Tensor<float>::param({3}, {1.0f, -2.0f, 0.5f});
    AdamOptimizer<float> opt({{"w", w}}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    {
        Tape<float> tape;
        auto loss = scale(reduce_sum(w), 0.0f); // gradient is exactly zero
        tape.backward(loss);
        tape.reset();
    }
    opt.step();
    CHECK(w.val()[0] == 1.0f);
    CHECK(w.val()[1] == -2.0f);
    CHECK(w.val()[2] == 0.5f);
    // No gradient at all: skipped entirely.
    opt.zero_grad();
    opt.step();
    CHECK(w.val()[0] == 1.0f);
}

TEST_CASE("adam: first bias-corrected step moves by roughly lr in the gradient direction") {
    auto w = Tensor<float>::param({1}, {0.0f});
    AdamOptimizer<float> opt({{"w", w}}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    {
        Tape<float> tape;
        tape.backward(reduce_sum(w)); // d/dw = 1
        tape.reset();
    }
    opt.step();
    CHECK(w.val()[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: a short optimization run is bitwise repeatable") {
    auto run = [] {
        Rng rng(21, "adam");
        std::vector<float> init(8);
        for (auto& v : init) v = static_cast<float>(rng.normal());
        auto w = Tensor<float>::param({8}, init);
        AdamOptimizer<float> opt({{"w", w}}, AdamConfig{0.05, 0.9, 0.999, 1e-8});
        for (int step = 0; step < 50; ++step) {
            Tape<float> tape;
            auto loss = reduce_sum(square(add_const(w, -1.0f)));
            tape.backward(loss);
            opt.step();
            opt.zero_grad();
            tape.reset();
        }
        return w.val();
    };
    CHECK(run() == run());
}

TEST_CASE("adam: converges on a quadratic") {
    auto w = Tensor<float>::param({4}, {5.0f, -3.0f, 2.0f, 0.0f});
    AdamOptimizer<float> opt({{"w", w}}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    for (int step = 0; step < 400; ++step) {
        Tape<float> tape;
        auto loss = reduce_sum(square(add_const(w, -1.0f)));
        tape.backward(loss);
        opt.step();
        opt.zero_grad();
        tape.reset();
    }
    for (float v : w.val()) CHECK(v == doctest::Approx(1.0f).epsilon(1e-2));
}

TEST_CASE("adam: NaN gradient raises a numeric error naming the group") {
    auto w = Tensor<float>::param({2}, {0.0f, 0.0f});
    AdamOptimizer<float> opt({{"encoder.W", w}}, AdamConfig{});
    w.data_ptr()->grad = {1.0f, std::nanf("")};
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("encoder.W"), NumericError);
}

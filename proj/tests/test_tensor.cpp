#include <doctest.h>

#include <cmath>

#include "sdgzsl/gradcheck.hpp"
#include "sdgzsl/tensor.hpp"

using namespace sdgzsl;

namespace {

Tensor<double> random_param(Shape shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor<double>::param(std::move(shape), std::move(v));
}

} // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
    auto eye = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor<float>::from({2, 2}, {3, -1, 2, 5});
    auto prod = matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod.val()[i] == m.val()[i]);

    auto a = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<float>::from({2, 1}, {1, 1});
    auto c = matmul(a, b);
    CHECK(c.val()[0] == 3.0f);
    CHECK(c.val()[1] == 7.0f);
}

TEST_CASE("matmul: shape error names both operands") {
    auto a = Tensor<float>::zeros({3, 4});
    auto b = Tensor<float>::zeros({5, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[3x4]"), ShapeError);
}

TEST_CASE("matmul: gradient matches central differences") {
    Rng rng(11, "t");
    auto a = random_param({3, 4}, rng);
    auto b = random_param({4, 2}, rng);
    auto report = grad_check([&] { return reduce_sum(square(matmul(a, b))); },
                             {{"a", a}, {"b", b}}, 1e-5, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("pointwise: fixed values") {
    auto x = Tensor<double>::from({3}, {0.0, 0.0, -1.0});
    CHECK(sigmoid(x).val()[0] == 0.5);
    CHECK(softplus(x).val()[1] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(leaky_relu(x, 0.2).val()[2] == doctest::Approx(-0.2));
}

TEST_CASE("pointwise: derivatives pass a finite-difference sweep") {
    Rng rng(13, "t");
    auto x = random_param({4, 5}, rng);
    auto checks = {
        std::function<Tensor<double>()>([&] { return reduce_sum(square(sigmoid(x))); }),
        std::function<Tensor<double>()>([&] { return reduce_sum(square(softplus(x))); }),
        std::function<Tensor<double>()>([&] { return reduce_sum(square(leaky_relu(x, 0.2))); }),
        std::function<Tensor<double>()>([&] { return reduce_sum(exp(scale(x, 0.3))); }),
        std::function<Tensor<double>()>([&] { return reduce_sum(log(add_const(square(x), 1.0))); }),
    };
    for (const auto& fn : checks) {
        auto report = grad_check(fn, {{"x", x}}, 1e-6, 1e-6);
        CHECK(report.pass);
    }
}

TEST_CASE("log of a non-positive input raises a numeric error naming the op") {
    auto x = Tensor<float>::from({2}, {1.0f, -1.0f});
    CHECK_THROWS_WITH_AS(log(x), doctest::Contains("log"), NumericError);
}

TEST_CASE("concat/slice: round trip and shapes") {
    // l=2, m=3, batch 4 -> [4x5]
    Rng rng(3, "t");
    auto a = random_param({4, 2}, rng);
    auto b = random_param({4, 3}, rng);
    auto h = concat_cols(a, b);
    CHECK(h.shape() == Shape{4, 5});
    auto a2 = slice_cols(h, 0, 2);
    auto b2 = slice_cols(h, 2, 5);
    CHECK(a2.val() == a.val());
    CHECK(b2.val() == b.val());
}

TEST_CASE("concat/slice: property round trip on random shapes") {
    Rng rng(17, "t");
    for (int iter = 0; iter < 20; ++iter) {
        const std::size_t n = 1 + rng.uniform_below(6);
        const std::size_t p = 1 + rng.uniform_below(5);
        const std::size_t q = 1 + rng.uniform_below(5);
        auto a = random_param({n, p}, rng);
        auto b = random_param({n, q}, rng);
        auto h = concat_cols(a, b);
        CHECK(slice_cols(h, 0, p).val() == a.val());
        CHECK(slice_cols(h, p, p + q).val() == b.val());
    }
}

TEST_CASE("slice: gradient support stays on the sliced columns") {
    Rng rng(5, "t");
    auto h = random_param({4, 5}, rng);
    Tape<double> tape;
    auto loss = reduce_sum(slice_cols(h, 0, 2));
    tape.backward(loss);
    const auto& g = h.grad();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(g[i * 5 + j] == (j < 2 ? 1.0 : 0.0));
}

TEST_CASE("slice: out-of-range raises a bounds error") {
    auto x = Tensor<float>::zeros({2, 3});
    CHECK_THROWS_AS(slice_cols(x, 1, 7), ShapeError);
    CHECK_THROWS_AS(slice_cols(x, 2, 2), ShapeError);
}

TEST_CASE("reduce: mean of [1,2,3,4] is 2.5 and axis variants check out") {
    auto x = Tensor<float>::from({4}, {1, 2, 3, 4});
    CHECK(reduce_mean(x).item() == doctest::Approx(2.5));
    auto m = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
    CHECK(reduce_sum(m, 0).val()[0] == doctest::Approx(4));
    CHECK(reduce_sum(m, 0).val()[1] == doctest::Approx(6));
    CHECK(reduce_sum(m, 1).val()[0] == doctest::Approx(3));
    CHECK(reduce_sum(m, 1).val()[1] == doctest::Approx(7));
}

TEST_CASE("dropout: rate 0 is the identity, eval mode is the identity") {
    Rng rng(1, "drop");
    auto x = Tensor<float>::full({10, 10}, 1.0f);
    auto y = dropout(x, 0.0, rng, true);
    CHECK(y.val() == x.val());
    auto z = dropout(x, 0.5, rng, false);
    CHECK(z.val() == x.val());
}

TEST_CASE("dropout: rate 0.5 keeps the expectation near one") {
    Rng rng(2, "drop");
    auto x = Tensor<float>::full({100000}, 1.0f);
    auto y = dropout(x, 0.5, rng, true);
    double sum = 0;
    for (float v : y.val()) sum += v;
    CHECK(std::abs(sum / 100000.0 - 1.0) < 0.02);
}

TEST_CASE("dropout: rate >= 1 is a config error") {
    Rng rng(1, "drop");
    auto x = Tensor<float>::zeros({2});
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ConfigError);
}

TEST_CASE("backward: linear case reproduces the input structure") {
    // loss = sum(W x) -> dW[i][j] = x[j]
    auto w = Tensor<double>::param({2, 3}, {0, 0, 0, 0, 0, 0});
    auto x = Tensor<double>::from({3, 1}, {2.0, -1.0, 0.5});
    Tape<double> tape;
    auto loss = reduce_sum(matmul(w, x));
    tape.backward(loss);
    const auto& g = w.grad();
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(g[i * 3 + 0] == doctest::Approx(2.0));
        CHECK(g[i * 3 + 1] == doctest::Approx(-1.0));
        CHECK(g[i * 3 + 2] == doctest::Approx(0.5));
    }
    CHECK_FALSE(x.has_grad()); // constant input stays grad-free
}

TEST_CASE("backward: contract violations") {
    auto w = Tensor<float>::param({2}, {1, 2});
    {
        Tape<float> tape;
        auto y = scale(w, 2.0f);
        CHECK_THROWS_AS(tape.backward(y), ContractError); // non-scalar loss
        auto loss = reduce_sum(y);
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), ContractError); // repeated without reset
        tape.reset();
    }
    // Loss not on any tape.
    auto c = reduce_sum(w.detach());
    CHECK_THROWS_AS(backward(c), ContractError);
}

TEST_CASE("tape: ops outside an active tape stay untracked") {
    auto w = Tensor<float>::param({2}, {1, 2});
    auto y = scale(w, 3.0f); // no tape: pure forward
    CHECK_FALSE(y.data_ptr()->tape);
    Tape<float> tape;
    auto z = scale(w, 3.0f);
    CHECK(z.data_ptr()->tape == &tape);
    CHECK(tape.size() == 1);
    tape.reset();
}

TEST_CASE("gather/repeat/tile/pick/log_softmax: gradients pass finite differences") {
    Rng rng(23, "t");
    auto x = random_param({4, 3}, rng);
    std::vector<std::size_t> idx{2, 0, 0, 3, 1};
    std::vector<std::size_t> picks{0, 2, 1, 0};
    auto checks = {
        std::function<Tensor<double>()>(
            [&] { return reduce_sum(square(gather_rows(x, idx))); }),
        std::function<Tensor<double>()>([&] { return reduce_sum(square(repeat_rows(x, 3))); }),
        std::function<Tensor<double>()>([&] { return reduce_sum(square(tile_rows(x, 2))); }),
        std::function<Tensor<double>()>(
            [&] { return reduce_sum(square(pick_per_row(x, picks))); }),
        std::function<Tensor<double>()>(
            [&] { return reduce_sum(square(log_softmax_rows(scale(x, 2.0)))); }),
        std::function<Tensor<double>()>([&] {
            auto bias = Tensor<double>::from({3}, {0.1, -0.2, 0.3});
            return reduce_mean(square(add_rowvec(gather_rows(x, idx), bias)));
        }),
    };
    for (const auto& fn : checks) {
        auto report = grad_check(fn, {{"x", x}}, 1e-6, 1e-6);
        CHECK(report.pass);
    }
}

TEST_CASE("non-finite forward values raise numeric errors") {
    auto x = Tensor<float>::from({1}, {90.0f});
    CHECK_THROWS_AS(exp(square(x)), NumericError); // exp(8100) overflows
}

TEST_CASE("clamp: forward range and zero gradient outside") {
    auto x = Tensor<double>::param({3}, {-2.0, 0.5, 2.0});
    Tape<double> tape;
    auto y = clamp(x, 0.0, 1.0);
    CHECK(y.val()[0] == 0.0);
    CHECK(y.val()[1] == 0.5);
    CHECK(y.val()[2] == 1.0);
    tape.backward(reduce_sum(y));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
    tape.reset();
}

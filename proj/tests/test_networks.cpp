#include <doctest.h>

#include <cmath>

#include "sdgzsl/networks.hpp"

using namespace sdgzsl;

namespace {

ModelConfig desk_config() {
    ModelConfig c;
    c.feature_dim = 16;
    c.attr_dim = 6;
    c.latent_dim = 4;
    c.sem_dim = 3;
    c.nuis_dim = 3;
    c.dec_hidden = c.rel_hidden = c.cvae_trunk = c.gen_hidden = 12;
    return c;
}

template <class T>
void zero_params(ModelState<T>& m) {
    for (auto& [name, p] : m.all_params()) std::fill(p.val_mut().begin(), p.val_mut().end(), T{0});
}

const Fwd kEval{false, nullptr};

} // namespace

TEST_CASE("encode_disentangle: shapes and raw-output split") {
    Rng rng(1, "init");
    auto m = init_model<float>(desk_config(), rng);
    std::vector<float> xv(4 * 16);
    Rng data(2, "x");
    for (auto& v : xv) v = static_cast<float>(data.normal());
    auto x = Tensor<float>::from({4, 16}, xv);

    auto h = encode_full(m, x, kEval);
    auto [h_s, h_n] = encode_disentangle(m, x, kEval);
    CHECK(h_s.shape() == Shape{4, 3});
    CHECK(h_n.shape() == Shape{4, 3});
    CHECK(concat_cols(h_s, h_n).val() == h.val());

    CHECK_THROWS_AS(encode_full(m, Tensor<float>::zeros({4, 9}), kEval), ShapeError);
}

TEST_CASE("encode: zero weights give a zero latent") {
    Rng rng(1, "init");
    auto m = init_model<float>(desk_config(), rng);
    zero_params(m);
    auto x = Tensor<float>::full({2, 16}, 3.0f);
    auto h = encode_full(m, x, kEval);
    for (float v : h.val()) CHECK(v == 0.0f);
}

TEST_CASE("encode/decode: identity-initialized overcomplete pair reconstructs") {
    // d=3 embedded in l+m=4, decoder hidden 6 >= 4; positive inputs keep the
    // LeakyReLU transparent, so the round trip is exact in 64-bit mode.
    ModelConfig c;
    c.feature_dim = 3;
    c.attr_dim = 2;
    c.latent_dim = 2;
    c.sem_dim = 2;
    c.nuis_dim = 2;
    c.dec_hidden = 6;
    c.rel_hidden = c.cvae_trunk = c.gen_hidden = 4;
    Rng rng(1, "init");
    auto m = init_model<double>(c, rng);
    zero_params(m);
    auto set_eye = [](Tensor<double>& w) {
        const std::size_t in = w.shape()[0], out = w.shape()[1];
        for (std::size_t i = 0; i < std::min(in, out); ++i) w.val_mut()[i * out + i] = 1.0;
    };
    set_eye(m.enc.fc.weight);
    set_eye(m.dec.fc1.weight);
    set_eye(m.dec.fc2.weight);

    auto x = Tensor<double>::from({2, 3}, {0.3, 0.7, 0.1, 0.9, 0.25, 0.55});
    auto xbar = decode_disentangle(m, encode_full(m, x, kEval), kEval);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(std::abs(xbar.val()[i] - x.val()[i]) < 1e-10);
}

TEST_CASE("reparameterize: affine identity and gradient routing") {
    Rng noise(5, "noise");
    auto mean = Tensor<double>::param({2, 3}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6});
    auto dev = Tensor<double>::param({2, 3}, {1.0, 0.5, 2.0, 0.1, 1.5, 0.7});
    Tape<double> tape;
    auto z = reparameterize(mean, dev, noise);
    tape.backward(reduce_sum(z));
    // d sum(z) / d sigma = eps, and z = mu + sigma .* eps must hold exactly.
    const auto& eps = dev.grad();
    for (std::size_t i = 0; i < z.numel(); ++i) {
        CHECK(z.val()[i] == doctest::Approx(mean.val()[i] + dev.val()[i] * eps[i]).epsilon(1e-12));
        CHECK(mean.grad()[i] == 1.0);
    }
    tape.reset();
}

TEST_CASE("reparameterize: zero eps draw gives z = mu, and sigma <= 0 is rejected") {
    // A zero deviation scale collapses sigma*eps, so z equals mu regardless
    // of the draw. Checked through tiny sigma to stay in the valid domain.
    Rng noise(5, "noise");
    auto mean = Tensor<float>::from({1, 4}, {1, 2, 3, 4});
    auto tiny = Tensor<float>::full({1, 4}, 1e-30f);
    auto z = reparameterize(mean, tiny, noise);
    for (std::size_t i = 0; i < 4; ++i) CHECK(z.val()[i] == doctest::Approx(mean.val()[i]));

    auto bad = Tensor<float>::from({1, 4}, {1, 0, 1, 1});
    CHECK_THROWS_AS(reparameterize(mean, bad, noise), NumericError);
}

TEST_CASE("reparameterize: standard-normal samples have the right moments") {
    Rng noise(7, "noise");
    auto mean = Tensor<double>::zeros({100000, 1});
    auto dev = Tensor<double>::full({100000, 1}, 1.0);
    auto z = reparameterize(mean, dev, noise);
    double sum = 0, sq = 0;
    for (double v : z.val()) {
        sum += v;
        sq += v * v;
    }
    const double m = sum / 100000.0, var = sq / 100000.0 - m * m;
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("relate: score grid shape and range") {
    Rng rng(3, "init");
    auto m = init_model<float>(desk_config(), rng);
    Rng data(4, "x");
    std::vector<float> hv(2 * 3), av(3 * 6);
    for (auto& v : hv) v = static_cast<float>(data.normal());
    for (auto& v : av) v = static_cast<float>(data.uniform());
    auto scores = relate(m, Tensor<float>::from({2, 3}, hv), Tensor<float>::from({3, 6}, av), kEval);
    CHECK(scores.shape() == Shape{2, 3});
    for (float s : scores.val()) {
        CHECK(s > 0.0f);
        CHECK(s < 1.0f);
    }
}

TEST_CASE("discriminate: zero weights score one half everywhere") {
    Rng rng(3, "init");
    auto m = init_model<float>(desk_config(), rng);
    zero_params(m);
    auto h = Tensor<float>::from({5, 6}, std::vector<float>(30, 2.0f));
    auto p = discriminate(m, h);
    CHECK(p.shape() == Shape{5, 1});
    for (float v : p.val()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("generate then encode composes to the latent width") {
    Rng rng(3, "init");
    auto m = init_model<float>(desk_config(), rng);
    Rng data(4, "x");
    std::vector<float> zv(4 * 4), av(4 * 6);
    for (auto& v : zv) v = static_cast<float>(data.normal());
    for (auto& v : av) v = static_cast<float>(data.uniform());
    auto xhat = generate(m, Tensor<float>::from({4, 4}, zv), Tensor<float>::from({4, 6}, av), kEval);
    CHECK(xhat.shape() == Shape{4, 16});
    auto h = encode_full(m, xhat, kEval);
    CHECK(h.shape() == Shape{4, 6});
}

TEST_CASE("cvae_encode: deviation head is strictly positive") {
    Rng rng(9, "init");
    auto m = init_model<float>(desk_config(), rng);
    Rng data(10, "x");
    std::vector<float> xv(8 * 16), av(8 * 6);
    for (auto& v : xv) v = static_cast<float>(5.0 * data.normal());
    for (auto& v : av) v = static_cast<float>(data.uniform());
    auto [mean, dev] =
        cvae_encode(m, Tensor<float>::from({8, 16}, xv), Tensor<float>::from({8, 6}, av), kEval);
    CHECK(mean.shape() == Shape{8, 4});
    CHECK(dev.shape() == Shape{8, 4});
    for (float s : dev.val()) CHECK(s > 0.0f);
}

TEST_CASE("init_model: parameter count matches the closed form") {
    ModelConfig c;
    c.feature_dim = 128;
    c.attr_dim = 16;
    c.latent_dim = 32;
    c.sem_dim = 64;
    c.nuis_dim = 64;
    Rng rng(1, "init");
    auto m = init_model<float>(c, rng);
    std::size_t total = 0;
    for (const auto& [name, p] : m.all_params()) total += p.numel();
    CHECK(total == parameter_count(c));
}

TEST_CASE("init_model: seeded repeatability and explicit l != m") {
    ModelConfig c = desk_config();
    c.sem_dim = 2;
    c.nuis_dim = 5; // asymmetric split is allowed when configured
    Rng r1(42, "init"), r2(42, "init");
    auto a = init_model<float>(c, r1);
    auto b = init_model<float>(c, r2);
    auto pa = a.all_params(), pb = b.all_params();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second.val() == pb[i].second.val());
    CHECK(a.enc.fc.out_dim() == 7);

    ModelConfig bad = desk_config();
    bad.latent_dim = 0;
    Rng r3(1, "init");
    CHECK_THROWS_AS(init_model<float>(bad, r3), ConfigError);
}

TEST_CASE("eval-mode forward is deterministic") {
    Rng rng(3, "init");
    auto m = init_model<float>(desk_config(), rng);
    Rng data(4, "x");
    std::vector<float> xv(4 * 16);
    for (auto& v : xv) v = static_cast<float>(data.normal());
    auto x = Tensor<float>::from({4, 16}, xv);
    auto h1 = encode_full(m, x, kEval);
    auto h2 = encode_full(m, x, kEval);
    CHECK(h1.val() == h2.val());
}

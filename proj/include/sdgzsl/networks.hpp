#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdgzsl/errors.hpp"
#include "sdgzsl/rng.hpp"
#include "sdgzsl/tensor.hpp"

namespace sdgzsl {

// Probability clamp applied to relation / discriminator outputs before any log.
inline constexpr double kProbLo = 1e-6;
inline constexpr double kProbHi = 1.0 - 1e-6;

// Architecture hyper-parameters. feature_dim/attr_dim come from the data;
// hidden widths, activation slope and dropout rate are free knobs and stay
// configuration-surfaced.
struct ModelConfig {
    std::size_t feature_dim = 0; // d: visual feature width
    std::size_t attr_dim = 0;    // k: class attribute width
    std::size_t latent_dim = 32; // z: cVAE latent width
    std::size_t sem_dim = 64;    // l: semantic-consistent slice
    std::size_t nuis_dim = 64;   // m: semantic-unrelated slice

    std::size_t dec_hidden = 2048;  // disentangle decoder hidden width
    std::size_t rel_hidden = 2048;  // relation net hidden width
    std::size_t cvae_trunk = 2048;  // cVAE encoder trunk width (all three layers)
    std::size_t gen_hidden = 2048;  // cVAE decoder hidden width

    double leaky_slope = 0.2;
    double dropout_rate = 0.2;

    std::size_t split_dim() const { return sem_dim + nuis_dim; }

    void validate() const {
        if (feature_dim == 0 || attr_dim == 0 || latent_dim == 0 || sem_dim == 0 || nuis_dim == 0 ||
            dec_hidden == 0 || rel_hidden == 0 || cvae_trunk == 0 || gen_hidden == 0)
            throw ConfigError("model config: all dimensions must be >= 1");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("model config: dropout rate must be in [0, 1)");
    }
};

// Forward-pass context: training toggles dropout, which draws its mask from
// the given stream. Eval mode never touches the rng.
struct Fwd {
    bool training = false;
    Rng* dropout_rng = nullptr;
};

template <class T>
struct Linear {
    Tensor<T> weight; // [in x out]
    Tensor<T> bias;   // [out]

    Tensor<T> operator()(const Tensor<T>& x) const { return add_rowvec(matmul(x, weight), bias); }

    // Forward through value-only copies of the parameters; used where a loss
    // term must not push gradient into this layer.
    Tensor<T> frozen(const Tensor<T>& x) const {
        return add_rowvec(matmul(x, weight.detach()), bias.detach());
    }

    std::size_t in_dim() const { return weight.shape()[0]; }
    std::size_t out_dim() const { return weight.shape()[1]; }
};

namespace detail {

// He-style uniform init scaled by fan-in: W ~ U(-sqrt(6/in), sqrt(6/in)), b = 0.
template <class T>
Linear<T> init_linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::vector<T> w(in * out);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    return Linear<T>{Tensor<T>::param({in, out}, std::move(w)),
                     Tensor<T>::param({out}, std::vector<T>(out, T{0}))};
}

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ModelConfig& cfg, const Fwd& fwd) {
    if (!fwd.training) return x;
    if (!fwd.dropout_rng) throw ContractError("forward: training mode requires a dropout rng");
    return dropout(x, cfg.dropout_rate, *fwd.dropout_rng, true);
}

} // namespace detail

// x -> h = [h_s | h_n]: one FC with LeakyReLU and dropout.
template <class T>
struct DisentangleEncoder {
    Linear<T> fc;
};

// h -> reconstructed feature: FC + LeakyReLU + dropout, then a linear output.
template <class T>
struct DisentangleDecoder {
    Linear<T> fc1, fc2;
};

// [h_s | a] -> compatibility score in (0,1): FC + ReLU, FC + Sigmoid.
template <class T>
struct RelationNet {
    Linear<T> fc1, fc2;
};

// h -> probability the halves are dependent: single FC + Sigmoid.
template <class T>
struct Discriminator {
    Linear<T> fc;
};

// [x | a] -> (mu, sigma): three-FC trunk, then one FC head for the mean and
// an FC + dropout + Softplus head for the (strictly positive) deviation.
template <class T>
struct CvaeEncoder {
    Linear<T> trunk1, trunk2, trunk3;
    Linear<T> mean_head, var_head;
};

// [z | a] -> generated feature: FC + ReLU + dropout, FC + LeakyReLU.
template <class T>
struct CvaeDecoder {
    Linear<T> fc1, fc2;
};

// Every trainable collection of the framework. The discriminator is kept in
// its own optimizer group; everything else updates together.
template <class T>
struct ModelState {
    ModelConfig cfg;
    DisentangleEncoder<T> enc;
    DisentangleDecoder<T> dec;
    RelationNet<T> rel;
    Discriminator<T> dis;
    CvaeEncoder<T> cvae_enc;
    CvaeDecoder<T> cvae_dec;

    // Registry order is fixed; checkpoints and optimizers rely on it.
    std::vector<std::pair<std::string, Tensor<T>>> main_params() const {
        return {
            {"enc.fc.W", enc.fc.weight},         {"enc.fc.b", enc.fc.bias},
            {"dec.fc1.W", dec.fc1.weight},       {"dec.fc1.b", dec.fc1.bias},
            {"dec.fc2.W", dec.fc2.weight},       {"dec.fc2.b", dec.fc2.bias},
            {"rel.fc1.W", rel.fc1.weight},       {"rel.fc1.b", rel.fc1.bias},
            {"rel.fc2.W", rel.fc2.weight},       {"rel.fc2.b", rel.fc2.bias},
            {"cvae_enc.t1.W", cvae_enc.trunk1.weight}, {"cvae_enc.t1.b", cvae_enc.trunk1.bias},
            {"cvae_enc.t2.W", cvae_enc.trunk2.weight}, {"cvae_enc.t2.b", cvae_enc.trunk2.bias},
            {"cvae_enc.t3.W", cvae_enc.trunk3.weight}, {"cvae_enc.t3.b", cvae_enc.trunk3.bias},
            {"cvae_enc.mean.W", cvae_enc.mean_head.weight}, {"cvae_enc.mean.b", cvae_enc.mean_head.bias},
            {"cvae_enc.var.W", cvae_enc.var_head.weight},   {"cvae_enc.var.b", cvae_enc.var_head.bias},
            {"cvae_dec.fc1.W", cvae_dec.fc1.weight}, {"cvae_dec.fc1.b", cvae_dec.fc1.bias},
            {"cvae_dec.fc2.W", cvae_dec.fc2.weight}, {"cvae_dec.fc2.b", cvae_dec.fc2.bias},
        };
    }
    std::vector<std::pair<std::string, Tensor<T>>> dis_params() const {
        return {{"dis.fc.W", dis.fc.weight}, {"dis.fc.b", dis.fc.bias}};
    }
    std::vector<std::pair<std::string, Tensor<T>>> all_params() const {
        auto v = main_params();
        for (auto& p : dis_params()) v.push_back(p);
        return v;
    }
};

// Closed-form trainable-scalar count for a config; guards drift between the
// declared architecture and what init_model actually builds.
inline std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t lm = c.split_dim();
    auto fc = [](std::size_t in, std::size_t out) { return in * out + out; };
    std::size_t n = 0;
    n += fc(c.feature_dim, lm);                                   // encoder
    n += fc(lm, c.dec_hidden) + fc(c.dec_hidden, c.feature_dim);  // decoder
    n += fc(c.sem_dim + c.attr_dim, c.rel_hidden) + fc(c.rel_hidden, 1);
    n += fc(lm, 1);                                               // discriminator
    n += fc(c.feature_dim + c.attr_dim, c.cvae_trunk) + fc(c.cvae_trunk, c.cvae_trunk) +
         fc(c.cvae_trunk, c.cvae_trunk) + 2 * fc(c.cvae_trunk, c.latent_dim);
    n += fc(c.latent_dim + c.attr_dim, c.gen_hidden) + fc(c.gen_hidden, c.feature_dim);
    return n;
}

// Initialization draws from the "init" stream in a fixed order (encoder,
// decoder, relation, discriminator, cVAE encoder, cVAE decoder), so a seed
// pins every weight.
template <class T>
ModelState<T> init_model(const ModelConfig& cfg, Rng& init_rng) {
    cfg.validate();
    ModelState<T> m;
    m.cfg = cfg;
    const std::size_t lm = cfg.split_dim();
    m.enc.fc = detail::init_linear<T>(cfg.feature_dim, lm, init_rng);
    m.dec.fc1 = detail::init_linear<T>(lm, cfg.dec_hidden, init_rng);
    m.dec.fc2 = detail::init_linear<T>(cfg.dec_hidden, cfg.feature_dim, init_rng);
    m.rel.fc1 = detail::init_linear<T>(cfg.sem_dim + cfg.attr_dim, cfg.rel_hidden, init_rng);
    m.rel.fc2 = detail::init_linear<T>(cfg.rel_hidden, 1, init_rng);
    m.dis.fc = detail::init_linear<T>(lm, 1, init_rng);
    m.cvae_enc.trunk1 = detail::init_linear<T>(cfg.feature_dim + cfg.attr_dim, cfg.cvae_trunk, init_rng);
    m.cvae_enc.trunk2 = detail::init_linear<T>(cfg.cvae_trunk, cfg.cvae_trunk, init_rng);
    m.cvae_enc.trunk3 = detail::init_linear<T>(cfg.cvae_trunk, cfg.cvae_trunk, init_rng);
    m.cvae_enc.mean_head = detail::init_linear<T>(cfg.cvae_trunk, cfg.latent_dim, init_rng);
    m.cvae_enc.var_head = detail::init_linear<T>(cfg.cvae_trunk, cfg.latent_dim, init_rng);
    m.cvae_dec.fc1 = detail::init_linear<T>(cfg.latent_dim + cfg.attr_dim, cfg.gen_hidden, init_rng);
    m.cvae_dec.fc2 = detail::init_linear<T>(cfg.gen_hidden, cfg.feature_dim, init_rng);
    return m;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

// Full latent h; split via encode_disentangle when the halves are needed.
template <class T>
Tensor<T> encode_full(const ModelState<T>& m, const Tensor<T>& x, const Fwd& fwd) {
    if (x.cols() != m.cfg.feature_dim)
        throw ShapeError("encode: feature width " + shape_str(x.shape()) + " does not match d=" +
                         std::to_string(m.cfg.feature_dim));
    Tensor<T> h = leaky_relu(m.enc.fc(x), static_cast<T>(m.cfg.leaky_slope));
    return detail::maybe_dropout(h, m.cfg, fwd);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_latent(const ModelState<T>& m, const Tensor<T>& h) {
    return {slice_cols(h, 0, m.cfg.sem_dim), slice_cols(h, m.cfg.sem_dim, m.cfg.split_dim())};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> encode_disentangle(const ModelState<T>& m, const Tensor<T>& x,
                                                   const Fwd& fwd) {
    return split_latent(m, encode_full(m, x, fwd));
}

template <class T>
Tensor<T> decode_disentangle(const ModelState<T>& m, const Tensor<T>& h, const Fwd& fwd) {
    Tensor<T> a = leaky_relu(m.dec.fc1(h), static_cast<T>(m.cfg.leaky_slope));
    a = detail::maybe_dropout(a, m.cfg, fwd);
    return m.dec.fc2(a);
}

template <class T>
Tensor<T> decode_disentangle(const ModelState<T>& m, const Tensor<T>& h_s, const Tensor<T>& h_n,
                             const Fwd& fwd) {
    return decode_disentangle(m, concat_cols(h_s, h_n), fwd);
}

// All pairwise compatibility scores between B representations and N_c
// attribute rows, as a [B x N_c] grid in (0,1).
template <class T>
Tensor<T> relate(const ModelState<T>& m, const Tensor<T>& h_s, const Tensor<T>& attr_set,
                 const Fwd& fwd) {
    (void)fwd; // no dropout in the relation net
    if (h_s.cols() != m.cfg.sem_dim)
        throw ShapeError("relate: representation width " + shape_str(h_s.shape()) +
                         " does not match l=" + std::to_string(m.cfg.sem_dim));
    if (attr_set.cols() != m.cfg.attr_dim)
        throw ShapeError("relate: attribute width " + shape_str(attr_set.shape()) +
                         " does not match k=" + std::to_string(m.cfg.attr_dim));
    const std::size_t b = h_s.rows(), nc = attr_set.rows();
    Tensor<T> pairs = concat_cols(repeat_rows(h_s, nc), tile_rows(attr_set, b));
    Tensor<T> s = relu(m.rel.fc1(pairs));
    s = sigmoid(m.rel.fc2(s));
    s = clamp(s, static_cast<T>(kProbLo), static_cast<T>(kProbHi));
    return reshape(s, {b, nc});
}

// Probability in [kProbLo, kProbHi] that h carries dependent halves.
// frozen=true runs through detached weights so no gradient reaches the
// discriminator (the generator-side total-correlation term needs this).
template <class T>
Tensor<T> discriminate(const ModelState<T>& m, const Tensor<T>& h, bool frozen = false) {
    if (h.cols() != m.cfg.split_dim())
        throw ShapeError("discriminate: latent width " + shape_str(h.shape()) +
                         " does not match l+m=" + std::to_string(m.cfg.split_dim()));
    Tensor<T> t = frozen ? m.dis.fc.frozen(h) : m.dis.fc(h);
    return clamp(sigmoid(t), static_cast<T>(kProbLo), static_cast<T>(kProbHi));
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> cvae_encode(const ModelState<T>& m, const Tensor<T>& x,
                                            const Tensor<T>& attrs, const Fwd& fwd) {
    const T slope = static_cast<T>(m.cfg.leaky_slope);
    Tensor<T> t = leaky_relu(m.cvae_enc.trunk1(concat_cols(x, attrs)), slope);
    t = detail::maybe_dropout(m.cvae_enc.trunk2(t), m.cfg, fwd);
    t = m.cvae_enc.trunk3(leaky_relu(t, slope));
    Tensor<T> mean = m.cvae_enc.mean_head(t);
    Tensor<T> dev = softplus(detail::maybe_dropout(m.cvae_enc.var_head(t), m.cfg, fwd));
    return {mean, dev};
}

// z = mu + sigma .* eps with eps ~ N(0, I) from the noise stream; gradient
// flows through mu and sigma only.
template <class T>
Tensor<T> reparameterize(const Tensor<T>& mean, const Tensor<T>& dev, Rng& noise_rng) {
    if (mean.shape() != dev.shape())
        throw ShapeError("reparameterize: mean " + shape_str(mean.shape()) + " vs sigma " +
                         shape_str(dev.shape()));
    for (T s : dev.val())
        if (!(s > T{0})) throw NumericError("reparameterize: sigma must be strictly positive");
    std::vector<T> e(mean.numel());
    for (auto& v : e) v = static_cast<T>(noise_rng.normal());
    Tensor<T> eps = Tensor<T>::from(mean.shape(), std::move(e));
    return add(mean, mul(dev, eps));
}

template <class T>
Tensor<T> generate(const ModelState<T>& m, const Tensor<T>& z, const Tensor<T>& attrs,
                   const Fwd& fwd) {
    if (z.cols() != m.cfg.latent_dim)
        throw ShapeError("generate: latent width " + shape_str(z.shape()) + " does not match z=" +
                         std::to_string(m.cfg.latent_dim));
    Tensor<T> t = relu(m.cvae_dec.fc1(concat_cols(z, attrs)));
    t = detail::maybe_dropout(t, m.cfg, fwd);
    return leaky_relu(m.cvae_dec.fc2(t), static_cast<T>(m.cfg.leaky_slope));
}

// Deep value copy (fresh parameter tensors), e.g. for snapshot diffing.
template <class T>
ModelState<T> clone_model(const ModelState<T>& m) {
    ModelState<T> c;
    c.cfg = m.cfg;
    auto cp = [](const Linear<T>& l) {
        return Linear<T>{Tensor<T>::param(l.weight.shape(), l.weight.val()),
                         Tensor<T>::param(l.bias.shape(), l.bias.val())};
    };
    c.enc.fc = cp(m.enc.fc);
    c.dec.fc1 = cp(m.dec.fc1);
    c.dec.fc2 = cp(m.dec.fc2);
    c.rel.fc1 = cp(m.rel.fc1);
    c.rel.fc2 = cp(m.rel.fc2);
    c.dis.fc = cp(m.dis.fc);
    c.cvae_enc.trunk1 = cp(m.cvae_enc.trunk1);
    c.cvae_enc.trunk2 = cp(m.cvae_enc.trunk2);
    c.cvae_enc.trunk3 = cp(m.cvae_enc.trunk3);
    c.cvae_enc.mean_head = cp(m.cvae_enc.mean_head);
    c.cvae_enc.var_head = cp(m.cvae_enc.var_head);
    c.cvae_dec.fc1 = cp(m.cvae_dec.fc1);
    c.cvae_dec.fc2 = cp(m.cvae_dec.fc2);
    return c;
}

// Cast parameters to another scalar type (float model -> double checks).
template <class To, class From>
ModelState<To> cast_model(const ModelState<From>& m) {
    ModelState<To> c;
    c.cfg = m.cfg;
    auto cp = [](const Linear<From>& l) {
        std::vector<To> w(l.weight.val().begin(), l.weight.val().end());
        std::vector<To> b(l.bias.val().begin(), l.bias.val().end());
        return Linear<To>{Tensor<To>::param(l.weight.shape(), std::move(w)),
                          Tensor<To>::param(l.bias.shape(), std::move(b))};
    };
    c.enc.fc = cp(m.enc.fc);
    c.dec.fc1 = cp(m.dec.fc1);
    c.dec.fc2 = cp(m.dec.fc2);
    c.rel.fc1 = cp(m.rel.fc1);
    c.rel.fc2 = cp(m.rel.fc2);
    c.dis.fc = cp(m.dis.fc);
    c.cvae_enc.trunk1 = cp(m.cvae_enc.trunk1);
    c.cvae_enc.trunk2 = cp(m.cvae_enc.trunk2);
    c.cvae_enc.trunk3 = cp(m.cvae_enc.trunk3);
    c.cvae_enc.mean_head = cp(m.cvae_enc.mean_head);
    c.cvae_enc.var_head = cp(m.cvae_enc.var_head);
    c.cvae_dec.fc1 = cp(m.cvae_dec.fc1);
    c.cvae_dec.fc2 = cp(m.cvae_dec.fc2);
    return c;
}

} // namespace sdgzsl

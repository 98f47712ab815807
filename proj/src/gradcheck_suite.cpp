#include "sdgzsl/gradcheck_suite.hpp"

#include "sdgzsl/networks.hpp"
#include "sdgzsl/objectives.hpp"
#include "sdgzsl/trainer.hpp"

namespace sdgzsl {

namespace {

using Params = std::vector<std::pair<std::string, Tensor<double>>>;

Params select(const ModelState<double>& m, std::initializer_list<const char*> prefixes) {
    Params out;
    for (const auto& [name, p] : m.all_params())
        for (const char* prefix : prefixes)
            if (name.rfind(prefix, 0) == 0) {
                out.emplace_back(name, p);
                break;
            }
    return out;
}

} // namespace

GradSuiteResult run_grad_suite(const GradSuiteConfig& cfg) {
    ModelConfig mc;
    mc.feature_dim = cfg.feature_dim;
    mc.attr_dim = cfg.attr_dim;
    mc.latent_dim = cfg.latent_dim;
    mc.sem_dim = cfg.sem_dim;
    mc.nuis_dim = cfg.nuis_dim;
    mc.dec_hidden = mc.rel_hidden = mc.cvae_trunk = mc.gen_hidden = cfg.hidden;

    Rng init_rng(cfg.seed, "gradcheck-init");
    ModelState<double> model = init_model<double>(mc, init_rng);

    // Random batch with labels cycling through n_classes attribute rows.
    Rng data_rng(cfg.seed, "gradcheck-data");
    std::vector<double> xv(cfg.batch * cfg.feature_dim);
    for (auto& v : xv) v = cfg.input_scale * data_rng.normal();
    Tensor<double> x = Tensor<double>::from({cfg.batch, cfg.feature_dim}, std::move(xv));

    std::vector<double> attr_table(cfg.n_classes * cfg.attr_dim);
    for (auto& v : attr_table) v = data_rng.uniform();
    std::vector<std::int64_t> labels(cfg.batch), labels_unique;
    std::vector<double> attrs(cfg.batch * cfg.attr_dim);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
        const std::size_t c = i % cfg.n_classes;
        labels[i] = static_cast<std::int64_t>(c);
        for (std::size_t j = 0; j < cfg.attr_dim; ++j)
            attrs[i * cfg.attr_dim + j] = attr_table[c * cfg.attr_dim + j];
    }
    for (std::size_t c = 0; c < cfg.n_classes; ++c) labels_unique.push_back(static_cast<std::int64_t>(c));

    BatchData<double> batch;
    batch.x = x;
    batch.labels = labels;
    batch.attrs = Tensor<double>::from({cfg.batch, cfg.attr_dim}, attrs);
    batch.attrs_unique = Tensor<double>::from({cfg.n_classes, cfg.attr_dim}, attr_table);
    batch.labels_unique = labels_unique;

    const Fwd eval_fwd{false, nullptr};
    const LossNorm norm = LossNorm::mean;
    // Frozen rng state: copying this before each closure call replays the
    // exact same noise draws, making the stochastic losses pure functions.
    const Rng frozen_noise(cfg.seed, "gradcheck-noise");

    GradSuiteResult result;
    auto check = [&](const std::string& name, const std::function<Tensor<double>()>& build,
                     const Params& params, double tol) {
        GradCheckReport rep =
            grad_check(build, params, cfg.eps, tol, cfg.denom_floor, /*five_point=*/true);
        result.terms.push_back({name, rep.max_rel_err, tol, rep.pass});
        if (!rep.pass) result.pass = false;
    };

    // Reconstruction of the disentangling autoencoder.
    check(
        "reconstruction",
        [&] { return reconstruction_loss(x, decode_disentangle(model, encode_full(model, x, eval_fwd), eval_fwd), norm); },
        select(model, {"enc.", "dec."}), cfg.term_tolerance);

    // Relation (compatibility) loss.
    Tensor<double> target = compatibility_matrix<double>(labels, labels_unique);
    check(
        "relation",
        [&] {
            auto [h_s, h_n] = encode_disentangle(model, x, eval_fwd);
            return relation_loss(relate(model, h_s, batch.attrs_unique, eval_fwd), target, norm);
        },
        select(model, {"enc.", "rel."}), cfg.term_tolerance);

    // Generator-side TC with the discriminator frozen; only h's producers
    // are checked (the discriminator is a constant of this term).
    check(
        "tc_generator", [&] { return tc_estimate(model, encode_full(model, x, eval_fwd)); },
        select(model, {"enc."}), cfg.term_tolerance);

    // Discriminator loss on fixed latent batches.
    Tensor<double> h_fixed = encode_full(model, x, eval_fwd).detach();
    Tensor<double> h_tilde_fixed = [&] {
        Rng perm_rng(cfg.seed, "gradcheck-permute");
        auto [h_s, h_n] = split_latent(model, h_fixed);
        return permute_batch(h_s, h_n, perm_rng).detach();
    }();
    check(
        "discriminator", [&] { return discriminator_loss(model, h_fixed, h_tilde_fixed); },
        select(model, {"dis."}), cfg.term_tolerance);

    // cVAE objective with frozen reparameterization noise.
    check(
        "cvae",
        [&] {
            Rng noise = frozen_noise;
            CvaeForward<double> cv = cvae_loss(model, x, batch.attrs, noise, 1.0, norm, eval_fwd);
            return cv.loss;
        },
        select(model, {"cvae_enc.", "cvae_dec."}), cfg.term_tolerance);

    // Full joint objective (everything the TC-phase update differentiates).
    EffectiveWeights ew{1.0, 1.0, 1.0};
    check(
        "full_step",
        [&] {
            Rng noise = frozen_noise;
            return step_losses(model, batch, ew, norm, StreamMode::both, noise, eval_fwd).overall2;
        },
        select(model, {"enc.", "dec.", "rel.", "cvae_enc.", "cvae_dec."}), cfg.composite_tolerance);

    return result;
}

} // namespace sdgzsl

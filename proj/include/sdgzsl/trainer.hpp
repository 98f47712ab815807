#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdgzsl/adam.hpp"
#include "sdgzsl/data.hpp"
#include "sdgzsl/networks.hpp"
#include "sdgzsl/objectives.hpp"
#include "sdgzsl/rng.hpp"

namespace sdgzsl {

// Which encoder inputs feed the disentangling losses: the real features,
// the generated reconstructions, or both averaged.
enum class StreamMode { real, recon, both };

struct TrainConfig {
    ModelConfig model;
    LossWeights weights;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 10;
    int n_dis = 1; // inner discriminator iterations per outer step
    std::uint64_t seed = 1;
    StreamMode stream = StreamMode::both;
    std::size_t n_syn = 300; // synthesized samples per unseen class
    LossNorm norm = LossNorm::mean;
    // Variant switch: when true, the joint update runs once after the inner
    // discriminator loop instead of inside each iteration.
    bool overall1_outside = false;

    void validate() const {
        model.validate();
        weights.validate();
        if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
        if (n_dis < 1) throw ConfigError("train config: n_dis must be >= 1");
        if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
        if (lr <= 0) throw ConfigError("train config: learning rate must be positive");
        if (n_syn < 1) throw ConfigError("train config: n_syn must be >= 1");
    }
};

// Typed batch for the loss pipeline (float for training, double for the
// finite-difference checks).
template <class T>
struct BatchData {
    Tensor<T> x;
    std::vector<std::int64_t> labels;
    Tensor<T> attrs;
    Tensor<T> attrs_unique;
    std::vector<std::int64_t> labels_unique;
};

template <class T>
BatchData<T> to_batch_data(const Batch& b) {
    auto cast = [](const Tensor<float>& t) {
        std::vector<T> v(t.val().begin(), t.val().end());
        return Tensor<T>::from(t.shape(), std::move(v));
    };
    return BatchData<T>{cast(b.x), b.labels, cast(b.attrs), cast(b.attrs_unique), b.labels_unique};
}

// Effective per-epoch loss weights after warm-up.
struct EffectiveWeights {
    double kl = 1.0;
    double rel = 1.0;
    double tc = 1.0;
};

inline EffectiveWeights effective_weights(const LossWeights& w, int epoch) {
    EffectiveWeights e;
    e.kl = warmup_weight(epoch, w.warmup_epochs, w.kl_final);
    e.rel = w.rel_weight;
    e.tc = warmup_weight(epoch, w.warmup_epochs, w.tc_weight);
    return e;
}

// One full forward through the generative and disentangling pipeline.
// overall1 = cVAE + reconstruction + rel_weight * relation;
// overall2 = overall1 + tc_weight * TC (identical shared terms).
// Stream handling: the real features and the generated reconstruction each
// produce (reconstruction, relation, TC) terms; `both` averages them.
template <class T>
struct StepLosses {
    Tensor<T> cvae;     // recon + kl_w * KL of the generative model
    Tensor<T> rec;      // disentangler reconstruction (stream average)
    Tensor<T> rel;      // relation loss (stream average)
    Tensor<T> tc;       // TC estimate (stream average, frozen discriminator)
    Tensor<T> overall1; // joint loss without the TC term
    Tensor<T> overall2; // overall1 + tc_weight * tc
};

template <class T>
StepLosses<T> step_losses(const ModelState<T>& m, const BatchData<T>& batch,
                          const EffectiveWeights& ew, LossNorm norm, StreamMode stream,
                          Rng& noise_rng, const Fwd& fwd) {
    StepLosses<T> out;
    CvaeForward<T> cv = cvae_loss(m, batch.x, batch.attrs, noise_rng, ew.kl, norm, fwd);
    out.cvae = cv.loss;

    Tensor<T> target = compatibility_matrix<T>(batch.labels, batch.labels_unique);

    std::vector<Tensor<T>> inputs;
    if (stream == StreamMode::real || stream == StreamMode::both) inputs.push_back(batch.x);
    if (stream == StreamMode::recon || stream == StreamMode::both) inputs.push_back(cv.xhat);

    Tensor<T> rec_sum, rel_sum, tc_sum;
    for (const Tensor<T>& u : inputs) {
        Tensor<T> h = encode_full(m, u, fwd);
        auto [h_s, h_n] = split_latent(m, h);
        Tensor<T> rec = reconstruction_loss(u, decode_disentangle(m, h, fwd), norm);
        Tensor<T> rel = relation_loss(relate(m, h_s, batch.attrs_unique, fwd), target, norm);
        Tensor<T> tc = tc_estimate(m, h);
        rec_sum = rec_sum.defined() ? add(rec_sum, rec) : rec;
        rel_sum = rel_sum.defined() ? add(rel_sum, rel) : rel;
        tc_sum = tc_sum.defined() ? add(tc_sum, tc) : tc;
    }
    const T inv = T{1} / static_cast<T>(inputs.size());
    out.rec = scale(rec_sum, inv);
    out.rel = scale(rel_sum, inv);
    out.tc = scale(tc_sum, inv);

    out.overall1 = add(add(out.cvae, out.rec), scale(out.rel, static_cast<T>(ew.rel)));
    out.overall2 = add(out.overall1, scale(out.tc, static_cast<T>(ew.tc)));
    return out;
}

// Discriminator-side loss for one batch: encode both streams without
// gradient, permute each, and score. Only discriminator parameters are
// reached by backward.
template <class T>
Tensor<T> dis_step_loss(const ModelState<T>& m, const BatchData<T>& batch, LossNorm norm,
                        StreamMode stream, Rng& noise_rng, Rng& permute_rng, const Fwd& fwd) {
    (void)norm; // the discriminator loss is always batch-averaged
    // Values only; the tape starts recording at discriminate().
    std::vector<Tensor<T>> latents;
    {
        Tensor<T> xhat;
        if (stream != StreamMode::real) {
            auto [mean, dev] = cvae_encode(m, batch.x, batch.attrs, fwd);
            Tensor<T> z = reparameterize(mean, dev, noise_rng);
            xhat = generate(m, z, batch.attrs, fwd);
        }
        if (stream == StreamMode::real || stream == StreamMode::both)
            latents.push_back(encode_full(m, batch.x, fwd).detach());
        if (stream == StreamMode::recon || stream == StreamMode::both)
            latents.push_back(encode_full(m, xhat, fwd).detach());
    }
    Tensor<T> loss_sum;
    for (const Tensor<T>& h : latents) {
        auto [h_s, h_n] = split_latent(m, h);
        Tensor<T> h_tilde = permute_batch(h_s, h_n, permute_rng);
        Tensor<T> l = discriminator_loss(m, h, h_tilde);
        loss_sum = loss_sum.defined() ? add(loss_sum, l) : l;
    }
    return scale(loss_sum, T{1} / static_cast<T>(latents.size()));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    int epoch = 0;
    double loss_cvae = 0, loss_rec = 0, loss_rel = 0, tc = 0, loss_dis = 0;
    double kl_w = 0, tc_w = 0;
    double seconds = 0; // wall time; excluded from determinism comparisons
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    void write_csv(const std::string& path) const;
    std::string to_csv() const;
};

// Everything a resumable run carries.
struct TrainerState {
    TrainConfig cfg;
    ModelState<float> model;
    AdamOptimizer<float> opt_main;
    AdamOptimizer<float> opt_dis;
    RngSuite rngs;
    int epochs_done = 0;

    explicit TrainerState(const TrainConfig& cfg);
};

// Observer invoked after every parameter update; phases are "dis",
// "joint" (no TC) and "joint_tc". Used by tests to snapshot-diff the
// alternation; never affects the run.
struct TrainHooks {
    std::function<void(const char* phase)> after_update;
};

// Run epochs [state.epochs_done, cfg.epochs) over the bundle, appending one
// log row per epoch.
void train_epochs(TrainerState& state, const DatasetBundle& bundle, TrainLog& log,
                  const TrainHooks* hooks = nullptr);

// Fresh training run.
std::pair<TrainerState, TrainLog> train(const DatasetBundle& bundle, TrainConfig cfg);

// ---------------------------------------------------------------------------
// Unseen-class synthesis
// ---------------------------------------------------------------------------

struct SynthesisResult {
    Tensor<float> xhat;               // [U*n_syn x d] generated features
    Tensor<float> latent;             // [U*n_syn x (l+m)] encoded latents
    std::vector<std::int64_t> labels; // class id per row
};

// For each class row of `attrs` (labelled by class_ids), draw n_syn standard
// normal latents, generate features and encode them in eval mode.
SynthesisResult synthesize_unseen(const ModelState<float>& model, const Tensor<float>& attrs,
                                  const std::vector<std::int64_t>& class_ids, std::size_t n_syn,
                                  Rng& noise_rng);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const TrainerState& state, const std::string& path);
TrainerState load_checkpoint(const std::string& path);

// TrainConfig <-> JSON text (used by checkpoints and the CLI config dump).
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

} // namespace sdgzsl

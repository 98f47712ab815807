#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "sdgzsl/networks.hpp"
#include "sdgzsl/tensor.hpp"

namespace sdgzsl {

// mean: every loss is averaged over the batch (default; decouples the
// lambda weights from the batch size). sum: plain double sums as written.
enum class LossNorm { mean, sum };

struct LossWeights {
    double rel_weight = 1.0;      // on the relation (compatibility) loss
    double tc_weight = 1.0;       // on the total-correlation estimate
    double dis_weight = 1.0;      // on the discriminator loss
    double kl_final = 1.0;        // KL weight after warm-up
    int warmup_epochs = 1;        // linear ramp horizon for KL and TC

    void validate() const {
        if (rel_weight < 0 || tc_weight < 0 || dis_weight < 0 || kl_final < 0)
            throw ConfigError("loss weights must be >= 0");
        if (warmup_epochs < 1) throw ConfigError("warm-up horizon must be >= 1");
    }
};

// Linear ramp: 0 at epoch 0, final from `horizon` onward.
inline double warmup_weight(int epoch, int horizon, double final_weight) {
    if (horizon < 1) throw ConfigError("warmup_weight: horizon must be >= 1");
    if (epoch < 0) throw ConfigError("warmup_weight: epoch must be >= 0");
    const double ramp = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(horizon));
    return ramp * final_weight;
}

namespace detail {

template <class T>
Tensor<T> batch_normalized(const Tensor<T>& summed, std::size_t batch, LossNorm norm) {
    return norm == LossNorm::mean ? scale(summed, T{1} / static_cast<T>(batch)) : summed;
}

} // namespace detail

// [B x N_c] target grid: entry (t, c) is 1 iff the t-th sample carries the
// c-th unique label. Every batch label must appear in unique_labels.
template <class T>
Tensor<T> compatibility_matrix(const std::vector<std::int64_t>& batch_labels,
                               const std::vector<std::int64_t>& unique_labels) {
    if (batch_labels.empty() || unique_labels.empty())
        throw DataError("compatibility_matrix: empty label set");
    std::vector<T> v(batch_labels.size() * unique_labels.size(), T{0});
    for (std::size_t t = 0; t < batch_labels.size(); ++t) {
        bool found = false;
        for (std::size_t c = 0; c < unique_labels.size(); ++c) {
            if (batch_labels[t] == unique_labels[c]) {
                v[t * unique_labels.size() + c] = T{1};
                found = true;
            }
        }
        if (!found)
            throw DataError("compatibility_matrix: batch label " + std::to_string(batch_labels[t]) +
                            " missing from the unique set");
    }
    return Tensor<T>::from({batch_labels.size(), unique_labels.size()}, std::move(v));
}

// Squared error between the score grid and its 0/1 target.
template <class T>
Tensor<T> relation_loss(const Tensor<T>& scores, const Tensor<T>& target, LossNorm norm) {
    if (scores.shape() != target.shape())
        throw ShapeError("relation_loss: scores " + shape_str(scores.shape()) + " vs target " +
                         shape_str(target.shape()));
    Tensor<T> sq = square(sub(scores, target));
    return detail::batch_normalized(reduce_sum(sq), scores.rows(), norm);
}

// Squared reconstruction error per batch.
template <class T>
Tensor<T> reconstruction_loss(const Tensor<T>& x, const Tensor<T>& xbar, LossNorm norm) {
    if (x.shape() != xbar.shape())
        throw ShapeError("reconstruction_loss: " + shape_str(x.shape()) + " vs " +
                         shape_str(xbar.shape()));
    Tensor<T> sq = square(sub(x, xbar));
    return detail::batch_normalized(reduce_sum(sq), x.rows(), norm);
}

// Closed-form KL between N(mu, diag sigma^2) and the standard normal prior:
// 1/2 sum_j (mu^2 + sigma^2 - 2 log sigma - 1), batch-normalized.
template <class T>
Tensor<T> kl_gaussian(const Tensor<T>& mean, const Tensor<T>& dev, LossNorm norm) {
    if (mean.shape() != dev.shape())
        throw ShapeError("kl_gaussian: mean " + shape_str(mean.shape()) + " vs sigma " +
                         shape_str(dev.shape()));
    for (T s : dev.val())
        if (!(s > T{0})) throw NumericError("kl_gaussian: sigma must be strictly positive");
    Tensor<T> terms = sub(add(square(mean), square(dev)), scale(log(dev), T{2}));
    Tensor<T> summed = add_const(reduce_sum(terms), -static_cast<T>(mean.numel()));
    return detail::batch_normalized(scale(summed, T{0.5}), mean.rows(), norm);
}

template <class T>
struct CvaeForward {
    Tensor<T> loss;    // recon + kl_weight * KL
    Tensor<T> recon;   // the generator's reconstruction term alone
    Tensor<T> kl;      // un-weighted KL
    Tensor<T> xhat;    // generated features, feeding the disentangler
    Tensor<T> mean, dev;
};

// Eq-style cVAE objective in minimization form; returns the generated
// features so the caller can push them through the disentangling pipeline.
template <class T>
CvaeForward<T> cvae_loss(const ModelState<T>& m, const Tensor<T>& x, const Tensor<T>& attrs,
                         Rng& noise_rng, double kl_weight, LossNorm norm, const Fwd& fwd) {
    CvaeForward<T> out;
    auto [mean, dev] = cvae_encode(m, x, attrs, fwd);
    Tensor<T> z = reparameterize(mean, dev, noise_rng);
    out.xhat = generate(m, z, attrs, fwd);
    out.recon = reconstruction_loss(x, out.xhat, norm);
    out.kl = kl_gaussian(mean, dev, norm);
    out.loss = add(out.recon, scale(out.kl, static_cast<T>(kl_weight)));
    out.mean = mean;
    out.dev = dev;
    return out;
}

// Deterministic core of the permutation trick: reorder the halves by the
// given index vectors and re-concatenate.
template <class T>
Tensor<T> permute_batch_with(const Tensor<T>& h_s, const Tensor<T>& h_n,
                             const std::vector<std::size_t>& perm_s,
                             const std::vector<std::size_t>& perm_n) {
    if (h_s.rows() != h_n.rows())
        throw ShapeError("permute_batch: row counts differ: " + shape_str(h_s.shape()) + " vs " +
                         shape_str(h_n.shape()));
    if (perm_s.size() != h_s.rows() || perm_n.size() != h_n.rows())
        throw ShapeError("permute_batch: permutation length does not match batch");
    return concat_cols(gather_rows(h_s, perm_s), gather_rows(h_n, perm_n));
}

// Two independent permutations of the batch indices, one per half. Breaks
// the pairing between the halves while preserving each half's row multiset,
// approximating a draw from the product of marginals.
template <class T>
Tensor<T> permute_batch(const Tensor<T>& h_s, const Tensor<T>& h_n, Rng& permute_rng) {
    const std::size_t b = h_s.rows();
    auto perm_s = permute_rng.permutation(b);
    auto perm_n = permute_rng.permutation(b);
    return permute_batch_with(h_s, h_n, perm_s, perm_n);
}

// Total correlation via the discriminator's density ratio: mean of
// log(p / (1 - p)) over the batch. `probs` must already be clamped into
// (0, 1); any discriminator-like scorer works.
template <class T>
Tensor<T> tc_from_probs(const Tensor<T>& probs) {
    Tensor<T> ratio = sub(log(probs), log(sub(Tensor<T>::full(probs.shape(), T{1}), probs)));
    return reduce_mean(ratio);
}

// TC estimate on h with the model's discriminator. The discriminator weights
// are frozen here: gradient flows into h's producers only.
template <class T>
Tensor<T> tc_estimate(const ModelState<T>& m, const Tensor<T>& h) {
    return tc_from_probs(discriminate(m, h, /*frozen=*/true));
}

// Binary cross-entropy pushing the discriminator toward 1 on dependent
// batches h and 0 on permuted batches h_tilde. Inputs are detached: only
// discriminator parameters receive gradient.
template <class T>
Tensor<T> discriminator_loss(const ModelState<T>& m, const Tensor<T>& h, const Tensor<T>& h_tilde) {
    Tensor<T> p_joint = discriminate(m, h.detach(), /*frozen=*/false);
    Tensor<T> p_perm = discriminate(m, h_tilde.detach(), /*frozen=*/false);
    Tensor<T> ones_j = Tensor<T>::full(p_joint.shape(), T{1});
    Tensor<T> term = add(reduce_mean(log(p_joint)),
                         reduce_mean(log(sub(ones_j, p_perm))));
    return scale(term, T{-1});
}

} // namespace sdgzsl

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdgzsl/data.hpp"
#include "sdgzsl/networks.hpp"
#include "sdgzsl/rng.hpp"
#include "sdgzsl/trainer.hpp"

namespace sdgzsl {

// Which latent slice feeds the downstream classifier.
enum class Rep { hs, hn, h };

std::string rep_to_string(Rep r);
Rep rep_from_string(const std::string& s);

// H = 2US / (U + S), 0 when both are 0. Inputs and output in percent.
double harmonic_mean(double unseen_acc, double seen_acc);

// Macro (per-class) top-1 accuracy in percent over the classes of class_set
// that appear in `truth`; absent classes are excluded with a warning on
// stderr. Every truth label must belong to class_set.
double per_class_top1(const std::vector<std::int64_t>& preds,
                      const std::vector<std::int64_t>& truth,
                      const std::vector<std::int64_t>& class_set);

// ---------------------------------------------------------------------------
// Softmax classifier
// ---------------------------------------------------------------------------

struct ClassifierConfig {
    double lr = 1e-3;
    int epochs = 100;
    std::size_t batch_size = 100;
    std::uint64_t seed = 7;
};

// Single linear map trained with softmax cross-entropy and Adam. Prediction
// is argmax with the lowest class id winning ties.
struct SoftmaxClassifier {
    Tensor<float> weight; // [r x C]
    Tensor<float> bias;   // [C]
    std::vector<std::int64_t> classes; // ascending; column c scores classes[c]

    Tensor<float> logits(const Tensor<float>& reps) const;
    std::vector<std::int64_t> predict(const Tensor<float>& reps) const;
    // Argmax of a logit matrix under the same tie rule; exposed for tests.
    static std::vector<std::size_t> argmax_rows(const Tensor<float>& logits);
};

SoftmaxClassifier train_softmax_classifier(const Tensor<float>& reps,
                                           const std::vector<std::int64_t>& labels,
                                           const std::vector<std::int64_t>& classes,
                                           const ClassifierConfig& cfg);

// ---------------------------------------------------------------------------
// GZSL evaluation
// ---------------------------------------------------------------------------

struct EvalConfig {
    ClassifierConfig classifier;
    std::size_t n_syn = 300;
    std::vector<double> ratios{1.0, 0.5, 0.25};
    std::uint64_t seed = 1;
};

struct GZSLReport {
    std::string representation; // "hs" | "hn" | "h"
    double unseen_acc = 0;      // U, percent
    double seen_acc = 0;        // S, percent
    double harmonic = 0;        // H
    double t1 = 0;              // conventional ZSL accuracy
    std::map<std::int64_t, double> per_class_unseen;
    std::map<std::int64_t, double> per_class_seen;
    std::map<double, double> retrieval; // ratio -> mAP (fractions in [0,1])

    // Confusion of unseen test samples over all classes: one row per class
    // id (seen rows are all zero), columns are predictions.
    std::vector<std::int64_t> class_ids;
    std::vector<std::vector<std::size_t>> confusion;

    std::string to_json() const;
    void write_json(const std::string& path) const;
    // counts CSV plus a row-normalized percentage CSV
    void write_confusion_csv(const std::string& counts_path, const std::string& percent_path) const;
};

// Encode features in eval mode and keep the representation slice.
Tensor<float> encode_representation(const ModelState<float>& model, const Tensor<float>& features,
                                    Rep rep);

GZSLReport evaluate_gzsl(const ModelState<float>& model, const DatasetBundle& bundle,
                         const EvalConfig& cfg, Rep rep);

// Truncated average precision over a ranked relevance list: the list is cut
// at K = ceil(ratio * n_rel); precision is accumulated at each relevant hit
// inside the top-K and divided by min(n_rel, K).
double truncated_average_precision(const std::vector<char>& relevance_by_rank, std::size_t n_rel,
                                   double ratio);

// Zero-shot retrieval: per unseen class, the centroid of n_syn synthesized
// representations queries the real unseen-test pool by ascending Euclidean
// distance (ties broken by ascending sample index), scored by the truncated
// AP above and macro-averaged over classes.
std::map<double, double> retrieval_map(const ModelState<float>& model, const DatasetBundle& bundle,
                                       const std::vector<double>& ratios, std::size_t n_syn,
                                       Rng& noise_rng, Rep rep = Rep::hs);

} // namespace sdgzsl

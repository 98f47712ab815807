#include "sdgzsl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sdgzsl/adam.hpp"
#include "sdgzsl/errors.hpp"
#include "sdgzsl/threads.hpp"

namespace sdgzsl {

using nlohmann::json;

std::string rep_to_string(Rep r) {
    switch (r) {
        case Rep::hs: return "hs";
        case Rep::hn: return "hn";
        case Rep::h: return "h";
    }
    return "h";
}

Rep rep_from_string(const std::string& s) {
    if (s == "hs") return Rep::hs;
    if (s == "hn") return Rep::hn;
    if (s == "h") return Rep::h;
    throw ConfigError("representation must be one of hs/hn/h, got '" + s + "'");
}

double harmonic_mean(double unseen_acc, double seen_acc) {
    if (unseen_acc < 0 || seen_acc < 0)
        throw ContractError("harmonic_mean: accuracies must be >= 0");
    const double denom = unseen_acc + seen_acc;
    if (denom == 0.0) return 0.0;
    return 2.0 * unseen_acc * seen_acc / denom;
}

double per_class_top1(const std::vector<std::int64_t>& preds,
                      const std::vector<std::int64_t>& truth,
                      const std::vector<std::int64_t>& class_set) {
    if (preds.size() != truth.size())
        throw ContractError("per_class_top1: preds and truth lengths differ");
    std::set<std::int64_t> allowed(class_set.begin(), class_set.end());
    std::map<std::int64_t, std::pair<std::size_t, std::size_t>> hits; // class -> (correct, total)
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!allowed.count(truth[i]))
            throw DataError("per_class_top1: truth label " + std::to_string(truth[i]) +
                            " outside the class set");
        auto& [correct, total] = hits[truth[i]];
        ++total;
        if (preds[i] == truth[i]) ++correct;
    }
    double acc_sum = 0;
    std::size_t counted = 0;
    for (auto c : allowed) {
        auto it = hits.find(c);
        if (it == hits.end()) {
            std::cerr << "[sdgzsl] warning: class " << c
                      << " has no test samples; excluded from the per-class average\n";
            continue;
        }
        acc_sum += static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
        ++counted;
    }
    if (counted == 0) return 0.0;
    return 100.0 * acc_sum / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Softmax classifier
// ---------------------------------------------------------------------------

Tensor<float> SoftmaxClassifier::logits(const Tensor<float>& reps) const {
    return add_rowvec(matmul(reps, weight), bias);
}

std::vector<std::size_t> SoftmaxClassifier::argmax_rows(const Tensor<float>& logit_matrix) {
    const std::size_t n = logit_matrix.rows(), c = logit_matrix.cols();
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = logit_matrix.val().data() + i * c;
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j; // strict: ties keep the lower column
        out[i] = best;
    }
    return out;
}

std::vector<std::int64_t> SoftmaxClassifier::predict(const Tensor<float>& reps) const {
    auto cols = argmax_rows(logits(reps));
    std::vector<std::int64_t> out(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i) out[i] = classes[cols[i]];
    return out;
}

SoftmaxClassifier train_softmax_classifier(const Tensor<float>& reps,
                                           const std::vector<std::int64_t>& labels,
                                           const std::vector<std::int64_t>& classes,
                                           const ClassifierConfig& cfg) {
    if (reps.rows() != labels.size())
        throw ShapeError("classifier: one label per representation row required");
    SoftmaxClassifier clf;
    clf.classes.assign(classes.begin(), classes.end());
    std::sort(clf.classes.begin(), clf.classes.end());
    clf.classes.erase(std::unique(clf.classes.begin(), clf.classes.end()), clf.classes.end());

    std::map<std::int64_t, std::size_t> col_of;
    for (std::size_t c = 0; c < clf.classes.size(); ++c) col_of[clf.classes[c]] = c;

    std::set<std::int64_t> present(labels.begin(), labels.end());
    for (auto c : clf.classes)
        if (!present.count(c))
            throw ConfigError("classifier: class " + std::to_string(c) +
                              " is absent from the training labels");
    std::vector<std::size_t> cols(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = col_of.find(labels[i]);
        if (it == col_of.end())
            throw ConfigError("classifier: training label " + std::to_string(labels[i]) +
                              " is not in the class set");
        cols[i] = it->second;
    }

    const std::size_t r = reps.cols(), n_classes = clf.classes.size(), n = reps.rows();
    clf.weight = Tensor<float>::param({r, n_classes}, std::vector<float>(r * n_classes, 0.0f));
    clf.bias = Tensor<float>::param({n_classes}, std::vector<float>(n_classes, 0.0f));

    AdamOptimizer<float> opt({{"clf.W", clf.weight}, {"clf.b", clf.bias}},
                             AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    Rng shuffle(cfg.seed, "clf-shuffle");
    const std::size_t batch = std::min(cfg.batch_size, n);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto perm = shuffle.permutation(n);
        for (std::size_t lo = 0; lo < n; lo += batch) {
            const std::size_t hi = std::min(lo + batch, n);
            std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                         perm.begin() + static_cast<std::ptrdiff_t>(hi));
            std::vector<std::size_t> batch_cols(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) batch_cols[i] = cols[idx[i]];

            Tape<float> tape;
            Tensor<float> x = gather_rows(reps, idx);
            Tensor<float> lsm = log_softmax_rows(clf.logits(x));
            Tensor<float> loss = scale(reduce_mean(pick_per_row(lsm, batch_cols)), -1.0f);
            tape.backward(loss);
            opt.step();
            opt.zero_grad();
            tape.reset();
        }
    }
    return clf;
}

// ---------------------------------------------------------------------------
// Representation encoding
// ---------------------------------------------------------------------------

Tensor<float> encode_representation(const ModelState<float>& model, const Tensor<float>& features,
                                    Rep rep) {
    const Fwd eval_fwd{false, nullptr};
    const std::size_t n = features.rows();
    const std::size_t lm = model.cfg.split_dim();
    std::vector<float> latent(n * lm);
    // Rows are independent in eval mode, so chunked encoding is bitwise
    // identical to one pass for any worker count.
    parallel_chunks(n, [&](std::size_t lo, std::size_t hi) {
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        Tensor<float> chunk = gather_rows(features, idx);
        Tensor<float> h = encode_full(model, chunk, eval_fwd);
        std::copy(h.val().begin(), h.val().end(), latent.begin() + static_cast<std::ptrdiff_t>(lo * lm));
    });
    Tensor<float> h = Tensor<float>::from({n, lm}, std::move(latent));
    switch (rep) {
        case Rep::hs: return slice_cols(h, 0, model.cfg.sem_dim);
        case Rep::hn: return slice_cols(h, model.cfg.sem_dim, lm);
        case Rep::h: return h;
    }
    return h;
}

namespace {

Tensor<float> slice_rep(const ModelState<float>& model, const Tensor<float>& latent, Rep rep) {
    switch (rep) {
        case Rep::hs: return slice_cols(latent, 0, model.cfg.sem_dim);
        case Rep::hn: return slice_cols(latent, model.cfg.sem_dim, model.cfg.split_dim());
        case Rep::h: return latent;
    }
    return latent;
}

Tensor<float> vstack(const Tensor<float>& a, const Tensor<float>& b) {
    const std::size_t p = a.cols();
    if (b.cols() != p) throw ShapeError("vstack: column counts differ");
    std::vector<float> v;
    v.reserve((a.rows() + b.rows()) * p);
    v.insert(v.end(), a.val().begin(), a.val().end());
    v.insert(v.end(), b.val().begin(), b.val().end());
    return Tensor<float>::from({a.rows() + b.rows(), p}, std::move(v));
}

} // namespace

// ---------------------------------------------------------------------------
// GZSL evaluation
// ---------------------------------------------------------------------------

GZSLReport evaluate_gzsl(const ModelState<float>& model, const DatasetBundle& bundle,
                         const EvalConfig& cfg, Rep rep) {
    GZSLReport report;
    report.representation = rep_to_string(rep);

    // Real representations.
    Tensor<float> train_reps =
        encode_representation(model, bundle.feature_rows(bundle.train_seen_idx), rep);
    std::vector<std::int64_t> train_labels = bundle.label_rows(bundle.train_seen_idx);
    Tensor<float> test_seen_reps =
        encode_representation(model, bundle.feature_rows(bundle.test_seen_idx), rep);
    std::vector<std::int64_t> test_seen_labels = bundle.label_rows(bundle.test_seen_idx);
    Tensor<float> test_unseen_reps =
        encode_representation(model, bundle.feature_rows(bundle.test_unseen_idx), rep);
    std::vector<std::int64_t> test_unseen_labels = bundle.label_rows(bundle.test_unseen_idx);

    // Synthesized unseen representations.
    Rng synth_rng(cfg.seed, "eval-synth");
    SynthesisResult synth =
        synthesize_unseen(model, bundle.attribute_rows(bundle.unseen_classes),
                          bundle.unseen_classes, cfg.n_syn, synth_rng);
    Tensor<float> synth_reps = slice_rep(model, synth.latent, rep);

    // GZSL classifier over all classes.
    std::vector<std::int64_t> all_classes = bundle.seen_classes;
    all_classes.insert(all_classes.end(), bundle.unseen_classes.begin(), bundle.unseen_classes.end());
    Tensor<float> gzsl_reps = vstack(train_reps, synth_reps);
    std::vector<std::int64_t> gzsl_labels = train_labels;
    gzsl_labels.insert(gzsl_labels.end(), synth.labels.begin(), synth.labels.end());
    SoftmaxClassifier gzsl_clf =
        train_softmax_classifier(gzsl_reps, gzsl_labels, all_classes, cfg.classifier);

    auto preds_unseen = gzsl_clf.predict(test_unseen_reps);
    auto preds_seen = gzsl_clf.predict(test_seen_reps);
    report.unseen_acc = per_class_top1(preds_unseen, test_unseen_labels, bundle.unseen_classes);
    report.seen_acc = per_class_top1(preds_seen, test_seen_labels, bundle.seen_classes);
    report.harmonic = harmonic_mean(report.unseen_acc, report.seen_acc);

    // Per-class accuracies.
    auto fill_per_class = [](const std::vector<std::int64_t>& preds,
                             const std::vector<std::int64_t>& truth,
                             const std::vector<std::int64_t>& class_set,
                             std::map<std::int64_t, double>& out) {
        for (auto c : class_set) {
            std::size_t total = 0, correct = 0;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                if (truth[i] != c) continue;
                ++total;
                if (preds[i] == c) ++correct;
            }
            if (total > 0) out[c] = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
        }
    };
    fill_per_class(preds_unseen, test_unseen_labels, bundle.unseen_classes, report.per_class_unseen);
    fill_per_class(preds_seen, test_seen_labels, bundle.seen_classes, report.per_class_seen);

    // Conventional ZSL (T1): synthesized unseen representations only, search
    // space restricted to the unseen classes.
    ClassifierConfig t1_cfg = cfg.classifier;
    t1_cfg.seed = cfg.classifier.seed + 1;
    SoftmaxClassifier t1_clf =
        train_softmax_classifier(synth_reps, synth.labels, bundle.unseen_classes, t1_cfg);
    auto preds_t1 = t1_clf.predict(test_unseen_reps);
    report.t1 = per_class_top1(preds_t1, test_unseen_labels, bundle.unseen_classes);

    // Confusion of unseen test samples over all classes.
    std::vector<std::int64_t> sorted_ids = all_classes;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    report.class_ids = sorted_ids;
    std::map<std::int64_t, std::size_t> col_of;
    for (std::size_t i = 0; i < sorted_ids.size(); ++i) col_of[sorted_ids[i]] = i;
    report.confusion.assign(sorted_ids.size(), std::vector<std::size_t>(sorted_ids.size(), 0));
    for (std::size_t i = 0; i < test_unseen_labels.size(); ++i)
        ++report.confusion[col_of.at(test_unseen_labels[i])][col_of.at(preds_unseen[i])];

    // Retrieval on the same representation slice.
    Rng retr_rng(cfg.seed, "eval-retrieval");
    report.retrieval = retrieval_map(model, bundle, cfg.ratios, cfg.n_syn, retr_rng, rep);
    return report;
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

double truncated_average_precision(const std::vector<char>& relevance_by_rank, std::size_t n_rel,
                                   double ratio) {
    if (ratio <= 0.0 || ratio > 1.0) throw ConfigError("retrieval: ratios must lie in (0, 1]");
    if (n_rel == 0) throw ContractError("truncated_average_precision: n_rel must be >= 1");
    const std::size_t k =
        static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n_rel)));
    double precision_sum = 0;
    std::size_t rel_seen = 0;
    for (std::size_t pos = 0; pos < std::min(k, relevance_by_rank.size()); ++pos) {
        if (!relevance_by_rank[pos]) continue;
        ++rel_seen;
        precision_sum += static_cast<double>(rel_seen) / static_cast<double>(pos + 1);
    }
    return precision_sum / static_cast<double>(std::min(n_rel, k));
}

std::map<double, double> retrieval_map(const ModelState<float>& model, const DatasetBundle& bundle,
                                       const std::vector<double>& ratios, std::size_t n_syn,
                                       Rng& noise_rng, Rep rep) {
    SynthesisResult synth = synthesize_unseen(model, bundle.attribute_rows(bundle.unseen_classes),
                                              bundle.unseen_classes, n_syn, noise_rng);
    Tensor<float> synth_reps = slice_rep(model, synth.latent, rep);
    Tensor<float> pool = encode_representation(model, bundle.feature_rows(bundle.test_unseen_idx), rep);
    std::vector<std::int64_t> pool_labels = bundle.label_rows(bundle.test_unseen_idx);
    const std::size_t r = synth_reps.cols(), n_pool = pool.rows();

    std::map<double, double> out;
    for (double ratio : ratios) {
        double ap_sum = 0;
        std::size_t counted = 0;
        for (std::size_t c = 0; c < bundle.unseen_classes.size(); ++c) {
            const std::int64_t cls = bundle.unseen_classes[c];
            // Centroid query over this class's synthesized block.
            std::vector<double> centroid(r, 0.0);
            std::size_t block = 0;
            for (std::size_t i = 0; i < synth.labels.size(); ++i) {
                if (synth.labels[i] != cls) continue;
                for (std::size_t j = 0; j < r; ++j) centroid[j] += synth_reps.val()[i * r + j];
                ++block;
            }
            for (auto& v : centroid) v /= static_cast<double>(block);

            std::size_t n_rel = 0;
            for (auto y : pool_labels)
                if (y == cls) ++n_rel;
            if (n_rel == 0) continue;

            // Rank by ascending distance; ties by ascending sample index.
            std::vector<std::pair<double, std::size_t>> ranked(n_pool);
            for (std::size_t i = 0; i < n_pool; ++i) {
                double dist = 0;
                for (std::size_t j = 0; j < r; ++j) {
                    const double diff = pool.val()[i * r + j] - centroid[j];
                    dist += diff * diff;
                }
                ranked[i] = {dist, i};
            }
            std::sort(ranked.begin(), ranked.end());

            std::vector<char> relevance(n_pool);
            for (std::size_t pos = 0; pos < n_pool; ++pos)
                relevance[pos] = pool_labels[ranked[pos].second] == cls ? 1 : 0;
            ap_sum += truncated_average_precision(relevance, n_rel, ratio);
            ++counted;
        }
        out[ratio] = counted == 0 ? 0.0 : ap_sum / static_cast<double>(counted);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

std::string GZSLReport::to_json() const {
    json j;
    j["representation"] = representation;
    j["unseen_acc"] = unseen_acc;
    j["seen_acc"] = seen_acc;
    j["harmonic"] = harmonic;
    j["t1"] = t1;
    json pcu = json::object(), pcs = json::object();
    for (const auto& [c, a] : per_class_unseen) pcu[std::to_string(c)] = a;
    for (const auto& [c, a] : per_class_seen) pcs[std::to_string(c)] = a;
    j["per_class_unseen"] = pcu;
    j["per_class_seen"] = pcs;
    json retr = json::object();
    for (const auto& [ratio, v] : retrieval) {
        char key[32];
        std::snprintf(key, sizeof(key), "%g", ratio);
        retr[key] = v;
    }
    j["retrieval_map"] = retr;
    j["class_ids"] = class_ids;
    return j.dump(2);
}

void GZSLReport::write_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("report: cannot open for writing: " + path);
    os << to_json() << "\n";
}

void GZSLReport::write_confusion_csv(const std::string& counts_path,
                                     const std::string& percent_path) const {
    auto header = [this](std::ostream& os) {
        os << "true_class";
        for (auto c : class_ids) os << ',' << c;
        os << "\r\n";
    };
    {
        std::ofstream os(counts_path, std::ios::binary);
        if (!os) throw FormatError("confusion: cannot open for writing: " + counts_path);
        header(os);
        for (std::size_t i = 0; i < class_ids.size(); ++i) {
            os << class_ids[i];
            for (std::size_t j = 0; j < class_ids.size(); ++j) os << ',' << confusion[i][j];
            os << "\r\n";
        }
    }
    {
        std::ofstream os(percent_path, std::ios::binary);
        if (!os) throw FormatError("confusion: cannot open for writing: " + percent_path);
        header(os);
        for (std::size_t i = 0; i < class_ids.size(); ++i) {
            std::size_t total = 0;
            for (auto v : confusion[i]) total += v;
            os << class_ids[i];
            for (std::size_t j = 0; j < class_ids.size(); ++j) {
                const double pct =
                    total == 0 ? 0.0
                               : 100.0 * static_cast<double>(confusion[i][j]) / static_cast<double>(total);
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f", pct);
                os << ',' << buf;
            }
            os << "\r\n";
        }
    }
}

} // namespace sdgzsl

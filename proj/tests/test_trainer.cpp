#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdgzsl/trainer.hpp"
#include "test_support.hpp"

using namespace sdgzsl;
namespace fs = std::filesystem;

namespace {

// Tiny 16-sample dataset for smoke-level runs.
SyntheticData tiny_synthetic() {
    SyntheticSpec spec;
    spec.seen_classes = 2;
    spec.unseen_classes = 2;
    spec.samples_per_class = 8;
    spec.feature_dim = 12;
    spec.sem_dim = 3;
    spec.nuis_dim = 3;
    spec.attr_dim = 4;
    spec.seed = 11;
    return generate_synthetic(spec);
}

TrainConfig tiny_config(int epochs) {
    TrainConfig cfg;
    cfg.model.feature_dim = 12;
    cfg.model.attr_dim = 4;
    cfg.model.latent_dim = 4;
    cfg.model.sem_dim = 4;
    cfg.model.nuis_dim = 4;
    cfg.model.dec_hidden = 24;
    cfg.model.rel_hidden = 24;
    cfg.model.cvae_trunk = 24;
    cfg.model.gen_hidden = 24;
    cfg.batch_size = 4;
    cfg.epochs = epochs;
    cfg.seed = 17;
    cfg.weights.warmup_epochs = 2;
    cfg.n_syn = 5;
    return cfg;
}

std::string csv_without_seconds(const TrainLog& log) {
    std::istringstream is(log.to_csv());
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line)) {
        const auto last_comma = line.rfind(',');
        os << line.substr(0, last_comma) << "\n";
    }
    return os.str();
}

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST_CASE("train: one-epoch smoke run logs every loss term") {
    SyntheticData data = tiny_synthetic();
    TrainConfig cfg = tiny_config(1);
    auto [state, log] = train(data.bundle, cfg);
    REQUIRE(log.rows.size() == 1);
    const auto& row = log.rows[0];
    CHECK(std::isfinite(row.loss_cvae));
    CHECK(std::isfinite(row.loss_rec));
    CHECK(std::isfinite(row.loss_rel));
    CHECK(std::isfinite(row.tc));
    CHECK(std::isfinite(row.loss_dis));
    CHECK(row.kl_w == 0.0); // warm-up starts at zero
    CHECK(row.tc_w == 0.0);
    CHECK(state.epochs_done == 1);
}

TEST_CASE("train: fixed seed reproduces the log and parameters bitwise") {
    SyntheticData data = tiny_synthetic();
    TrainConfig cfg = tiny_config(3);
    auto [s1, l1] = train(data.bundle, cfg);
    auto [s2, l2] = train(data.bundle, cfg);
    CHECK(csv_without_seconds(l1) == csv_without_seconds(l2));
    auto p1 = s1.model.all_params(), p2 = s2.model.all_params();
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second.val() == p2[i].second.val());
}

TEST_CASE("train: all-zero weights degenerate to a plain cVAE") {
    SyntheticData data = tiny_synthetic();
    TrainConfig cfg = tiny_config(6);
    cfg.weights.rel_weight = 0;
    cfg.weights.tc_weight = 0;
    cfg.weights.dis_weight = 0;
    auto [state, log] = train(data.bundle, cfg);
    // The relation net receives no gradient, so compatibility scores stay
    // near the untrained sigmoid output: no semantic structure in h_s.
    const Fwd eval_fwd{false, nullptr};
    auto x = data.bundle.feature_rows(data.bundle.train_seen_idx);
    auto [h_s, h_n] = encode_disentangle(state.model, x, eval_fwd);
    auto scores =
        relate(state.model, h_s, data.bundle.attribute_rows(data.bundle.seen_classes), eval_fwd);
    double mean_score = 0;
    for (float v : scores.val()) mean_score += v;
    mean_score /= static_cast<double>(scores.numel());
    CHECK(mean_score > 0.2);
    CHECK(mean_score < 0.8);
}

TEST_CASE("train: epoch warm-up ramps the KL and TC weights") {
    SyntheticData data = tiny_synthetic();
    TrainConfig cfg = tiny_config(4);
    cfg.weights.warmup_epochs = 4;
    cfg.weights.kl_final = 1.0;
    cfg.weights.tc_weight = 2.0;
    auto [state, log] = train(data.bundle, cfg);
    CHECK(log.rows[0].kl_w == 0.0);
    CHECK(log.rows[0].tc_w == 0.0);
    CHECK(log.rows[2].kl_w == doctest::Approx(0.5));
    CHECK(log.rows[2].tc_w == doctest::Approx(1.0));
}

TEST_CASE("train: row order of the dataset does not matter, only the sample sequence") {
    SyntheticData data = tiny_synthetic();
    TrainConfig cfg = tiny_config(2);
    auto [s1, l1] = train(data.bundle, cfg);

    // Reverse the physical row storage and remap every index list so each
    // list position still names the same sample.
    const std::size_t n = data.bundle.sample_count(), d = data.bundle.feature_dim();
    DatasetBundle reordered = data.bundle;
    std::vector<float> rev(n * d);
    std::vector<std::int64_t> rev_labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(data.bundle.features.val().data() + i * d, d, rev.data() + (n - 1 - i) * d);
        rev_labels[n - 1 - i] = data.bundle.labels[i];
    }
    reordered.features = Tensor<float>::from({n, d}, std::move(rev));
    reordered.labels = std::move(rev_labels);
    auto remap = [n](std::vector<std::size_t>& idx) {
        for (auto& i : idx) i = n - 1 - i;
    };
    remap(reordered.train_seen_idx);
    remap(reordered.test_seen_idx);
    remap(reordered.test_unseen_idx);
    reordered.validate();

    auto [s2, l2] = train(reordered, cfg);
    CHECK(csv_without_seconds(l1) == csv_without_seconds(l2));
    auto p1 = s1.model.all_params(), p2 = s2.model.all_params();
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second.val() == p2[i].second.val());
}

TEST_CASE("train: non-finite losses abort with the term named") {
    SyntheticData data = tiny_synthetic();
    TrainConfig cfg = tiny_config(1);
    cfg.lr = 1e25; // guarantees an explosion on the second update
    cfg.epochs = 3;
    CHECK_THROWS_AS(train(data.bundle, cfg), NumericError);
}

TEST_CASE("synthesize_unseen: shapes, labels and determinism") {
    const auto& [state, log] = sdgzsl::testing::shared_trained();
    const auto& bundle = sdgzsl::testing::shared_synthetic().bundle;
    Rng r1(5, "synth"), r2(5, "synth");
    auto a = synthesize_unseen(state.model, bundle.attribute_rows(bundle.unseen_classes),
                               bundle.unseen_classes, 3, r1);
    CHECK(a.xhat.shape() == Shape{6, 32});
    CHECK(a.latent.shape() == Shape{6, 16});
    CHECK(a.labels == std::vector<std::int64_t>{8, 8, 8, 9, 9, 9});

    auto b = synthesize_unseen(state.model, bundle.attribute_rows(bundle.unseen_classes),
                               bundle.unseen_classes, 3, r2);
    CHECK(a.xhat.val() == b.xhat.val());
}

TEST_CASE("synthesize_unseen: synthesized centroids sit nearest their real class") {
    const auto& [state, log] = sdgzsl::testing::shared_trained();
    const auto& bundle = sdgzsl::testing::shared_synthetic().bundle;
    const Fwd eval_fwd{false, nullptr};
    Rng rng(5, "synth");
    auto synth = synthesize_unseen(state.model, bundle.attribute_rows(bundle.unseen_classes),
                                   bundle.unseen_classes, 100, rng);
    auto real_h = encode_full(state.model, bundle.feature_rows(bundle.test_unseen_idx), eval_fwd);
    auto real_labels = bundle.label_rows(bundle.test_unseen_idx);
    const std::size_t l = state.model.cfg.sem_dim;
    const std::size_t lm = state.model.cfg.split_dim();

    auto centroid = [&](const Tensor<float>& reps, const std::vector<std::int64_t>& labels,
                        std::int64_t cls) {
        std::vector<double> c(l, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != cls) continue;
            for (std::size_t j = 0; j < l; ++j) c[j] += reps.val()[i * lm + j];
            ++count;
        }
        for (auto& v : c) v /= static_cast<double>(count);
        return c;
    };
    auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::size_t j = 0; j < l; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return s;
    };

    std::size_t matched = 0, pairs = 0;
    for (auto cs : bundle.unseen_classes) {
        auto syn_c = centroid(synth.latent, synth.labels, cs);
        for (auto cr : bundle.unseen_classes) {
            if (cr == cs) continue;
            ++pairs;
            if (dist(syn_c, centroid(real_h, real_labels, cs)) <
                dist(syn_c, centroid(real_h, real_labels, cr)))
                ++matched;
        }
    }
    CHECK(static_cast<double>(matched) >= 0.8 * static_cast<double>(pairs));
}

TEST_CASE("checkpoint: byte-stable round trip and corruption detection") {
    SyntheticData data = tiny_synthetic();
    TrainConfig cfg = tiny_config(2);
    auto [state, log] = train(data.bundle, cfg);

    fs::path dir = fs::temp_directory_path() / "sdgzsl_test_ckpt";
    fs::create_directories(dir);
    const auto p1 = (dir / "a.sdzc").string(), p2 = (dir / "b.sdzc").string();
    save_checkpoint(state, p1);
    TrainerState loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));

    auto lp = loaded.model.all_params();
    auto sp = state.model.all_params();
    for (std::size_t i = 0; i < sp.size(); ++i) CHECK(lp[i].second.val() == sp[i].second.val());
    CHECK(loaded.epochs_done == state.epochs_done);
    CHECK(loaded.rngs.noise.state() == state.rngs.noise.state());

    std::string corrupt = file_bytes(p1);
    corrupt[0] = 'X';
    std::ofstream os(dir / "c.sdzc", std::ios::binary);
    os << corrupt;
    os.close();
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "c.sdzc").string()), doctest::Contains("magic"),
                         FormatError);
}

TEST_CASE("checkpoint: resumed training matches the uninterrupted run") {
    SyntheticData data = tiny_synthetic();
    TrainConfig full_cfg = tiny_config(4);
    auto [full_state, full_log] = train(data.bundle, full_cfg);

    TrainConfig half_cfg = full_cfg;
    half_cfg.epochs = 2;
    auto [half_state, half_log] = train(data.bundle, half_cfg);
    fs::path dir = fs::temp_directory_path() / "sdgzsl_test_resume";
    fs::create_directories(dir);
    const auto ckpt = (dir / "half.sdzc").string();
    save_checkpoint(half_state, ckpt);

    TrainerState resumed = load_checkpoint(ckpt);
    resumed.cfg.epochs = 4;
    TrainLog resume_log;
    train_epochs(resumed, data.bundle, resume_log);

    auto pf = full_state.model.all_params();
    auto pr = resumed.model.all_params();
    for (std::size_t i = 0; i < pf.size(); ++i) CHECK(pf[i].second.val() == pr[i].second.val());

    REQUIRE(resume_log.rows.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& a = full_log.rows[i + 2];
        const auto& b = resume_log.rows[i];
        CHECK(a.epoch == b.epoch);
        CHECK(a.loss_cvae == b.loss_cvae);
        CHECK(a.loss_rec == b.loss_rec);
        CHECK(a.loss_rel == b.loss_rel);
        CHECK(a.tc == b.tc);
        CHECK(a.loss_dis == b.loss_dis);
    }
}

TEST_CASE("train config: json round trip preserves every field") {
    TrainConfig cfg = tiny_config(7);
    cfg.stream = StreamMode::recon;
    cfg.norm = LossNorm::sum;
    cfg.overall1_outside = true;
    cfg.weights.rel_weight = 2.5;
    const std::string text = train_config_to_json(cfg);
    TrainConfig back = train_config_from_json(text);
    CHECK(train_config_to_json(back) == text);
    CHECK(back.stream == StreamMode::recon);
    CHECK(back.norm == LossNorm::sum);
    CHECK(back.overall1_outside == true);
    CHECK(back.weights.rel_weight == 2.5);

    CHECK_THROWS_WITH_AS(train_config_from_json("{\"lr\": 0.1, \"mystery\": 1}"),
                         doctest::Contains("mystery"), ConfigError);
}

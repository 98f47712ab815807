#include "sdgzsl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sdgzsl/errors.hpp"

namespace sdgzsl {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_term(const Tensor<float>& t, const char* term, int epoch) {
    if (!std::isfinite(static_cast<double>(t.item())))
        throw NumericError(std::string("training: loss term '") + term + "' is non-finite at epoch " +
                           std::to_string(epoch));
}

} // namespace

// ---------------------------------------------------------------------------
// TrainLog
// ---------------------------------------------------------------------------

std::string TrainLog::to_csv() const {
    std::ostringstream os;
    os << "epoch,loss_cvae,loss_rec,loss_rel,tc,loss_dis,kl_w,tc_w,seconds\r\n";
    for (const auto& r : rows) {
        os << r.epoch << ',' << fmt_double(r.loss_cvae) << ',' << fmt_double(r.loss_rec) << ','
           << fmt_double(r.loss_rel) << ',' << fmt_double(r.tc) << ',' << fmt_double(r.loss_dis)
           << ',' << fmt_double(r.kl_w) << ',' << fmt_double(r.tc_w) << ',' << fmt_double(r.seconds)
           << "\r\n";
    }
    return os.str();
}

void TrainLog::write_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("train log: cannot open for writing: " + path);
    os << to_csv();
}

// ---------------------------------------------------------------------------
// TrainerState
// ---------------------------------------------------------------------------

TrainerState::TrainerState(const TrainConfig& config)
    : cfg(config),
      model(),
      opt_main(),
      opt_dis(),
      rngs(config.seed) {
    cfg.validate();
    model = init_model<float>(cfg.model, rngs.init);
    AdamConfig ac{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    opt_main = AdamOptimizer<float>(model.main_params(), ac);
    opt_dis = AdamOptimizer<float>(model.dis_params(), ac);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void train_epochs(TrainerState& state, const DatasetBundle& bundle, TrainLog& log,
                  const TrainHooks* hooks) {
    const TrainConfig& cfg = state.cfg;
    if (bundle.feature_dim() != cfg.model.feature_dim || bundle.attr_dim() != cfg.model.attr_dim)
        throw ConfigError("train: bundle dims (d=" + std::to_string(bundle.feature_dim()) +
                          ", k=" + std::to_string(bundle.attr_dim()) +
                          ") do not match the model config");

    const Fwd fwd{true, &state.rngs.dropout};
    const double dis_weight = cfg.weights.dis_weight;

    for (int epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const EffectiveWeights ew = effective_weights(cfg.weights, epoch);

        // Two independent shuffled passes; the joint-with-TC phase consumes
        // exactly one pass of the training split per epoch.
        BatchIterator pass_a(bundle, bundle.train_seen_idx, cfg.batch_size, state.rngs.shuffle);
        BatchIterator pass_b(bundle, bundle.train_seen_idx, cfg.batch_size, state.rngs.shuffle);

        double sum_cvae = 0, sum_rec = 0, sum_rel = 0, sum_tc = 0, sum_dis = 0;
        std::size_t n_joint = 0, n_tc = 0, n_dis_steps = 0;

        auto joint_update = [&](const BatchData<float>& data, bool with_tc) {
            Tape<float> tape;
            StepLosses<float> losses =
                step_losses(state.model, data, ew, cfg.norm, cfg.stream, state.rngs.noise, fwd);
            check_term(losses.cvae, "loss_cvae", epoch);
            check_term(losses.rec, "loss_rec", epoch);
            check_term(losses.rel, "loss_rel", epoch);
            check_term(losses.tc, "tc", epoch);
            sum_cvae += losses.cvae.item();
            sum_rec += losses.rec.item();
            sum_rel += losses.rel.item();
            ++n_joint;
            if (with_tc) {
                sum_tc += losses.tc.item();
                ++n_tc;
            }
            tape.backward(with_tc ? losses.overall2 : losses.overall1);
            state.opt_main.step();
            state.opt_main.zero_grad();
            state.opt_dis.zero_grad();
            tape.reset();
            if (hooks && hooks->after_update) hooks->after_update(with_tc ? "joint_tc" : "joint");
        };

        auto dis_update = [&](const BatchData<float>& data) {
            Tape<float> tape;
            Tensor<float> loss =
                scale(dis_step_loss(state.model, data, cfg.norm, cfg.stream, state.rngs.noise,
                                    state.rngs.permute, fwd),
                      static_cast<float>(dis_weight));
            check_term(loss, "loss_dis", epoch);
            sum_dis += loss.item();
            ++n_dis_steps;
            tape.backward(loss);
            state.opt_dis.step();
            state.opt_dis.zero_grad();
            state.opt_main.zero_grad();
            tape.reset();
            if (hooks && hooks->after_update) hooks->after_update("dis");
        };

        const std::size_t outer_steps = pass_b.batch_count();
        for (std::size_t stepi = 0; stepi < outer_steps; ++stepi) {
            Batch a = *pass_a.next();
            BatchData<float> da = to_batch_data<float>(a);
            for (int inner = 0; inner < cfg.n_dis; ++inner) {
                dis_update(da);
                if (!cfg.overall1_outside) joint_update(da, /*with_tc=*/false);
            }
            if (cfg.overall1_outside) joint_update(da, /*with_tc=*/false);

            Batch b = *pass_b.next();
            BatchData<float> db = to_batch_data<float>(b);
            joint_update(db, /*with_tc=*/true);
        }

        TrainLogRow row;
        row.epoch = epoch;
        row.loss_cvae = sum_cvae / static_cast<double>(n_joint);
        row.loss_rec = sum_rec / static_cast<double>(n_joint);
        row.loss_rel = sum_rel / static_cast<double>(n_joint);
        row.tc = sum_tc / static_cast<double>(n_tc);
        row.loss_dis = sum_dis / static_cast<double>(n_dis_steps);
        row.kl_w = ew.kl;
        row.tc_w = ew.tc;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.rows.push_back(row);
        state.epochs_done = epoch + 1;
    }
}

std::pair<TrainerState, TrainLog> train(const DatasetBundle& bundle, TrainConfig cfg) {
    if (cfg.model.feature_dim == 0) cfg.model.feature_dim = bundle.feature_dim();
    if (cfg.model.attr_dim == 0) cfg.model.attr_dim = bundle.attr_dim();
    TrainerState state(cfg);
    TrainLog log;
    train_epochs(state, bundle, log);
    return {std::move(state), std::move(log)};
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

SynthesisResult synthesize_unseen(const ModelState<float>& model, const Tensor<float>& attrs,
                                  const std::vector<std::int64_t>& class_ids, std::size_t n_syn,
                                  Rng& noise_rng) {
    if (attrs.rows() != class_ids.size())
        throw ShapeError("synthesize_unseen: one attribute row per class id required");
    const Fwd eval_fwd{false, nullptr};
    const std::size_t z_dim = model.cfg.latent_dim;

    SynthesisResult out;
    std::vector<float> xhat_all, latent_all;
    for (std::size_t c = 0; c < class_ids.size(); ++c) {
        std::vector<float> zv(n_syn * z_dim);
        for (auto& v : zv) v = static_cast<float>(noise_rng.normal());
        Tensor<float> z = Tensor<float>::from({n_syn, z_dim}, std::move(zv));
        Tensor<float> a = tile_rows(gather_rows(attrs, {c}), n_syn);
        Tensor<float> xhat = generate(model, z, a, eval_fwd);
        Tensor<float> h = encode_full(model, xhat, eval_fwd);
        xhat_all.insert(xhat_all.end(), xhat.val().begin(), xhat.val().end());
        latent_all.insert(latent_all.end(), h.val().begin(), h.val().end());
        for (std::size_t i = 0; i < n_syn; ++i) out.labels.push_back(class_ids[c]);
    }
    const std::size_t rows = class_ids.size() * n_syn;
    out.xhat = Tensor<float>::from({rows, model.cfg.feature_dim}, std::move(xhat_all));
    out.latent = Tensor<float>::from({rows, model.cfg.split_dim()}, std::move(latent_all));
    return out;
}

// ---------------------------------------------------------------------------
// TrainConfig <-> JSON
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " + where);
}

template <class T>
void maybe_get(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string stream_to_string(StreamMode s) {
    switch (s) {
        case StreamMode::real: return "real";
        case StreamMode::recon: return "recon";
        case StreamMode::both: return "both";
    }
    return "both";
}

StreamMode stream_from_string(const std::string& s) {
    if (s == "real") return StreamMode::real;
    if (s == "recon") return StreamMode::recon;
    if (s == "both") return StreamMode::both;
    throw ConfigError("config: stream must be one of real/recon/both, got '" + s + "'");
}

} // namespace

json train_config_to_json_obj(const TrainConfig& c) {
    json j;
    j["dims"] = {{"feature", c.model.feature_dim}, {"attr", c.model.attr_dim},
                 {"latent", c.model.latent_dim},   {"sem", c.model.sem_dim},
                 {"nuis", c.model.nuis_dim}};
    j["widths"] = {{"dec_hidden", c.model.dec_hidden},
                   {"rel_hidden", c.model.rel_hidden},
                   {"cvae_trunk", c.model.cvae_trunk},
                   {"gen_hidden", c.model.gen_hidden}};
    j["leaky_slope"] = c.model.leaky_slope;
    j["dropout"] = c.model.dropout_rate;
    j["weights"] = {{"rel", c.weights.rel_weight},
                    {"tc", c.weights.tc_weight},
                    {"dis", c.weights.dis_weight},
                    {"kl_final", c.weights.kl_final},
                    {"warmup_epochs", c.weights.warmup_epochs}};
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["epochs"] = c.epochs;
    j["n_dis"] = c.n_dis;
    j["seed"] = c.seed;
    j["stream"] = stream_to_string(c.stream);
    j["n_syn"] = c.n_syn;
    j["loss_norm"] = c.norm == LossNorm::mean ? "mean" : "sum";
    j["overall1_outside"] = c.overall1_outside;
    return j;
}

TrainConfig train_config_from_json_obj(const json& j) {
    TrainConfig c;
    reject_unknown(j,
                   {"dims", "widths", "leaky_slope", "dropout", "weights", "batch_size", "lr",
                    "adam_beta1", "adam_beta2", "adam_eps", "epochs", "n_dis", "seed", "stream",
                    "n_syn", "loss_norm", "overall1_outside"},
                   "train");
    if (j.contains("dims")) {
        const json& d = j.at("dims");
        reject_unknown(d, {"feature", "attr", "latent", "sem", "nuis"}, "train.dims");
        maybe_get(d, "feature", c.model.feature_dim);
        maybe_get(d, "attr", c.model.attr_dim);
        maybe_get(d, "latent", c.model.latent_dim);
        maybe_get(d, "sem", c.model.sem_dim);
        // "same value" default: nuis follows sem unless given explicitly.
        c.model.nuis_dim = c.model.sem_dim;
        maybe_get(d, "nuis", c.model.nuis_dim);
    }
    if (j.contains("widths")) {
        const json& w = j.at("widths");
        reject_unknown(w, {"dec_hidden", "rel_hidden", "cvae_trunk", "gen_hidden"}, "train.widths");
        maybe_get(w, "dec_hidden", c.model.dec_hidden);
        maybe_get(w, "rel_hidden", c.model.rel_hidden);
        maybe_get(w, "cvae_trunk", c.model.cvae_trunk);
        maybe_get(w, "gen_hidden", c.model.gen_hidden);
    }
    maybe_get(j, "leaky_slope", c.model.leaky_slope);
    maybe_get(j, "dropout", c.model.dropout_rate);
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        reject_unknown(w, {"rel", "tc", "dis", "kl_final", "warmup_epochs"}, "train.weights");
        maybe_get(w, "rel", c.weights.rel_weight);
        maybe_get(w, "tc", c.weights.tc_weight);
        maybe_get(w, "dis", c.weights.dis_weight);
        maybe_get(w, "kl_final", c.weights.kl_final);
        maybe_get(w, "warmup_epochs", c.weights.warmup_epochs);
    }
    maybe_get(j, "batch_size", c.batch_size);
    maybe_get(j, "lr", c.lr);
    maybe_get(j, "adam_beta1", c.adam_beta1);
    maybe_get(j, "adam_beta2", c.adam_beta2);
    maybe_get(j, "adam_eps", c.adam_eps);
    maybe_get(j, "epochs", c.epochs);
    maybe_get(j, "n_dis", c.n_dis);
    maybe_get(j, "seed", c.seed);
    if (j.contains("stream")) c.stream = stream_from_string(j.at("stream").get<std::string>());
    maybe_get(j, "n_syn", c.n_syn);
    if (j.contains("loss_norm")) {
        const std::string n = j.at("loss_norm").get<std::string>();
        if (n == "mean")
            c.norm = LossNorm::mean;
        else if (n == "sum")
            c.norm = LossNorm::sum;
        else
            throw ConfigError("config: loss_norm must be 'mean' or 'sum'");
    }
    maybe_get(j, "overall1_outside", c.overall1_outside);
    return c;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    return train_config_to_json_obj(cfg).dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return train_config_from_json_obj(j);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'S', 'D', 'Z', 'C'};
constexpr std::uint32_t kCkptVersion = 1;

std::string hex_u64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex_u64(const std::string& s) {
    return std::strtoull(s.c_str(), nullptr, 16);
}

json rng_state_json(const Rng& r) {
    json arr = json::array();
    for (auto w : r.state()) arr.push_back(hex_u64(w));
    return arr;
}

void restore_rng(Rng& r, const json& arr) {
    if (!arr.is_array() || arr.size() != 4)
        throw FormatError("checkpoint: rng state must be four hex words");
    std::array<std::uint64_t, 4> s;
    for (std::size_t i = 0; i < 4; ++i) s[i] = parse_hex_u64(arr[i].get<std::string>());
    r.set_state(s);
}

void put_params(SdMap& blob, const std::string& prefix,
                const std::vector<std::pair<std::string, Tensor<float>>>& params) {
    for (const auto& [name, p] : params)
        blob[prefix + name] = SdEntry::from_f32(p.shape(), p.val());
}

void put_moments(SdMap& blob, const std::string& prefix, const AdamOptimizer<float>& opt) {
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto& [name, p] = opt.params()[i];
        blob[prefix + "m/" + name] = SdEntry::from_f32(p.shape(), opt.state(i).m);
        blob[prefix + "v/" + name] = SdEntry::from_f32(p.shape(), opt.state(i).v);
    }
}

const SdEntry& blob_get(const SdMap& blob, const std::string& name) {
    auto it = blob.find(name);
    if (it == blob.end()) throw FormatError("checkpoint: missing tensor entry '" + name + "'");
    return it->second;
}

void load_params(const SdMap& blob, const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor<float>>> params) {
    for (auto& [name, p] : params) {
        const SdEntry& e = blob_get(blob, prefix + name);
        if (e.shape != p.shape())
            throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        p.val_mut() = e.f32;
    }
}

void load_moments(const SdMap& blob, const std::string& prefix, AdamOptimizer<float>& opt) {
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto& name = opt.params()[i].first;
        opt.state(i).m = blob_get(blob, prefix + "m/" + name).f32;
        opt.state(i).v = blob_get(blob, prefix + "v/" + name).f32;
    }
}

} // namespace

void save_checkpoint(const TrainerState& state, const std::string& path) {
    json header;
    header["version"] = kCkptVersion;
    header["epochs_done"] = state.epochs_done;
    header["adam_main_steps"] = state.opt_main.step_count();
    header["adam_dis_steps"] = state.opt_dis.step_count();
    header["train_config"] = train_config_to_json_obj(state.cfg);
    header["rng"] = {{"init", rng_state_json(state.rngs.init)},
                     {"noise", rng_state_json(state.rngs.noise)},
                     {"permute", rng_state_json(state.rngs.permute)},
                     {"dropout", rng_state_json(state.rngs.dropout)},
                     {"shuffle", rng_state_json(state.rngs.shuffle)}};
    const std::string header_text = header.dump();

    SdMap blob;
    put_params(blob, "param/", state.model.all_params());
    put_moments(blob, "adam_main/", state.opt_main);
    put_moments(blob, "adam_dis/", state.opt_dis);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open for writing: " + path);
    os.write(kCkptMagic, 4);
    std::uint32_t ver = kCkptVersion;
    unsigned char vb[4];
    for (int i = 0; i < 4; ++i) vb[i] = static_cast<unsigned char>((ver >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(vb), 4);
    std::uint64_t len = header_text.size();
    unsigned char lb[8];
    for (int i = 0; i < 8; ++i) lb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(lb), 8);
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    write_sdtensor(os, blob);
    if (!os) throw FormatError("checkpoint: write failed: " + path);
}

TrainerState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    unsigned char vb[4];
    is.read(reinterpret_cast<char*>(vb), 4);
    if (is.gcount() != 4) throw FormatError("checkpoint: truncated version field");
    std::uint32_t ver = 0;
    for (int i = 0; i < 4; ++i) ver |= static_cast<std::uint32_t>(vb[i]) << (8 * i);
    if (ver != kCkptVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(ver));
    unsigned char lb[8];
    is.read(reinterpret_cast<char*>(lb), 8);
    if (is.gcount() != 8) throw FormatError("checkpoint: truncated header length");
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
    std::string header_text(len, '\0');
    is.read(header_text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(is.gcount()) != len)
        throw FormatError("checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: invalid header JSON: ") + e.what());
    }

    TrainConfig cfg = train_config_from_json_obj(header.at("train_config"));
    TrainerState state(cfg);

    SdMap blob = read_sdtensor(is);
    load_params(blob, "param/", state.model.all_params());
    load_moments(blob, "adam_main/", state.opt_main);
    load_moments(blob, "adam_dis/", state.opt_dis);

    state.epochs_done = header.at("epochs_done").get<int>();
    state.opt_main.set_step_count(header.at("adam_main_steps").get<std::int64_t>());
    state.opt_dis.set_step_count(header.at("adam_dis_steps").get<std::int64_t>());
    const json& rj = header.at("rng");
    restore_rng(state.rngs.init, rj.at("init"));
    restore_rng(state.rngs.noise, rj.at("noise"));
    restore_rng(state.rngs.permute, rj.at("permute"));
    restore_rng(state.rngs.dropout, rj.at("dropout"));
    restore_rng(state.rngs.shuffle, rj.at("shuffle"));
    return state;
}

} // namespace sdgzsl

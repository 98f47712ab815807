#include "sdgzsl/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sdgzsl/errors.hpp"

namespace sdgzsl {

using nlohmann::json;

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

json synthetic_to_json(const SyntheticSpec& s) {
    return json{{"seen_classes", s.seen_classes},
                {"unseen_classes", s.unseen_classes},
                {"attr_dim", s.attr_dim},
                {"sem_dim", s.sem_dim},
                {"nuis_dim", s.nuis_dim},
                {"feature_dim", s.feature_dim},
                {"samples_per_class", s.samples_per_class},
                {"sem_noise", s.sem_noise},
                {"obs_noise", s.obs_noise},
                {"nuis_scale", s.nuis_scale},
                {"train_fraction", s.train_fraction},
                {"seed", s.seed}};
}

SyntheticSpec synthetic_from_json(const json& j) {
    SyntheticSpec s;
    reject_unknown(j,
                   {"seen_classes", "unseen_classes", "attr_dim", "sem_dim", "nuis_dim",
                    "feature_dim", "samples_per_class", "sem_noise", "obs_noise", "nuis_scale",
                    "train_fraction", "seed"},
                   "synthetic");
    maybe_get(j, "seen_classes", s.seen_classes);
    maybe_get(j, "unseen_classes", s.unseen_classes);
    maybe_get(j, "attr_dim", s.attr_dim);
    maybe_get(j, "sem_dim", s.sem_dim);
    maybe_get(j, "nuis_dim", s.nuis_dim);
    maybe_get(j, "feature_dim", s.feature_dim);
    maybe_get(j, "samples_per_class", s.samples_per_class);
    maybe_get(j, "sem_noise", s.sem_noise);
    maybe_get(j, "obs_noise", s.obs_noise);
    maybe_get(j, "nuis_scale", s.nuis_scale);
    maybe_get(j, "train_fraction", s.train_fraction);
    maybe_get(j, "seed", s.seed);
    return s;
}

json eval_to_json(const EvalConfig& e) {
    return json{{"classifier_lr", e.classifier.lr},
                {"classifier_epochs", e.classifier.epochs},
                {"classifier_batch", e.classifier.batch_size},
                {"classifier_seed", e.classifier.seed},
                {"n_syn", e.n_syn},
                {"ratios", e.ratios},
                {"seed", e.seed}};
}

EvalConfig eval_from_json(const json& j) {
    EvalConfig e;
    reject_unknown(j,
                   {"classifier_lr", "classifier_epochs", "classifier_batch", "classifier_seed",
                    "n_syn", "ratios", "seed"},
                   "eval");
    maybe_get(j, "classifier_lr", e.classifier.lr);
    maybe_get(j, "classifier_epochs", e.classifier.epochs);
    maybe_get(j, "classifier_batch", e.classifier.batch_size);
    maybe_get(j, "classifier_seed", e.classifier.seed);
    maybe_get(j, "n_syn", e.n_syn);
    maybe_get(j, "ratios", e.ratios);
    maybe_get(j, "seed", e.seed);
    return e;
}

} // namespace

RunConfig run_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown(j, {"seed", "synthetic", "train", "eval"}, "config root");
    RunConfig cfg;
    maybe_get(j, "seed", cfg.seed);
    if (j.contains("synthetic")) cfg.synthetic = synthetic_from_json(j.at("synthetic"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train").dump());
    if (j.contains("eval")) cfg.eval = eval_from_json(j.at("eval"));
    // The root seed flows into sections that did not pin their own.
    if (!j.contains("synthetic") || !j.at("synthetic").contains("seed"))
        cfg.synthetic.seed = cfg.seed;
    if (!j.contains("train") || !j.at("train").contains("seed")) cfg.train.seed = cfg.seed;
    if (!j.contains("eval") || !j.at("eval").contains("seed")) cfg.eval.seed = cfg.seed;
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return run_config_from_json(buf.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["synthetic"] = synthetic_to_json(cfg.synthetic);
    j["train"] = json::parse(train_config_to_json(cfg.train));
    j["eval"] = eval_to_json(cfg.eval);
    return j.dump(2);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string value_text = assignment.substr(eq + 1);

    json doc = json::parse(run_config_to_json(cfg));
    json* node = &doc;
    std::size_t begin = 0;
    std::vector<std::string> keys;
    while (begin <= path.size()) {
        const auto dot = path.find('.', begin);
        keys.push_back(path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin));
        if (dot == std::string::npos) break;
        begin = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node->is_object() || !node->contains(keys[i]))
            throw ConfigError("--set: unknown config path '" + path + "'");
        node = &node->at(keys[i]);
    }
    if (!node->is_object() || !node->contains(keys.back()))
        throw ConfigError("--set: unknown config path '" + path + "'");

    json value;
    try {
        value = json::parse(value_text);
    } catch (const json::exception&) {
        value = value_text; // bare strings: train.stream=real
    }
    (*node)[keys.back()] = value;
    cfg = run_config_from_json(doc.dump());
}

} // namespace sdgzsl

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdgzsl/errors.hpp"
#include "sdgzsl/evaluation.hpp"
#include "sdgzsl/gradcheck_suite.hpp"
#include "sdgzsl/run_config.hpp"
#include "sdgzsl/tc_bench.hpp"
#include "sdgzsl/trainer.hpp"

namespace fs = std::filesystem;
using namespace sdgzsl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;  // bad arguments, missing files, I/O failures
constexpr int kExitCheck = 2;  // a check command found a metric out of tolerance

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = load_run_config(opts.config_path);
    for (const auto& assignment : opts.overrides) apply_override(cfg, assignment);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.synthetic.seed = *opts.seed;
        cfg.train.seed = *opts.seed;
        cfg.eval.seed = *opts.seed;
    }
    return cfg;
}

// Every command dumps the configuration it actually ran with.
void dump_resolved(const RunConfig& cfg, const std::string& out_dir) {
    const std::string text = run_config_to_json(cfg);
    if (out_dir.empty()) {
        std::cout << text << "\n";
        return;
    }
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "resolved_config.json");
    os << text << "\n";
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_out = true) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration");
    cmd->add_option("--set", opts.overrides, "Override a config value: path=value")->take_all();
    cmd->add_option("--seed", opts.seed, "Seed for every stream (overrides the config seed)");
    if (with_out) cmd->add_option("--out", opts.out_dir, "Output directory")->required();
}

int cmd_synth_data(const CommonOpts& opts) {
    RunConfig cfg = resolve_config(opts);
    SyntheticData data = generate_synthetic(cfg.synthetic);
    const std::string manifest = save_synthetic(data, cfg.synthetic, opts.out_dir);
    dump_resolved(cfg, opts.out_dir);
    std::cout << "wrote " << manifest << " (" << data.bundle.sample_count() << " samples)\n";
    return kExitOk;
}

void apply_ablation(TrainConfig& cfg, const std::string& ablation) {
    if (ablation.empty()) return;
    if (ablation == "no-rn") {
        cfg.weights.rel_weight = 0;
    } else if (ablation == "no-tc") {
        cfg.weights.tc_weight = 0;
        cfg.weights.dis_weight = 0;
    } else if (ablation == "cvae-only") {
        cfg.weights.rel_weight = 0;
        cfg.weights.tc_weight = 0;
        cfg.weights.dis_weight = 0;
    } else {
        throw ConfigError("--ablation must be one of no-rn / no-tc / cvae-only");
    }
}

int cmd_train(const CommonOpts& opts, const std::string& data_manifest, const std::string& ablation,
              const std::string& resume_path) {
    RunConfig cfg = resolve_config(opts);
    apply_ablation(cfg.train, ablation);
    DatasetBundle bundle = load_bundle(data_manifest);

    fs::create_directories(opts.out_dir);
    TrainLog log;
    TrainerState state = [&] {
        if (!resume_path.empty()) {
            TrainerState s = load_checkpoint(resume_path);
            // Everything but the schedule extent comes from the checkpoint.
            s.cfg.epochs = cfg.train.epochs;
            return s;
        }
        TrainConfig tc = cfg.train;
        if (tc.model.feature_dim == 0) tc.model.feature_dim = bundle.feature_dim();
        if (tc.model.attr_dim == 0) tc.model.attr_dim = bundle.attr_dim();
        return TrainerState(tc);
    }();
    cfg.train = state.cfg;
    dump_resolved(cfg, opts.out_dir);

    train_epochs(state, bundle, log);

    const std::string ckpt = (fs::path(opts.out_dir) / "checkpoint.sdzc").string();
    save_checkpoint(state, ckpt);
    log.write_csv((fs::path(opts.out_dir) / "trainlog.csv").string());
    std::cout << "wrote " << ckpt << " after " << state.epochs_done << " epochs\n";
    return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& data_manifest, const std::string& ckpt_path,
             const std::string& rep_name) {
    RunConfig cfg = resolve_config(opts);
    DatasetBundle bundle = load_bundle(data_manifest);
    TrainerState state = load_checkpoint(ckpt_path);
    dump_resolved(cfg, opts.out_dir);

    GZSLReport report = evaluate_gzsl(state.model, bundle, cfg.eval, rep_from_string(rep_name));
    fs::create_directories(opts.out_dir);
    report.write_json((fs::path(opts.out_dir) / ("report_" + rep_name + ".json")).string());
    report.write_confusion_csv(
        (fs::path(opts.out_dir) / ("confusion_counts_" + rep_name + ".csv")).string(),
        (fs::path(opts.out_dir) / ("confusion_percent_" + rep_name + ".csv")).string());
    std::printf("rep=%s U=%.2f S=%.2f H=%.2f T1=%.2f\n", rep_name.c_str(), report.unseen_acc,
                report.seen_acc, report.harmonic, report.t1);
    return kExitOk;
}

int cmd_retrieve(const CommonOpts& opts, const std::string& data_manifest,
                 const std::string& ckpt_path, const std::string& ratios_text) {
    RunConfig cfg = resolve_config(opts);
    if (!ratios_text.empty()) {
        cfg.eval.ratios.clear();
        std::stringstream ss(ratios_text);
        std::string tok;
        while (std::getline(ss, tok, ',')) cfg.eval.ratios.push_back(std::stod(tok));
    }
    DatasetBundle bundle = load_bundle(data_manifest);
    TrainerState state = load_checkpoint(ckpt_path);
    dump_resolved(cfg, opts.out_dir);

    Rng rng(cfg.eval.seed, "eval-retrieval");
    auto result = retrieval_map(state.model, bundle, cfg.eval.ratios, cfg.eval.n_syn, rng);

    std::ostringstream csv;
    csv << "ratio,map\r\n";
    for (const auto& [ratio, v] : result) {
        std::printf("ratio=%.2f mAP=%.4f\n", ratio, v);
        csv << ratio << ',' << v << "\r\n";
    }
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        std::ofstream os(fs::path(opts.out_dir) / "retrieval.csv", std::ios::binary);
        os << csv.str();
    }
    return kExitOk;
}

int cmd_gradcheck(const CommonOpts& opts, int n_seeds) {
    RunConfig cfg = resolve_config(opts);
    dump_resolved(cfg, opts.out_dir);
    bool pass = true;
    for (int s = 0; s < n_seeds; ++s) {
        GradSuiteConfig gc;
        gc.seed = cfg.seed + static_cast<std::uint64_t>(s);
        GradSuiteResult res = run_grad_suite(gc);
        for (const auto& term : res.terms) {
            std::printf("seed=%llu %-14s max_rel_err=%.3e tol=%.0e %s\n",
                        static_cast<unsigned long long>(gc.seed), term.name.c_str(),
                        term.max_rel_err, term.tolerance, term.pass ? "PASS" : "FAIL");
            if (!term.pass) pass = false;
        }
    }
    return pass ? kExitOk : kExitCheck;
}

int cmd_tc_bench(const CommonOpts& opts, const std::string& rhos_text, const std::string& dims_text) {
    RunConfig cfg = resolve_config(opts);
    dump_resolved(cfg, opts.out_dir);

    std::vector<double> rhos{0.0, 0.3, 0.5, 0.8};
    if (!rhos_text.empty()) {
        rhos.clear();
        std::stringstream ss(rhos_text);
        std::string tok;
        while (std::getline(ss, tok, ',')) rhos.push_back(std::stod(tok));
    }
    std::size_t dim_a = 4, dim_b = 4;
    if (!dims_text.empty()) {
        const auto comma = dims_text.find(',');
        if (comma == std::string::npos) throw ConfigError("--dims expects a,b");
        dim_a = static_cast<std::size_t>(std::stoul(dims_text.substr(0, comma)));
        dim_b = static_cast<std::size_t>(std::stoul(dims_text.substr(comma + 1)));
    }

    bool pass = true;
    std::printf("%6s %10s %10s %8s\n", "rho", "analytic", "estimate", "status");
    for (double rho : rhos) {
        TcBenchConfig bc;
        bc.rho = rho;
        bc.dim_a = dim_a;
        bc.dim_b = dim_b;
        bc.seed = cfg.seed + 11;
        TcBenchResult r = run_tc_bench(bc);
        const bool ok = rho == 0.0 ? std::abs(r.estimate) < 0.05 : r.rel_err < 0.15;
        if (!ok) pass = false;
        std::printf("%6.2f %10.4f %10.4f %8s\n", r.rho, r.analytic, r.estimate, ok ? "PASS" : "FAIL");
    }
    return pass ? kExitOk : kExitCheck;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantics-disentangling zero-shot learning pipeline"};
    app.require_subcommand(1);

    CommonOpts synth_opts, train_opts, eval_opts, retr_opts, grad_opts, tc_opts;
    std::string train_data, train_ablation, train_resume;
    std::string eval_data, eval_ckpt, eval_rep = "hs";
    std::string retr_data, retr_ckpt, retr_ratios;
    int grad_seeds = 5;
    std::string tc_rhos, tc_dims;

    CLI::App* synth = app.add_subcommand("synth-data", "Generate the synthetic benchmark");
    add_common(synth, synth_opts);

    CLI::App* train = app.add_subcommand("train", "Train on a dataset manifest");
    add_common(train, train_opts);
    train->add_option("--data", train_data, "Dataset manifest JSON")->required();
    train->add_option("--ablation", train_ablation, "no-rn | no-tc | cvae-only");
    train->add_option("--resume", train_resume, "Checkpoint to resume from");

    CLI::App* evalc = app.add_subcommand("eval", "GZSL/ZSL evaluation of a checkpoint");
    add_common(evalc, eval_opts);
    evalc->add_option("--data", eval_data, "Dataset manifest JSON")->required();
    evalc->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
    evalc->add_option("--rep", eval_rep, "Representation slice: hs | hn | h");

    CLI::App* retr = app.add_subcommand("retrieve", "Zero-shot retrieval mAP");
    add_common(retr, retr_opts);
    retr->add_option("--data", retr_data, "Dataset manifest JSON")->required();
    retr->add_option("--ckpt", retr_ckpt, "Checkpoint file")->required();
    retr->add_option("--ratios", retr_ratios, "Comma list, e.g. 1.0,0.5,0.25");

    CLI::App* grad = app.add_subcommand("gradcheck", "64-bit finite-difference gradient checks");
    add_common(grad, grad_opts, /*with_out=*/false);
    grad->add_option("--out", grad_opts.out_dir, "Output directory for the resolved config");
    grad->add_option("--seeds", grad_seeds, "Number of seeds to run");

    CLI::App* tc = app.add_subcommand("tc-bench", "Density-ratio TC estimate vs analytic value");
    add_common(tc, tc_opts, /*with_out=*/false);
    tc->add_option("--out", tc_opts.out_dir, "Output directory for the resolved config");
    tc->add_option("--rhos", tc_rhos, "Comma list of correlations (default 0,0.3,0.5,0.8)");
    tc->add_option("--rho", tc_rhos, "Single correlation value");
    tc->add_option("--dims", tc_dims, "Half dimensions a,b (default 4,4)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth_data(synth_opts);
        if (train->parsed()) return cmd_train(train_opts, train_data, train_ablation, train_resume);
        if (evalc->parsed()) return cmd_eval(eval_opts, eval_data, eval_ckpt, eval_rep);
        if (retr->parsed()) return cmd_retrieve(retr_opts, retr_data, retr_ckpt, retr_ratios);
        if (grad->parsed()) return cmd_gradcheck(grad_opts, grad_seeds);
        if (tc->parsed()) return cmd_tc_bench(tc_opts, tc_rhos, tc_dims);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mtlab/benchmark.hpp"
#include "mtlab/common.hpp"
#include "mtlab/evalkit.hpp"
#include "mtlab/landscape.hpp"
#include "mtlab/nnet.hpp"
#include "mtlab/synthgen.hpp"
#include "mtlab/trainer.hpp"

namespace {

using namespace mtlab;

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

struct SplitRef {
    std::string domain;
    std::string split;
    const std::vector<synthgen::Scene>* scenes;
};

std::vector<SplitRef> all_splits(const synthgen::BenchmarkData& data) {
    return {
        {"s1", "train", &data.s1.train},      {"s2", "train", &data.s2.train},
        {"s2", "val", &data.s2.val},          {"s3", "train", &data.s3.train},
        {"s3", "val", &data.s3.val},          {"t", "test", &data.target.test},
        {"t", "train", &data.target.train},   {"t", "val", &data.target.val},
    };
}

int cmd_gen_data(const std::string& out_dir, const std::string& domain, const std::string& split,
                 std::uint64_t data_seed) {
    synthgen::DataSpec spec;
    spec.seed = data_seed;
    const synthgen::BenchmarkData data = synthgen::build_benchmark_data(spec);
    int written = 0;
    for (const SplitRef& ref : all_splits(data)) {
        if (!domain.empty() && ref.domain != domain) continue;
        if (!split.empty() && ref.split != split) continue;
        const std::string dir = out_dir + "/" + ref.domain + "/" + ref.split;
        std::filesystem::create_directories(dir);
        for (std::size_t i = 0; i < ref.scenes->size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "scene_%05zu", i);
            synthgen::write_scene((*ref.scenes)[i], dir + "/" + name + ".mtim",
                                  dir + "/" + name + ".json");
            ++written;
        }
    }
    std::cout << "wrote " << written << " scenes under " << out_dir << "\n";
    return 0;
}

trainer::TrainerConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return {};
    return trainer::parse_trainer_config(path);
}

trainer::TrainData wire_data(trainer::TrainMode mode, const synthgen::BenchmarkData& data) {
    trainer::TrainData td;
    td.labeled = {"s1", &data.s1.train, nullptr};
    if (mode == trainer::TrainMode::Uda) {
        td.aux.push_back({"t", &data.target.train, &data.target.val});
    } else if (mode != trainer::TrainMode::EmaOnly) {
        td.aux.push_back({"s2", &data.s2.train, &data.s2.val});
        td.aux.push_back({"s3", &data.s3.train, &data.s3.val});
    }
    return td;
}

int cmd_pretrain(const std::string& config_path, std::optional<std::uint64_t> seed,
                 std::uint64_t data_seed, const std::string& out) {
    trainer::TrainerConfig cfg = load_config_or_default(config_path);
    if (seed) cfg.seed = *seed;
    synthgen::DataSpec dspec;
    dspec.seed = data_seed;
    const synthgen::BenchmarkData data = synthgen::build_benchmark_data(dspec);
    const nnet::ModelConfig model;
    const nnet::ParamVec params = trainer::pretrain(model, cfg, data.s1.train);
    nnet::save_checkpoint(params, {model, cfg.iters_pretrain, "pretrain", cfg.seed}, out);
    std::cout << "saved " << out << "\n";
    return 0;
}

int cmd_train(const std::string& mode_str, const std::string& config_path,
              std::optional<double> beta, std::optional<double> alpha,
              std::optional<std::uint64_t> seed, std::uint64_t data_seed,
              const std::string& init_path, const std::string& out_dir) {
    trainer::TrainerConfig cfg = load_config_or_default(config_path);
    if (beta) cfg.beta = *beta;
    if (alpha) cfg.alpha = *alpha;
    if (seed) cfg.seed = *seed;
    const trainer::TrainMode mode = trainer::train_mode_from_string(mode_str);

    synthgen::DataSpec dspec;
    dspec.seed = data_seed;
    const synthgen::BenchmarkData data = synthgen::build_benchmark_data(dspec);
    const nnet::ModelConfig model;

    nnet::ParamVec init;
    if (!init_path.empty()) {
        auto [params, meta] = nnet::load_checkpoint(init_path);
        if (meta.config.hash() != model.hash())
            throw ConfigError("init checkpoint was written for a different model config");
        init = std::move(params);
    } else {
        init = trainer::pretrain(model, cfg, data.s1.train);
    }

    const trainer::TrainData td = wire_data(mode, data);
    trainer::TrainOptions opts;
    std::vector<const std::vector<synthgen::Scene>*> val_splits;
    if (mode == trainer::TrainMode::Uda)
        val_splits = {&data.target.val};
    else
        val_splits = {&data.s2.val, &data.s3.val};
    opts.validator = [&](const nnet::ParamVec& p) {
        double acc = 0.0;
        for (const auto* split : val_splits)
            acc += evalkit::evaluate_detector(model, p, *split).map50;
        return acc / double(val_splits.size());
    };

    const trainer::TrainState state = trainer::train(mode, model, cfg, td, init, opts);

    std::filesystem::create_directories(out_dir);
    const std::string mode_name = trainer::to_string(mode);
    nnet::save_checkpoint(state.best_teacher,
                          {model, state.best_iteration, mode_name + "-teacher", cfg.seed},
                          out_dir + "/teacher.mtfl");
    nnet::save_checkpoint(state.best_student,
                          {model, state.best_iteration, mode_name + "-student", cfg.seed},
                          out_dir + "/student.mtfl");
    trainer::write_loss_history_csv(state, out_dir + "/loss_history.csv");
    std::cout << "best iteration " << state.best_iteration << " (val map50 "
              << state.best_val_score << "), checkpoints in " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& split, std::uint64_t data_seed) {
    auto [params, meta] = nnet::load_checkpoint(ckpt);
    if (meta.mode.size() >= 8 && meta.mode.substr(meta.mode.size() - 8) == "-student")
        std::cerr << "warning: evaluating a student checkpoint; the paired teacher is the "
                     "deployed network for this mode\n";
    synthgen::DataSpec dspec;
    dspec.seed = data_seed;
    const synthgen::BenchmarkData data = synthgen::build_benchmark_data(dspec);
    const std::vector<synthgen::Scene>* scenes = nullptr;
    if (split == "target") scenes = &data.target.test;
    else if (split == "s2") scenes = &data.s2.val;
    else if (split == "s3") scenes = &data.s3.val;
    else throw UsageError("unknown split: " + split);

    const evalkit::EvalResult res = evalkit::evaluate_detector(meta.config, params, *scenes);
    std::cout << "checkpoint mode: " << meta.mode << " (iteration " << meta.iteration << ")\n";
    for (std::size_t k = 0; k < res.per_class_ap.size(); ++k) {
        std::cout << "class " << k << " ap: ";
        if (res.per_class_ap[k]) std::cout << *res.per_class_ap[k];
        else std::cout << "n/a";
        std::cout << "\n";
    }
    std::cout << "map50: " << res.map50 << "\n";
    return 0;
}

int cmd_probe_flatness(const std::string& ckpt, const std::string& risk_name,
                       const std::string& gammas_str, int samples, std::uint64_t seed,
                       std::uint64_t data_seed, const std::string& out_path) {
    auto [params, meta] = nnet::load_checkpoint(ckpt);
    synthgen::DataSpec dspec;
    dspec.seed = data_seed;
    const synthgen::BenchmarkData data = synthgen::build_benchmark_data(dspec);
    const int probe_scenes = 100;
    const std::uint64_t weak_seed = derive_seed(dspec.seed, 0xF0);

    auto subset = [&](const std::vector<synthgen::Scene>& v) {
        return std::vector<synthgen::Scene>(
            v.begin(), v.begin() + std::ptrdiff_t(std::min<std::size_t>(v.size(), probe_scenes)));
    };

    landscape::RiskSpec risk;
    if (risk_name == "empirical") {
        risk.add_domain("s1", meta.config, subset(data.s1.train), weak_seed);
        risk.add_domain("s2", meta.config, subset(data.s2.train), weak_seed);
        risk.add_domain("s3", meta.config, subset(data.s3.train), weak_seed);
    } else if (risk_name == "target") {
        risk.add_domain("t", meta.config, subset(data.target.test), weak_seed);
    } else if (risk_name.rfind("domain:", 0) == 0) {
        const std::string d = risk_name.substr(7);
        if (d == "s1") risk.add_domain("s1", meta.config, subset(data.s1.train), weak_seed);
        else if (d == "s2") risk.add_domain("s2", meta.config, subset(data.s2.train), weak_seed);
        else if (d == "s3") risk.add_domain("s3", meta.config, subset(data.s3.train), weak_seed);
        else if (d == "t") risk.add_domain("t", meta.config, subset(data.target.test), weak_seed);
        else throw UsageError("unknown domain in --risk: " + d);
    } else {
        throw UsageError("--risk must be empirical, target or domain:<id>");
    }

    const std::vector<double> gammas = parse_double_list(gammas_str);
    Rng rng(seed);
    const landscape::FlatnessReport report =
        landscape::flatness(risk.fn(), params, gammas, samples, rng, risk_name);

    if (out_path.empty()) {
        std::cout << "gamma,sample_idx,delta_abs,mean\n";
        std::cout.precision(17);
        for (std::size_t g = 0; g < report.gamma_values.size(); ++g)
            for (std::size_t j = 0; j < report.samples[g].size(); ++j)
                std::cout << report.gamma_values[g] << "," << j << "," << report.samples[g][j]
                          << "," << report.means[g] << "\n";
    } else {
        landscape::write_flatness_csv(report, out_path);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_run_benchmark(const std::string& suite_path, const std::string& out_dir) {
    const benchmark::SuiteConfig suite =
        suite_path.empty() ? benchmark::default_suite() : benchmark::load_suite(suite_path);
    const benchmark::SuiteReport report = benchmark::run_benchmark(suite);
    benchmark::write_reports(report, out_dir);
    std::cout << "reports written to " << out_dir << "\n";
    for (const auto& [name, passed] : report.checks)
        std::cout << (passed ? "[ok]   " : "[FAIL] ") << name << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean Teacher domain-generalization lab on a synthetic detection task"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_out = "data";
    std::string gd_domain, gd_split;
    std::uint64_t gd_seed = synthgen::DataSpec{}.seed;
    auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset to disk");
    gen->add_option("--out", gd_out, "output directory");
    gen->add_option("--domain", gd_domain, "restrict to one domain (s1|s2|s3|t)");
    gen->add_option("--split", gd_split, "restrict to one split (train|val|test)");
    gen->add_option("--data-seed", gd_seed, "dataset seed");

    // pretrain
    std::string pt_config, pt_out = "pretrain.mtfl";
    std::optional<std::uint64_t> pt_seed;
    std::uint64_t pt_data_seed = synthgen::DataSpec{}.seed;
    auto* pre = app.add_subcommand("pretrain", "supervised pretraining on the labeled domain");
    pre->add_option("--config", pt_config, "trainer config file (key=value)");
    pre->add_option("--seed", pt_seed, "training seed (overrides config)");
    pre->add_option("--data-seed", pt_data_seed, "dataset seed");
    pre->add_option("--out", pt_out, "checkpoint path");

    // train
    std::string tr_mode = "ss-dgod", tr_config, tr_init, tr_out = "run";
    std::optional<double> tr_beta, tr_alpha;
    std::optional<std::uint64_t> tr_seed;
    std::uint64_t tr_data_seed = synthgen::DataSpec{}.seed;
    auto* tr = app.add_subcommand("train", "Mean Teacher training");
    tr->add_option("--mode", tr_mode, "ema-only|ss-dgod|ws-dgod|uda")->required();
    tr->add_option("--config", tr_config, "trainer config file (key=value)");
    tr->add_option("--beta", tr_beta, "regularization weight (overrides config)");
    tr->add_option("--alpha", tr_alpha, "EMA rate (overrides config)");
    tr->add_option("--seed", tr_seed, "training seed (overrides config)");
    tr->add_option("--data-seed", tr_data_seed, "dataset seed");
    tr->add_option("--init", tr_init, "pretrained checkpoint (pretrains in-process when absent)");
    tr->add_option("--out-dir", tr_out, "directory for checkpoints and loss history");

    // eval
    std::string ev_ckpt, ev_split = "target";
    std::uint64_t ev_data_seed = synthgen::DataSpec{}.seed;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with mAP50");
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--split", ev_split, "target|s2|s3");
    ev->add_option("--data-seed", ev_data_seed, "dataset seed");

    // probe-flatness
    std::string pf_ckpt, pf_risk = "empirical", pf_gammas = "0.5,1,2,4,8", pf_out;
    int pf_samples = 10;
    std::uint64_t pf_seed = 1, pf_data_seed = synthgen::DataSpec{}.seed;
    auto* pf = app.add_subcommand("probe-flatness", "random-direction loss change probe");
    pf->add_option("--ckpt", pf_ckpt, "checkpoint path")->required();
    pf->add_option("--risk", pf_risk, "empirical|target|domain:<id>");
    pf->add_option("--gammas", pf_gammas, "comma-separated radii");
    pf->add_option("--samples", pf_samples, "directions per radius");
    pf->add_option("--seed", pf_seed, "probe seed");
    pf->add_option("--data-seed", pf_data_seed, "dataset seed");
    pf->add_option("--out", pf_out, "CSV path (stdout when absent)");

    // run-benchmark
    std::string rb_suite, rb_out = "reports";
    auto* rb = app.add_subcommand("run-benchmark", "train/evaluate the full method grid");
    rb->add_option("--suite", rb_suite, "suite JSON (built-in default when absent)");
    rb->add_option("--out", rb_out, "report directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gd_out, gd_domain, gd_split, gd_seed);
        if (pre->parsed()) return cmd_pretrain(pt_config, pt_seed, pt_data_seed, pt_out);
        if (tr->parsed())
            return cmd_train(tr_mode, tr_config, tr_beta, tr_alpha, tr_seed, tr_data_seed, tr_init,
                             tr_out);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_split, ev_data_seed);
        if (pf->parsed())
            return cmd_probe_flatness(pf_ckpt, pf_risk, pf_gammas, pf_samples, pf_seed,
                                      pf_data_seed, pf_out);
        if (rb->parsed()) return cmd_run_benchmark(rb_suite, rb_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

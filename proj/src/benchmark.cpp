#include "mtlab/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <nlohmann/json.hpp>

#include "mtlab/common.hpp"

namespace mtlab::benchmark {

using json = nlohmann::json;

SuiteConfig default_suite() {
    SuiteConfig s;
    s.methods = {
        {"single-dg", false, trainer::TrainMode::EmaOnly, 0.0},
        {"ema-only", true, trainer::TrainMode::EmaOnly, 0.0},
        {"mt", true, trainer::TrainMode::SsDgod, 0.0},
        {"mt@b0.25", true, trainer::TrainMode::SsDgod, 0.25},
        {"mt+regul", true, trainer::TrainMode::SsDgod, 0.5},
        {"mt@b0.75", true, trainer::TrainMode::SsDgod, 0.75},
        {"mt@b1", true, trainer::TrainMode::SsDgod, 1.0},
        {"ws", true, trainer::TrainMode::WsDgod, 0.0},
    };
    s.seeds = {1, 2, 3, 4, 5};
    return s;
}

SuiteConfig load_suite(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open suite: " + path);
    const json j = json::parse(f);
    SuiteConfig s = default_suite();
    if (j.contains("methods")) {
        s.methods.clear();
        for (const auto& mj : j.at("methods")) {
            MethodSpec m;
            m.name = mj.at("name").get<std::string>();
            m.train = mj.value("train", true);
            if (m.train) m.mode = trainer::train_mode_from_string(mj.at("mode").get<std::string>());
            m.beta = mj.value("beta", 0.0);
            s.methods.push_back(m);
        }
    }
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("trainer")) {
        const auto& tj = j.at("trainer");
        trainer::TrainerConfig& c = s.base;
        c.alpha = tj.value("alpha", c.alpha);
        c.lr = tj.value("lr", c.lr);
        c.batch = tj.value("batch", c.batch);
        c.iters_pretrain = tj.value("iters_pretrain", c.iters_pretrain);
        c.iters_mt = tj.value("iters_mt", c.iters_mt);
        c.tau = tj.value("tau", c.tau);
        c.temperature = tj.value("T", c.temperature);
        c.pl_mode = tj.value("pl_mode", c.pl_mode);
        c.ema_every = tj.value("ema_every", c.ema_every);
        c.val_every = tj.value("val_every", c.val_every);
    }
    if (j.contains("data_seed")) s.data.seed = j.at("data_seed").get<std::uint64_t>();
    if (j.contains("gammas")) s.gammas = j.at("gammas").get<std::vector<double>>();
    s.flat_samples = j.value("flat_samples", s.flat_samples);
    s.robust_samples = j.value("robust_samples", s.robust_samples);
    s.robust_gamma = j.value("robust_gamma", s.robust_gamma);
    s.risk_scenes = j.value("risk_scenes", s.risk_scenes);
    s.score_floor = j.value("score_floor", s.score_floor);
    return s;
}

namespace {

std::vector<synthgen::Scene> head(const std::vector<synthgen::Scene>& scenes, int n) {
    const std::size_t k = std::min(scenes.size(), std::size_t(std::max(0, n)));
    return {scenes.begin(), scenes.begin() + std::ptrdiff_t(k)};
}

struct SuiteContext {
    const SuiteConfig& suite;
    synthgen::BenchmarkData data;
    landscape::RiskSpec empirical_risk;
    landscape::RiskSpec target_risk;
    std::map<std::uint64_t, nnet::ParamVec> pretrain_cache;

    explicit SuiteContext(const SuiteConfig& s) : suite(s), data(synthgen::build_benchmark_data(s.data)) {
        const std::uint64_t ws = derive_seed(s.data.seed, 0xF0);
        empirical_risk.add_domain("s1", s.model, head(data.s1.train, s.risk_scenes), ws);
        empirical_risk.add_domain("s2", s.model, head(data.s2.train, s.risk_scenes), ws);
        empirical_risk.add_domain("s3", s.model, head(data.s3.train, s.risk_scenes), ws);
        target_risk.add_domain("t", s.model, head(data.target.test, s.risk_scenes), ws);
    }

    const nnet::ParamVec& pretrained(std::uint64_t seed) {
        auto it = pretrain_cache.find(seed);
        if (it != pretrain_cache.end()) return it->second;
        trainer::TrainerConfig cfg = suite.base;
        cfg.seed = seed;
        nnet::ParamVec p = trainer::pretrain(suite.model, cfg, data.s1.train);
        return pretrain_cache.emplace(seed, std::move(p)).first->second;
    }
};

std::vector<double> flat_means(const SuiteContext& ctx, const landscape::RiskSpec& risk,
                               const nnet::ParamVec& params, std::uint64_t stream) {
    Rng rng(derive_seed(ctx.suite.data.seed, stream));
    const landscape::FlatnessReport rep =
        landscape::flatness(risk.fn(), params, ctx.suite.gammas, ctx.suite.flat_samples, rng);
    return rep.means;
}

void probe_cell(SuiteContext& ctx, CellResult& cell, const nnet::ParamVec& deployed,
                const nnet::ParamVec* student, std::uint64_t seed) {
    const std::uint64_t base = derive_seed(seed, fnv1a(cell.method.data(), cell.method.size()));
    cell.flat_emp = flat_means(ctx, ctx.empirical_risk, deployed, base + 1);
    cell.flat_tgt = flat_means(ctx, ctx.target_risk, deployed, base + 2);
    if (student) {
        cell.flat_emp_student = flat_means(ctx, ctx.empirical_risk, *student, base + 3);
        cell.flat_tgt_student = flat_means(ctx, ctx.target_risk, *student, base + 4);
    }
}

CellResult run_cell(SuiteContext& ctx, const MethodSpec& method, std::uint64_t seed) {
    const SuiteConfig& suite = ctx.suite;
    CellResult cell;
    cell.method = method.name;
    cell.seed = seed;

    const nnet::ParamVec& init = ctx.pretrained(seed);

    if (!method.train) {
        const evalkit::EvalResult ev = evalkit::evaluate_detector(
            suite.model, init, ctx.data.target.test, suite.score_floor);
        cell.per_class_ap = ev.per_class_ap;
        cell.map50 = ev.map50;
        probe_cell(ctx, cell, init, nullptr, seed);
        return cell;
    }

    trainer::TrainerConfig cfg = suite.base;
    cfg.seed = seed;
    cfg.beta = method.beta;

    trainer::TrainData td;
    td.labeled = {"s1", &ctx.data.s1.train, nullptr};
    std::vector<const std::vector<synthgen::Scene>*> val_splits;
    if (method.mode == trainer::TrainMode::Uda) {
        td.aux.push_back({"t", &ctx.data.target.train, &ctx.data.target.val});
        val_splits = {&ctx.data.target.val};
    } else {
        if (method.mode != trainer::TrainMode::EmaOnly) {
            td.aux.push_back({"s2", &ctx.data.s2.train, &ctx.data.s2.val});
            td.aux.push_back({"s3", &ctx.data.s3.train, &ctx.data.s3.val});
        }
        val_splits = {&ctx.data.s2.val, &ctx.data.s3.val};
    }

    trainer::TrainOptions opts;
    opts.validator = [&](const nnet::ParamVec& params) {
        double acc = 0.0;
        for (const auto* split : val_splits)
            acc += evalkit::evaluate_detector(suite.model, params, *split, suite.score_floor).map50;
        return acc / double(val_splits.size());
    };
    std::vector<nnet::ParamVec> snapshots;
    snapshots.push_back(init);
    opts.hook = [&](const trainer::IterRecord& rec) {
        if (rec.iteration % cfg.val_every == 0) snapshots.push_back(rec.student);
    };

    const trainer::TrainState state =
        trainer::train(method.mode, suite.model, cfg, td, init, opts);
    cell.has_teacher = true;

    const evalkit::EvalResult ev = evalkit::evaluate_detector(
        suite.model, state.best_teacher, ctx.data.target.test, suite.score_floor);
    cell.per_class_ap = ev.per_class_ap;
    cell.map50 = ev.map50;

    probe_cell(ctx, cell, state.best_teacher, &state.best_student, seed);

    double min_risk = ctx.empirical_risk.evaluate(snapshots.front());
    for (std::size_t i = 1; i < snapshots.size(); ++i)
        min_risk = std::min(min_risk, ctx.empirical_risk.evaluate(snapshots[i]));
    Rng gap_rng_t(derive_seed(seed, fnv1a(cell.method.data(), cell.method.size()) + 11));
    Rng gap_rng_s(derive_seed(seed, fnv1a(cell.method.data(), cell.method.size()) + 12));
    cell.gap_teacher =
        landscape::rrm_erm_gap(ctx.empirical_risk.fn(), state.best_teacher, min_risk,
                               suite.robust_gamma, suite.robust_samples, gap_rng_t);
    cell.gap_student =
        landscape::rrm_erm_gap(ctx.empirical_risk.fn(), state.best_student, min_risk,
                               suite.robust_gamma, suite.robust_samples, gap_rng_s);
    cell.has_gap = true;
    return cell;
}

struct MethodStats {
    std::vector<double> maps;
    bool complete = true;
};

MethodStats stats_for(const SuiteReport& report, const std::string& method) {
    MethodStats st;
    bool seen = false;
    for (const CellResult& c : report.cells) {
        if (c.method != method) continue;
        seen = true;
        if (c.failed) st.complete = false;
        else st.maps.push_back(c.map50);
    }
    if (!seen) st.complete = false;
    return st;
}

double mean(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / double(v.size());
}

// Seed-mean of the F^gamma value at the middle of the gamma grid.
std::optional<double> mid_flatness(const SuiteReport& report, const std::string& method,
                                   bool student) {
    const std::size_t mid = report.suite.gammas.size() / 2;
    std::vector<double> vals;
    for (const CellResult& c : report.cells) {
        if (c.method != method || c.failed) continue;
        const std::vector<double>& src = student ? c.flat_tgt_student : c.flat_tgt;
        if (src.size() <= mid) return std::nullopt;
        vals.push_back(src[mid]);
    }
    if (vals.empty()) return std::nullopt;
    return mean(vals);
}

void compute_checks(SuiteReport& report) {
    auto have = [&](const std::string& m) { return report.mean_map(m).has_value(); };
    auto push = [&](const std::string& name, bool value) {
        report.checks.emplace_back(name, value);
    };

    if (have("single-dg") && have("ema-only"))
        push("single_dg_lt_ema_only", *report.mean_map("single-dg") < *report.mean_map("ema-only"));
    if (have("single-dg") && have("mt"))
        push("single_dg_lt_mt", *report.mean_map("single-dg") < *report.mean_map("mt"));
    if (have("mt") && have("mt+regul"))
        push("mt_lt_mt_regul", *report.mean_map("mt") < *report.mean_map("mt+regul"));
    if (have("single-dg") && have("mt+regul"))
        push("mt_regul_gain_ge_3pts",
             *report.mean_map("mt+regul") - *report.mean_map("single-dg") >= 0.03);
    if (have("ws") && have("mt"))
        push("ws_ge_ss", *report.mean_map("ws") >= *report.mean_map("mt"));

    const std::vector<std::string> beta_methods = {"mt", "mt@b0.25", "mt+regul", "mt@b0.75",
                                                   "mt@b1"};
    bool any_beta = false, sweep_ok = true;
    for (const std::string& m : beta_methods) {
        const MethodStats st = stats_for(report, m);
        if (!st.maps.empty() || !st.complete) any_beta = true;
        if (!st.complete) sweep_ok = false;
    }
    if (any_beta) push("beta_sweep_complete", sweep_ok);
    if (have("mt") && have("mt+regul"))
        push("beta05_ge_beta0", *report.mean_map("mt+regul") >= *report.mean_map("mt"));

    const auto f_mt = mid_flatness(report, "mt", false);
    const auto f_regul = mid_flatness(report, "mt+regul", false);
    const auto f_ema_student = mid_flatness(report, "ema-only", true);
    if (f_mt && f_regul) push("flatness_mt_regul_le_mt", *f_regul <= *f_mt);
    if (f_mt && f_ema_student) push("flatness_mt_le_ema_student", *f_mt <= *f_ema_student);
    for (const std::string& m : {std::string("mt"), std::string("mt+regul"), std::string("ws")}) {
        const auto ft = mid_flatness(report, m, false);
        const auto fs = mid_flatness(report, m, true);
        if (ft && fs) push("teacher_flatter_" + m, *ft <= *fs);
    }

    std::vector<double> gt, gs;
    for (const CellResult& c : report.cells)
        if (c.method == "mt" && !c.failed && c.has_gap) {
            gt.push_back(c.gap_teacher);
            gs.push_back(c.gap_student);
        }
    if (!gt.empty()) push("rrm_gap_teacher_le_student", mean(gt) <= mean(gs));
}

}  // namespace

const CellResult* SuiteReport::find(const std::string& method, std::uint64_t seed) const {
    for (const CellResult& c : cells)
        if (c.method == method && c.seed == seed) return &c;
    return nullptr;
}

std::optional<double> SuiteReport::mean_map(const std::string& method) const {
    const MethodStats st = stats_for(*this, method);
    if (st.maps.empty()) return std::nullopt;
    return mean(st.maps);
}

std::optional<double> SuiteReport::std_map(const std::string& method) const {
    const MethodStats st = stats_for(*this, method);
    if (st.maps.empty()) return std::nullopt;
    if (st.maps.size() < 2) return 0.0;
    const double m = mean(st.maps);
    double acc = 0.0;
    for (double x : st.maps) acc += (x - m) * (x - m);
    return std::sqrt(acc / double(st.maps.size() - 1));
}

std::optional<bool> SuiteReport::check(const std::string& name) const {
    for (const auto& [n, v] : checks)
        if (n == name) return v;
    return std::nullopt;
}

SuiteReport run_benchmark(const SuiteConfig& suite) {
    SuiteContext ctx(suite);
    SuiteReport report;
    report.suite = suite;

    for (const MethodSpec& method : suite.methods) {
        for (std::uint64_t seed : suite.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            CellResult cell;
            try {
                cell = run_cell(ctx, method, seed);
            } catch (const std::exception& e) {
                cell.method = method.name;
                cell.seed = seed;
                cell.failed = true;
                cell.error = e.what();
            }
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (suite.verbose) {
                std::cout << "[suite] " << method.name << " seed " << seed;
                if (cell.failed)
                    std::cout << " FAILED: " << cell.error;
                else
                    std::cout << " map50=" << cell.map50;
                std::cout << " (" << secs << "s)" << std::endl;
            }
            report.cells.push_back(std::move(cell));
        }
    }
    compute_checks(report);
    return report;
}

void write_reports(const SuiteReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string sep = "/";

    {
        std::ofstream f(out_dir + sep + "eval.csv");
        if (!f) throw ConfigError("cannot open eval.csv for writing");
        f << "method,seed,domain,class,ap,map50\n";
        f.precision(17);
        for (const CellResult& c : report.cells) {
            if (c.failed) continue;
            for (std::size_t k = 0; k < c.per_class_ap.size(); ++k) {
                f << c.method << "," << c.seed << ",target," << k << ",";
                if (c.per_class_ap[k])
                    f << *c.per_class_ap[k];
                else
                    f << "nan";
                f << "," << c.map50 << "\n";
            }
        }
    }

    {
        std::ofstream f(out_dir + sep + "flatness.csv");
        if (!f) throw ConfigError("cannot open flatness.csv for writing");
        f << "method,seed,risk,gamma,fgamma\n";
        f.precision(17);
        auto rows = [&](const std::string& name, std::uint64_t seed, const char* risk,
                        const std::vector<double>& means) {
            for (std::size_t g = 0; g < means.size(); ++g)
                f << name << "," << seed << "," << risk << "," << report.suite.gammas[g] << ","
                  << means[g] << "\n";
        };
        for (const CellResult& c : report.cells) {
            if (c.failed) continue;
            rows(c.method, c.seed, "empirical", c.flat_emp);
            rows(c.method, c.seed, "target", c.flat_tgt);
            if (c.has_teacher) {
                rows(c.method + "-student", c.seed, "empirical", c.flat_emp_student);
                rows(c.method + "-student", c.seed, "target", c.flat_tgt_student);
            }
        }
    }

    {
        std::ofstream f(out_dir + sep + "summary.csv");
        if (!f) throw ConfigError("cannot open summary.csv for writing");
        f << "method,mean_map,std_map,ordering_check,passed\n";
        f.precision(17);
        for (const MethodSpec& m : report.suite.methods) {
            const auto mm = report.mean_map(m.name);
            const auto sm = report.std_map(m.name);
            f << m.name << ",";
            if (mm) f << *mm;
            f << ",";
            if (sm) f << *sm;
            f << ",,\n";
        }
        for (const auto& [name, passed] : report.checks)
            f << ",,," << name << "," << (passed ? "true" : "false") << "\n";
    }
}

}  // namespace mtlab::benchmark

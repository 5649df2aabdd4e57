#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mtlab/evalkit.hpp"
#include "mtlab/landscape.hpp"
#include "mtlab/trainer.hpp"

namespace mtlab::benchmark {

// One comparison-table row family. train == false means pretrain-only
// (the single-domain baseline).
struct MethodSpec {
    std::string name;
    bool train = true;
    trainer::TrainMode mode = trainer::TrainMode::SsDgod;
    double beta = 0.0;
};

struct SuiteConfig {
    std::vector<MethodSpec> methods;
    std::vector<std::uint64_t> seeds;
    nnet::ModelConfig model;
    trainer::TrainerConfig base;  // seed and beta are overridden per cell
    synthgen::DataSpec data;
    std::vector<double> gammas{0.5, 1.0, 2.0, 4.0, 8.0};
    int flat_samples = 10;
    int robust_samples = 50;
    double robust_gamma = 4.0;
    int risk_scenes = 100;  // frozen probe scenes per domain
    double score_floor = 0.05;
    bool verbose = true;
};

// The method/seed grid the directional comparisons run on.
SuiteConfig default_suite();

// JSON suite file; absent keys fall back to default_suite() values.
SuiteConfig load_suite(const std::string& path);

struct CellResult {
    std::string method;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    bool has_teacher = false;  // false for the pretrain-only baseline

    std::vector<std::optional<double>> per_class_ap;  // on the target test split
    double map50 = 0.0;

    // F^gamma means per gamma on the deployed network (teacher when one
    // exists) and, for teacher/student pairs, on the paired student.
    std::vector<double> flat_emp, flat_tgt;
    std::vector<double> flat_emp_student, flat_tgt_student;

    double gap_teacher = 0.0;  // robust-risk minus trajectory-min empirical risk
    double gap_student = 0.0;
    bool has_gap = false;
};

struct SuiteReport {
    SuiteConfig suite;
    std::vector<CellResult> cells;
    std::vector<std::pair<std::string, bool>> checks;

    const CellResult* find(const std::string& method, std::uint64_t seed) const;
    // Seed-mean mAP over non-failed cells; nullopt when the method is absent
    // or every cell failed.
    std::optional<double> mean_map(const std::string& method) const;
    std::optional<double> std_map(const std::string& method) const;
    std::optional<bool> check(const std::string& name) const;
};

SuiteReport run_benchmark(const SuiteConfig& suite);

// eval.csv / flatness.csv / summary.csv under out_dir.
void write_reports(const SuiteReport& report, const std::string& out_dir);

}  // namespace mtlab::benchmark

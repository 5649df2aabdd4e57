#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtlab/nnet.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/synthgen.hpp"

namespace mtlab::trainer {

enum class TrainMode { EmaOnly, SsDgod, WsDgod, Uda };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainerConfig {
    double alpha = 0.9996;  // EMA rate
    double beta = 0.5;      // consistency regularization weight
    double lr = 0.05;       // constant SGD step
    int batch = 8;          // scenes per domain per step
    int iters_pretrain = 1500;
    int iters_mt = 3000;
    double tau = 0.8;          // hard pseudo-label threshold
    double temperature = 0.5;  // soft pseudo-label sharpening (file key "T")
    std::string pl_mode = "soft";
    int ema_every = 1;
    int val_every = 200;
    std::uint64_t seed = 1;
};

// Flat key=value config file with exactly the TrainerConfig keys.
TrainerConfig parse_trainer_config(const std::string& path);
void write_trainer_config(const TrainerConfig& config, const std::string& path);

// Scene sets a training run draws from. Pointers reference caller-owned data.
struct DomainTrainSet {
    std::string name;
    const std::vector<synthgen::Scene>* train = nullptr;
    const std::vector<synthgen::Scene>* val = nullptr;  // optional validation split
};

struct TrainData {
    DomainTrainSet labeled;              // s1
    std::vector<DomainTrainSet> aux;     // unlabeled / weakly labeled domains
};

struct IterLosses {
    int iteration = 0;
    std::vector<double> terms;  // aligned with TrainState::term_names
    double total = 0.0;
};

struct TrainState {
    nnet::ModelConfig model;
    nnet::ParamVec student;
    nnet::ParamVec teacher;
    int iteration = 0;
    Rng rng{0};
    std::vector<std::string> term_names;
    std::vector<IterLosses> loss_history;
    // Best-on-validation snapshot (equal to the final state when no validator
    // is supplied).
    nnet::ParamVec best_student;
    nnet::ParamVec best_teacher;
    int best_iteration = 0;
    double best_val_score = 0.0;
};

// Per-iteration observer record. References are only valid during the call.
struct IterRecord {
    int iteration;
    const nnet::ParamVec& student;
    const nnet::ParamVec& teacher;
    const std::vector<double>& terms;
    double total;
    // (teacher view, student view) image hashes for each consistency job of
    // this iteration; empty when the regularization branch did not run.
    const std::vector<std::pair<std::uint64_t, std::uint64_t>>& regul_view_hashes;
};

struct TrainOptions {
    std::function<void(const IterRecord&)> hook;
    // Scores a parameter vector on validation data (higher is better);
    // invoked on the teacher every val_every iterations.
    std::function<double(const nnet::ParamVec&)> validator;
};

// theta_t <- alpha * theta_t + (1 - alpha) * theta_s, elementwise.
nnet::ParamVec ema_update(const nnet::ParamVec& teacher, const nnet::ParamVec& student,
                          double alpha);

// Supervised pretraining on the labeled domain (weak augmentation only).
// The returned parameters initialize both networks of a Mean Teacher run.
nnet::ParamVec pretrain(const nnet::ModelConfig& model, const TrainerConfig& config,
                        const std::vector<synthgen::Scene>& labeled);

TrainState train(TrainMode mode, const nnet::ModelConfig& model, const TrainerConfig& config,
                 const TrainData& data, const nnet::ParamVec& init,
                 const TrainOptions& options = {});

// Continue from an explicit state (teacher may differ from student here).
void train_resume(TrainState& state, TrainMode mode, const TrainerConfig& config,
                  const TrainData& data, int iters, const TrainOptions& options = {});

// Loss history CSV: header "iter,term,value", one row per logged term plus a
// "total" row per iteration.
void write_loss_history_csv(const TrainState& state, const std::string& path);

}  // namespace mtlab::trainer

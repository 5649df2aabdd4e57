#pragma once

#include <vector>

#include "mtlab/nnet.hpp"

namespace mtlab::batcheval {

enum class LossKind { Supervised, Pseudo, Consistency };

// One scene-level loss evaluation. Pointers reference caller-owned storage
// that must outlive the batch call. `weight` scales both the loss and its
// gradient (regularization jobs carry beta here); `term` tags the per-term
// loss bookkeeping.
struct LossJob {
    LossKind kind = LossKind::Supervised;
    int term = 0;
    double weight = 1.0;
    const Image* image = nullptr;
    const nnet::CellTargets* targets = nullptr;       // Supervised / Pseudo
    const nnet::ForwardOutput* raw_teacher = nullptr; // Consistency
};

struct BatchResult {
    double loss = 0.0;
    std::vector<double> term_loss;  // indexed by LossJob::term
    nnet::ParamVec grad;
};

// Serial reference: jobs evaluated and accumulated one after another in job
// order.
BatchResult accumulate_serial(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                              const std::vector<LossJob>& jobs, int num_terms);

// OpenMP version: jobs evaluated concurrently into per-job slots, then
// reduced in job order so the sums associate exactly like the serial
// reference.
BatchResult accumulate_parallel(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                                const std::vector<LossJob>& jobs, int num_terms);

// Mean per-scene supervised loss over a frozen list of (image, targets)
// pairs; forward-only risks share this path. Parallel over scenes with an
// ordered reduction.
struct RiskItem {
    const Image* image = nullptr;
    const nnet::CellTargets* targets = nullptr;
};
double mean_sup_risk(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                     const std::vector<RiskItem>& items, bool parallel = true);

}  // namespace mtlab::batcheval

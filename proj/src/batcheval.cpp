#include "mtlab/batcheval.hpp"

#include <exception>

#include "mtlab/common.hpp"

namespace mtlab::batcheval {

namespace {

nnet::LossResult run_job(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                         const LossJob& job) {
    switch (job.kind) {
        case LossKind::Supervised:
            return nnet::sup_loss(config, params, *job.image, *job.targets);
        case LossKind::Pseudo:
            return nnet::unsup_loss(config, params, *job.image, *job.targets);
        default:
            return nnet::regul_loss(config, params, *job.image, *job.raw_teacher);
    }
}

// Exceptions may not escape an OpenMP region; capture per slot and rethrow
// the lowest-index one after the loop so failures surface deterministically.
struct CapturedErrors {
    std::vector<std::exception_ptr> slots;

    explicit CapturedErrors(std::size_t n) : slots(n) {}
    void rethrow_first() const {
        for (const auto& e : slots)
            if (e) std::rethrow_exception(e);
    }
};

}  // namespace

BatchResult accumulate_serial(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                              const std::vector<LossJob>& jobs, int num_terms) {
    BatchResult res;
    res.term_loss.assign(std::size_t(num_terms), 0.0);
    res.grad.values.assign(params.size(), 0.0);
    res.grad.config_hash = params.config_hash;
    for (const LossJob& job : jobs) {
        const nnet::LossResult r = run_job(config, params, job);
        res.term_loss[std::size_t(job.term)] += job.weight * r.loss;
        res.loss += job.weight * r.loss;
        for (std::size_t i = 0; i < params.size(); ++i)
            res.grad.values[i] += job.weight * r.grad.values[i];
    }
    return res;
}

BatchResult accumulate_parallel(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                                const std::vector<LossJob>& jobs, int num_terms) {
    std::vector<nnet::LossResult> slots(jobs.size());
    CapturedErrors errors(jobs.size());
#pragma omp parallel for schedule(static)
    for (int j = 0; j < int(jobs.size()); ++j) {
        try {
            slots[std::size_t(j)] = run_job(config, params, jobs[std::size_t(j)]);
        } catch (...) {
            errors.slots[std::size_t(j)] = std::current_exception();
        }
    }
    errors.rethrow_first();

    BatchResult res;
    res.term_loss.assign(std::size_t(num_terms), 0.0);
    res.grad.values.assign(params.size(), 0.0);
    res.grad.config_hash = params.config_hash;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const LossJob& job = jobs[j];
        res.term_loss[std::size_t(job.term)] += job.weight * slots[j].loss;
        res.loss += job.weight * slots[j].loss;
        for (std::size_t i = 0; i < params.size(); ++i)
            res.grad.values[i] += job.weight * slots[j].grad.values[i];
    }
    return res;
}

double mean_sup_risk(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                     const std::vector<RiskItem>& items, bool parallel) {
    if (items.empty()) throw UsageError("risk evaluation over an empty scene set");
    std::vector<double> losses(items.size(), 0.0);
    if (parallel) {
        CapturedErrors errors(items.size());
#pragma omp parallel for schedule(static)
        for (int i = 0; i < int(items.size()); ++i) {
            try {
                losses[std::size_t(i)] = nnet::sup_loss_value(
                    config, params, *items[std::size_t(i)].image, *items[std::size_t(i)].targets);
            } catch (...) {
                errors.slots[std::size_t(i)] = std::current_exception();
            }
        }
        errors.rethrow_first();
    } else {
        for (std::size_t i = 0; i < items.size(); ++i)
            losses[i] = nnet::sup_loss_value(config, params, *items[i].image, *items[i].targets);
    }
    double acc = 0.0;
    for (double l : losses) acc += l;  // fixed order
    return acc / double(items.size());
}

}  // namespace mtlab::batcheval

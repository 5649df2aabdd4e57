#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mtlab/batcheval.hpp"
#include "mtlab/nnet.hpp"
#include "mtlab/synthgen.hpp"

using namespace mtlab;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    const nnet::ModelConfig model;
    Rng rng(7);
    const nnet::ParamVec params = nnet::init_params(rng, model);

    const synthgen::DomainSet domains = synthgen::default_domains();
    const int batch = 48;
    std::vector<Image> images;
    std::vector<nnet::CellTargets> targets;
    images.reserve(std::size_t(batch));
    targets.reserve(std::size_t(batch));
    std::vector<batcheval::LossJob> jobs;
    for (int i = 0; i < batch; ++i) {
        const synthgen::Scene scene = synthgen::generate_scene(1000 + std::uint64_t(i), domains.s1);
        images.push_back(scene.image);
        targets.push_back(nnet::cell_targets_from_ground_truth(model, scene.boxes, scene.classes));
        jobs.push_back({batcheval::LossKind::Supervised, 0, 1.0 / batch, &images.back(),
                        &targets.back(), nullptr});
    }

    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif
    std::printf("threads: %d\n", threads);
    std::printf("%-28s %12s %12s %9s\n", "kernel", "serial ms", "parallel ms", "speedup");

    const int reps = 20;
    const auto serial = batcheval::accumulate_serial(model, params, jobs, 1);
    const auto parallel = batcheval::accumulate_parallel(model, params, jobs, 1);
    bool identical = serial.loss == parallel.loss && serial.grad.values == parallel.grad.values;

    const double t_ser = time_ms([&] { (void)batcheval::accumulate_serial(model, params, jobs, 1); }, reps);
    const double t_par = time_ms([&] { (void)batcheval::accumulate_parallel(model, params, jobs, 1); }, reps);
    std::printf("%-28s %12.3f %12.3f %8.2fx\n", "batch loss+grad (48 scenes)", t_ser, t_par,
                t_ser / t_par);

    std::vector<batcheval::RiskItem> items;
    items.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) items.push_back({&images[i], &targets[i]});
    const double r_ser = batcheval::mean_sup_risk(model, params, items, false);
    const double r_par = batcheval::mean_sup_risk(model, params, items, true);
    identical = identical && r_ser == r_par;

    const double t_rser = time_ms([&] { (void)batcheval::mean_sup_risk(model, params, items, false); }, reps);
    const double t_rpar = time_ms([&] { (void)batcheval::mean_sup_risk(model, params, items, true); }, reps);
    std::printf("%-28s %12.3f %12.3f %8.2fx\n", "risk eval (48 scenes)", t_rser, t_rpar,
                t_rser / t_rpar);

    std::printf("serial/parallel results bit-identical: %s\n", identical ? "yes" : "NO");
    return identical ? 0 : 1;
}

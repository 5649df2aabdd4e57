#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtlab/batcheval.hpp"
#include "mtlab/nnet.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/synthgen.hpp"

namespace mtlab::landscape {

// Any scalar function of a parameter vector can be probed; trained models use
// the frozen-scene risks below, tests also probe analytic surfaces.
using RiskFn = std::function<double(const nnet::ParamVec&)>;

// A frozen evaluation set: scenes with their weak views and cell targets
// fixed at construction, so risk differences between probes reflect the
// parameters only. Empirical risk sums the per-domain mean supervised losses;
// a single-domain or target risk holds one group.
class RiskSpec {
public:
    // weak_seed fixes the weak views baked into the set.
    void add_domain(const std::string& name, const nnet::ModelConfig& model,
                    const std::vector<synthgen::Scene>& scenes, std::uint64_t weak_seed);

    double evaluate(const nnet::ParamVec& params) const;
    RiskFn fn() const;
    std::size_t num_domains() const { return groups_.size(); }

private:
    struct Group {
        std::string name;
        nnet::ModelConfig model;
        std::vector<Image> images;
        std::vector<nnet::CellTargets> targets;
    };
    std::vector<Group> groups_;
};

struct FlatnessReport {
    std::string surface_id;             // "empirical", "target", "domain:<name>", ...
    std::vector<double> gamma_values;
    std::vector<double> means;                        // F^gamma per gamma
    std::vector<std::vector<double>> samples;         // |dE| draws per gamma (NaN = flagged)
    std::vector<int> flagged;                         // non-finite samples per gamma
};

// Standard-normal draw scaled onto the unit sphere.
std::vector<double> sample_unit_direction(Rng& rng, std::size_t dim);

// F^gamma(theta) = mean_j |E(theta + gamma d_j) - E(theta)| over n fresh unit
// directions per gamma. The base risk is evaluated once. Non-finite perturbed
// losses are flagged and excluded from the mean.
FlatnessReport flatness(const RiskFn& risk, const nnet::ParamVec& params,
                        const std::vector<double>& gammas, int n_samples, Rng& rng,
                        const std::string& surface_id = "");

// Sphere-sampled lower bound of the radius-gamma robust risk: the max of
// E(theta) itself and E(theta + gamma d_j) over n directions. An estimator,
// not the true ball maximum.
double robust_risk(const RiskFn& risk, const nnet::ParamVec& params, double gamma, int n_samples,
                   Rng& rng);

// robust_risk(teacher, gamma) minus the minimum empirical risk along the
// logged student trajectory; smaller means flatter.
double rrm_erm_gap(const RiskFn& risk, const nnet::ParamVec& teacher, double trajectory_min_risk,
                   double gamma, int n_samples, Rng& rng);

// |f(p3)-f(p2)| < |f(p3)-f(p1)| for a monotone f and p1 < p2 < p3. Monotone
// input is validated by sampling; a non-monotone f is a usage error.
bool proposition_check(const std::function<double(double)>& f, double p1, double p2, double p3);

void write_flatness_csv(const FlatnessReport& report, const std::string& path);

}  // namespace mtlab::landscape

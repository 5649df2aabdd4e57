#include "mtlab/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "mtlab/common.hpp"

namespace mtlab::landscape {

void RiskSpec::add_domain(const std::string& name, const nnet::ModelConfig& model,
                          const std::vector<synthgen::Scene>& scenes, std::uint64_t weak_seed) {
    if (scenes.empty()) throw UsageError("risk domain " + name + " has no scenes");
    Group g;
    g.name = name;
    g.model = model;
    g.images.reserve(scenes.size());
    g.targets.reserve(scenes.size());
    Rng rng(derive_seed(weak_seed, fnv1a(name.data(), name.size())));
    for (const synthgen::Scene& scene : scenes) {
        const auto [weak, rec] = synthgen::apply_weak_aug(scene, rng);
        g.images.push_back(weak.image);
        g.targets.push_back(nnet::cell_targets_from_ground_truth(model, weak.boxes, weak.classes));
    }
    groups_.push_back(std::move(g));
}

double RiskSpec::evaluate(const nnet::ParamVec& params) const {
    if (groups_.empty()) throw UsageError("risk spec has no domains");
    double total = 0.0;
    for (const Group& g : groups_) {
        std::vector<batcheval::RiskItem> items(g.images.size());
        for (std::size_t i = 0; i < g.images.size(); ++i)
            items[i] = {&g.images[i], &g.targets[i]};
        total += batcheval::mean_sup_risk(g.model, params, items);
    }
    return total;
}

RiskFn RiskSpec::fn() const {
    return [this](const nnet::ParamVec& p) { return evaluate(p); };
}

std::vector<double> sample_unit_direction(Rng& rng, std::size_t dim) {
    if (dim < 1) throw UsageError("direction dimension must be >= 1");
    std::vector<double> d(dim);
    double norm2 = 0.0;
    do {
        norm2 = 0.0;
        for (double& v : d) {
            v = rng.normal();
            norm2 += v * v;
        }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : d) v *= inv;
    return d;
}

namespace {

nnet::ParamVec perturbed(const nnet::ParamVec& params, const std::vector<double>& dir,
                         double gamma) {
    nnet::ParamVec out = params;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += gamma * dir[i];
    return out;
}

}  // namespace

FlatnessReport flatness(const RiskFn& risk, const nnet::ParamVec& params,
                        const std::vector<double>& gammas, int n_samples, Rng& rng,
                        const std::string& surface_id) {
    if (n_samples < 1) throw UsageError("flatness needs at least one sample");
    for (double g : gammas)
        if (g < 0.0) throw UsageError("flatness radii must be >= 0");

    const double base = risk(params);
    FlatnessReport report;
    report.surface_id = surface_id;
    report.gamma_values = gammas;
    for (double gamma : gammas) {
        std::vector<double> deltas;
        deltas.reserve(std::size_t(n_samples));
        int flagged = 0;
        double acc = 0.0;
        for (int j = 0; j < n_samples; ++j) {
            const std::vector<double> dir = sample_unit_direction(rng, params.size());
            double value;
            try {
                value = risk(perturbed(params, dir, gamma));
            } catch (const NumericError&) {
                value = std::numeric_limits<double>::quiet_NaN();
            }
            const double delta = std::abs(value - base);
            if (std::isfinite(delta)) {
                deltas.push_back(delta);
                acc += delta;
            } else {
                deltas.push_back(std::numeric_limits<double>::quiet_NaN());
                ++flagged;
            }
        }
        const int kept = n_samples - flagged;
        report.means.push_back(kept > 0 ? acc / double(kept)
                                        : std::numeric_limits<double>::quiet_NaN());
        report.samples.push_back(std::move(deltas));
        report.flagged.push_back(flagged);
    }
    return report;
}

double robust_risk(const RiskFn& risk, const nnet::ParamVec& params, double gamma, int n_samples,
                   Rng& rng) {
    if (gamma <= 0.0) throw UsageError("robust risk radius must be > 0");
    if (n_samples < 1) throw UsageError("robust risk needs at least one sample");
    double best = risk(params);  // the center is part of the ball
    for (int j = 0; j < n_samples; ++j) {
        const std::vector<double> dir = sample_unit_direction(rng, params.size());
        double value;
        try {
            value = risk(perturbed(params, dir, gamma));
        } catch (const NumericError&) {
            continue;  // flagged sample, excluded
        }
        if (std::isfinite(value)) best = std::max(best, value);
    }
    return best;
}

double rrm_erm_gap(const RiskFn& risk, const nnet::ParamVec& teacher, double trajectory_min_risk,
                   double gamma, int n_samples, Rng& rng) {
    return robust_risk(risk, teacher, gamma, n_samples, rng) - trajectory_min_risk;
}

bool proposition_check(const std::function<double(double)>& f, double p1, double p2, double p3) {
    if (!(p1 < p2 && p2 < p3)) throw UsageError("proposition_check requires p1 < p2 < p3");
    // sample on a grid over [p1, p3] to reject non-monotone inputs
    constexpr int kGridPoints = 33;
    double prev = f(p1);
    int sign = 0;
    for (int i = 1; i < kGridPoints; ++i) {
        const double x = p1 + (p3 - p1) * double(i) / double(kGridPoints - 1);
        const double y = f(x);
        if (y > prev) {
            if (sign < 0) throw UsageError("proposition_check: function is not monotone");
            sign = 1;
        } else if (y < prev) {
            if (sign > 0) throw UsageError("proposition_check: function is not monotone");
            sign = -1;
        }
        prev = y;
    }
    return std::abs(f(p3) - f(p2)) < std::abs(f(p3) - f(p1));
}

void write_flatness_csv(const FlatnessReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "gamma,sample_idx,delta_abs,mean\n";
    out.precision(17);
    for (std::size_t gi = 0; gi < report.gamma_values.size(); ++gi) {
        for (std::size_t j = 0; j < report.samples[gi].size(); ++j) {
            out << report.gamma_values[gi] << "," << j << ",";
            if (std::isfinite(report.samples[gi][j]))
                out << report.samples[gi][j];
            else
                out << "nan";
            out << "," << report.means[gi] << "\n";
        }
    }
}

}  // namespace mtlab::landscape

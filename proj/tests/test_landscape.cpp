#include <doctest.h>

#include <cmath>

#include "mtlab/common.hpp"
#include "mtlab/landscape.hpp"

using namespace mtlab;
using namespace mtlab::landscape;

namespace {

nnet::ParamVec zeros(std::size_t dim) {
    nnet::ParamVec p;
    p.values.assign(dim, 0.0);
    return p;
}

double quadratic(const nnet::ParamVec& p) {
    double s = 0.0;
    for (double v : p.values) s += v * v;
    return s;
}

}  // namespace

TEST_CASE("sample_unit_direction: unit norm, degenerate dimension, symmetry") {
    Rng rng(41);
    for (int i = 0; i < 50; ++i) {
        const std::vector<double> d = sample_unit_direction(rng, 64);
        double n2 = 0.0;
        for (double v : d) n2 += v * v;
        CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-12);
    }
    for (int i = 0; i < 20; ++i) {
        const std::vector<double> d = sample_unit_direction(rng, 1);
        CHECK(std::abs(d[0]) == 1.0);
    }
    std::vector<double> mean(8, 0.0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const std::vector<double> d = sample_unit_direction(rng, 8);
        for (std::size_t k = 0; k < 8; ++k) mean[k] += d[k];
    }
    for (double& v : mean) v /= draws;
    for (double v : mean) CHECK(std::abs(v) < 0.05);
}

TEST_CASE("flatness: constant surface has zero change") {
    Rng rng(42);
    const nnet::ParamVec p = zeros(16);
    const FlatnessReport rep =
        flatness([](const nnet::ParamVec&) { return 3.5; }, p, {0.5, 1.0, 2.0}, 10, rng);
    for (double m : rep.means) CHECK(m == 0.0);
}

TEST_CASE("flatness: quadratic surface at its minimum gives gamma^2") {
    Rng rng(43);
    const nnet::ParamVec p = zeros(32);
    const FlatnessReport rep = flatness(quadratic, p, {0.5, 1.0, 2.0}, 10, rng);
    CHECK(std::abs(rep.means[0] - 0.25) <= 1e-9);
    CHECK(std::abs(rep.means[1] - 1.0) <= 1e-9);
    CHECK(std::abs(rep.means[2] - 4.0) <= 1e-9);
    for (const auto& samples : rep.samples)
        for (double s : samples) CHECK(s >= 0.0);
}

TEST_CASE("flatness: gamma = 0 probes to exactly zero") {
    Rng rng(44);
    const nnet::ParamVec p = zeros(8);
    const FlatnessReport rep = flatness(quadratic, p, {0.0}, 5, rng);
    CHECK(rep.means[0] == 0.0);
}

TEST_CASE("flatness: non-finite samples are flagged and excluded") {
    Rng rng(45);
    const nnet::ParamVec p = zeros(4);
    int calls = 0;
    const RiskFn risk = [&](const nnet::ParamVec& q) {
        ++calls;
        if (calls > 1 && calls % 2 == 0) throw NumericError("boom");
        return quadratic(q);
    };
    const FlatnessReport rep = flatness(risk, p, {1.0}, 6, rng);
    CHECK(rep.flagged[0] == 3);
    CHECK(std::abs(rep.means[0] - 1.0) <= 1e-9);
}

TEST_CASE("flatness: identical seeds give bit-identical reports") {
    const nnet::ParamVec p = zeros(24);
    Rng a(46), b(46);
    const FlatnessReport ra = flatness(quadratic, p, {0.5, 2.0}, 10, a);
    const FlatnessReport rb = flatness(quadratic, p, {0.5, 2.0}, 10, b);
    CHECK(ra.means == rb.means);
    CHECK(ra.samples == rb.samples);
}

TEST_CASE("robust_risk: constant, quadratic and the center bound") {
    Rng rng(47);
    const nnet::ParamVec p = zeros(16);
    CHECK(robust_risk([](const nnet::ParamVec&) { return 2.0; }, p, 1.0, 20, rng) == 2.0);
    CHECK(std::abs(robust_risk(quadratic, p, 3.0, 20, rng) - 9.0) <= 1e-9);

    nnet::ParamVec q = zeros(16);
    q.values[3] = 0.7;
    const double base = quadratic(q);
    for (double gamma : {0.1, 1.0, 5.0})
        CHECK(robust_risk(quadratic, q, gamma, 10, rng) >= base);
}

TEST_CASE("rrm_erm_gap: degenerate and quadratic cases") {
    Rng rng(48);
    const nnet::ParamVec p = zeros(12);
    const RiskFn constant = [](const nnet::ParamVec&) { return 1.25; };
    CHECK(rrm_erm_gap(constant, p, 1.25, 2.0, 20, rng) == 0.0);
    CHECK(std::abs(rrm_erm_gap(quadratic, p, 0.0, 2.0, 20, rng) - 4.0) <= 1e-9);
}

TEST_CASE("proposition_check: -log and identity examples") {
    const auto neg_log = [](double x) { return -std::log(x); };
    CHECK(proposition_check(neg_log, 0.1, 0.5, 0.9));
    const auto identity = [](double x) { return x; };
    CHECK(proposition_check(identity, -2.0, 0.3, 7.0));
    CHECK_THROWS_AS((void)proposition_check(identity, 1.0, 0.5, 2.0), UsageError);
}

TEST_CASE("proposition_check: rejects non-monotone inputs") {
    const auto vee = [](double x) { return std::abs(x); };
    CHECK_THROWS_AS((void)proposition_check(vee, -1.0, 0.0, 1.0), UsageError);
}

TEST_CASE("proposition holds on random monotone piecewise-linear functions") {
    Rng rng(49);
    for (int trial = 0; trial < 200; ++trial) {
        const bool increasing = rng.bernoulli(0.5);
        const int knots = rng.uniform_int(2, 8);
        std::vector<double> xs, ys;
        double x = rng.uniform(-5.0, 5.0);
        double y = rng.uniform(-5.0, 5.0);
        for (int k = 0; k < knots; ++k) {
            xs.push_back(x);
            ys.push_back(increasing ? y : -y);
            x += rng.uniform(0.2, 2.0);
            y += rng.uniform(0.01, 2.0);
        }
        const auto f = [&](double q) {
            if (q <= xs.front()) return ys.front();
            if (q >= xs.back()) return ys.back();
            for (std::size_t i = 1; i < xs.size(); ++i) {
                if (q <= xs[i]) {
                    const double t = (q - xs[i - 1]) / (xs[i] - xs[i - 1]);
                    return ys[i - 1] + t * (ys[i] - ys[i - 1]);
                }
            }
            return ys.back();
        };
        double p1 = rng.uniform(xs.front(), xs.back());
        double p2 = rng.uniform(xs.front(), xs.back());
        double p3 = rng.uniform(xs.front(), xs.back());
        if (p1 > p2) std::swap(p1, p2);
        if (p2 > p3) std::swap(p2, p3);
        if (p1 > p2) std::swap(p1, p2);
        if (p1 == p2 || p2 == p3) continue;
        CHECK(proposition_check(f, p1, p2, p3));
    }
}

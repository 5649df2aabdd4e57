#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mtlab/common.hpp"
#include "mtlab/nnet.hpp"
#include "mtlab/pseudolabel.hpp"
#include "mtlab/rng.hpp"

using namespace mtlab;
using namespace mtlab::pseudolabel;

namespace {

std::vector<double> random_simplex(Rng& rng, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (double& x : v) sum += (x = -std::log(1.0 - rng.uniform01()));
    for (double& x : v) x /= sum;
    return v;
}

nnet::ForwardOutput output_from_dists(const std::vector<std::vector<double>>& dists,
                                      const std::vector<std::array<double, 4>>& offsets) {
    nnet::ForwardOutput out;
    out.num_cells = int(dists.size());
    out.num_probs = int(dists[0].size());
    for (std::size_t r = 0; r < dists.size(); ++r) {
        out.class_probs.insert(out.class_probs.end(), dists[r].begin(), dists[r].end());
        out.offsets.insert(out.offsets.end(), offsets[r].begin(), offsets[r].end());
    }
    return out;
}

}  // namespace

TEST_CASE("refine_weak: zeroing rule") {
    const std::vector<double> probs = {0.5, 0.3, 0.1, 0.1};
    const std::vector<double> refined = refine_weak(probs, {0});
    CHECK(refined == std::vector<double>{0.5, 0.0, 0.0, 0.1});
}

TEST_CASE("refine_weak: full label set is a no-op, empty set keeps only background") {
    const std::vector<double> probs = {0.4, 0.3, 0.2, 0.1};
    CHECK(refine_weak(probs, {0, 1, 2}) == probs);
    CHECK(refine_weak(probs, {}) == std::vector<double>{0.0, 0.0, 0.0, 0.1});
}

TEST_CASE("refine_weak: idempotence and soundness") {
    Rng rng(21);
    for (int i = 0; i < 200; ++i) {
        const std::vector<double> p = random_simplex(rng, 4);
        std::vector<int> weak;
        for (int k = 0; k < 3; ++k)
            if (rng.bernoulli(0.5)) weak.push_back(k);
        const std::vector<double> once = refine_weak(p, weak);
        CHECK(refine_weak(once, weak) == once);
        for (int k = 0; k < 3; ++k)
            if (std::find(weak.begin(), weak.end(), k) == weak.end())
                CHECK(once[std::size_t(k)] == 0.0);
        CHECK(once[3] == p[3]);  // background never masked
    }
}

TEST_CASE("sharpen: uniform stays uniform, T=1 is the identity") {
    const std::vector<double> uniform = {0.25, 0.25, 0.25, 0.25};
    for (double T : {0.25, 0.5, 2.0}) {
        const std::vector<double> s = sharpen(uniform, T);
        for (double v : s) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }
    Rng rng(22);
    const std::vector<double> p = random_simplex(rng, 4);
    const std::vector<double> s = sharpen(p, 1.0);
    for (std::size_t k = 0; k < p.size(); ++k)
        CHECK(s[k] == doctest::Approx(p[k]).epsilon(1e-12));
}

TEST_CASE("sharpen: squared-probability oracle at T=0.5") {
    const std::vector<double> p = {0.7, 0.2, 0.1};
    const std::vector<double> s = sharpen(p, 0.5);
    const double denom = 0.49 + 0.04 + 0.01;
    CHECK(s[0] == doctest::Approx(0.49 / denom).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(0.04 / denom).epsilon(1e-12));
    CHECK(s[2] == doctest::Approx(0.01 / denom).epsilon(1e-12));
    CHECK(s[0] == doctest::Approx(0.9074).epsilon(1e-3));
}

TEST_CASE("sharpen: all-zero input collapses to background with a flag") {
    bool degenerate = false;
    const std::vector<double> s = sharpen({0.0, 0.0, 0.0, 0.0}, 0.5, &degenerate);
    CHECK(degenerate);
    CHECK(s == std::vector<double>{0.0, 0.0, 0.0, 1.0});
}

TEST_CASE("sharpen: argmax is preserved for any temperature") {
    Rng rng(23);
    for (int i = 0; i < 200; ++i) {
        const std::vector<double> p = random_simplex(rng, 4);
        const double T = rng.uniform(0.05, 4.0);
        const std::vector<double> s = sharpen(p, T);
        const auto arg = [](const std::vector<double>& v) {
            return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
        };
        CHECK(arg(p) == arg(s));
    }
}

TEST_CASE("hard_threshold: boundary keeps and drops") {
    const std::vector<std::vector<double>> dists = {{0.9, 0.05, 0.02, 0.03},
                                                    {0.79, 0.1, 0.05, 0.06}};
    const std::vector<std::array<double, 4>> offs = {{0.1, 0.2, 0.3, 0.4}, {1, 1, 1, 1}};
    const nnet::ForwardOutput out = output_from_dists(dists, offs);

    const PseudoLabelSet set = hard_threshold(out, 0.8);
    CHECK(set.cells[0].cls == 0);
    CHECK(set.cells[0].confidence == doctest::Approx(0.9));
    CHECK(set.cells[0].offsets == std::array<double, 4>{0.1, 0.2, 0.3, 0.4});
    CHECK(set.cells[1].cls == 3);  // background
    CHECK(set.cells[1].confidence == 0.0);

    // exactly at the threshold is kept
    const PseudoLabelSet at = hard_threshold(out, 0.79);
    CHECK(at.cells[1].cls == 0);
}

TEST_CASE("hard_threshold: raising tau never grows the kept set") {
    Rng rng(24);
    std::vector<std::vector<double>> dists;
    std::vector<std::array<double, 4>> offs;
    for (int i = 0; i < 100; ++i) {
        dists.push_back(random_simplex(rng, 4));
        offs.push_back({0, 0, 0, 0});
    }
    const nnet::ForwardOutput out = output_from_dists(dists, offs);
    const int bg = 3;
    auto kept = [&](double tau) {
        std::vector<int> cells;
        const PseudoLabelSet set = hard_threshold(out, tau);
        for (int r = 0; r < int(set.cells.size()); ++r)
            if (set.cells[std::size_t(r)].cls != bg) cells.push_back(r);
        return cells;
    };
    const auto k5 = kept(0.5), k7 = kept(0.7), k9 = kept(0.9);
    CHECK(std::includes(k5.begin(), k5.end(), k7.begin(), k7.end()));
    CHECK(std::includes(k7.begin(), k7.end(), k9.begin(), k9.end()));
}

TEST_CASE("build_targets: raw mode copies the teacher output verbatim") {
    Rng rng(25);
    std::vector<std::vector<double>> dists;
    std::vector<std::array<double, 4>> offs;
    for (int i = 0; i < 16; ++i) {
        dists.push_back(random_simplex(rng, 4));
        offs.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    }
    const nnet::ForwardOutput out = output_from_dists(dists, offs);
    const PseudoLabelSet set = build_targets(out, TargetMode::Raw, std::nullopt, 0.8, 0.5);
    REQUIRE(set.cells.size() == dists.size());
    for (std::size_t r = 0; r < dists.size(); ++r) {
        CHECK(set.cells[r].dist == dists[r]);
        CHECK(set.cells[r].offsets == offs[r]);
    }
}

TEST_CASE("build_targets: ws-hard with an empty weak label is all background") {
    Rng rng(26);
    std::vector<std::vector<double>> dists;
    std::vector<std::array<double, 4>> offs;
    for (int i = 0; i < 8; ++i) {
        dists.push_back(random_simplex(rng, 4));
        offs.push_back({0, 0, 0, 0});
    }
    const nnet::ForwardOutput out = output_from_dists(dists, offs);
    const PseudoLabelSet set =
        build_targets(out, TargetMode::WsHard, std::vector<int>{}, 0.8, 0.5);
    for (const CellPseudo& c : set.cells) CHECK(c.cls == 3);
}

TEST_CASE("build_targets: ws-soft masks a class that ss-soft keeps") {
    // argmax class 1 is absent from the weak label {0}
    const std::vector<std::vector<double>> dists = {{0.2, 0.6, 0.1, 0.1}};
    const std::vector<std::array<double, 4>> offs = {{0, 0, 0, 0}};
    const nnet::ForwardOutput out = output_from_dists(dists, offs);

    const PseudoLabelSet ss = build_targets(out, TargetMode::SsSoft, std::nullopt, 0.8, 0.5);
    const PseudoLabelSet ws =
        build_targets(out, TargetMode::WsSoft, std::vector<int>{0}, 0.8, 0.5);
    CHECK(ss.cells[0].dist[1] > 0.0);
    CHECK(ws.cells[0].dist[1] == 0.0);
    // ss keeps the argmax on class 1, ws moves it off
    CHECK(ss.cells[0].dist[1] > ss.cells[0].dist[0]);
    CHECK(ws.cells[0].dist[0] > ws.cells[0].dist[1]);
}

TEST_CASE("build_targets: soft confidence is one minus sharpened background mass") {
    const std::vector<std::vector<double>> dists = {{0.3, 0.3, 0.2, 0.2}};
    const std::vector<std::array<double, 4>> offs = {{0, 0, 0, 0}};
    const nnet::ForwardOutput out = output_from_dists(dists, offs);
    const PseudoLabelSet set = build_targets(out, TargetMode::SsSoft, std::nullopt, 0.8, 0.5);
    CHECK(set.cells[0].confidence == doctest::Approx(1.0 - set.cells[0].dist[3]).epsilon(1e-12));
    const nnet::CellTargets targets = set.to_cell_targets();
    CHECK(targets[0].reg_weight == doctest::Approx(set.cells[0].confidence));
    CHECK(targets[0].soft);
}

TEST_CASE("build_targets: ws modes require a weak label") {
    const std::vector<std::vector<double>> dists = {{0.25, 0.25, 0.25, 0.25}};
    const std::vector<std::array<double, 4>> offs = {{0, 0, 0, 0}};
    const nnet::ForwardOutput out = output_from_dists(dists, offs);
    CHECK_THROWS_AS((void)build_targets(out, TargetMode::WsSoft, std::nullopt, 0.8, 0.5),
                    UsageError);
    CHECK_THROWS_AS((void)build_targets(out, TargetMode::WsHard, std::nullopt, 0.8, 0.5),
                    UsageError);
}

TEST_CASE("hard targets convert with confidence as regression weight") {
    const std::vector<std::vector<double>> dists = {{0.9, 0.05, 0.02, 0.03},
                                                    {0.1, 0.1, 0.1, 0.7}};
    const std::vector<std::array<double, 4>> offs = {{0.5, 0.5, 0.5, 0.5}, {0, 0, 0, 0}};
    const nnet::ForwardOutput out = output_from_dists(dists, offs);
    const nnet::CellTargets targets =
        build_targets(out, TargetMode::SsHard, std::nullopt, 0.8, 0.5).to_cell_targets();
    CHECK_FALSE(targets[0].soft);
    CHECK(targets[0].cls == 0);
    CHECK(targets[0].has_offsets);
    CHECK(targets[0].reg_weight == doctest::Approx(0.9));
    CHECK(targets[1].cls == 3);
    CHECK_FALSE(targets[1].has_offsets);
    CHECK(targets[1].reg_weight == 0.0);
}

#include "mtlab/pseudolabel.hpp"

#include <algorithm>
#include <cmath>

#include "mtlab/common.hpp"

namespace mtlab::pseudolabel {

std::vector<double> refine_weak(const std::vector<double>& probs,
                                const std::vector<int>& weak_label) {
    std::vector<double> out = probs;
    const int num_fg = int(probs.size()) - 1;
    for (int k = 0; k < num_fg; ++k) {
        if (std::find(weak_label.begin(), weak_label.end(), k) == weak_label.end())
            out[std::size_t(k)] = 0.0;
    }
    return out;
}

std::vector<double> sharpen(const std::vector<double>& probs, double temperature,
                            bool* degenerate) {
    if (degenerate) *degenerate = false;
    if (temperature <= 0.0) throw UsageError("sharpen temperature must be > 0");
    std::vector<double> out(probs.size(), 0.0);
    double denom = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        out[k] = probs[k] > 0.0 ? std::pow(probs[k], 1.0 / temperature) : 0.0;
        denom += out[k];
    }
    if (denom <= 0.0) {
        if (degenerate) *degenerate = true;
        std::fill(out.begin(), out.end(), 0.0);
        out.back() = 1.0;
        return out;
    }
    for (double& v : out) v /= denom;
    return out;
}

namespace {

// max foreground probability and its class over a K+1 distribution
std::pair<double, int> max_foreground(const std::vector<double>& probs) {
    int best = 0;
    for (int k = 1; k + 1 < int(probs.size()); ++k)
        if (probs[std::size_t(k)] > probs[std::size_t(best)]) best = k;
    return {probs[std::size_t(best)], best};
}

PseudoLabelSet threshold_dists(const std::vector<std::vector<double>>& dists,
                               const nnet::ForwardOutput& output, double tau, TargetMode mode) {
    const int bg = output.num_probs - 1;
    PseudoLabelSet set;
    set.mode = mode;
    set.num_probs = output.num_probs;
    set.cells.resize(dists.size());
    for (std::size_t r = 0; r < dists.size(); ++r) {
        const auto [score, cls] = max_foreground(dists[r]);
        CellPseudo& cell = set.cells[r];
        if (score >= tau) {
            cell.cls = cls;
            cell.confidence = score;
            const double* off = output.offsets_at(int(r));
            std::copy(off, off + 4, cell.offsets.begin());
        } else {
            cell.cls = bg;
            cell.confidence = 0.0;
        }
    }
    return set;
}

PseudoLabelSet sharpen_dists(const std::vector<std::vector<double>>& dists,
                             const nnet::ForwardOutput& output, double temperature,
                             TargetMode mode) {
    PseudoLabelSet set;
    set.mode = mode;
    set.num_probs = output.num_probs;
    set.cells.resize(dists.size());
    for (std::size_t r = 0; r < dists.size(); ++r) {
        CellPseudo& cell = set.cells[r];
        cell.dist = sharpen(dists[r], temperature);
        cell.confidence = 1.0 - cell.dist.back();
        const double* off = output.offsets_at(int(r));
        std::copy(off, off + 4, cell.offsets.begin());
    }
    return set;
}

}  // namespace

PseudoLabelSet hard_threshold(const nnet::ForwardOutput& output, double tau) {
    if (tau <= 0.0 || tau >= 1.0) throw UsageError("threshold tau must lie in (0,1)");
    std::vector<std::vector<double>> dists(std::size_t(output.num_cells));
    for (int r = 0; r < output.num_cells; ++r)
        dists[std::size_t(r)].assign(output.probs_at(r), output.probs_at(r) + output.num_probs);
    return threshold_dists(dists, output, tau, TargetMode::SsHard);
}

PseudoLabelSet build_targets(const nnet::ForwardOutput& output, TargetMode mode,
                             const std::optional<std::vector<int>>& weak_label, double tau,
                             double temperature) {
    const bool ws = mode == TargetMode::WsSoft || mode == TargetMode::WsHard;
    if (ws && !weak_label) throw UsageError("ws-* target modes require a weak label");

    if (mode == TargetMode::Raw) {
        PseudoLabelSet set;
        set.mode = mode;
        set.num_probs = output.num_probs;
        set.cells.resize(std::size_t(output.num_cells));
        for (int r = 0; r < output.num_cells; ++r) {
            CellPseudo& cell = set.cells[std::size_t(r)];
            cell.dist.assign(output.probs_at(r), output.probs_at(r) + output.num_probs);
            cell.confidence = 1.0 - cell.dist.back();
            const double* off = output.offsets_at(r);
            std::copy(off, off + 4, cell.offsets.begin());
        }
        return set;
    }

    std::vector<std::vector<double>> dists(std::size_t(output.num_cells));
    for (int r = 0; r < output.num_cells; ++r) {
        dists[std::size_t(r)].assign(output.probs_at(r), output.probs_at(r) + output.num_probs);
        if (ws) dists[std::size_t(r)] = refine_weak(dists[std::size_t(r)], *weak_label);
    }
    if (mode == TargetMode::SsHard || mode == TargetMode::WsHard) {
        if (tau <= 0.0 || tau >= 1.0) throw UsageError("threshold tau must lie in (0,1)");
        return threshold_dists(dists, output, tau, mode);
    }
    return sharpen_dists(dists, output, temperature, mode);
}

nnet::CellTargets PseudoLabelSet::to_cell_targets() const {
    nnet::CellTargets targets(cells.size());
    const int bg = num_probs - 1;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        const CellPseudo& cell = cells[r];
        nnet::CellTarget& t = targets[r];
        if (mode == TargetMode::SsHard || mode == TargetMode::WsHard) {
            t.soft = false;
            t.cls = cell.cls;
            if (cell.cls != bg) {
                t.offsets = cell.offsets;
                t.has_offsets = true;
                t.reg_weight = cell.confidence;
            }
        } else {
            t.soft = true;
            t.dist = cell.dist;
            t.offsets = cell.offsets;
            t.has_offsets = true;
            t.reg_weight = cell.confidence;
        }
    }
    return targets;
}

}  // namespace mtlab::pseudolabel

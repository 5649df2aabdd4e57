#pragma once

#include <optional>
#include <vector>

#include "mtlab/nnet.hpp"

namespace mtlab::pseudolabel {

enum class TargetMode { SsSoft, SsHard, WsSoft, WsHard, Raw };

struct CellPseudo {
    std::vector<double> dist;         // soft/raw: K+1 entries
    int cls = 0;                      // hard: class id (background = K)
    std::array<double, 4> offsets{};
    double confidence = 0.0;
};

struct PseudoLabelSet {
    TargetMode mode = TargetMode::SsSoft;
    int num_probs = 0;
    std::vector<CellPseudo> cells;

    nnet::CellTargets to_cell_targets() const;
};

// Weak-label refinement: zero the probability of every foreground class not
// in the weak label. Background (last entry) is never masked and the result
// is NOT renormalized.
std::vector<double> refine_weak(const std::vector<double>& probs, const std::vector<int>& weak_label);

// Temperature sharpening p_k^{1/T} / sum_j p_j^{1/T}. An all-zero input
// collapses to a point mass on the background entry; *degenerate (when
// given) reports that case.
std::vector<double> sharpen(const std::vector<double>& probs, double temperature,
                            bool* degenerate = nullptr);

// Hard thresholding: a cell is kept as foreground iff its max non-background
// probability reaches tau.
PseudoLabelSet hard_threshold(const nnet::ForwardOutput& output, double tau);

// f_post composition: ws-* modes refine with the weak label first, soft modes
// sharpen, hard modes threshold, raw copies the teacher output verbatim.
PseudoLabelSet build_targets(const nnet::ForwardOutput& output, TargetMode mode,
                             const std::optional<std::vector<int>>& weak_label, double tau,
                             double temperature);

}  // namespace mtlab::pseudolabel

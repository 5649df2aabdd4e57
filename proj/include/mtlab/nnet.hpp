#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtlab/image.hpp"
#include "mtlab/rng.hpp"

namespace mtlab::nnet {

// Grid-cell single-stage head: a shared 2-hidden-layer tanh MLP maps each
// cell's pixel patch to K+1 class logits (softmaxed) and 4 raw box offsets.
struct ModelConfig {
    int grid = 4;         // G x G cells
    int patch = 8;        // cell side in px
    int channels = 3;
    int hidden1 = 32;
    int hidden2 = 32;
    int num_classes = 3;  // class index num_classes = background

    int image_side() const { return grid * patch; }
    int num_cells() const { return grid * grid; }
    int input_dim() const { return patch * patch * channels; }
    int output_dim() const { return num_classes + 1 + 4; }
    int param_count() const {
        return input_dim() * hidden1 + hidden1 + hidden1 * hidden2 + hidden2 +
               hidden2 * output_dim() + output_dim();
    }
    std::uint64_t hash() const;
};

// Flat parameter vector; config_hash binds it to the ModelConfig it was
// created for.
struct ParamVec {
    std::vector<double> values;
    std::uint64_t config_hash = 0;

    std::size_t size() const { return values.size(); }
};

struct ForwardOutput {
    int num_cells = 0;
    int num_probs = 0;                // K+1
    std::vector<double> class_probs;  // num_cells x num_probs, cell-major
    std::vector<double> offsets;      // num_cells x 4

    const double* probs_at(int cell) const { return class_probs.data() + std::size_t(cell) * num_probs; }
    const double* offsets_at(int cell) const { return offsets.data() + std::size_t(cell) * 4; }
};

// Per-cell training target, either a hard class id or a soft distribution
// over K+1 classes. reg_weight scales the regression term; zero for
// background cells.
struct CellTarget {
    bool soft = false;
    int cls = 0;                       // hard mode; background id = K
    std::vector<double> dist;          // soft mode; K+1 entries
    std::array<double, 4> offsets{};   // valid iff has_offsets
    bool has_offsets = false;
    double reg_weight = 0.0;
};

using CellTargets = std::vector<CellTarget>;

struct LossResult {
    double loss = 0.0;
    double cls_term = 0.0;
    double reg_term = 0.0;
    ParamVec grad;
};

ParamVec init_params(Rng& rng, const ModelConfig& config);

ForwardOutput forward(const ModelConfig& config, const ParamVec& params, const Image& image);

// Supervised loss: mean cross-entropy over cells plus smooth-L1 averaged over
// foreground cells (lambda_reg = 1). Exact analytic gradient returned.
LossResult sup_loss(const ModelConfig& config, const ParamVec& params, const Image& image,
                    const CellTargets& gt);

// Loss value only, skipping backprop; used by risk probes that evaluate the
// surface at many perturbed parameter vectors.
double sup_loss_value(const ModelConfig& config, const ParamVec& params, const Image& image,
                      const CellTargets& gt);

// Pseudo-label loss: cross-entropy against the per-cell target (soft or hard)
// plus a reg_weight-weighted smooth-L1 term normalized by the total weight.
LossResult unsup_loss(const ModelConfig& config, const ParamVec& params, const Image& image,
                      const CellTargets& pseudo);

// Consistency loss against raw teacher outputs on the shared weak view:
// cross-entropy towards teacher class probabilities over all cells, smooth-L1
// towards teacher offsets over cells whose teacher foreground mass exceeds
// the gate (default 0.1).
LossResult regul_loss(const ModelConfig& config, const ParamVec& params, const Image& image_weak,
                      const ForwardOutput& raw_teacher, double fg_gate = 0.1);

// Cell-aligned targets from ground truth: each box goes to the cell holding
// its center; on collision the larger box wins (ties: smaller class id, then
// smaller cx, then smaller cy, so assignment is independent of object order).
CellTargets cell_targets_from_ground_truth(const ModelConfig& config,
                                           const std::vector<Box>& boxes,
                                           const std::vector<int>& classes);

// Offset encoding used by targets and evaluation decode: (dx, dy) are the box
// center minus the cell center in cell units, (dw, dh) are log of the box
// size in cell units.
std::array<double, 4> encode_offsets(const ModelConfig& config, int cell, const Box& box);
Box decode_offsets(const ModelConfig& config, int cell, const double* offsets);

// --- checkpoint I/O ("MTFL" format, f32 payload, JSON metadata) ---

struct CheckpointMeta {
    ModelConfig config;
    std::int64_t iteration = 0;
    std::string mode;  // e.g. "pretrain", "ss-dgod-teacher"
    std::uint64_t seed = 0;
};

std::vector<unsigned char> serialize_checkpoint(const ParamVec& params, const CheckpointMeta& meta);
std::pair<ParamVec, CheckpointMeta> deserialize_checkpoint(const std::vector<unsigned char>& bytes);
void save_checkpoint(const ParamVec& params, const CheckpointMeta& meta, const std::string& path);
std::pair<ParamVec, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace mtlab::nnet

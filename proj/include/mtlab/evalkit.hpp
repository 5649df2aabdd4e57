#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mtlab/nnet.hpp"
#include "mtlab/synthgen.hpp"

namespace mtlab::evalkit {

struct Detection {
    Box box;
    int cls = 0;
    double score = 0.0;
    long index = 0;  // enumeration order; deterministic tie-break for equal scores
    int scene = 0;
};

// Intersection-over-union; zero-area boxes yield 0 and set *degenerate.
double iou(const Box& a, const Box& b, bool* degenerate = nullptr);

// Per-cell decode of a forward output followed by greedy per-class NMS at
// IoU 0.5. A cell emits a detection iff its argmax class is foreground and
// the max foreground probability reaches score_floor.
std::vector<Detection> decode(const nnet::ModelConfig& config, const nnet::ForwardOutput& output,
                              double score_floor = 0.05);

// Greedy NMS on one class's detections: highest score first (ties by index),
// survivors suppress anything overlapping above iou_thresh.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh = 0.5);

// All-point-interpolation average precision for one class over a scene set.
// gts maps scene -> ground-truth boxes of that class. Returns nullopt when
// there is no ground truth (excluded from mAP).
std::optional<double> average_precision(std::vector<Detection> dets,
                                        const std::vector<std::vector<Box>>& gts,
                                        double iou_thresh = 0.5);

struct EvalResult {
    std::vector<std::optional<double>> per_class_ap;
    double map50 = 0.0;  // mean over classes with >= 1 ground-truth instance
};

// Forward + decode every scene (raw images, no augmentation) and score the
// detector with mAP50.
EvalResult evaluate_detector(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                             const std::vector<synthgen::Scene>& scenes,
                             double score_floor = 0.05, double iou_thresh = 0.5);

}  // namespace mtlab::evalkit

#include "mtlab/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "mtlab/common.hpp"

namespace mtlab::evalkit {

double iou(const Box& a, const Box& b, bool* degenerate) { return box_iou(a, b, degenerate); }

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (iou(d.box, k.box) > iou_thresh) { suppressed = true; break; }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<Detection> decode(const nnet::ModelConfig& config, const nnet::ForwardOutput& output,
                              double score_floor) {
    const int bg = config.num_classes;
    std::vector<Detection> raw;
    for (int cell = 0; cell < output.num_cells; ++cell) {
        const double* p = output.probs_at(cell);
        int arg = 0;
        for (int k = 1; k < output.num_probs; ++k)
            if (p[k] > p[arg]) arg = k;
        if (arg == bg) continue;
        if (p[arg] < score_floor) continue;
        Detection d;
        d.box = nnet::decode_offsets(config, cell, output.offsets_at(cell));
        d.cls = arg;
        d.score = p[arg];
        d.index = cell;
        raw.push_back(d);
    }
    std::vector<Detection> out;
    for (int cls = 0; cls < config.num_classes; ++cls) {
        std::vector<Detection> cls_dets;
        for (const Detection& d : raw)
            if (d.cls == cls) cls_dets.push_back(d);
        const std::vector<Detection> kept = nms(std::move(cls_dets));
        out.insert(out.end(), kept.begin(), kept.end());
    }
    std::sort(out.begin(), out.end(),
              [](const Detection& a, const Detection& b) { return a.index < b.index; });
    return out;
}

std::optional<double> average_precision(std::vector<Detection> dets,
                                        const std::vector<std::vector<Box>>& gts,
                                        double iou_thresh) {
    std::size_t n_gt = 0;
    for (const auto& g : gts) n_gt += g.size();
    if (n_gt == 0) return std::nullopt;
    if (dets.empty()) return 0.0;

    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });

    std::vector<std::vector<char>> used(gts.size());
    for (std::size_t s = 0; s < gts.size(); ++s) used[s].assign(gts[s].size(), 0);

    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const Detection& d : dets) {
        const auto& scene_gts = gts[std::size_t(d.scene)];
        int best = -1;
        double best_v = -1.0;
        for (std::size_t g = 0; g < scene_gts.size(); ++g) {
            if (used[std::size_t(d.scene)][g]) continue;
            const double v = iou(d.box, scene_gts[g]);
            if (v >= iou_thresh && v > best_v) {
                best_v = v;
                best = int(g);
            }
        }
        if (best >= 0) {
            used[std::size_t(d.scene)][std::size_t(best)] = 1;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(double(tp) / double(tp + fp));
        recall.push_back(double(tp) / double(n_gt));
    }

    // all-point interpolation: integrate the precision envelope over recall
    double ap = 0.0;
    double max_prec = 0.0;
    for (std::size_t i = precision.size(); i-- > 0;) {
        max_prec = std::max(max_prec, precision[i]);
        const double prev_recall = i > 0 ? recall[i - 1] : 0.0;
        if (recall[i] != prev_recall) ap += (recall[i] - prev_recall) * max_prec;
    }
    return ap;
}

EvalResult evaluate_detector(const nnet::ModelConfig& config, const nnet::ParamVec& params,
                             const std::vector<synthgen::Scene>& scenes, double score_floor,
                             double iou_thresh) {
    std::vector<std::vector<Detection>> per_scene(scenes.size());
    std::vector<std::exception_ptr> errors(scenes.size());
#pragma omp parallel for schedule(static)
    for (int s = 0; s < int(scenes.size()); ++s) {
        try {
            const nnet::ForwardOutput out =
                nnet::forward(config, params, scenes[std::size_t(s)].image);
            per_scene[std::size_t(s)] = decode(config, out, score_floor);
        } catch (...) {
            errors[std::size_t(s)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    // merge with global enumeration order (scene-major, cell order inside)
    std::vector<std::vector<Detection>> by_class(std::size_t(config.num_classes));
    long counter = 0;
    for (std::size_t s = 0; s < per_scene.size(); ++s) {
        for (Detection d : per_scene[s]) {
            d.scene = int(s);
            d.index = counter++;
            by_class[std::size_t(d.cls)].push_back(d);
        }
    }

    EvalResult res;
    double sum = 0.0;
    int counted = 0;
    for (int cls = 0; cls < config.num_classes; ++cls) {
        std::vector<std::vector<Box>> gts(scenes.size());
        for (std::size_t s = 0; s < scenes.size(); ++s)
            for (std::size_t i = 0; i < scenes[s].boxes.size(); ++i)
                if (scenes[s].classes[i] == cls) gts[s].push_back(scenes[s].boxes[i]);
        res.per_class_ap.push_back(average_precision(by_class[std::size_t(cls)], gts, iou_thresh));
        if (res.per_class_ap.back()) {
            sum += *res.per_class_ap.back();
            ++counted;
        }
    }
    res.map50 = counted > 0 ? sum / double(counted) : 0.0;
    return res;
}

}  // namespace mtlab::evalkit

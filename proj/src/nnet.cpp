#include "mtlab/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mtlab/common.hpp"

namespace mtlab::nnet {

using json = nlohmann::json;

namespace {

constexpr double kLambdaReg = 1.0;

struct Layout {
    int in, h1, h2, out;
    std::size_t w1, b1, w2, b2, w3, b3;

    explicit Layout(const ModelConfig& c)
        : in(c.input_dim()), h1(c.hidden1), h2(c.hidden2), out(c.output_dim()) {
        w1 = 0;
        b1 = w1 + std::size_t(in) * h1;
        w2 = b1 + std::size_t(h1);
        b2 = w2 + std::size_t(h1) * h2;
        w3 = b2 + std::size_t(h2);
        b3 = w3 + std::size_t(h2) * out;
    }
};

// Per-cell activations, reused across cells of one evaluation.
struct Workspace {
    std::vector<double> x, a1, a2, o, probs, go, g2, g1;

    explicit Workspace(const Layout& L)
        : x(std::size_t(L.in)), a1(std::size_t(L.h1)), a2(std::size_t(L.h2)),
          o(std::size_t(L.out)), probs(std::size_t(L.out - 4)), go(std::size_t(L.out)),
          g2(std::size_t(L.h2)), g1(std::size_t(L.h1)) {}
};

void check_binding(const ModelConfig& config, const ParamVec& params, const Image& image) {
    if (params.config_hash != config.hash() || int(params.size()) != config.param_count())
        throw ConfigError("parameter vector does not match model config");
    if (image.height != config.image_side() || image.width != config.image_side() ||
        image.channels != config.channels)
        throw ConfigError("image shape does not match model config");
}

void extract_patch(const ModelConfig& config, const Image& image, int cell, std::vector<double>& x) {
    const int row = cell / config.grid;
    const int col = cell % config.grid;
    const int y0 = row * config.patch;
    const int x0 = col * config.patch;
    std::size_t k = 0;
    for (int py = 0; py < config.patch; ++py)
        for (int px = 0; px < config.patch; ++px)
            for (int c = 0; c < config.channels; ++c)
                x[k++] = double(image.at(y0 + py, x0 + px, c));
}

// Forward one cell: fills a1, a2, o and the softmax probs over the first
// out-4 entries of o.
void forward_cell(const Layout& L, const double* p, Workspace& ws) {
    for (int i = 0; i < L.h1; ++i) {
        const double* w = p + L.w1 + std::size_t(i) * L.in;
        double acc = p[L.b1 + std::size_t(i)];
        for (int j = 0; j < L.in; ++j) acc += w[j] * ws.x[std::size_t(j)];
        ws.a1[std::size_t(i)] = std::tanh(acc);
    }
    for (int i = 0; i < L.h2; ++i) {
        const double* w = p + L.w2 + std::size_t(i) * L.h1;
        double acc = p[L.b2 + std::size_t(i)];
        for (int j = 0; j < L.h1; ++j) acc += w[j] * ws.a1[std::size_t(j)];
        ws.a2[std::size_t(i)] = std::tanh(acc);
    }
    for (int i = 0; i < L.out; ++i) {
        const double* w = p + L.w3 + std::size_t(i) * L.h2;
        double acc = p[L.b3 + std::size_t(i)];
        for (int j = 0; j < L.h2; ++j) acc += w[j] * ws.a2[std::size_t(j)];
        ws.o[std::size_t(i)] = acc;
    }
    const int np = L.out - 4;
    double mx = ws.o[0];
    for (int k = 1; k < np; ++k) mx = std::max(mx, ws.o[std::size_t(k)]);
    double denom = 0.0;
    for (int k = 0; k < np; ++k) {
        ws.probs[std::size_t(k)] = std::exp(ws.o[std::size_t(k)] - mx);
        denom += ws.probs[std::size_t(k)];
    }
    for (int k = 0; k < np; ++k) ws.probs[std::size_t(k)] /= denom;
}

// log(sum exp(logits)) with max shift; logits live in ws.o[0 .. np).
double log_sum_exp(const Workspace& ws, int np) {
    double mx = ws.o[0];
    for (int k = 1; k < np; ++k) mx = std::max(mx, ws.o[std::size_t(k)]);
    double s = 0.0;
    for (int k = 0; k < np; ++k) s += std::exp(ws.o[std::size_t(k)] - mx);
    return mx + std::log(s);
}

// Accumulate dL/d(params) for one cell given dL/d(outputs) in ws.go.
void backprop_cell(const Layout& L, const double* p, Workspace& ws, double* g) {
    for (int i = 0; i < L.out; ++i) {
        const double gi = ws.go[std::size_t(i)];
        if (gi == 0.0) continue;
        g[L.b3 + std::size_t(i)] += gi;
        double* gw = g + L.w3 + std::size_t(i) * L.h2;
        for (int j = 0; j < L.h2; ++j) gw[j] += gi * ws.a2[std::size_t(j)];
    }
    for (int j = 0; j < L.h2; ++j) {
        double acc = 0.0;
        for (int i = 0; i < L.out; ++i)
            acc += p[L.w3 + std::size_t(i) * L.h2 + std::size_t(j)] * ws.go[std::size_t(i)];
        const double a = ws.a2[std::size_t(j)];
        ws.g2[std::size_t(j)] = acc * (1.0 - a * a);
    }
    for (int i = 0; i < L.h2; ++i) {
        const double gi = ws.g2[std::size_t(i)];
        g[L.b2 + std::size_t(i)] += gi;
        double* gw = g + L.w2 + std::size_t(i) * L.h1;
        for (int j = 0; j < L.h1; ++j) gw[j] += gi * ws.a1[std::size_t(j)];
    }
    for (int j = 0; j < L.h1; ++j) {
        double acc = 0.0;
        for (int i = 0; i < L.h2; ++i)
            acc += p[L.w2 + std::size_t(i) * L.h1 + std::size_t(j)] * ws.g2[std::size_t(i)];
        const double a = ws.a1[std::size_t(j)];
        ws.g1[std::size_t(j)] = acc * (1.0 - a * a);
    }
    for (int i = 0; i < L.h1; ++i) {
        const double gi = ws.g1[std::size_t(i)];
        g[L.b1 + std::size_t(i)] += gi;
        double* gw = g + L.w1 + std::size_t(i) * L.in;
        for (int j = 0; j < L.in; ++j) gw[j] += gi * ws.x[std::size_t(j)];
    }
}

inline double huber(double d) { return std::abs(d) <= 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; }
inline double huber_grad(double d) { return std::clamp(d, -1.0, 1.0); }

// Per-cell description shared by the three losses. soft_target == nullptr
// means a hard class id; reg_scale == 0 disables the regression term.
struct CellPlan {
    const double* soft_target = nullptr;
    int hard_cls = 0;
    const double* reg_target = nullptr;
    double reg_scale = 0.0;
};

LossResult run_loss(const ModelConfig& config, const ParamVec& params, const Image& image,
                    const std::vector<CellPlan>& plan, bool with_grad = true) {
    const Layout L(config);
    const int np = config.num_classes + 1;
    const double cls_scale = 1.0 / double(config.num_cells());

    LossResult res;
    res.grad.config_hash = params.config_hash;
    if (with_grad) res.grad.values.assign(params.size(), 0.0);

    Workspace ws(L);
    const double* p = params.values.data();
    double* g = res.grad.values.data();
    for (int cell = 0; cell < config.num_cells(); ++cell) {
        extract_patch(config, image, cell, ws.x);
        forward_cell(L, p, ws);
        std::fill(ws.go.begin(), ws.go.end(), 0.0);
        const CellPlan& cp = plan[std::size_t(cell)];

        double ce;
        if (cp.soft_target) {
            const double lse = log_sum_exp(ws, np);
            double mass = 0.0;
            ce = 0.0;
            for (int k = 0; k < np; ++k) {
                ce += cp.soft_target[k] * (lse - ws.o[std::size_t(k)]);
                mass += cp.soft_target[k];
            }
            for (int k = 0; k < np; ++k)
                ws.go[std::size_t(k)] =
                    cls_scale * (mass * ws.probs[std::size_t(k)] - cp.soft_target[k]);
        } else {
            ce = log_sum_exp(ws, np) - ws.o[std::size_t(cp.hard_cls)];
            for (int k = 0; k < np; ++k) {
                const double t = (k == cp.hard_cls) ? 1.0 : 0.0;
                ws.go[std::size_t(k)] = cls_scale * (ws.probs[std::size_t(k)] - t);
            }
        }
        res.cls_term += cls_scale * ce;

        if (cp.reg_scale != 0.0) {
            double reg = 0.0;
            for (int i = 0; i < 4; ++i) {
                const double d = ws.o[std::size_t(np + i)] - cp.reg_target[i];
                reg += huber(d);
                ws.go[std::size_t(np + i)] = cp.reg_scale * huber_grad(d);
            }
            res.reg_term += cp.reg_scale * reg;
        }
        if (!std::isfinite(res.cls_term) || !std::isfinite(res.reg_term))
            throw NumericError("non-finite loss at cell " + std::to_string(cell));

        if (with_grad) backprop_cell(L, p, ws, g);
    }
    res.loss = res.cls_term + res.reg_term;
    return res;
}

std::vector<CellPlan> sup_plan(const ModelConfig& config, const CellTargets& gt) {
    if (int(gt.size()) != config.num_cells()) throw ConfigError("target count != cell count");
    int n_fg = 0;
    for (const CellTarget& t : gt)
        if (t.has_offsets) ++n_fg;
    const double reg_scale = n_fg > 0 ? kLambdaReg / double(n_fg) : 0.0;

    std::vector<CellPlan> plan(gt.size());
    for (std::size_t r = 0; r < gt.size(); ++r) {
        plan[r].hard_cls = gt[r].cls;
        plan[r].soft_target = gt[r].soft ? gt[r].dist.data() : nullptr;
        if (gt[r].has_offsets) {
            plan[r].reg_target = gt[r].offsets.data();
            plan[r].reg_scale = reg_scale;
        }
    }
    return plan;
}

}  // namespace

std::uint64_t ModelConfig::hash() const {
    const int v[] = {grid, patch, channels, hidden1, hidden2, num_classes};
    return fnv1a(v, sizeof(v));
}

ParamVec init_params(Rng& rng, const ModelConfig& config) {
    const Layout L(config);
    ParamVec p;
    p.values.assign(std::size_t(config.param_count()), 0.0);
    p.config_hash = config.hash();
    const double s1 = 1.0 / std::sqrt(double(L.in));
    const double s2 = 1.0 / std::sqrt(double(L.h1));
    const double s3 = 1.0 / std::sqrt(double(L.h2));
    for (std::size_t i = 0; i < std::size_t(L.in) * L.h1; ++i) p.values[L.w1 + i] = rng.normal(0.0, s1);
    for (std::size_t i = 0; i < std::size_t(L.h1) * L.h2; ++i) p.values[L.w2 + i] = rng.normal(0.0, s2);
    for (std::size_t i = 0; i < std::size_t(L.h2) * L.out; ++i) p.values[L.w3 + i] = rng.normal(0.0, s3);
    return p;
}

ForwardOutput forward(const ModelConfig& config, const ParamVec& params, const Image& image) {
    check_binding(config, params, image);
    const Layout L(config);
    const int np = config.num_classes + 1;

    ForwardOutput out;
    out.num_cells = config.num_cells();
    out.num_probs = np;
    out.class_probs.resize(std::size_t(out.num_cells) * np);
    out.offsets.resize(std::size_t(out.num_cells) * 4);

    Workspace ws(L);
    for (int cell = 0; cell < out.num_cells; ++cell) {
        extract_patch(config, image, cell, ws.x);
        forward_cell(L, params.values.data(), ws);
        for (int k = 0; k < np; ++k)
            out.class_probs[std::size_t(cell) * np + k] = ws.probs[std::size_t(k)];
        for (int i = 0; i < 4; ++i)
            out.offsets[std::size_t(cell) * 4 + i] = ws.o[std::size_t(np + i)];
    }
    return out;
}

LossResult sup_loss(const ModelConfig& config, const ParamVec& params, const Image& image,
                    const CellTargets& gt) {
    check_binding(config, params, image);
    return run_loss(config, params, image, sup_plan(config, gt));
}

double sup_loss_value(const ModelConfig& config, const ParamVec& params, const Image& image,
                      const CellTargets& gt) {
    check_binding(config, params, image);
    return run_loss(config, params, image, sup_plan(config, gt), /*with_grad=*/false).loss;
}

LossResult unsup_loss(const ModelConfig& config, const ParamVec& params, const Image& image,
                      const CellTargets& pseudo) {
    check_binding(config, params, image);
    if (int(pseudo.size()) != config.num_cells()) throw ConfigError("target count != cell count");

    double weight_sum = 0.0;
    for (const CellTarget& t : pseudo)
        if (t.has_offsets) weight_sum += t.reg_weight;

    std::vector<CellPlan> plan(pseudo.size());
    for (std::size_t r = 0; r < pseudo.size(); ++r) {
        plan[r].hard_cls = pseudo[r].cls;
        plan[r].soft_target = pseudo[r].soft ? pseudo[r].dist.data() : nullptr;
        if (pseudo[r].has_offsets && weight_sum > 0.0 && pseudo[r].reg_weight > 0.0) {
            plan[r].reg_target = pseudo[r].offsets.data();
            plan[r].reg_scale = kLambdaReg * pseudo[r].reg_weight / weight_sum;
        }
    }
    return run_loss(config, params, image, plan);
}

LossResult regul_loss(const ModelConfig& config, const ParamVec& params, const Image& image_weak,
                      const ForwardOutput& raw_teacher, double fg_gate) {
    check_binding(config, params, image_weak);
    if (raw_teacher.num_cells != config.num_cells() ||
        raw_teacher.num_probs != config.num_classes + 1)
        throw ConfigError("teacher output does not match model config");

    const int bg = config.num_classes;
    int n_gate = 0;
    for (int cell = 0; cell < raw_teacher.num_cells; ++cell)
        if (1.0 - raw_teacher.probs_at(cell)[bg] > fg_gate) ++n_gate;
    const double reg_scale = n_gate > 0 ? kLambdaReg / double(n_gate) : 0.0;

    std::vector<CellPlan> plan(std::size_t(raw_teacher.num_cells));
    for (int cell = 0; cell < raw_teacher.num_cells; ++cell) {
        plan[std::size_t(cell)].soft_target = raw_teacher.probs_at(cell);
        if (1.0 - raw_teacher.probs_at(cell)[bg] > fg_gate) {
            plan[std::size_t(cell)].reg_target = raw_teacher.offsets_at(cell);
            plan[std::size_t(cell)].reg_scale = reg_scale;
        }
    }
    return run_loss(config, params, image_weak, plan);
}

std::array<double, 4> encode_offsets(const ModelConfig& config, int cell, const Box& box) {
    const int g = config.grid;
    const double ux = (cell % g + 0.5) / g;
    const double uy = (cell / g + 0.5) / g;
    return {(box.cx - ux) * g, (box.cy - uy) * g, std::log(box.w * g), std::log(box.h * g)};
}

Box decode_offsets(const ModelConfig& config, int cell, const double* offsets) {
    const int g = config.grid;
    const double ux = (cell % g + 0.5) / g;
    const double uy = (cell / g + 0.5) / g;
    const double cx = ux + offsets[0] / g;
    const double cy = uy + offsets[1] / g;
    const double w = std::exp(offsets[2]) / g;
    const double h = std::exp(offsets[3]) / g;
    const double x0 = std::clamp(cx - 0.5 * w, 0.0, 1.0);
    const double x1 = std::clamp(cx + 0.5 * w, 0.0, 1.0);
    const double y0 = std::clamp(cy - 0.5 * h, 0.0, 1.0);
    const double y1 = std::clamp(cy + 0.5 * h, 0.0, 1.0);
    return Box{0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

CellTargets cell_targets_from_ground_truth(const ModelConfig& config,
                                           const std::vector<Box>& boxes,
                                           const std::vector<int>& classes) {
    if (boxes.size() != classes.size()) throw ConfigError("boxes/classes length mismatch");
    const int g = config.grid;
    CellTargets targets(std::size_t(config.num_cells()));
    for (CellTarget& t : targets) t.cls = config.num_classes;

    std::vector<int> owner(std::size_t(config.num_cells()), -1);
    auto wins = [&](std::size_t a, std::size_t b) {  // does object a beat object b?
        if (boxes[a].area() != boxes[b].area()) return boxes[a].area() > boxes[b].area();
        if (classes[a] != classes[b]) return classes[a] < classes[b];
        if (boxes[a].cx != boxes[b].cx) return boxes[a].cx < boxes[b].cx;
        return boxes[a].cy < boxes[b].cy;
    };
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const int col = std::clamp(int(boxes[i].cx * g), 0, g - 1);
        const int row = std::clamp(int(boxes[i].cy * g), 0, g - 1);
        const int cell = row * g + col;
        if (owner[std::size_t(cell)] >= 0 && !wins(i, std::size_t(owner[std::size_t(cell)])))
            continue;
        owner[std::size_t(cell)] = int(i);
    }
    for (int cell = 0; cell < config.num_cells(); ++cell) {
        const int i = owner[std::size_t(cell)];
        if (i < 0) continue;
        CellTarget& t = targets[std::size_t(cell)];
        t.cls = classes[std::size_t(i)];
        t.offsets = encode_offsets(config, cell, boxes[std::size_t(i)]);
        t.has_offsets = true;
        t.reg_weight = 1.0;
    }
    return targets;
}

// --- checkpoint I/O ---

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"grid", c.grid},       {"patch", c.patch},
                {"channels", c.channels}, {"hidden", {c.hidden1, c.hidden2}},
                {"num_classes", c.num_classes}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.grid = j.at("grid").get<int>();
    c.patch = j.at("patch").get<int>();
    c.channels = j.at("channels").get<int>();
    c.hidden1 = j.at("hidden").at(0).get<int>();
    c.hidden2 = j.at("hidden").at(1).get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    return c;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const ParamVec& params, const CheckpointMeta& meta) {
    if (params.config_hash != meta.config.hash() ||
        int(params.size()) != meta.config.param_count())
        throw ConfigError("checkpoint params do not match metadata config");

    json j;
    j["config"] = config_to_json(meta.config);
    j["iteration"] = meta.iteration;
    j["mode"] = meta.mode;
    j["seed"] = meta.seed;
    const std::string meta_str = j.dump();

    std::vector<unsigned char> buf;
    buf.reserve(20 + params.size() * 4 + meta_str.size());
    buf.insert(buf.end(), {'M', 'T', 'F', 'L'});
    put_u32(buf, 1);
    put_u64(buf, params.size());
    for (double v : params.values) put_f32(buf, float(v));
    put_u32(buf, std::uint32_t(meta_str.size()));
    buf.insert(buf.end(), meta_str.begin(), meta_str.end());
    return buf;
}

std::pair<ParamVec, CheckpointMeta> deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    ByteReader r{bytes.data(), bytes.size()};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "MTFL", 4) != 0) throw ConfigError("bad checkpoint magic");
    r.pos = 4;
    if (r.u32("version") != 1) throw ConfigError("unsupported checkpoint version");
    const std::uint64_t count = r.u64("param count");
    r.need(count * 4, "parameters");
    ParamVec params;
    params.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) params.values[i] = double(r.f32("parameters"));
    const std::uint32_t meta_len = r.u32("metadata length");
    r.need(meta_len, "metadata");
    const json j = json::parse(bytes.begin() + std::ptrdiff_t(r.pos),
                               bytes.begin() + std::ptrdiff_t(r.pos + meta_len));

    CheckpointMeta meta;
    meta.config = config_from_json(j.at("config"));
    meta.iteration = j.at("iteration").get<std::int64_t>();
    meta.mode = j.at("mode").get<std::string>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    if (std::uint64_t(meta.config.param_count()) != count)
        throw ConfigError("checkpoint parameter count does not match its config");
    params.config_hash = meta.config.hash();
    return {std::move(params), std::move(meta)};
}

void save_checkpoint(const ParamVec& params, const CheckpointMeta& meta, const std::string& path) {
    const auto bytes = serialize_checkpoint(params, meta);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

std::pair<ParamVec, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace mtlab::nnet

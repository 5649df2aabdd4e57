#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>

#include "mtlab/common.hpp"
#include "mtlab/nnet.hpp"
#include "mtlab/pseudolabel.hpp"
#include "mtlab/synthgen.hpp"

using namespace mtlab;
using namespace mtlab::nnet;

namespace {

Image random_image(Rng& rng, const ModelConfig& cfg) {
    Image img(cfg.image_side(), cfg.image_side(), cfg.channels);
    for (float& v : img.px) v = float(rng.uniform01());
    return img;
}

// Independent straight-line re-implementation of the per-cell MLP, written
// against the documented parameter layout (W1 row-major over the flattened
// patch, then b1, W2, b2, W3, b3; patch flattened as (py, px, channel)).
std::pair<std::vector<double>, std::vector<double>> oracle_forward_cell(
    const ModelConfig& cfg, const std::vector<double>& p, const Image& img, int cell_row,
    int cell_col) {
    const int in = cfg.patch * cfg.patch * cfg.channels;
    const int h1 = cfg.hidden1, h2 = cfg.hidden2;
    const int np = cfg.num_classes + 1;
    const int out = np + 4;
    const std::size_t w1 = 0, b1 = w1 + std::size_t(in) * h1, w2 = b1 + std::size_t(h1),
                      b2 = w2 + std::size_t(h1) * h2, w3 = b2 + std::size_t(h2),
                      b3 = w3 + std::size_t(h2) * out;

    std::vector<double> x;
    for (int py = 0; py < cfg.patch; ++py)
        for (int px = 0; px < cfg.patch; ++px)
            for (int c = 0; c < cfg.channels; ++c)
                x.push_back(double(img.at(cell_row * cfg.patch + py, cell_col * cfg.patch + px, c)));

    std::vector<double> a1(static_cast<std::size_t>(h1)), a2(static_cast<std::size_t>(h2)), o(static_cast<std::size_t>(out));
    for (int i = 0; i < h1; ++i)
        a1[std::size_t(i)] = std::tanh(
            std::inner_product(x.begin(), x.end(), p.begin() + std::ptrdiff_t(w1 + std::size_t(i) * in),
                               p[b1 + std::size_t(i)]));
    for (int i = 0; i < h2; ++i)
        a2[std::size_t(i)] = std::tanh(std::inner_product(
            a1.begin(), a1.end(), p.begin() + std::ptrdiff_t(w2 + std::size_t(i) * h1),
            p[b2 + std::size_t(i)]));
    for (int i = 0; i < out; ++i)
        o[std::size_t(i)] = std::inner_product(
            a2.begin(), a2.end(), p.begin() + std::ptrdiff_t(w3 + std::size_t(i) * h2),
            p[b3 + std::size_t(i)]);

    double mx = *std::max_element(o.begin(), o.begin() + np);
    double denom = 0.0;
    std::vector<double> probs(static_cast<std::size_t>(np));
    for (int k = 0; k < np; ++k) denom += (probs[std::size_t(k)] = std::exp(o[std::size_t(k)] - mx));
    for (double& v : probs) v /= denom;
    return {probs, {o[std::size_t(np)], o[std::size_t(np) + 1], o[std::size_t(np) + 2],
                    o[std::size_t(np) + 3]}};
}

// central finite differences over a handful of coordinates
void check_grad(const ParamVec& params, const std::function<LossResult(const ParamVec&)>& loss,
                Rng& rng, int n_coords, double tol = 1e-4) {
    const LossResult analytic = loss(params);
    const double eps = 1e-4;
    for (int k = 0; k < n_coords; ++k) {
        const std::size_t i = std::size_t(rng.uniform_int(0, int(params.size()) - 1));
        ParamVec plus = params, minus = params;
        plus.values[i] += eps;
        minus.values[i] -= eps;
        const double fd = (loss(plus).loss - loss(minus).loss) / (2.0 * eps);
        const double rel = std::abs(analytic.grad.values[i] - fd) / std::max(1e-8, std::abs(fd));
        INFO("coordinate ", i, " fd ", fd, " analytic ", analytic.grad.values[i]);
        CHECK(rel < tol);
    }
}

}  // namespace

TEST_CASE("init_params: deterministic, biases zero, hand-counted size") {
    const ModelConfig cfg;
    // 192*32+32 + 32*32+32 + 32*8+8 = 6176 + 1056 + 264
    CHECK(cfg.param_count() == 7496);

    Rng a(5), b(5);
    const ParamVec pa = init_params(a, cfg);
    const ParamVec pb = init_params(b, cfg);
    CHECK(pa.values == pb.values);
    CHECK(pa.config_hash == cfg.hash());

    const int in = cfg.input_dim();
    for (int i = 0; i < cfg.hidden1; ++i) CHECK(pa.values[std::size_t(in * cfg.hidden1 + i)] == 0.0);
    // last output_dim entries are the output biases
    for (int i = 0; i < cfg.output_dim(); ++i)
        CHECK(pa.values[pa.size() - 1 - std::size_t(i)] == 0.0);
}

TEST_CASE("forward: class probabilities are a simplex") {
    const ModelConfig cfg;
    Rng rng(2);
    const ParamVec p = init_params(rng, cfg);
    const Image img = random_image(rng, cfg);
    const ForwardOutput out = forward(cfg, p, img);
    for (int cell = 0; cell < out.num_cells; ++cell) {
        double sum = 0.0;
        for (int k = 0; k < out.num_probs; ++k) {
            CHECK(out.probs_at(cell)[k] >= 0.0);
            sum += out.probs_at(cell)[k];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("forward: all-zero parameters give uniform classes and zero offsets") {
    const ModelConfig cfg;
    ParamVec p;
    p.values.assign(std::size_t(cfg.param_count()), 0.0);
    p.config_hash = cfg.hash();
    Rng rng(3);
    const Image img = random_image(rng, cfg);
    const ForwardOutput out = forward(cfg, p, img);
    for (int cell = 0; cell < out.num_cells; ++cell) {
        for (int k = 0; k < out.num_probs; ++k)
            CHECK(out.probs_at(cell)[k] == doctest::Approx(0.25).epsilon(1e-12));
        for (int i = 0; i < 4; ++i) CHECK(out.offsets_at(cell)[i] == 0.0);
    }
}

TEST_CASE("forward matches an independent straight-line oracle") {
    const ModelConfig cfg;
    Rng rng(17);
    const ParamVec p = init_params(rng, cfg);
    const Image img = random_image(rng, cfg);
    const ForwardOutput out = forward(cfg, p, img);
    for (int row = 0; row < cfg.grid; ++row) {
        for (int col = 0; col < cfg.grid; ++col) {
            const auto [probs, offsets] = oracle_forward_cell(cfg, p.values, img, row, col);
            const int cell = row * cfg.grid + col;
            for (int k = 0; k < out.num_probs; ++k)
                CHECK(out.probs_at(cell)[k] == doctest::Approx(probs[std::size_t(k)]).epsilon(1e-12));
            for (int i = 0; i < 4; ++i)
                CHECK(out.offsets_at(cell)[i] ==
                      doctest::Approx(offsets[std::size_t(i)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("sup_loss: near-one-hot predictions with matching offsets") {
    const ModelConfig cfg;
    ParamVec p;
    p.values.assign(std::size_t(cfg.param_count()), 0.0);
    p.config_hash = cfg.hash();
    // bias-only network: logits (40, 0, 0, 0), offsets (0.1, -0.2, 0.3, 0.4)
    const std::size_t b3 = p.size() - std::size_t(cfg.output_dim());
    p.values[b3 + 0] = 40.0;
    p.values[b3 + 4] = 0.1;
    p.values[b3 + 5] = -0.2;
    p.values[b3 + 6] = 0.3;
    p.values[b3 + 7] = 0.4;

    Rng rng(4);
    const Image img = random_image(rng, cfg);
    CellTargets gt(std::size_t(cfg.num_cells()));
    for (CellTarget& t : gt) {
        t.cls = 0;
        t.offsets = {0.1, -0.2, 0.3, 0.4};
        t.has_offsets = true;
        t.reg_weight = 1.0;
    }
    const LossResult res = sup_loss(cfg, p, img, gt);
    CHECK(res.reg_term == 0.0);
    CHECK(res.loss < 1e-12);
}

TEST_CASE("sup_loss: no foreground cells means a zero regression term") {
    const ModelConfig cfg;
    Rng rng(6);
    const ParamVec p = init_params(rng, cfg);
    const Image img = random_image(rng, cfg);
    CellTargets gt(std::size_t(cfg.num_cells()));
    for (CellTarget& t : gt) t.cls = cfg.num_classes;
    const LossResult res = sup_loss(cfg, p, img, gt);
    CHECK(res.reg_term == 0.0);
    CHECK(res.loss == res.cls_term);
}

TEST_CASE("sup_loss: permutation of ground-truth objects changes nothing") {
    const ModelConfig cfg;
    Rng rng(8);
    const ParamVec p = init_params(rng, cfg);
    const synthgen::Scene scene = synthgen::generate_scene(19, synthgen::default_domains().s1);
    std::vector<Box> boxes = scene.boxes;
    std::vector<int> classes = scene.classes;

    const CellTargets a = cell_targets_from_ground_truth(cfg, boxes, classes);
    std::reverse(boxes.begin(), boxes.end());
    std::reverse(classes.begin(), classes.end());
    const CellTargets b = cell_targets_from_ground_truth(cfg, boxes, classes);

    const double la = sup_loss(cfg, p, scene.image, a).loss;
    const double lb = sup_loss(cfg, p, scene.image, b).loss;
    CHECK(la == lb);

    // forced collision with an area tie: same box geometry, distinct classes
    std::vector<Box> tie = {Box{0.3, 0.3, 0.2, 0.2}, Box{0.32, 0.3, 0.2, 0.2}};
    std::vector<int> tie_cls = {2, 1};
    const CellTargets t1 = cell_targets_from_ground_truth(cfg, tie, tie_cls);
    std::swap(tie[0], tie[1]);
    std::swap(tie_cls[0], tie_cls[1]);
    const CellTargets t2 = cell_targets_from_ground_truth(cfg, tie, tie_cls);
    for (std::size_t r = 0; r < t1.size(); ++r) {
        CHECK(t1[r].cls == t2[r].cls);
        CHECK(t1[r].offsets == t2[r].offsets);
    }
}

TEST_CASE("unsup_loss: self-targets sit at the cross-entropy floor") {
    const ModelConfig cfg;
    Rng rng(9);
    const ParamVec p = init_params(rng, cfg);
    const Image img = random_image(rng, cfg);
    const ForwardOutput own = forward(cfg, p, img);

    CellTargets pseudo(std::size_t(cfg.num_cells()));
    double entropy = 0.0;
    for (int cell = 0; cell < cfg.num_cells(); ++cell) {
        CellTarget& t = pseudo[std::size_t(cell)];
        t.soft = true;
        t.dist.assign(own.probs_at(cell), own.probs_at(cell) + own.num_probs);
        const double* off = own.offsets_at(cell);
        std::copy(off, off + 4, t.offsets.begin());
        t.has_offsets = true;
        t.reg_weight = 1.0;
        for (int k = 0; k < own.num_probs; ++k)
            entropy -= own.probs_at(cell)[k] * std::log(own.probs_at(cell)[k]);
    }
    entropy /= cfg.num_cells();

    const LossResult res = unsup_loss(cfg, p, img, pseudo);
    CHECK(res.cls_term == doctest::Approx(entropy).epsilon(1e-10));
    CHECK(res.reg_term == 0.0);
    // the classification gradient vanishes where the target equals the output
    double gmax = 0.0;
    for (double g : res.grad.values) gmax = std::max(gmax, std::abs(g));
    CHECK(gmax < 1e-12);
}

TEST_CASE("unsup_loss: zero regression weights annihilate the term") {
    const ModelConfig cfg;
    Rng rng(10);
    const ParamVec p = init_params(rng, cfg);
    const Image img = random_image(rng, cfg);
    CellTargets pseudo(std::size_t(cfg.num_cells()));
    for (CellTarget& t : pseudo) {
        t.cls = cfg.num_classes;
        t.offsets = {1.0, 1.0, 1.0, 1.0};
        t.has_offsets = true;
        t.reg_weight = 0.0;
    }
    const LossResult res = unsup_loss(cfg, p, img, pseudo);
    CHECK(res.reg_term == 0.0);
}

TEST_CASE("regul_loss: student equal to teacher") {
    const ModelConfig cfg;
    Rng rng(11);
    const ParamVec p = init_params(rng, cfg);
    const Image img = random_image(rng, cfg);
    const ForwardOutput teacher = forward(cfg, p, img);

    double entropy = 0.0;
    for (int cell = 0; cell < cfg.num_cells(); ++cell)
        for (int k = 0; k < teacher.num_probs; ++k)
            entropy -= teacher.probs_at(cell)[k] * std::log(teacher.probs_at(cell)[k]);
    entropy /= cfg.num_cells();

    const LossResult res = regul_loss(cfg, p, img, teacher);
    CHECK(res.cls_term == doctest::Approx(entropy).epsilon(1e-10));
    CHECK(res.reg_term == 0.0);
}

TEST_CASE("regul_loss: all-background teacher disables the regression term") {
    const ModelConfig cfg;
    Rng rng(12);
    const ParamVec p = init_params(rng, cfg);
    const Image img = random_image(rng, cfg);
    ForwardOutput teacher;
    teacher.num_cells = cfg.num_cells();
    teacher.num_probs = cfg.num_classes + 1;
    teacher.class_probs.assign(std::size_t(teacher.num_cells * teacher.num_probs), 0.0);
    teacher.offsets.assign(std::size_t(teacher.num_cells) * 4, 2.0);
    for (int cell = 0; cell < teacher.num_cells; ++cell)
        teacher.class_probs[std::size_t(cell * teacher.num_probs + cfg.num_classes)] = 1.0;
    const LossResult res = regul_loss(cfg, p, img, teacher);
    CHECK(res.reg_term == 0.0);
}

TEST_CASE("analytic gradients agree with central finite differences") {
    const ModelConfig cfg;
    Rng rng(13);
    for (int draw = 0; draw < 3; ++draw) {
        ParamVec p = init_params(rng, cfg);
        // move away from the zero-bias init so all layers are exercised
        for (double& v : p.values) v += 0.05 * rng.normal();
        const synthgen::Scene scene =
            synthgen::generate_scene(100 + std::uint64_t(draw), synthgen::default_domains().s1);
        const CellTargets gt = cell_targets_from_ground_truth(cfg, scene.boxes, scene.classes);

        check_grad(p, [&](const ParamVec& q) { return sup_loss(cfg, q, scene.image, gt); }, rng, 6);

        ParamVec teacher_params = init_params(rng, cfg);
        const ForwardOutput teacher = forward(cfg, teacher_params, scene.image);
        const CellTargets pseudo =
            pseudolabel::build_targets(teacher, pseudolabel::TargetMode::SsSoft, std::nullopt, 0.8,
                                       0.5)
                .to_cell_targets();
        check_grad(p, [&](const ParamVec& q) { return unsup_loss(cfg, q, scene.image, pseudo); },
                   rng, 6);

        check_grad(p, [&](const ParamVec& q) { return regul_loss(cfg, q, scene.image, teacher); },
                   rng, 6);
    }
}

TEST_CASE("shape mismatches raise config errors") {
    const ModelConfig cfg;
    Rng rng(14);
    const ParamVec p = init_params(rng, cfg);
    Image wrong(8, 8, 3);
    CHECK_THROWS_AS((void)forward(cfg, p, wrong), ConfigError);

    ParamVec stale = p;
    stale.config_hash ^= 1;
    const Image img = random_image(rng, cfg);
    CHECK_THROWS_AS((void)forward(cfg, stale, img), ConfigError);

    CellTargets too_few(3);
    CHECK_THROWS_AS((void)sup_loss(cfg, p, img, too_few), ConfigError);
}

TEST_CASE("non-finite losses raise numeric errors naming a cell") {
    const ModelConfig cfg;
    Rng rng(15);
    ParamVec p = init_params(rng, cfg);
    p.values[p.size() - std::size_t(cfg.output_dim())] =
        std::numeric_limits<double>::infinity();  // first class-logit bias
    const Image img = random_image(rng, cfg);
    CellTargets gt(std::size_t(cfg.num_cells()));
    for (CellTarget& t : gt) t.cls = cfg.num_classes;
    try {
        (void)sup_loss(cfg, p, img, gt);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("cell") != std::string::npos);
    }
}

TEST_CASE("offsets: encode/decode round-trip inside the image") {
    const ModelConfig cfg;
    Rng rng(16);
    for (int i = 0; i < 200; ++i) {
        Box b;
        b.w = rng.uniform(0.1, 0.4);
        b.h = rng.uniform(0.1, 0.4);
        b.cx = rng.uniform(b.w / 2, 1 - b.w / 2);
        b.cy = rng.uniform(b.h / 2, 1 - b.h / 2);
        const int col = std::clamp(int(b.cx * cfg.grid), 0, cfg.grid - 1);
        const int row = std::clamp(int(b.cy * cfg.grid), 0, cfg.grid - 1);
        const int cell = row * cfg.grid + col;
        const auto enc = encode_offsets(cfg, cell, b);
        const Box back = decode_offsets(cfg, cell, enc.data());
        CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-9));
        CHECK(back.cy == doctest::Approx(b.cy).epsilon(1e-9));
        CHECK(back.w == doctest::Approx(b.w).epsilon(1e-9));
        CHECK(back.h == doctest::Approx(b.h).epsilon(1e-9));
    }
}

TEST_CASE("checkpoints: byte-identical save/load/save round-trip") {
    const ModelConfig cfg;
    Rng rng(18);
    const ParamVec p = init_params(rng, cfg);
    const CheckpointMeta meta{cfg, 123, "ss-dgod-teacher", 7};

    const auto bytes1 = serialize_checkpoint(p, meta);
    auto [loaded, meta2] = deserialize_checkpoint(bytes1);
    const auto bytes2 = serialize_checkpoint(loaded, meta2);
    CHECK(bytes1 == bytes2);
    CHECK(meta2.mode == meta.mode);
    CHECK(meta2.iteration == meta.iteration);
    CHECK(meta2.seed == meta.seed);
    CHECK(meta2.config.hash() == cfg.hash());
    // parameters survive as their f32 rounding
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK(loaded.values[i] == double(float(p.values[i])));

    const std::string path =
        std::filesystem::temp_directory_path().string() + "/mtlab_test_ckpt.mtfl";
    save_checkpoint(p, meta, path);
    auto [from_disk, meta3] = load_checkpoint(path);
    CHECK(from_disk.values == loaded.values);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint header is the documented layout") {
    const ModelConfig cfg;
    Rng rng(19);
    const ParamVec p = init_params(rng, cfg);
    const auto bytes = serialize_checkpoint(p, {cfg, 0, "pretrain", 1});
    REQUIRE(bytes.size() > 16);
    CHECK(bytes[0] == 'M');
    CHECK(bytes[1] == 'T');
    CHECK(bytes[2] == 'F');
    CHECK(bytes[3] == 'L');
    CHECK(bytes[4] == 1);     // version
    CHECK(bytes[8] == 0x48);  // param_count = 7496 = 0x1D48, little-endian
    CHECK(bytes[9] == 0x1D);
}

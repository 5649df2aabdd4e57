#include "mtlab/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "mtlab/common.hpp"

namespace mtlab::synthgen {

using json = nlohmann::json;

std::vector<int> weak_label_from_classes(const std::vector<int>& classes) {
    std::set<int> s(classes.begin(), classes.end());
    return {s.begin(), s.end()};
}

namespace {

bool point_in_shape(int cls, double x, double y, const Box& b) {
    const double hx = 0.5 * b.w;
    const double hy = 0.5 * b.h;
    switch (cls) {
        case 0: {  // disk inscribed in the box
            const double u = (x - b.cx) / hx;
            const double v = (y - b.cy) / hy;
            return u * u + v * v <= 1.0;
        }
        case 1:  // filled square = the box itself
            return std::abs(x - b.cx) <= hx && std::abs(y - b.cy) <= hy;
        default: {  // isoceles triangle: apex top-center, base bottom edge
            const double v = (y - (b.cy - hy)) / b.h;  // 0 at apex row, 1 at base
            if (v < 0.0 || v > 1.0) return false;
            return std::abs(x - b.cx) <= v * hx;
        }
    }
}

void render_object(Image& img, int cls, const Box& b, const std::array<double, 3>& color) {
    const int x_lo = std::max(0, int(std::floor(b.x0() * img.width)));
    const int x_hi = std::min(img.width - 1, int(std::ceil(b.x1() * img.width)));
    const int y_lo = std::max(0, int(std::floor(b.y0() * img.height)));
    const int y_hi = std::min(img.height - 1, int(std::ceil(b.y1() * img.height)));
    for (int y = y_lo; y <= y_hi; ++y) {
        const double py = (y + 0.5) / img.height;
        for (int x = x_lo; x <= x_hi; ++x) {
            const double px = (x + 0.5) / img.width;
            if (!point_in_shape(cls, px, py, b)) continue;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = float(color[c]);
        }
    }
}

}  // namespace

Image apply_style(const Image& base, const DomainStyle& style, std::uint64_t noise_seed) {
    Image out = base;
    if (style.channel_permutation != std::array<int, 3>{0, 1, 2}) {
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                for (int c = 0; c < 3; ++c)
                    out.at(y, x, c) = base.at(y, x, style.channel_permutation[std::size_t(c)]);
    }
    if (style.intensity_gain != 1.0 || style.intensity_bias != 0.0) {
        for (float& v : out.px)
            v = float(style.intensity_gain * double(v) + style.intensity_bias);
    }
    if (style.blur_radius > 0) {
        const int r = style.blur_radius;
        Image blurred = out;
        const double inv = 1.0 / double((2 * r + 1) * (2 * r + 1));
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int dy = -r; dy <= r; ++dy) {
                        const int yy = std::clamp(y + dy, 0, out.height - 1);
                        for (int dx = -r; dx <= r; ++dx) {
                            const int xx = std::clamp(x + dx, 0, out.width - 1);
                            acc += double(out.at(yy, xx, c));
                        }
                    }
                    blurred.at(y, x, c) = float(acc * inv);
                }
            }
        }
        out = std::move(blurred);
    }
    if (style.noise_sigma > 0.0) {
        Rng noise(noise_seed);
        for (float& v : out.px) v = float(double(v) + noise.normal(0.0, style.noise_sigma));
    }
    for (float& v : out.px) v = std::clamp(v, 0.f, 1.f);
    return out;
}

Scene generate_scene(std::uint64_t seed, const DomainStyle& domain, const SceneSpec& spec) {
    Rng rng(seed);
    Image base(spec.height, spec.width, 3);

    std::array<double, 3> bg;
    for (double& c : bg) c = rng.uniform(0.10, 0.30);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
            for (int c = 0; c < 3; ++c) base.at(y, x, c) = float(bg[std::size_t(c)]);

    Scene scene;
    const int n_obj = rng.uniform_int(spec.min_objects, spec.max_objects);
    for (int i = 0; i < n_obj; ++i) {
        const int cls = rng.uniform_int(0, spec.num_classes - 1);
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_place_tries && !placed; ++attempt) {
            Box b;
            b.w = rng.uniform(double(spec.min_box_px), double(spec.max_box_px)) / spec.width;
            b.h = rng.uniform(double(spec.min_box_px), double(spec.max_box_px)) / spec.height;
            if (b.w > 1.0 || b.h > 1.0) continue;
            b.cx = rng.uniform(0.5 * b.w, 1.0 - 0.5 * b.w);
            b.cy = rng.uniform(0.5 * b.h, 1.0 - 0.5 * b.h);
            bool ok = true;
            for (const Box& other : scene.boxes)
                if (box_iou(b, other) > spec.max_iou) { ok = false; break; }
            if (!ok) continue;
            std::array<double, 3> color;
            for (double& c : color) c = rng.uniform(0.55, 0.95);
            render_object(base, cls, b, color);
            scene.boxes.push_back(b);
            scene.classes.push_back(cls);
            placed = true;
        }
        if (!placed)
            throw PlacementError("could not place object " + std::to_string(i) + " within " +
                                 std::to_string(spec.max_place_tries) + " tries (seed " +
                                 std::to_string(seed) + ")");
    }

    scene.image = apply_style(base, domain, derive_seed(seed, 101 + std::uint64_t(domain.domain_id)));
    scene.weak_label = weak_label_from_classes(scene.classes);
    scene.domain_id = domain.domain_id;
    scene.seed = seed;
    return scene;
}

Scene replay_weak_aug(const Scene& scene, const AugRecord& rec, const WeakAugPolicy& policy) {
    Scene out = scene;
    if (rec.h_flip) {
        for (int y = 0; y < scene.image.height; ++y)
            for (int x = 0; x < scene.image.width; ++x)
                for (int c = 0; c < scene.image.channels; ++c)
                    out.image.at(y, x, c) = scene.image.at(y, scene.image.width - 1 - x, c);
        for (Box& b : out.boxes) b.cx = 1.0 - b.cx;
    }
    if (policy.noise_sigma > 0.0) {
        Rng noise(rec.noise_seed);
        for (float& v : out.image.px)
            v = std::clamp(float(double(v) + noise.normal(0.0, policy.noise_sigma)), 0.f, 1.f);
    }
    return out;
}

std::pair<Scene, AugRecord> apply_weak_aug(const Scene& scene, Rng& rng, const WeakAugPolicy& policy) {
    AugRecord rec;
    rec.h_flip = rng.bernoulli(policy.flip_prob);
    rec.noise_seed = rng.next_u64();
    return {replay_weak_aug(scene, rec, policy), rec};
}

Image apply_strong_aug(const Image& image, Rng& rng, const StrongAugPolicy& policy) {
    Image out = image;
    std::array<double, 3> gain;
    for (double& g : gain) g = rng.uniform(policy.gain_lo, policy.gain_hi);
    const double sigma = rng.uniform(policy.noise_sigma_lo, policy.noise_sigma_hi);
    const int side = rng.uniform_int(policy.cutout_lo, policy.cutout_hi);

    if (gain != std::array<double, 3>{1.0, 1.0, 1.0}) {
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                for (int c = 0; c < out.channels; ++c)
                    out.at(y, x, c) = float(gain[std::size_t(c)] * double(out.at(y, x, c)));
    }
    if (sigma > 0.0) {
        for (float& v : out.px) v = float(double(v) + rng.normal(0.0, sigma));
    }
    for (float& v : out.px) v = std::clamp(v, 0.f, 1.f);
    if (side > 0) {
        const int y0 = rng.uniform_int(0, out.height - side);
        const int x0 = rng.uniform_int(0, out.width - side);
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x)
                for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = 0.5f;
    }
    return out;
}

DomainSet default_domains() {
    DomainSet d;
    d.s1 = DomainStyle{0, 1.0, 0.0, 0.0, {0, 1, 2}, 0};
    d.s2 = DomainStyle{1, -1.0, 1.0, 0.0, {1, 2, 0}, 0};
    d.s3 = DomainStyle{2, 0.8, 0.2, 0.1, {0, 1, 2}, 0};
    d.target = DomainStyle{3, 0.7, 0.0, 0.0, {0, 1, 2}, 1};
    return d;
}

namespace {

std::vector<Scene> make_split(const DataSpec& spec, const DomainStyle& style, int stream, int count) {
    std::vector<Scene> scenes(static_cast<std::size_t>(count));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) {
        try {
            const std::uint64_t s =
                derive_seed(spec.seed, (std::uint64_t(stream) << 32) + std::uint64_t(i));
            scenes[std::size_t(i)] = generate_scene(s, style, spec.scene);
        } catch (...) {
            errors[std::size_t(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return scenes;
}

}  // namespace

BenchmarkData build_benchmark_data(const DataSpec& spec) {
    const DomainSet dom = default_domains();
    BenchmarkData data;
    data.s1.style = dom.s1;
    data.s1.train = make_split(spec, dom.s1, 0x10, spec.s1_train);
    data.s2.style = dom.s2;
    data.s2.train = make_split(spec, dom.s2, 0x20, spec.aux_train);
    data.s2.val = make_split(spec, dom.s2, 0x21, spec.aux_val);
    data.s3.style = dom.s3;
    data.s3.train = make_split(spec, dom.s3, 0x30, spec.aux_train);
    data.s3.val = make_split(spec, dom.s3, 0x31, spec.aux_val);
    data.target.style = dom.target;
    data.target.test = make_split(spec, dom.target, 0x40, spec.target_test);
    data.target.train = make_split(spec, dom.target, 0x41, spec.target_train);
    data.target.val = make_split(spec, dom.target, 0x42, spec.target_val);
    return data;
}

void write_image_file(const Image& image, const std::string& path) {
    std::vector<unsigned char> buf;
    buf.reserve(20 + image.px.size() * 4);
    buf.insert(buf.end(), {'M', 'T', 'I', 'M'});
    put_u32(buf, 1);
    put_u32(buf, std::uint32_t(image.height));
    put_u32(buf, std::uint32_t(image.width));
    put_u32(buf, std::uint32_t(image.channels));
    for (float v : image.px) put_f32(buf, v);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

Image read_image_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ByteReader r{buf.data(), buf.size()};
    r.need(4, "magic");
    if (!(buf[0] == 'M' && buf[1] == 'T' && buf[2] == 'I' && buf[3] == 'M'))
        throw ConfigError("bad image magic in " + path);
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1) throw ConfigError("unsupported image version in " + path);
    const int h = int(r.u32("height"));
    const int w = int(r.u32("width"));
    const int c = int(r.u32("channels"));
    Image img(h, w, c);
    for (float& v : img.px) v = r.f32("pixels");
    return img;
}

void write_scene(const Scene& scene, const std::string& image_path, const std::string& json_path) {
    write_image_file(scene.image, image_path);
    json j;
    j["boxes"] = json::array();
    for (const Box& b : scene.boxes) j["boxes"].push_back({b.cx, b.cy, b.w, b.h});
    j["classes"] = scene.classes;
    j["weak_label"] = scene.weak_label;
    j["domain_id"] = scene.domain_id;
    j["seed"] = scene.seed;
    std::ofstream f(json_path);
    if (!f) throw ConfigError("cannot open for writing: " + json_path);
    f << j.dump(2) << "\n";
}

Scene read_scene(const std::string& image_path, const std::string& json_path) {
    Scene scene;
    scene.image = read_image_file(image_path);
    std::ifstream f(json_path);
    if (!f) throw ConfigError("cannot open: " + json_path);
    json j = json::parse(f);
    for (const auto& bj : j.at("boxes")) {
        Box b{bj.at(0).get<double>(), bj.at(1).get<double>(), bj.at(2).get<double>(),
              bj.at(3).get<double>()};
        scene.boxes.push_back(b);
    }
    scene.classes = j.at("classes").get<std::vector<int>>();
    scene.weak_label = j.at("weak_label").get<std::vector<int>>();
    scene.domain_id = j.at("domain_id").get<int>();
    scene.seed = j.at("seed").get<std::uint64_t>();
    return scene;
}

}  // namespace mtlab::synthgen

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mtlab/image.hpp"
#include "mtlab/rng.hpp"

namespace mtlab::synthgen {

// Photometric rendering recipe for one domain. Styles are applied to a base
// scene as: channel permutation -> gain/bias -> box blur -> additive noise ->
// clamp to [0,1].
struct DomainStyle {
    int domain_id = 0;
    double intensity_gain = 1.0;
    double intensity_bias = 0.0;
    double noise_sigma = 0.0;
    std::array<int, 3> channel_permutation{0, 1, 2};
    int blur_radius = 0;

    bool is_identity() const {
        return intensity_gain == 1.0 && intensity_bias == 0.0 && noise_sigma == 0.0 &&
               blur_radius == 0 && channel_permutation == std::array<int, 3>{0, 1, 2};
    }
};

// One synthetic image with full ground truth. weak_label is the set of
// distinct class ids present, kept sorted.
struct Scene {
    Image image;
    std::vector<Box> boxes;
    std::vector<int> classes;
    std::vector<int> weak_label;
    int domain_id = 0;
    std::uint64_t seed = 0;
};

// Enough to replay a weak augmentation bit-for-bit.
struct AugRecord {
    bool h_flip = false;
    std::uint64_t noise_seed = 0;
};

struct SceneSpec {
    int height = 32;
    int width = 32;
    int num_classes = 3;  // 0 = disk, 1 = square, 2 = triangle
    int min_objects = 1;
    int max_objects = 3;
    int min_box_px = 6;
    int max_box_px = 10;
    double max_iou = 0.3;  // placement overlap cap
    int max_place_tries = 100;
};

struct WeakAugPolicy {
    double flip_prob = 0.5;
    double noise_sigma = 0.02;
};

struct StrongAugPolicy {
    double noise_sigma_lo = 0.05;
    double noise_sigma_hi = 0.15;
    double gain_lo = 0.6;
    double gain_hi = 1.4;
    int cutout_lo = 4;  // cutout side in px; 0..0 disables the cutout
    int cutout_hi = 8;

    static StrongAugPolicy identity() { return {0.0, 0.0, 1.0, 1.0, 0, 0}; }
};

std::vector<int> weak_label_from_classes(const std::vector<int>& classes);

// Style application alone (base scene -> styled image). noise_seed drives the
// style's additive noise; ignored when noise_sigma == 0.
Image apply_style(const Image& base, const DomainStyle& style, std::uint64_t noise_seed);

// Deterministic scene synthesis. Throws PlacementError when the overlap cap
// cannot be met within spec.max_place_tries rejection samples per object.
Scene generate_scene(std::uint64_t seed, const DomainStyle& domain, const SceneSpec& spec = {});

std::pair<Scene, AugRecord> apply_weak_aug(const Scene& scene, Rng& rng,
                                           const WeakAugPolicy& policy = {});
Scene replay_weak_aug(const Scene& scene, const AugRecord& rec, const WeakAugPolicy& policy = {});

// Photometric-only strong augmentation on top of an already weakly augmented
// view; geometry is untouched so teacher boxes stay valid for the student.
Image apply_strong_aug(const Image& image, Rng& rng, const StrongAugPolicy& policy = {});

// The default four-domain layout: s1 identity (labeled), s2 inverted gain +
// channel permutation, s3 brightened + noise, t blurred + dimmed (held out).
struct DomainSet {
    DomainStyle s1, s2, s3, target;
};
DomainSet default_domains();

// Benchmark dataset sizes and seeds. Target train/val splits exist only for
// the UDA wiring; target test is never trained on.
struct DataSpec {
    std::uint64_t seed = 12345;
    int s1_train = 2000;
    int aux_train = 800;  // each of s2, s3
    int aux_val = 200;    // each of s2, s3
    int target_test = 400;
    int target_train = 800;  // uda only
    int target_val = 200;    // uda only
    SceneSpec scene;
};

struct DomainData {
    DomainStyle style;
    std::vector<Scene> train;
    std::vector<Scene> val;
    std::vector<Scene> test;
};

struct BenchmarkData {
    DomainData s1;
    DomainData s2;
    DomainData s3;
    DomainData target;
};

BenchmarkData build_benchmark_data(const DataSpec& spec = {});

// Scene file I/O (gen-data interface): binary image ("MTIM") plus JSON
// sidecar with boxes/classes/weak_label/domain_id/seed.
void write_image_file(const Image& image, const std::string& path);
Image read_image_file(const std::string& path);
void write_scene(const Scene& scene, const std::string& image_path, const std::string& json_path);
Scene read_scene(const std::string& image_path, const std::string& json_path);

}  // namespace mtlab::synthgen

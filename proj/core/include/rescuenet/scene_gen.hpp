#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rescuenet/raster.hpp"
#include "rescuenet/tensor.hpp"

namespace rescuenet {

// One pre/post image pair with its combined ground-truth mask.
// Images are [3,H,W] floats in [0,1] quantized to the 8-bit grid (k/255),
// so file round-trips reproduce the in-memory tensors exactly.
// Mask values: 0 background, 1..4 damage classes, 255 ignore.
struct ScenePair {
    Tensor pre_img;   // [3,H,W]
    Tensor post_img;  // [3,H,W]
    std::vector<std::uint8_t> mask;
    int h = 0;
    int w = 0;
    std::string scene_id;
    std::uint64_t seed = 0;
};

// How one damage class re-renders a building in the post image. Severity is
// monotone: minor < major < destroyed in perturbation magnitude.
struct DamageEffect {
    float brightness_shift = 0.f;
    float speckle_density = 0.f;
    float removal_fraction = 0.f;  // fraction of pixels replaced by rubble
};

struct GeneratorConfig {
    int image_size = 64;  // multiple of 8
    int min_buildings = 3;
    int max_buildings = 5;
    int min_building_size = 9;  // rectangle side, pixels
    int max_building_size = 14;
    std::array<double, 4> class_distribution = {0.40, 0.25, 0.20, 0.15};
    std::array<DamageEffect, 4> damage_effects = {
        DamageEffect{0.00f, 0.00f, 0.00f},  // no-damage: unchanged
        DamageEffect{0.17f, 0.08f, 0.00f},  // minor: brightened, light speckle
        DamageEffect{-0.22f, 0.30f, 0.35f}, // major: darkened, dense speckle, partial collapse
        DamageEffect{0.00f, 0.50f, 1.00f},  // destroyed: removed, rubble texture
    };
    std::string domain_shift;  // "" or a named preset ("arid")

    void validate() const;  // throws ConfigError / ValueError
};

struct GeneratedScene {
    ScenePair pair;
    std::vector<PolygonLabel> labels;  // one polygon per placed building
};

// Deterministic synthetic disaster scene: textured background, non-
// overlapping axis-aligned and rotated rectangular buildings, post image
// re-rendered per sampled damage class. A pure function of (config, seed):
// placement decisions use integer arithmetic and a table of exact rotation
// constants, textures come from stateless per-pixel hashes, so output is
// byte-identical across runs and platforms.
// Throws ConfigError when the requested building count cannot be placed
// without overlap within a bounded number of retries.
GeneratedScene generate_scene(const GeneratorConfig& config, std::uint64_t seed,
                              const std::string& scene_id = "");

}  // namespace rescuenet

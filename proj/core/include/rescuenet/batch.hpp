#pragma once

#include "rescuenet/rng.hpp"
#include "rescuenet/scene_gen.hpp"

namespace rescuenet {

// A training batch: stacked crops of pre/post images with their mask crops.
struct Batch {
    Tensor pre;   // [N,3,c,c]
    Tensor post;  // [N,3,c,c]
    std::vector<std::uint8_t> masks;  // N*c*c
    int n = 0;
    int crop = 0;
    std::vector<int> scene_indices;
};

// Seeded random crops with optional horizontal/vertical flips, applied
// identically to pre, post and mask. crop must be a positive multiple of 8
// and no larger than the smallest scene. Deterministic given the rng state.
Batch crop_batch(const std::vector<ScenePair>& scenes, int crop, int batch_size, SplitMix64& rng,
                 bool augment);

inline Batch crop_batch(const std::vector<ScenePair>& scenes, int crop, int batch_size,
                        std::uint64_t seed, bool augment) {
    SplitMix64 rng(seed);
    return crop_batch(scenes, crop, batch_size, rng, augment);
}

}  // namespace rescuenet

#include "rescuenet/batch.hpp"

namespace rescuenet {

Batch crop_batch(const std::vector<ScenePair>& scenes, int crop, int batch_size, SplitMix64& rng,
                 bool augment) {
    if (scenes.empty()) throw ValueError("crop_batch: no scenes");
    if (crop <= 0 || crop % 8 != 0) throw ValueError("crop must be a positive multiple of 8");
    for (const auto& s : scenes) {
        if (crop > s.h || crop > s.w) {
            throw ValueError("crop " + std::to_string(crop) + " larger than scene " + s.scene_id +
                             " (" + std::to_string(s.h) + "x" + std::to_string(s.w) + ")");
        }
    }
    Batch out;
    out.n = batch_size;
    out.crop = crop;
    out.pre = Tensor(Shape{batch_size, 3, crop, crop});
    out.post = Tensor(Shape{batch_size, 3, crop, crop});
    out.masks.assign(static_cast<std::size_t>(batch_size) * crop * crop, 0);

    for (int b = 0; b < batch_size; ++b) {
        const int si = static_cast<int>(rng.next_below(scenes.size()));
        const ScenePair& s = scenes[static_cast<std::size_t>(si)];
        out.scene_indices.push_back(si);
        const int oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(s.h - crop + 1)));
        const int ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(s.w - crop + 1)));
        const bool hflip = augment && rng.next_below(2) == 1;
        const bool vflip = augment && rng.next_below(2) == 1;

        const std::int64_t splane = static_cast<std::int64_t>(s.h) * s.w;
        const std::int64_t dplane = static_cast<std::int64_t>(crop) * crop;
        for (int y = 0; y < crop; ++y) {
            const int sy = vflip ? oy + crop - 1 - y : oy + y;
            for (int x = 0; x < crop; ++x) {
                const int sx = hflip ? ox + crop - 1 - x : ox + x;
                const std::int64_t spix = static_cast<std::int64_t>(sy) * s.w + sx;
                const std::int64_t dpix = static_cast<std::int64_t>(y) * crop + x;
                for (int ch = 0; ch < 3; ++ch) {
                    out.pre.data()[(static_cast<std::int64_t>(b) * 3 + ch) * dplane + dpix] =
                        s.pre_img.data()[ch * splane + spix];
                    out.post.data()[(static_cast<std::int64_t>(b) * 3 + ch) * dplane + dpix] =
                        s.post_img.data()[ch * splane + spix];
                }
                out.masks[static_cast<std::size_t>(b * dplane + dpix)] =
                    s.mask[static_cast<std::size_t>(spix)];
            }
        }
    }
    return out;
}

}  // namespace rescuenet

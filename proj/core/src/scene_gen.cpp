#include "rescuenet/scene_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rescuenet/rng.hpp"

namespace rescuenet {

namespace {

// hash stream tags
enum : std::uint64_t {
    kBgLattice = 1,
    kPreNoise = 2,
    kPostNoise = 3,
    kSpeckle = 4,
    kRemoval = 5,
    kRubble = 6,
    kRoofNoise = 7,
};

struct Rgb {
    float r, g, b;
};

// Exact (sin, cos) pairs; axis-aligned orientations are over-represented.
// Literal constants keep placement free of libm differences.
constexpr double kAngles[][2] = {
    {0.0, 1.0},
    {0.0, 1.0},
    {0.0, 1.0},
    {1.0, 0.0},
    {0.25881904510252074, 0.9659258262890683},    // 15 deg
    {-0.25881904510252074, 0.9659258262890683},   // -15 deg
    {0.49999999999999994, 0.8660254037844387},    // 30 deg
    {0.7071067811865476, 0.7071067811865476},     // 45 deg
};
constexpr int kNumAngles = static_cast<int>(sizeof(kAngles) / sizeof(kAngles[0]));

struct DomainParams {
    Rgb bg_a, bg_b;
    float bg_noise;
    std::vector<Rgb> roofs;
    Rgb rubble;
};

DomainParams domain_params(const std::string& name) {
    if (name.empty() || name == "default") {
        return DomainParams{
            {0.30f, 0.42f, 0.26f},
            {0.46f, 0.42f, 0.32f},
            0.030f,
            {{0.78f, 0.78f, 0.80f},
             {0.45f, 0.45f, 0.50f},
             {0.62f, 0.30f, 0.24f},
             {0.50f, 0.56f, 0.66f}},
            {0.38f, 0.35f, 0.32f},
        };
    }
    if (name == "arid") {
        return DomainParams{
            {0.58f, 0.51f, 0.36f},
            {0.44f, 0.38f, 0.28f},
            0.050f,
            {{0.82f, 0.80f, 0.74f},
             {0.36f, 0.34f, 0.32f},
             {0.66f, 0.42f, 0.28f}},
            {0.30f, 0.27f, 0.24f},
        };
    }
    throw ConfigError("unknown domain-shift preset '" + name + "'");
}

float quantize8(float v) {
    float c = std::clamp(v, 0.f, 1.f);
    const int q = static_cast<int>(std::lround(static_cast<double>(c) * 255.0));
    return static_cast<float>(q) / 255.f;
}

// bilinear value of a coarse hash lattice (cell 8 px) at a pixel
float lattice_value(std::uint64_t seed, int y, int x) {
    const int cell = 8;
    const int gy = y / cell, gx = x / cell;
    const float fy = static_cast<float>(y % cell) / cell;
    const float fx = static_cast<float>(x % cell) / cell;
    const float v00 = hash_float(seed, kBgLattice, (std::uint64_t)gy, (std::uint64_t)gx);
    const float v01 = hash_float(seed, kBgLattice, (std::uint64_t)gy, (std::uint64_t)(gx + 1));
    const float v10 = hash_float(seed, kBgLattice, (std::uint64_t)(gy + 1), (std::uint64_t)gx);
    const float v11 = hash_float(seed, kBgLattice, (std::uint64_t)(gy + 1), (std::uint64_t)(gx + 1));
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

struct Placed {
    PolygonGeometry geometry;
    std::vector<std::int64_t> pixels;
    int cls = 1;  // 1..4
    Rgb roof;
    int x0, y0, x1, y1;  // integer AABB, margin included
};

}  // namespace

void GeneratorConfig::validate() const {
    if (image_size < 16 || image_size % 8 != 0) {
        throw ConfigError("image_size must be a multiple of 8 and at least 16");
    }
    if (min_buildings < 0 || max_buildings < min_buildings) {
        throw ConfigError("invalid buildings_per_scene range");
    }
    if (min_building_size < 4 || max_building_size < min_building_size) {
        throw ConfigError("invalid building_size range");
    }
    if (max_building_size > image_size / 2) {
        throw ConfigError("building_size too large for image_size");
    }
    double sum = 0.0;
    for (double p : class_distribution) {
        if (p < 0.0) throw ConfigError("class_distribution entries must be non-negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("class_distribution must sum to 1, got " + std::to_string(sum));
    }
    domain_params(domain_shift);  // name check
}

GeneratedScene generate_scene(const GeneratorConfig& config, std::uint64_t seed,
                              const std::string& scene_id) {
    config.validate();
    const DomainParams dom = domain_params(config.domain_shift);
    const int size = config.image_size;
    const std::int64_t npix = static_cast<std::int64_t>(size) * size;

    SplitMix64 rng(seed);
    const int want = static_cast<int>(
        rng.next_in_range(config.min_buildings, config.max_buildings));

    // -- placement: integer AABB overlap test with a 2 px margin ------------
    std::vector<Placed> placed;
    int attempts_left = 120 * (want + 1);
    while (static_cast<int>(placed.size()) < want && attempts_left-- > 0) {
        const int bw = static_cast<int>(
            rng.next_in_range(config.min_building_size, config.max_building_size));
        const int bh = static_cast<int>(
            rng.next_in_range(config.min_building_size, config.max_building_size));
        const int a = static_cast<int>(rng.next_below(kNumAngles));
        const double sn = kAngles[a][0], cs = kAngles[a][1];
        const double hw = bw / 2.0, hh = bh / 2.0;
        const double ext_x = std::abs(hw * cs) + std::abs(hh * sn);
        const double ext_y = std::abs(hw * sn) + std::abs(hh * cs);
        const int margin = 1;
        const int cx_lo = static_cast<int>(std::ceil(ext_x)) + 1;
        const int cx_hi = size - 2 - static_cast<int>(std::ceil(ext_x));
        const int cy_lo = static_cast<int>(std::ceil(ext_y)) + 1;
        const int cy_hi = size - 2 - static_cast<int>(std::ceil(ext_y));
        if (cx_lo > cx_hi || cy_lo > cy_hi) continue;
        const int cx = static_cast<int>(rng.next_in_range(cx_lo, cx_hi));
        const int cy = static_cast<int>(rng.next_in_range(cy_lo, cy_hi));

        const int x0 = cx - static_cast<int>(std::ceil(ext_x)) - margin;
        const int x1 = cx + static_cast<int>(std::ceil(ext_x)) + margin;
        const int y0 = cy - static_cast<int>(std::ceil(ext_y)) - margin;
        const int y1 = cy + static_cast<int>(std::ceil(ext_y)) + margin;
        bool clash = false;
        for (const auto& p : placed) {
            if (x0 <= p.x1 && p.x0 <= x1 && y0 <= p.y1 && p.y0 <= y1) {
                clash = true;
                break;
            }
        }
        if (clash) continue;

        Placed b;
        b.x0 = x0;
        b.x1 = x1;
        b.y0 = y0;
        b.y1 = y1;
        const double corners[4][2] = {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}};
        std::vector<Vec2> ring;
        for (const auto& c : corners) {
            ring.push_back(Vec2{cx + c[0] * cs - c[1] * sn, cy + c[0] * sn + c[1] * cs});
        }
        ring.push_back(ring.front());
        b.geometry.rings.push_back(std::move(ring));
        b.pixels = rasterize_geometry(b.geometry, size, size);
        if (b.pixels.empty()) continue;

        // damage class from the configured distribution
        const double u = rng.next_double();
        double cdf = 0.0;
        int cls = 4;
        for (int k = 0; k < 4; ++k) {
            cdf += config.class_distribution[static_cast<std::size_t>(k)];
            if (u < cdf) {
                cls = k + 1;
                break;
            }
        }
        b.cls = cls;

        const Rgb base = dom.roofs[rng.next_below(dom.roofs.size())];
        const float jitter = (rng.next_float() - 0.5f) * 0.10f;
        b.roof = Rgb{base.r + jitter, base.g + jitter, base.b + jitter};
        placed.push_back(std::move(b));
    }
    // Accept any count within the configured range; only a scene that cannot
    // even hold min_buildings is infeasible.
    if (static_cast<int>(placed.size()) < config.min_buildings) {
        throw ConfigError("could not place " + std::to_string(config.min_buildings) +
                          " buildings without overlap; relax the generator config");
    }

    // -- background --------------------------------------------------------
    std::vector<float> pre(static_cast<std::size_t>(3) * npix);
    std::vector<float> post(static_cast<std::size_t>(3) * npix);
    auto put = [&](std::vector<float>& img, std::int64_t pix, Rgb c) {
        img[static_cast<std::size_t>(pix)] = quantize8(c.r);
        img[static_cast<std::size_t>(npix + pix)] = quantize8(c.g);
        img[static_cast<std::size_t>(2 * npix + pix)] = quantize8(c.b);
    };
    std::vector<Rgb> post_bg(static_cast<std::size_t>(npix));
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const std::int64_t pix = static_cast<std::int64_t>(y) * size + x;
            const float t = lattice_value(seed, y, x);
            const Rgb base{dom.bg_a.r + (dom.bg_b.r - dom.bg_a.r) * t,
                           dom.bg_a.g + (dom.bg_b.g - dom.bg_a.g) * t,
                           dom.bg_a.b + (dom.bg_b.b - dom.bg_a.b) * t};
            const float npre =
                (hash_float(seed, kPreNoise, (std::uint64_t)y, (std::uint64_t)x) - 0.5f) *
                2.f * dom.bg_noise;
            const float npost =
                (hash_float(seed, kPostNoise, (std::uint64_t)y, (std::uint64_t)x) - 0.5f) *
                2.f * dom.bg_noise;
            put(pre, pix, Rgb{base.r + npre, base.g + npre, base.b + npre});
            const Rgb pb{base.r + npost, base.g + npost, base.b + npost};
            post_bg[static_cast<std::size_t>(pix)] = pb;
            put(post, pix, pb);
        }
    }

    // -- buildings ----------------------------------------------------------
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(npix), 0);
    std::vector<std::uint8_t> inside(static_cast<std::size_t>(npix), 0);
    std::uint64_t bid = 0;
    for (const auto& b : placed) {
        for (std::int64_t pix : b.pixels) inside[static_cast<std::size_t>(pix)] = 1;
        const DamageEffect fx = config.damage_effects[static_cast<std::size_t>(b.cls - 1)];
        for (std::int64_t pix : b.pixels) {
            const int y = static_cast<int>(pix / size), x = static_cast<int>(pix % size);
            mask[static_cast<std::size_t>(pix)] = static_cast<std::uint8_t>(b.cls);
            // 1 px darker rim so footprints have a crisp boundary
            const bool rim = x == 0 || x == size - 1 || y == 0 || y == size - 1 ||
                             !inside[static_cast<std::size_t>(pix - 1)] ||
                             !inside[static_cast<std::size_t>(pix + 1)] ||
                             !inside[static_cast<std::size_t>(pix - size)] ||
                             !inside[static_cast<std::size_t>(pix + size)];
            const float shade = rim ? 0.72f : 1.f;
            const float rn =
                (hash_float(seed, kRoofNoise, (std::uint64_t)pix, bid) - 0.5f) * 0.04f;
            const Rgb roof{b.roof.r * shade + rn, b.roof.g * shade + rn, b.roof.b * shade + rn};
            put(pre, pix, roof);

            // post image: re-render by damage class
            if (hash_float(seed, kRemoval, (std::uint64_t)pix, bid) < fx.removal_fraction) {
                Rgb c = post_bg[static_cast<std::size_t>(pix)];
                if (hash_float(seed, kRubble, (std::uint64_t)pix, bid) < 0.6f) {
                    const float rub =
                        hash_float(seed, kRubble, (std::uint64_t)pix, bid ^ 0x5a5a) * 0.35f;
                    c = Rgb{dom.rubble.r + rub, dom.rubble.g + rub, dom.rubble.b + rub};
                }
                put(post, pix, c);
                continue;
            }
            Rgb c{roof.r + fx.brightness_shift, roof.g + fx.brightness_shift,
                  roof.b + fx.brightness_shift};
            if (hash_float(seed, kSpeckle, (std::uint64_t)pix, bid) < fx.speckle_density) {
                const float s =
                    (hash_float(seed, kSpeckle, (std::uint64_t)pix, bid ^ 0xa5a5) - 0.5f) * 0.8f;
                c = Rgb{c.r + s, c.g + s, c.b + s};
            }
            const float pn =
                (hash_float(seed, kPostNoise, bid + 17, (std::uint64_t)pix) - 0.5f) * 0.04f;
            put(post, pix, Rgb{c.r + pn, c.g + pn, c.b + pn});
        }
        ++bid;
    }

    GeneratedScene out;
    out.pair.h = size;
    out.pair.w = size;
    out.pair.pre_img = Tensor(Shape{3, size, size}, std::move(pre));
    out.pair.post_img = Tensor(Shape{3, size, size}, std::move(post));
    out.pair.mask = std::move(mask);
    out.pair.seed = seed;
    if (scene_id.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "scene_%016llx", static_cast<unsigned long long>(seed));
        out.pair.scene_id = buf;
    } else {
        out.pair.scene_id = scene_id;
    }
    for (auto& b : placed) {
        PolygonLabel label;
        label.geometry = std::move(b.geometry);
        label.damage_class = static_cast<std::uint8_t>(b.cls);
        out.labels.push_back(std::move(label));
    }
    return out;
}

}  // namespace rescuenet

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "rescuenet/batch.hpp"
#include "rescuenet/dataset_io.hpp"
#include "rescuenet/raster.hpp"
#include "rescuenet/rng.hpp"
#include "rescuenet/scene_gen.hpp"
#include "rescuenet/wkt.hpp"

using namespace rescuenet;
namespace fs = std::filesystem;

namespace {

// Brute-force even-odd point-in-polygon (the classic crossing test); the
// rasterizer must agree with this on every pixel center.
bool pip_even_odd(const PolygonGeometry& g, double px, double py) {
    bool inside = false;
    for (const auto& ring : g.rings) {
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
            const double xi = ring[i].x, yi = ring[i].y;
            const double xj = ring[i + 1].x, yj = ring[i + 1].y;
            if ((yi > py) != (yj > py)) {
                const double xc = xi + (py - yi) * (xj - xi) / (yj - yi);
                if (px < xc) inside = !inside;
            }
        }
    }
    return inside;
}

PolygonGeometry random_convex_polygon(SplitMix64& rng, double w, double h) {
    // random center/radius, vertices at sorted angles -> convex
    const double cx = 2.0 + rng.next_double() * (w - 4.0);
    const double cy = 2.0 + rng.next_double() * (h - 4.0);
    const double rad = 1.0 + rng.next_double() * (std::min(w, h) / 3.0);
    const int n = 3 + (int)rng.next_below(6);
    std::vector<double> angles;
    for (int i = 0; i < n; ++i) angles.push_back(rng.next_double() * 6.283185307179586);
    std::sort(angles.begin(), angles.end());
    std::vector<Vec2> ring;
    for (double a : angles) {
        ring.push_back(Vec2{cx + rad * std::cos(a), cy + rad * std::sin(a)});
    }
    ring.push_back(ring.front());
    PolygonGeometry g;
    g.rings.push_back(std::move(ring));
    return g;
}

fs::path temp_dir(const char* tag) {
    const fs::path p = fs::temp_directory_path() / (std::string("rescuenet_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("wkt parse examples") {
    {
        const PolygonGeometry g = parse_wkt_polygon("POLYGON ((0 0, 2 0, 2 2, 0 2, 0 0))");
        REQUIRE(g.rings.size() == 1);
        CHECK(g.rings[0].size() == 5);
        CHECK(g.rings[0][1] == Vec2{2.0, 0.0});
    }
    CHECK_THROWS_AS(parse_wkt_polygon("POLYGON((0 0,1 0,1 1))"), ParseError);
    try {
        parse_wkt_polygon("POLYGON((0 0,1 0,1 1))");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("unclosed") != std::string::npos);
    }
    {
        const PolygonGeometry g = parse_wkt_polygon("POLYGON ((0 0, 1e1 0, 10 10, 0 10, 0 0))");
        CHECK(g.rings[0][1] == Vec2{10.0, 0.0});
    }
    // multi-ring (hole)
    {
        const PolygonGeometry g =
            parse_wkt_polygon("POLYGON ((0 0, 8 0, 8 8, 0 8, 0 0), (2 2, 6 2, 6 6, 2 6, 2 2))");
        CHECK(g.rings.size() == 2);
    }
    // closed triangle has fewer than 4 distinct vertices but exactly 4 listed: ok
    CHECK_NOTHROW(parse_wkt_polygon("POLYGON ((0 0, 4 0, 2 3, 0 0))"));
    // 3 listed vertices, closed: too few
    CHECK_THROWS_AS(parse_wkt_polygon("POLYGON ((0 0, 4 0, 0 0))"), ParseError);
    // byte offsets are reported
    try {
        parse_wkt_polygon("POLYGON ((0 0, 2 x, 0 0))");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 17);
    }
}

TEST_CASE("wkt parser never crashes on arbitrary bytes") {
    SplitMix64 rng(1234);
    for (int trial = 0; trial < 3000; ++trial) {
        std::string s;
        const int len = (int)rng.next_below(40);
        for (int i = 0; i < len; ++i) {
            s.push_back(static_cast<char>(rng.next_below(256)));
        }
        if (rng.next_below(2)) s = "POLYGON ((" + s;  // bias toward near-misses
        try {
            (void)parse_wkt_polygon(s);
        } catch (const ParseError&) {
            // positioned error is the expected outcome
        }
    }
    CHECK(true);
}

TEST_CASE("wkt round-trips exact coordinates") {
    SplitMix64 rng(77);
    for (int i = 0; i < 50; ++i) {
        PolygonGeometry g = random_convex_polygon(rng, 60, 60);
        const PolygonGeometry back = parse_wkt_polygon(to_wkt(g));
        REQUIRE(back.rings.size() == g.rings.size());
        for (std::size_t r = 0; r < g.rings.size(); ++r) {
            REQUIRE(back.rings[r].size() == g.rings[r].size());
            for (std::size_t v = 0; v < g.rings[r].size(); ++v) {
                CHECK(back.rings[r][v] == g.rings[r][v]);  // bitwise
            }
        }
    }
}

TEST_CASE("rasterizer square example") {
    PolygonGeometry sq = parse_wkt_polygon("POLYGON ((0 0, 2 0, 2 2, 0 2, 0 0))");
    PolygonLabel label{sq, 1};
    const RasterResult r = rasterize_polygons({label}, 4, 4);
    const std::set<std::int64_t> got(
        [&] {
            std::set<std::int64_t> s;
            for (std::size_t i = 0; i < r.mask.size(); ++i)
                if (r.mask[i]) s.insert((std::int64_t)i);
            return s;
        }());
    CHECK(got == std::set<std::int64_t>{0, 1, 4, 5});
    // oracle agrees on all 16 centers
    for (int rr = 0; rr < 4; ++rr)
        for (int cc = 0; cc < 4; ++cc)
            CHECK(pip_even_odd(sq, cc + 0.5, rr + 0.5) == (r.mask[(std::size_t)(rr * 4 + cc)] != 0));
}

TEST_CASE("rasterizer empty and degenerate") {
    const RasterResult empty = rasterize_polygons({}, 4, 4);
    for (auto v : empty.mask) CHECK(v == 0);

    PolygonGeometry line;
    line.rings.push_back({{1, 1}, {3, 1}, {1, 1}, {3, 1}, {1, 1}});
    const RasterResult deg = rasterize_polygons({PolygonLabel{line, 2}}, 6, 6);
    CHECK(deg.skipped_degenerate == 1);
    for (auto v : deg.mask) CHECK(v == 0);
}

TEST_CASE("rasterizer matches brute-force oracle on 200 random polygons") {
    SplitMix64 rng(31337);
    const int h = 24, w = 24;
    for (int trial = 0; trial < 200; ++trial) {
        const PolygonGeometry g = random_convex_polygon(rng, w, h);
        const RasterResult r = rasterize_polygons({PolygonLabel{g, 3}}, h, w);
        for (int rr = 0; rr < h; ++rr) {
            for (int cc = 0; cc < w; ++cc) {
                const bool want = pip_even_odd(g, cc + 0.5, rr + 0.5);
                const bool got = r.mask[(std::size_t)(rr * w + cc)] != 0;
                REQUIRE(want == got);
            }
        }
    }
}

TEST_CASE("rasterizer matches oracle on polygons with holes and later-overwrites") {
    PolygonGeometry donut = parse_wkt_polygon(
        "POLYGON ((1 1, 9 1, 9 9, 1 9, 1 1), (3 3, 7 3, 7 7, 3 7, 3 3))");
    const RasterResult r = rasterize_polygons({PolygonLabel{donut, 2}}, 10, 10);
    for (int rr = 0; rr < 10; ++rr)
        for (int cc = 0; cc < 10; ++cc)
            CHECK((r.mask[(std::size_t)(rr * 10 + cc)] == 2) ==
                  pip_even_odd(donut, cc + 0.5, rr + 0.5));

    // overlapping polygons: the later one wins
    PolygonGeometry a = parse_wkt_polygon("POLYGON ((0 0, 6 0, 6 6, 0 6, 0 0))");
    PolygonGeometry b = parse_wkt_polygon("POLYGON ((2 2, 8 2, 8 8, 2 8, 2 2))");
    const RasterResult o = rasterize_polygons({PolygonLabel{a, 1}, PolygonLabel{b, 4}}, 8, 8);
    CHECK(o.mask[(std::size_t)(3 * 8 + 3)] == 4);
    CHECK(o.mask[(std::size_t)(1 * 8 + 1)] == 1);
}

TEST_CASE("generate_scene determinism and structure") {
    GeneratorConfig cfg;
    cfg.image_size = 64;
    const GeneratedScene a = generate_scene(cfg, 42);
    const GeneratedScene b = generate_scene(cfg, 42);
    CHECK(a.pair.pre_img.values() == b.pair.pre_img.values());
    CHECK(a.pair.post_img.values() == b.pair.post_img.values());
    CHECK(a.pair.mask == b.pair.mask);
    CHECK(a.labels.size() == b.labels.size());

    const GeneratedScene c = generate_scene(cfg, 43);
    CHECK(a.pair.pre_img.values() != c.pair.pre_img.values());

    // mask equals the rasterization of the emitted labels
    const RasterResult r = rasterize_polygons(a.labels, a.pair.h, a.pair.w);
    CHECK(r.mask == a.pair.mask);

    // buildings do not overlap: pixel counts add up
    std::size_t building_pixels = 0;
    for (const auto& label : a.labels) {
        building_pixels += rasterize_geometry(label.geometry, a.pair.h, a.pair.w).size();
    }
    std::size_t mask_fg = 0;
    for (auto v : a.pair.mask)
        if (v != 0) ++mask_fg;
    CHECK(mask_fg == building_pixels);
}

TEST_CASE("no-damage-only scenes keep the post image equal up to noise") {
    GeneratorConfig cfg;
    cfg.class_distribution = {1.0, 0.0, 0.0, 0.0};
    const GeneratedScene s = generate_scene(cfg, 7);
    for (auto v : s.pair.mask) CHECK((v == 0 || v == 1));
    // difference bounded by the noise amplitudes
    for (std::int64_t i = 0; i < s.pair.pre_img.numel(); ++i) {
        CHECK(std::abs(s.pair.pre_img.data()[i] - s.pair.post_img.data()[i]) <= 0.12f);
    }
}

TEST_CASE("class frequencies approach the configured distribution") {
    GeneratorConfig cfg;
    cfg.image_size = 48;
    cfg.min_buildings = 2;
    cfg.max_buildings = 3;
    cfg.min_building_size = 5;
    cfg.max_building_size = 8;
    std::array<std::uint64_t, 4> counts{};
    std::uint64_t total = 0;
    SplitMix64 seeds(1000);
    for (int i = 0; i < 1000; ++i) {
        const GeneratedScene s = generate_scene(cfg, seeds.next());
        for (const auto& label : s.labels) {
            ++counts[static_cast<std::size_t>(label.damage_class - 1)];
            ++total;
        }
    }
    for (int k = 0; k < 4; ++k) {
        const double freq = double(counts[(std::size_t)k]) / double(total);
        CHECK(std::abs(freq - cfg.class_distribution[(std::size_t)k]) <= 0.03);
    }
}

TEST_CASE("infeasible generator config errors") {
    GeneratorConfig cfg;
    cfg.image_size = 32;
    cfg.min_buildings = 50;
    cfg.max_buildings = 50;
    cfg.min_building_size = 10;
    cfg.max_building_size = 12;  // 50 buildings of this size cannot fit in 32x32
    CHECK_THROWS_AS(generate_scene(cfg, 1), ConfigError);

    GeneratorConfig bad;
    bad.class_distribution = {0.5, 0.5, 0.2, 0.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    GeneratorConfig odd;
    odd.image_size = 60;
    CHECK_THROWS_AS(odd.validate(), ConfigError);

    GeneratorConfig unknown;
    unknown.domain_shift = "lunar";
    CHECK_THROWS_AS(unknown.validate(), ConfigError);
}

TEST_CASE("domain shift preset changes texture statistics") {
    GeneratorConfig base;
    GeneratorConfig arid = base;
    arid.domain_shift = "arid";
    const GeneratedScene a = generate_scene(base, 5, "x");
    const GeneratedScene b = generate_scene(arid, 5, "x");
    CHECK(a.pair.pre_img.values() != b.pair.pre_img.values());
}

TEST_CASE("dataset save/load round trip") {
    const fs::path dir = temp_dir("roundtrip");
    GeneratorConfig cfg;
    std::vector<GeneratedScene> scenes;
    SplitMix64 seeds(9);
    for (int i = 0; i < 10; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "scene_%05d", i);
        scenes.push_back(generate_scene(cfg, seeds.next(), id));
    }
    save_dataset(dir, scenes);
    const std::vector<ScenePair> loaded = load_dataset(dir);
    REQUIRE(loaded.size() == scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        CHECK(loaded[i].scene_id == scenes[i].pair.scene_id);
        CHECK(loaded[i].pre_img.values() == scenes[i].pair.pre_img.values());
        CHECK(loaded[i].post_img.values() == scenes[i].pair.post_img.values());
        CHECK(loaded[i].mask == scenes[i].pair.mask);
    }
    // save again: byte-identical files
    const std::string before = read_file(dir / "scene_00000_pre.ppm");
    save_scene(dir, scenes[0]);
    CHECK(read_file(dir / "scene_00000_pre.ppm") == before);

    // ordering is lexicographic by scene id
    for (std::size_t i = 1; i < loaded.size(); ++i) {
        CHECK(loaded[i - 1].scene_id < loaded[i].scene_id);
    }
    fs::remove_all(dir);
}

TEST_CASE("load errors: missing files and mismatched shapes") {
    const fs::path dir = temp_dir("missing");
    GeneratorConfig cfg;
    const GeneratedScene s = generate_scene(cfg, 3, "scene_00000");
    save_scene(dir, s);
    fs::remove(dir / "scene_00000_post.ppm");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("scene_00000_post.ppm"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("labels file takes precedence over the stored mask") {
    const fs::path dir = temp_dir("labelprec");
    GeneratorConfig cfg;
    const GeneratedScene s = generate_scene(cfg, 11, "scene_00000");
    save_scene(dir, s);
    // overwrite the labels with a single unclassified polygon
    std::vector<PolygonLabel> labels{{parse_wkt_polygon("POLYGON ((1 1, 9 1, 9 9, 1 9, 1 1))"),
                                      std::uint8_t{255}}};
    write_file_atomic(dir / "scene_00000_labels.json", labels_to_json(labels));
    const auto loaded = load_dataset(dir);
    REQUIRE(loaded.size() == 1);
    std::size_t ignored = 0;
    for (auto v : loaded[0].mask)
        if (v == 255) ++ignored;
    CHECK(ignored == 64);  // the 8x8 interior of that square
    // without the labels file the stored mask is used
    fs::remove(dir / "scene_00000_labels.json");
    const auto loaded2 = load_dataset(dir);
    CHECK(loaded2[0].mask == s.pair.mask);
    fs::remove_all(dir);
}

TEST_CASE("crop_batch determinism, identity and flip consistency") {
    GeneratorConfig cfg;
    std::vector<ScenePair> scenes;
    SplitMix64 seeds(4);
    for (int i = 0; i < 3; ++i) scenes.push_back(generate_scene(cfg, seeds.next()).pair);

    // identity: crop == image size, augment off
    const Batch id = crop_batch(scenes, 64, 2, 123, false);
    for (int b = 0; b < id.n; ++b) {
        const ScenePair& src = scenes[(std::size_t)id.scene_indices[(std::size_t)b]];
        for (std::int64_t i = 0; i < 3 * 64 * 64; ++i) {
            CHECK(id.pre.data()[b * 3 * 64 * 64 + i] == src.pre_img.data()[i]);
        }
    }

    // same seed twice: identical batches
    const Batch a = crop_batch(scenes, 32, 4, 99, true);
    const Batch b = crop_batch(scenes, 32, 4, 99, true);
    CHECK(a.pre.values() == b.pre.values());
    CHECK(a.post.values() == b.post.values());
    CHECK(a.masks == b.masks);

    // flips are applied consistently to image and mask: foreground pixel
    // count per crop is flip-invariant, and augmented crops of a constant
    // column pattern mirror exactly. Verify via histogram equality between
    // augment on/off with the same crop origin forced by a 1-scene, full
    // crop setup.
    std::vector<ScenePair> one{scenes[0]};
    const Batch plain = crop_batch(one, 64, 1, 1, false);
    SplitMix64 rng_aug(1);
    const Batch flipped = crop_batch(one, 64, 1, rng_aug, true);
    std::array<std::size_t, 256> h1{}, h2{};
    for (auto v : plain.masks) ++h1[v];
    for (auto v : flipped.masks) ++h2[v];
    CHECK(h1 == h2);

    // errors
    CHECK_THROWS_AS(crop_batch(scenes, 72, 1, 5, false), ValueError);
    CHECK_THROWS_AS(crop_batch(scenes, 30, 1, 5, false), ValueError);
}

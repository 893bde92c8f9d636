#include "rescuenet/raster.hpp"

#include <algorithm>
#include <cmath>

namespace rescuenet {

double polygon_area2(const PolygonGeometry& g) {
    if (g.rings.empty()) return 0.0;
    const auto& ring = g.rings.front();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        acc += ring[i].x * ring[i + 1].y - ring[i + 1].x * ring[i].y;
    }
    return acc;
}

std::vector<std::int64_t> rasterize_geometry(const PolygonGeometry& g, int h, int w) {
    std::vector<std::int64_t> pixels;
    std::vector<double> xs;
    for (int r = 0; r < h; ++r) {
        const double py = r + 0.5;
        xs.clear();
        for (const auto& ring : g.rings) {
            for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
                const double yi = ring[i].y, yj = ring[i + 1].y;
                if ((yi > py) != (yj > py)) {
                    const double xi = ring[i].x, xj = ring[i + 1].x;
                    // same expression and operand order as the classic
                    // even-odd point-in-polygon test
                    xs.push_back(xi + (py - yi) * (xj - xi) / (yj - yi));
                }
            }
        }
        if (xs.size() < 2) continue;
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            // clamp far-off crossings before the int casts; values outside
            // [-1, w+1] cannot move any pixel-center decision
            const double x0 = std::clamp(xs[k], -1.0, w + 1.0);
            const double x1 = std::clamp(xs[k + 1], -1.0, w + 1.0);
            // smallest c with c+0.5 >= x0 (a center on the left crossing is
            // inside: the oracle counts crossings strictly greater than px)
            int c0 = static_cast<int>(std::ceil(x0 - 0.5));
            while (c0 + 0.5 < x0) ++c0;
            while (c0 - 1 + 0.5 >= x0) --c0;
            // largest c with c+0.5 < x1
            int c1 = static_cast<int>(std::ceil(x1 - 0.5)) - 1;
            while (c1 + 0.5 >= x1) --c1;
            while (c1 + 1 + 0.5 < x1) ++c1;
            if (c0 < 0) c0 = 0;
            if (c1 > w - 1) c1 = w - 1;
            for (int c = c0; c <= c1; ++c) {
                pixels.push_back(static_cast<std::int64_t>(r) * w + c);
            }
        }
    }
    return pixels;
}

RasterResult rasterize_polygons(const std::vector<PolygonLabel>& labels, int h, int w) {
    RasterResult out;
    out.h = h;
    out.w = w;
    out.mask.assign(static_cast<std::size_t>(h) * w, 0);
    for (const auto& label : labels) {
        if (polygon_area2(label.geometry) == 0.0) {
            ++out.skipped_degenerate;
            continue;
        }
        for (std::int64_t p : rasterize_geometry(label.geometry, h, w)) {
            out.mask[static_cast<std::size_t>(p)] = label.damage_class;
        }
    }
    return out;
}

}  // namespace rescuenet

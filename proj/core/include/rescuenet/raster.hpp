#pragma once

#include <cstdint>
#include <vector>

#include "rescuenet/wkt.hpp"

namespace rescuenet {

struct RasterResult {
    std::vector<std::uint8_t> mask;  // H*W row-major, 0 background
    int h = 0;
    int w = 0;
    int skipped_degenerate = 0;  // zero-area polygons that painted nothing
};

// Scanline fill under the pixel-center rule: pixel (r,c) is covered iff the
// point (c+0.5, r+0.5) is inside the polygon by the even-odd rule over all
// of its rings. Edge crossings use the exact arithmetic of the classic
// point-in-polygon test (xi + (py-yi)*(xj-xi)/(yj-yi), counted when px is
// strictly left of the crossing), so the fill matches a per-pixel brute
// force oracle bit for bit. Later polygons overwrite earlier ones;
// coordinates are clipped to [0,W]x[0,H].
RasterResult rasterize_polygons(const std::vector<PolygonLabel>& labels, int h, int w);

// Rasterize a single geometry; returns covered pixel indices (r*w + c).
std::vector<std::int64_t> rasterize_geometry(const PolygonGeometry& g, int h, int w);

// Twice the signed area of the exterior ring (shoelace).
double polygon_area2(const PolygonGeometry& g);

}  // namespace rescuenet

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rescuenet/errors.hpp"

namespace rescuenet {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2&) const = default;
};

// Rings are closed (first vertex equals the last listed vertex) with at
// least 4 listed vertices. rings[0] is the exterior, the rest are holes.
struct PolygonGeometry {
    std::vector<std::vector<Vec2>> rings;
};

// Damage class of an annotated building polygon: {1..4}, or 255 for
// un-classified polygons (excluded from losses and metrics).
struct PolygonLabel {
    PolygonGeometry geometry;
    std::uint8_t damage_class = 1;
};

// Parses `POLYGON ((x y, x y, ...), (x y, ...))`. Whitespace-tolerant;
// coordinates accept scientific notation. Throws ParseError carrying the
// byte offset of the first offending character; never crashes on arbitrary
// byte input.
PolygonGeometry parse_wkt_polygon(std::string_view text);

// Shortest round-trip formatting, so parse(to_wkt(g)) reproduces the exact
// coordinate doubles.
std::string to_wkt(const PolygonGeometry& g);

}  // namespace rescuenet

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rescuenet/scene_gen.hpp"

namespace rescuenet {

// Writes via a temp file in the same directory, then renames, so a failed
// run never leaves a partial output behind.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Binary PPM (P6), 8-bit RGB. The tensor is [3,H,W] in [0,1]; each value
// maps to round(v*255).
void write_ppm(const std::filesystem::path& path, const Tensor& img);
Tensor read_ppm(const std::filesystem::path& path);

// Binary PGM (P5), 8-bit. Values {0..4, 255} for combined masks.
void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, int h,
               int w);
std::pair<std::vector<std::uint8_t>, std::pair<int, int>> read_pgm(
    const std::filesystem::path& path);

// Label file: JSON list of {"wkt": "POLYGON ((...))", "subtype": <name>}
// with subtype in {no-damage, minor-damage, major-damage, destroyed,
// un-classified}, mapped to classes {1,2,3,4,255}.
std::string labels_to_json(const std::vector<PolygonLabel>& labels);
std::vector<PolygonLabel> labels_from_json(const std::string& text);

// Scene directory layout: <scene_id>_pre.ppm, <scene_id>_post.ppm,
// <scene_id>_mask.pgm, optional <scene_id>_labels.json.
void save_scene(const std::filesystem::path& dir, const GeneratedScene& scene);
void save_dataset(const std::filesystem::path& dir, const std::vector<GeneratedScene>& scenes);

// Loads every scene in the directory, ordered lexicographically by
// scene_id. When a labels file is present the mask is rebuilt by
// rasterizing its polygons; otherwise the stored mask file is read.
// A pair with a missing file throws IoError naming the file.
std::vector<ScenePair> load_dataset(const std::filesystem::path& dir);

}  // namespace rescuenet

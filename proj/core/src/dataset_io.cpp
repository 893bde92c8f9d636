#include "rescuenet/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cctype>
#include <cstring>
#include <map>
#include <set>

#include <json.hpp>

namespace rescuenet {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " +
                      ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

namespace {

struct PnmHeader {
    int w = 0, h = 0;
    std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const char* magic, const fs::path& path) {
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) -> IoError {
        return IoError(path.string() + ": " + what);
    };
    if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
        throw fail(std::string("not a ") + magic + " file");
    }
    pos = 2;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw fail("truncated header");
        return bytes.substr(start, pos - start);
    };
    PnmHeader hdr;
    hdr.w = std::stoi(next_token());
    hdr.h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (hdr.w <= 0 || hdr.h <= 0) throw fail("bad dimensions");
    if (maxval != 255) throw fail("only 8-bit maxval 255 supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw fail("missing header terminator");
    }
    hdr.data_offset = pos + 1;
    return hdr;
}

}  // namespace

void write_ppm(const fs::path& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw ShapeError("write_ppm expects a [3,H,W] tensor, got " + shape_str(img.shape()));
    }
    const int h = img.dim(1), w = img.dim(2);
    std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    bytes.reserve(bytes.size() + static_cast<std::size_t>(3) * h * w);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const float* p = img.data();
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int ch = 0; ch < 3; ++ch) {
            const double v = std::clamp(static_cast<double>(p[ch * plane + i]), 0.0, 1.0);
            bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    }
    write_file_atomic(path, bytes);
}

Tensor read_ppm(const fs::path& path) {
    const std::string bytes = read_file(path);
    const PnmHeader hdr = parse_pnm_header(bytes, "P6", path);
    const std::int64_t plane = static_cast<std::int64_t>(hdr.h) * hdr.w;
    if (bytes.size() - hdr.data_offset < static_cast<std::size_t>(3) * plane) {
        throw IoError(path.string() + ": truncated pixel data");
    }
    Tensor img(Shape{3, hdr.h, hdr.w});
    float* p = img.data();
    const unsigned char* src =
        reinterpret_cast<const unsigned char*>(bytes.data() + hdr.data_offset);
    for (std::int64_t i = 0; i < plane; ++i) {
        for (int ch = 0; ch < 3; ++ch) {
            p[ch * plane + i] = static_cast<float>(src[i * 3 + ch]) / 255.f;
        }
    }
    return img;
}

void write_pgm(const fs::path& path, const std::vector<std::uint8_t>& mask, int h, int w) {
    if (static_cast<std::int64_t>(mask.size()) != static_cast<std::int64_t>(h) * w) {
        throw ShapeError("write_pgm: mask size does not match dimensions");
    }
    std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    bytes.append(reinterpret_cast<const char*>(mask.data()), mask.size());
    write_file_atomic(path, bytes);
}

std::pair<std::vector<std::uint8_t>, std::pair<int, int>> read_pgm(const fs::path& path) {
    const std::string bytes = read_file(path);
    const PnmHeader hdr = parse_pnm_header(bytes, "P5", path);
    const std::size_t n = static_cast<std::size_t>(hdr.h) * static_cast<std::size_t>(hdr.w);
    if (bytes.size() - hdr.data_offset < n) {
        throw IoError(path.string() + ": truncated pixel data");
    }
    std::vector<std::uint8_t> mask(n);
    std::copy_n(reinterpret_cast<const unsigned char*>(bytes.data() + hdr.data_offset), n,
                mask.begin());
    return {std::move(mask), {hdr.h, hdr.w}};
}

namespace {

const std::map<std::string, std::uint8_t>& subtype_to_class() {
    static const std::map<std::string, std::uint8_t> m = {
        {"no-damage", 1}, {"minor-damage", 2},   {"major-damage", 3},
        {"destroyed", 4}, {"un-classified", 255},
    };
    return m;
}

std::string class_to_subtype(std::uint8_t cls) {
    switch (cls) {
        case 1: return "no-damage";
        case 2: return "minor-damage";
        case 3: return "major-damage";
        case 4: return "destroyed";
        case 255: return "un-classified";
        default: throw ValueError("damage class " + std::to_string(cls) + " out of range");
    }
}

}  // namespace

std::string labels_to_json(const std::vector<PolygonLabel>& labels) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& label : labels) {
        arr.push_back({{"wkt", to_wkt(label.geometry)},
                       {"subtype", class_to_subtype(label.damage_class)}});
    }
    nlohmann::json root;
    root["features"] = arr;
    return root.dump(2) + "\n";
}

std::vector<PolygonLabel> labels_from_json(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("label file is not valid JSON: ") + e.what(),
                         static_cast<std::size_t>(e.byte));
    }
    if (!root.contains("features") || !root["features"].is_array()) {
        throw ValueError("label file must contain a 'features' array");
    }
    std::vector<PolygonLabel> labels;
    const auto& m = subtype_to_class();
    for (const auto& item : root["features"]) {
        PolygonLabel label;
        label.geometry = parse_wkt_polygon(item.at("wkt").get<std::string>());
        const std::string subtype = item.at("subtype").get<std::string>();
        const auto it = m.find(subtype);
        if (it == m.end()) throw ValueError("unknown damage subtype '" + subtype + "'");
        label.damage_class = it->second;
        labels.push_back(std::move(label));
    }
    return labels;
}

void save_scene(const fs::path& dir, const GeneratedScene& scene) {
    fs::create_directories(dir);
    const std::string& id = scene.pair.scene_id;
    write_ppm(dir / (id + "_pre.ppm"), scene.pair.pre_img);
    write_ppm(dir / (id + "_post.ppm"), scene.pair.post_img);
    write_pgm(dir / (id + "_mask.pgm"), scene.pair.mask, scene.pair.h, scene.pair.w);
    write_file_atomic(dir / (id + "_labels.json"), labels_to_json(scene.labels));
}

void save_dataset(const fs::path& dir, const std::vector<GeneratedScene>& scenes) {
    for (const auto& s : scenes) save_scene(dir, s);
}

std::vector<ScenePair> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    std::set<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        for (const char* suffix : {"_pre.ppm", "_post.ppm", "_mask.pgm", "_labels.json"}) {
            if (name.size() > std::strlen(suffix) &&
                name.compare(name.size() - std::strlen(suffix), std::string::npos, suffix) == 0) {
                ids.insert(name.substr(0, name.size() - std::strlen(suffix)));
            }
        }
    }
    std::vector<ScenePair> out;
    for (const std::string& id : ids) {  // std::set iterates lexicographically
        const fs::path pre = dir / (id + "_pre.ppm");
        const fs::path post = dir / (id + "_post.ppm");
        const fs::path maskp = dir / (id + "_mask.pgm");
        const fs::path labelsp = dir / (id + "_labels.json");
        for (const auto& p : {pre, post}) {
            if (!fs::exists(p)) throw IoError("scene " + id + " is missing " + p.string());
        }
        ScenePair pair;
        pair.scene_id = id;
        pair.pre_img = read_ppm(pre);
        pair.post_img = read_ppm(post);
        if (pair.pre_img.shape() != pair.post_img.shape()) {
            throw IoError("scene " + id + ": pre/post dimensions differ");
        }
        pair.h = pair.pre_img.dim(1);
        pair.w = pair.pre_img.dim(2);
        if (fs::exists(labelsp)) {
            const auto labels = labels_from_json(read_file(labelsp));
            pair.mask = rasterize_polygons(labels, pair.h, pair.w).mask;
        } else if (fs::exists(maskp)) {
            auto [mask, hw] = read_pgm(maskp);
            if (hw.first != pair.h || hw.second != pair.w) {
                throw IoError("scene " + id + ": mask dimensions differ from images");
            }
            pair.mask = std::move(mask);
        } else {
            throw IoError("scene " + id + " is missing " + maskp.string());
        }
        out.push_back(std::move(pair));
    }
    return out;
}

}  // namespace rescuenet

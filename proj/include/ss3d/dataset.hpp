#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ss3d/camera.hpp"
#include "ss3d/image.hpp"
#include "ss3d/sdf.hpp"

namespace ss3d {

using json = nlohmann::json;

inline void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) fail(errc::io_error, "cannot create directory " + path + ": " + ec.message());
}

// Write-then-rename so readers never observe a partial file.
inline void atomic_write_text(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) fail(errc::io_error, "cannot write " + tmp);
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!f) fail(errc::io_error, "short write " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(errc::io_error, "cannot rename " + tmp + ": " + ec.message());
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(errc::io_error, "cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Quantized 8-bit image kept resident; converted to reals on demand.
struct StoredImage {
    int h = 0, w = 0, c = 0;
    std::vector<u8> px;

    static StoredImage from(const Image& img) {
        StoredImage s;
        s.h = img.h;
        s.w = img.w;
        s.c = img.c;
        s.px.resize(img.px.size());
        for (size_t i = 0; i < img.px.size(); ++i) s.px[i] = detail::to_u8(img.px[i]);
        return s;
    }

    Real value(int y, int x, int ch) const {
        return px[(static_cast<size_t>(y) * w + x) * c + ch] / 255.0;
    }
    Real value_flat(size_t i) const { return px[i] / 255.0; }
    size_t size() const { return px.size(); }
};

// A segmented RGB view with its foreground mask; the unit of every dataset.
struct ImageSample {
    u32 instance_id = 0;
    u16 view_id = 0;
    std::string family;
    std::string split;  // train | heldout-view | heldout-instance
    StoredImage rgb;    // supervision-size RGB, background zeroed
    StoredImage mask;   // supervision-size foreground mask
    StoredImage input_rgb;  // network-input-size RGB
    std::optional<OrbitCamera> camera;  // ground truth; absent for wild data
};

struct FamilySpec {
    std::string name;
    int instances = 0;
    int heldout_instances = 0;
    int views = 1;
    int heldout_views = 0;
};

struct DatasetMeta {
    std::string kind;  // multiview | wild
    u64 seed = 0;
    int image_size = 64;
    int input_size = 64;
    Real camera_radius = 1.8;
    Real camera_fov_deg = 40;
    std::string shading = "lambert";  // lambert | albedo
    Real mask_noise = 0;
    std::vector<FamilySpec> families;
};

struct Dataset {
    std::string root;
    DatasetMeta meta;
    std::vector<ImageSample> samples;

    std::vector<int> indices_with_split(const std::string& split) const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(samples.size()); ++i)
            if (samples[i].split == split) out.push_back(i);
        return out;
    }

    // Views of one instance restricted to a split.
    std::vector<int> instance_views(u32 instance_id, const std::string& split) const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(samples.size()); ++i)
            if (samples[i].instance_id == instance_id && samples[i].split == split)
                out.push_back(i);
        return out;
    }

    std::vector<u32> instance_ids(const std::string& split_filter = "") const {
        std::vector<u32> ids;
        for (const auto& s : samples) {
            if (!split_filter.empty() && s.split != split_filter) continue;
            if (ids.empty() || ids.back() != s.instance_id) {
                bool seen = false;
                for (u32 v : ids)
                    if (v == s.instance_id) { seen = true; break; }
                if (!seen) ids.push_back(s.instance_id);
            }
        }
        return ids;
    }
};

inline json meta_to_json(const DatasetMeta& m) {
    json fams = json::array();
    for (const auto& f : m.families)
        fams.push_back({{"name", f.name},
                        {"instances", f.instances},
                        {"heldout_instances", f.heldout_instances},
                        {"views", f.views},
                        {"heldout_views", f.heldout_views}});
    return json{{"format", "ss3d-dataset"},
                {"version", 1},
                {"kind", m.kind},
                {"seed", m.seed},
                {"image_size", m.image_size},
                {"input_size", m.input_size},
                {"camera", {{"radius", m.camera_radius}, {"fov_deg", m.camera_fov_deg}}},
                {"shading", m.shading},
                {"mask_noise", m.mask_noise},
                {"families", fams}};
}

inline DatasetMeta meta_from_json(const json& j) {
    if (j.value("format", "") != "ss3d-dataset")
        fail(errc::format_error, "not an ss3d dataset manifest");
    DatasetMeta m;
    m.kind = j.at("kind").get<std::string>();
    m.seed = j.at("seed").get<u64>();
    m.image_size = j.at("image_size").get<int>();
    m.input_size = j.at("input_size").get<int>();
    m.camera_radius = j.at("camera").at("radius").get<Real>();
    m.camera_fov_deg = j.at("camera").at("fov_deg").get<Real>();
    m.shading = j.value("shading", "lambert");
    m.mask_noise = j.value("mask_noise", 0.0);
    for (const auto& f : j.at("families")) {
        FamilySpec fs;
        fs.name = f.at("name").get<std::string>();
        fs.instances = f.at("instances").get<int>();
        fs.heldout_instances = f.value("heldout_instances", 0);
        fs.views = f.at("views").get<int>();
        fs.heldout_views = f.value("heldout_views", 0);
        m.families.push_back(fs);
    }
    return m;
}

inline json shape_to_json(const PrimitiveShape& s) {
    return json{{"family", family_name(s.family)},
                {"a", s.a},
                {"b", s.b},
                {"c", s.c},
                {"d", s.d},
                {"e", s.e},
                {"albedo_primary", {s.albedo_primary.x, s.albedo_primary.y, s.albedo_primary.z}},
                {"albedo_secondary",
                 {s.albedo_secondary.x, s.albedo_secondary.y, s.albedo_secondary.z}},
                {"offset", {s.offset.x, s.offset.y, s.offset.z}},
                {"yaw_deg", s.yaw_deg}};
}

inline PrimitiveShape shape_from_json(const json& j) {
    PrimitiveShape s;
    s.family = family_from_name(j.at("family").get<std::string>());
    s.a = j.at("a").get<Real>();
    s.b = j.at("b").get<Real>();
    s.c = j.at("c").get<Real>();
    s.d = j.at("d").get<Real>();
    s.e = j.at("e").get<Real>();
    auto ap = j.at("albedo_primary");
    s.albedo_primary = {ap[0].get<Real>(), ap[1].get<Real>(), ap[2].get<Real>()};
    auto as = j.at("albedo_secondary");
    s.albedo_secondary = {as[0].get<Real>(), as[1].get<Real>(), as[2].get<Real>()};
    auto of = j.at("offset");
    s.offset = {of[0].get<Real>(), of[1].get<Real>(), of[2].get<Real>()};
    s.yaw_deg = j.at("yaw_deg").get<Real>();
    return s;
}

// Loads a dataset directory written by the scene generator. For wild
// collections the sealed/ sidecar is never touched here; training code has no
// camera access by construction.
inline Dataset load_dataset(const std::string& root) {
    Dataset ds;
    ds.root = root;
    std::string meta_path = root + "/meta.json";
    if (!std::filesystem::exists(meta_path))
        fail(errc::io_error, "dataset manifest not found: " + meta_path);
    json j = json::parse(read_text_file(meta_path));
    ds.meta = meta_from_json(j);

    std::map<std::pair<u32, u16>, OrbitCamera> cams;
    if (ds.meta.kind == "multiview") {
        for (const auto& r : read_camera_table(root + "/cameras.ss3dcam"))
            cams[{r.instance_id, r.view_id}] = r.camera;
    }

    for (const auto& v : j.at("views")) {
        ImageSample s;
        s.instance_id = v.at("instance").get<u32>();
        s.view_id = v.at("view").get<u16>();
        s.family = v.at("family").get<std::string>();
        s.split = v.at("split").get<std::string>();
        s.rgb = StoredImage::from(read_png(root + "/" + v.at("rgb").get<std::string>()));
        s.mask = StoredImage::from(read_png(root + "/" + v.at("mask").get<std::string>()));
        std::string in_path = v.value("input_rgb", v.at("rgb").get<std::string>());
        if (in_path == v.at("rgb").get<std::string>())
            s.input_rgb = s.rgb;
        else
            s.input_rgb = StoredImage::from(read_png(root + "/" + in_path));
        auto it = cams.find({s.instance_id, s.view_id});
        if (it != cams.end()) s.camera = it->second;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Evaluation-only access to the sealed sidecar of a wild collection.
inline std::vector<CameraRecord> load_sealed_cameras(const std::string& root) {
    return read_camera_table(root + "/sealed/cameras.ss3dcam");
}

inline std::map<u32, PrimitiveShape> load_sealed_shapes(const std::string& root) {
    std::string path = root + "/sealed/shapes.json";
    if (!std::filesystem::exists(path)) path = root + "/shapes.json";
    json j = json::parse(read_text_file(path));
    std::map<u32, PrimitiveShape> out;
    for (const auto& e : j) out[e.at("instance").get<u32>()] = shape_from_json(e.at("shape"));
    return out;
}

}  // namespace ss3d

#pragma once

#include <vector>

#include "ss3d/dataset.hpp"
#include "ss3d/parallel.hpp"

namespace ss3d {

struct RenderedView {
    Image rgb;   // H x W x 3
    Image mask;  // H x W x 1
};

// Sphere-traced render of an analytic primitive: mask is the hit indicator,
// color is the albedo at the hit point, optionally shaded by a headlight
// Lambert term. Background pixels are exactly zero.
inline RenderedView render_analytic(const PrimitiveShape& shape, const OrbitCamera& cam,
                                    const std::string& shading = "lambert") {
    RenderedView out;
    out.rgb = Image(cam.height, cam.width, 3);
    out.mask = Image(cam.height, cam.width, 1);
    bool lambert = shading == "lambert";
    parallel_for(cam.height, 8, [&](i64 lo, i64 hi) {
        for (i64 y = lo; y < hi; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                Ray ray = pixel_ray(cam, x, static_cast<Real>(y));
                TraceResult tr = sphere_trace(shape, ray);
                if (!tr.hit) continue;
                out.mask.at(static_cast<int>(y), x, 0) = 1.0;
                Vec3 color = albedo_at(shape, tr.point);
                if (lambert) {
                    Vec3 n = sdf_normal(shape, tr.point);
                    Real lambert_term = std::max(0.0, n.dot(-ray.dir));
                    color = color * lambert_term;
                }
                out.rgb.at(static_cast<int>(y), x, 0) = color.x;
                out.rgb.at(static_cast<int>(y), x, 1) = color.y;
                out.rgb.at(static_cast<int>(y), x, 2) = color.z;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Procedural categories. A category is a named parameter distribution over one
// primitive family; several categories may share a family the way buses and
// toasters are both cuboidal.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& known_categories() {
    static const std::vector<std::string> cats = {"sphere",  "box",     "torus",   "cylinder",
                                                  "capsule", "handlebox", "box_flat", "cyl_disk"};
    return cats;
}

inline PrimitiveShape sample_category_shape(const std::string& category, Rng& rng) {
    PrimitiveShape s;
    auto color = [&rng]() -> Vec3 {
        return {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
    };
    s.albedo_primary = color();
    s.albedo_secondary = color();
    if (category == "sphere") {
        s.family = ShapeFamily::sphere;
        s.a = rng.uniform(0.3, 0.75);
    } else if (category == "box") {
        s.family = ShapeFamily::box;
        s.a = rng.uniform(0.2, 0.5);
        s.b = rng.uniform(0.2, 0.5);
        s.c = rng.uniform(0.2, 0.5);
    } else if (category == "box_flat") {
        s.family = ShapeFamily::box;
        s.a = rng.uniform(0.35, 0.6);
        s.b = rng.uniform(0.25, 0.5);
        s.c = rng.uniform(0.08, 0.18);
    } else if (category == "torus") {
        s.family = ShapeFamily::torus;
        s.a = rng.uniform(0.35, 0.6);
        s.b = rng.uniform(0.1, std::min(0.25, 0.85 - s.a));
    } else if (category == "cylinder") {
        s.family = ShapeFamily::cylinder;
        s.a = rng.uniform(0.15, 0.45);
        s.b = rng.uniform(0.3, 0.7);
    } else if (category == "cyl_disk") {
        s.family = ShapeFamily::cylinder;
        s.a = rng.uniform(0.4, 0.65);
        s.b = rng.uniform(0.08, 0.2);
    } else if (category == "capsule") {
        s.family = ShapeFamily::capsule;
        s.a = rng.uniform(0.12, 0.3);
        s.b = rng.uniform(0.3, std::min(0.6, 0.9 - s.a));
    } else if (category == "handlebox") {
        s.family = ShapeFamily::handlebox;
        s.a = rng.uniform(0.25, 0.5);
        s.b = rng.uniform(0.15, 0.35);
        s.c = rng.uniform(0.15, 0.3);
        s.d = rng.uniform(0.15, 0.3);
        s.e = rng.uniform(0.04, 0.09);
    } else {
        fail(errc::invalid_argument, "unknown category: " + category);
    }
    if (s.bounding_radius() > 1.0)
        fail(errc::invalid_argument, "sampled shape exceeds the unit ball");
    return s;
}

// ---------------------------------------------------------------------------
// Dataset generation.
// ---------------------------------------------------------------------------

struct SceneSynthConfig {
    std::string out_dir;
    std::vector<std::string> families;  // category names
    int instances_per_family = 30;
    int heldout_instances = 3;  // extra instances tagged heldout-instance
    int views_per_instance = 20;
    int heldout_views = 2;  // per train instance, tagged heldout-view
    int image_size = 64;    // supervision resolution
    int input_size = 64;    // network input resolution
    Real camera_radius = 1.8;
    Real camera_fov_deg = 40;
    Real elevation_min = -75, elevation_max = 75;
    std::string shading = "lambert";
    Real mask_noise = 0;  // wild collections only
    u64 seed = 1;
};

namespace detail {

inline OrbitCamera sample_orbit_camera(const SceneSynthConfig& cfg, Rng& rng, int size) {
    OrbitCamera cam;
    cam.azimuth_deg = rng.uniform(0.0, 360.0);
    cam.elevation_deg = rng.uniform(cfg.elevation_min, cfg.elevation_max);
    cam.radius = cfg.camera_radius;
    cam.fov_deg = cfg.camera_fov_deg;
    cam.width = size;
    cam.height = size;
    return cam;
}

// Flip boundary-band mask pixels with probability eps. The band is every
// pixel whose 3x3 neighborhood contains both foreground and background.
inline int apply_mask_noise(Image& mask, Real eps, Rng& rng) {
    if (eps <= 0) return 0;
    Image orig = mask;
    int flipped = 0;
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) {
            bool has_fg = false, has_bg = false;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = std::clamp(y + dy, 0, mask.h - 1);
                    int xx = std::clamp(x + dx, 0, mask.w - 1);
                    (orig.at(yy, xx, 0) > 0.5 ? has_fg : has_bg) = true;
                }
            if (!(has_fg && has_bg)) continue;
            if (rng.uniform() < eps) {
                mask.at(y, x, 0) = orig.at(y, x, 0) > 0.5 ? 0.0 : 1.0;
                ++flipped;
            }
        }
    }
    return flipped;
}

struct GeneratedInstance {
    u32 id;
    std::string family;
    PrimitiveShape shape;
    bool heldout;
};

}  // namespace detail

// Shared generator body: multiview writes ground-truth cameras next to the
// images; wild writes exactly one view per instance and seals cameras and
// shapes in a sidecar that the training loader never opens.
inline void generate_dataset(const SceneSynthConfig& cfg, bool wild) {
    if (cfg.families.empty()) fail(errc::invalid_argument, "no families configured");
    ensure_dir(cfg.out_dir);
    ensure_dir(cfg.out_dir + "/images");
    if (wild) ensure_dir(cfg.out_dir + "/sealed");

    DatasetMeta meta;
    meta.kind = wild ? "wild" : "multiview";
    meta.seed = cfg.seed;
    meta.image_size = cfg.image_size;
    meta.input_size = cfg.input_size;
    meta.camera_radius = cfg.camera_radius;
    meta.camera_fov_deg = cfg.camera_fov_deg;
    meta.shading = cfg.shading;
    meta.mask_noise = wild ? cfg.mask_noise : 0.0;

    int views = wild ? 1 : cfg.views_per_instance;
    int heldout_views = wild ? 0 : cfg.heldout_views;
    int heldout_instances = wild ? 0 : cfg.heldout_instances;
    if (heldout_views >= views)
        fail(errc::invalid_argument, "heldout_views must be smaller than views");

    std::vector<detail::GeneratedInstance> instances;
    u32 next_id = 0;
    for (const auto& fam : cfg.families) {
        FamilySpec fs;
        fs.name = fam;
        fs.instances = cfg.instances_per_family;
        fs.heldout_instances = heldout_instances;
        fs.views = views;
        fs.heldout_views = heldout_views;
        meta.families.push_back(fs);
        int total = cfg.instances_per_family + heldout_instances;
        for (int i = 0; i < total; ++i) {
            Rng rng(cfg.seed, "scene-synth/shape/" + fam + "/" + std::to_string(i));
            detail::GeneratedInstance gi;
            gi.id = next_id++;
            gi.family = fam;
            gi.shape = sample_category_shape(fam, rng);
            gi.heldout = i >= cfg.instances_per_family;
            instances.push_back(gi);
        }
    }

    json views_json = json::array();
    json shapes_json = json::array();
    std::vector<CameraRecord> cameras;

    for (const auto& gi : instances) {
        shapes_json.push_back({{"instance", gi.id}, {"shape", shape_to_json(gi.shape)}});
        Rng cam_rng(cfg.seed, "scene-synth/cameras/" + gi.family + "/" + std::to_string(gi.id));
        for (int v = 0; v < views; ++v) {
            OrbitCamera cam = detail::sample_orbit_camera(cfg, cam_rng, cfg.image_size);
            RenderedView rv = render_analytic(gi.shape, cam, cfg.shading);
            if (wild && cfg.mask_noise > 0) {
                Rng noise_rng(cfg.seed, "scene-synth/masknoise/" + std::to_string(gi.id));
                detail::apply_mask_noise(rv.mask, cfg.mask_noise, noise_rng);
            }

            std::string stem = gi.family + "_" + std::to_string(gi.id) + "_" + std::to_string(v);
            std::string rgb_rel = "images/" + stem + "_rgb.png";
            std::string mask_rel = "images/" + stem + "_mask.png";
            write_png(cfg.out_dir + "/" + rgb_rel, rv.rgb);
            write_png(cfg.out_dir + "/" + mask_rel, rv.mask);

            std::string input_rel = rgb_rel;
            if (cfg.input_size != cfg.image_size) {
                OrbitCamera in_cam = cam;
                in_cam.width = in_cam.height = cfg.input_size;
                RenderedView in_rv = render_analytic(gi.shape, in_cam, cfg.shading);
                input_rel = "images/" + stem + "_in.png";
                write_png(cfg.out_dir + "/" + input_rel, in_rv.rgb);
            }

            std::string split = gi.heldout ? "heldout-instance"
                                : (v >= views - heldout_views ? "heldout-view" : "train");
            views_json.push_back({{"instance", gi.id},
                                  {"view", v},
                                  {"family", gi.family},
                                  {"split", split},
                                  {"rgb", rgb_rel},
                                  {"mask", mask_rel},
                                  {"input_rgb", input_rel}});
            CameraRecord cr;
            cr.instance_id = gi.id;
            cr.view_id = static_cast<u16>(v);
            cr.camera = cam;
            cameras.push_back(cr);
        }
    }

    if (wild) {
        write_camera_table(cfg.out_dir + "/sealed/cameras.ss3dcam", cameras);
        atomic_write_text(cfg.out_dir + "/sealed/shapes.json", shapes_json.dump(1));
    } else {
        write_camera_table(cfg.out_dir + "/cameras.ss3dcam", cameras);
        atomic_write_text(cfg.out_dir + "/shapes.json", shapes_json.dump(1));
    }

    json meta_json = meta_to_json(meta);
    meta_json["views"] = std::move(views_json);
    atomic_write_text(cfg.out_dir + "/meta.json", meta_json.dump(1));
}

inline void generate_pretrain_dataset(const SceneSynthConfig& cfg) { generate_dataset(cfg, false); }

inline void generate_wild_collection(const SceneSynthConfig& cfg) {
    if (cfg.families.size() != 1)
        fail(errc::invalid_argument, "a wild collection holds exactly one category");
    generate_dataset(cfg, true);
}

}  // namespace ss3d

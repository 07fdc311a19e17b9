#include <catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "ss3d/dataset.hpp"
#include "ss3d/scene_synth.hpp"

using namespace ss3d;

namespace {

// Exact point-to-triangle distance (Ericson, Real-Time Collision Detection).
Real point_triangle_dist(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 ab = b - a, ac = c - a, ap = p - a;
    Real d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return (p - a).norm();
    Vec3 bp = p - b;
    Real d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return (p - b).norm();
    Real vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + ab * (d1 / (d1 - d3)))).norm();
    Vec3 cp = p - c;
    Real d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return (p - c).norm();
    Real vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + ac * (d2 / (d2 - d6)))).norm();
    Real va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        Real w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    Real denom = 1.0 / (va + vb + vc);
    Vec3 q = a + ab * (vb * denom) + ac * (vc * denom);
    return (p - q).norm();
}

// Mesh-distance oracle for an axis-aligned box: distance to the 12-triangle
// surface, signed by the inside test.
Real box_mesh_distance(const Vec3& p, Real hx, Real hy, Real hz) {
    Vec3 v[8];
    int i = 0;
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            for (int sz : {-1, 1}) v[i++] = {sx * hx, sy * hy, sz * hz};
    // v index bit layout: (sx<<2)|(sy<<1)|sz with -1 -> 0
    static const int faces[12][3] = {
        {0, 1, 3}, {0, 3, 2},  // x = -hx
        {4, 7, 5}, {4, 6, 7},  // x = +hx
        {0, 5, 1}, {0, 4, 5},  // y = -hy
        {2, 3, 7}, {2, 7, 6},  // y = +hy
        {0, 2, 6}, {0, 6, 4},  // z = -hz
        {1, 5, 7}, {1, 7, 3},  // z = +hz
    };
    Real best = 1e30;
    for (auto& f : faces)
        best = std::min(best, point_triangle_dist(p, v[f[0]], v[f[1]], v[f[2]]));
    bool inside = std::fabs(p.x) <= hx && std::fabs(p.y) <= hy && std::fabs(p.z) <= hz;
    return inside ? -best : best;
}

SceneSynthConfig tiny_config(const std::string& dir) {
    SceneSynthConfig cfg;
    cfg.out_dir = dir;
    cfg.families = {"sphere", "box"};
    cfg.instances_per_family = 3;
    cfg.heldout_instances = 1;
    cfg.views_per_instance = 4;
    cfg.heldout_views = 1;
    cfg.image_size = 32;
    cfg.input_size = 32;
    cfg.seed = 11;
    return cfg;
}

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ss3d_test_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

}  // namespace

TEST_CASE("sdf basics: sphere inside/outside") {
    PrimitiveShape s;
    s.family = ShapeFamily::sphere;
    s.a = 1.0;
    CHECK(sdf(s, {2, 0, 0}) == Catch::Approx(1.0).margin(1e-12));
    CHECK(sdf(s, {0, 0, 0}) == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("box sdf corner value and mesh-distance oracle") {
    PrimitiveShape s;
    s.family = ShapeFamily::box;
    s.a = s.b = s.c = 0.5;
    CHECK(sdf(s, {1, 1, 1}) == Catch::Approx(std::sqrt(0.75)).margin(1e-12));

    Rng rng(5, "box-oracle");
    for (int i = 0; i < 500; ++i) {
        Vec3 p{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
        Real want = box_mesh_distance(p, 0.5, 0.5, 0.5);
        CHECK(sdf(s, p) == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("all families are 1-Lipschitz and negative inside") {
    Rng rng(9, "lipschitz");
    for (const auto& cat : known_categories()) {
        Rng shape_rng(3, "shape/" + cat);
        PrimitiveShape s = sample_category_shape(cat, shape_rng);
        CHECK(s.bounding_radius() <= 1.0);
        CHECK(sdf(s, {0.99, 0.99, 0.99}) > 0);  // corner outside the unit ball
        for (int i = 0; i < 300; ++i) {
            Vec3 p{rng.uniform(-1.1, 1.1), rng.uniform(-1.1, 1.1), rng.uniform(-1.1, 1.1)};
            Vec3 q{rng.uniform(-1.1, 1.1), rng.uniform(-1.1, 1.1), rng.uniform(-1.1, 1.1)};
            Real lhs = std::fabs(sdf(s, p) - sdf(s, q));
            CHECK(lhs <= (p - q).norm() + 1e-9);
        }
    }
}

TEST_CASE("render_analytic: projected disk coverage matches the analytic solid angle") {
    PrimitiveShape s;
    s.family = ShapeFamily::sphere;
    s.a = 0.5;
    OrbitCamera cam;
    cam.radius = 2.0;
    cam.width = cam.height = 64;
    cam.fov_deg = 40;
    RenderedView rv = render_analytic(s, cam);

    Real covered = rv.mask.mean();
    // Pixels hit the sphere iff the ray direction is within asin(r/d) of the
    // optical axis; in plane coordinates that is a disk of radius tan(alpha).
    Real alpha = std::asin(0.5 / 2.0);
    Real ty = std::tan(deg_to_rad(cam.fov_deg) / 2);
    Real tx = ty;  // square image
    Real expect = kPi * std::tan(alpha) * std::tan(alpha) / (4 * tx * ty);
    CHECK(covered == Catch::Approx(expect).epsilon(0.02));
}

TEST_CASE("render_analytic: center pixel of an origin-aimed camera is foreground") {
    for (const auto& cat : {"sphere", "box", "torus"}) {
        Rng rng(8, std::string("center/") + cat);
        PrimitiveShape s = sample_category_shape(cat, rng);
        if (s.family == ShapeFamily::torus) continue;  // hole can face the camera
        OrbitCamera cam;
        cam.azimuth_deg = 33;
        cam.elevation_deg = 21;
        cam.width = cam.height = 33;  // odd size: center pixel ray passes through origin
        RenderedView rv = render_analytic(s, cam);
        CHECK(rv.mask.at(16, 16, 0) == 1.0);
    }
}

TEST_CASE("render_analytic: degenerate shape gives all-zero mask and rgb") {
    PrimitiveShape s;
    s.family = ShapeFamily::sphere;
    s.a = 0.0;
    OrbitCamera cam;
    cam.width = cam.height = 33;
    RenderedView rv = render_analytic(s, cam);
    CHECK(rv.mask.mean() == 0.0);
    CHECK(rv.rgb.mean() == 0.0);
}

TEST_CASE("background pixels are exactly zero and masks are binary") {
    Rng rng(4, "bg");
    PrimitiveShape s = sample_category_shape("handlebox", rng);
    OrbitCamera cam;
    cam.azimuth_deg = 111;
    cam.elevation_deg = -30;
    RenderedView rv = render_analytic(s, cam);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            Real m = rv.mask.at(y, x, 0);
            CHECK((m == 0.0 || m == 1.0));
            if (m < 0.5) {
                CHECK(rv.rgb.at(y, x, 0) == 0.0);
                CHECK(rv.rgb.at(y, x, 1) == 0.0);
                CHECK(rv.rgb.at(y, x, 2) == 0.0);
            }
        }
}

TEST_CASE("sphere-traced mask agrees with SDF sign along rays away from the boundary") {
    Rng rng(21, "mask-sign");
    PrimitiveShape s = sample_category_shape("cylinder", rng);
    OrbitCamera cam;
    cam.azimuth_deg = 70;
    cam.elevation_deg = 35;
    RenderedView rv = render_analytic(s, cam);

    auto sign_mask = [&](int y, int x) {
        Ray ray = pixel_ray(cam, x, y);
        for (int i = 0; i <= 256; ++i) {
            Real t = ray.t_near + (ray.t_far - ray.t_near) * i / 256.0;
            if (sdf(s, ray.origin + ray.dir * t) < 0) return 1.0;
        }
        return 0.0;
    };
    auto near_boundary = [&](int y, int x) {
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int yy = std::clamp(y + dy, 0, cam.height - 1);
                int xx = std::clamp(x + dx, 0, cam.width - 1);
                if (rv.mask.at(yy, xx, 0) != rv.mask.at(y, x, 0)) return true;
            }
        return false;
    };
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            if (near_boundary(y, x)) continue;
            CHECK(rv.mask.at(y, x, 0) == sign_mask(y, x));
        }
}

TEST_CASE("camera sampling marginals pass a chi-squared uniformity test") {
    SceneSynthConfig cfg;
    Rng rng(123, "chi2");
    constexpr int n = 10000;
    std::vector<int> az_bins(36, 0), el_bins(30, 0);
    for (int i = 0; i < n; ++i) {
        OrbitCamera cam = detail::sample_orbit_camera(cfg, rng, 64);
        az_bins[std::min(35, static_cast<int>(cam.azimuth_deg / 10.0))]++;
        el_bins[std::min(29, static_cast<int>((cam.elevation_deg + 75.0) / 5.0))]++;
    }
    auto chi2 = [n](const std::vector<int>& bins) {
        Real e = static_cast<Real>(n) / bins.size(), s = 0;
        for (int b : bins) s += (b - e) * (b - e) / e;
        return s;
    };
    CHECK(chi2(az_bins) < 57.342);  // chi2_{0.99}, 35 dof
    CHECK(chi2(el_bins) < 49.588);  // chi2_{0.99}, 29 dof
}

TEST_CASE("pretrain dataset generation: counts, splits, invariants") {
    std::string dir = temp_dir("gen");
    SceneSynthConfig cfg = tiny_config(dir);
    generate_pretrain_dataset(cfg);
    Dataset ds = load_dataset(dir);

    // (3 train + 1 heldout instance) x 4 views x 2 families
    CHECK(ds.samples.size() == 32);
    CHECK(ds.indices_with_split("train").size() == 2 * 3 * 3);
    CHECK(ds.indices_with_split("heldout-view").size() == 2 * 3 * 1);
    CHECK(ds.indices_with_split("heldout-instance").size() == 2 * 1 * 4);

    for (const auto& s : ds.samples) {
        REQUIRE(s.camera.has_value());
        Real mean_mask = 0;
        for (size_t i = 0; i < s.mask.size(); ++i) mean_mask += s.mask.value_flat(i);
        mean_mask /= static_cast<Real>(s.mask.size());
        CHECK(mean_mask > 0.0);
        CHECK(mean_mask < 1.0);
        for (int y = 0; y < s.mask.h; ++y)
            for (int x = 0; x < s.mask.w; ++x)
                if (s.mask.value(y, x, 0) == 0.0) {
                    CHECK(s.rgb.value(y, x, 0) == 0.0);
                    CHECK(s.rgb.value(y, x, 1) == 0.0);
                    CHECK(s.rgb.value(y, x, 2) == 0.0);
                }
    }
}

TEST_CASE("same seed twice gives byte-identical dataset files") {
    std::string d1 = temp_dir("det1"), d2 = temp_dir("det2");
    SceneSynthConfig c1 = tiny_config(d1), c2 = tiny_config(d2);
    generate_pretrain_dataset(c1);
    generate_pretrain_dataset(c2);
    int compared = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(d1)) {
        if (!e.is_regular_file()) continue;
        auto rel = std::filesystem::relative(e.path(), d1);
        std::string a = read_text_file(e.path().string());
        std::string b = read_text_file((std::filesystem::path(d2) / rel).string());
        CHECK(a == b);
        ++compared;
    }
    CHECK(compared > 10);
}

TEST_CASE("wild collection: no training camera access, sealed sidecar complete") {
    std::string dir = temp_dir("wild");
    SceneSynthConfig cfg;
    cfg.out_dir = dir;
    cfg.families = {"capsule"};
    cfg.instances_per_family = 20;
    cfg.image_size = cfg.input_size = 32;
    cfg.seed = 77;
    generate_wild_collection(cfg);

    Dataset ds = load_dataset(dir);
    CHECK(ds.samples.size() == 20);
    for (const auto& s : ds.samples) CHECK_FALSE(s.camera.has_value());

    auto sealed = load_sealed_cameras(dir);
    CHECK(sealed.size() == 20);
    std::set<u32> ids;
    for (const auto& r : sealed) ids.insert(r.instance_id);
    for (const auto& s : ds.samples) CHECK(ids.count(s.instance_id) == 1);

    auto shapes = load_sealed_shapes(dir);
    CHECK(shapes.size() == 20);
}

TEST_CASE("mask noise flips roughly the requested fraction of boundary-band pixels") {
    Rng rng(31, "noise-shape");
    PrimitiveShape s = sample_category_shape("sphere", rng);
    OrbitCamera cam;
    cam.width = cam.height = 128;
    RenderedView rv = render_analytic(s, cam);

    // count band pixels
    Image orig = rv.mask;
    int band = 0;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            bool fg = false, bg = false;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = std::clamp(y + dy, 0, cam.height - 1);
                    int xx = std::clamp(x + dx, 0, cam.width - 1);
                    (orig.at(yy, xx, 0) > 0.5 ? fg : bg) = true;
                }
            if (fg && bg) ++band;
        }
    REQUIRE(band > 300);

    int flipped = 0;
    constexpr int reps = 20;
    for (int r = 0; r < reps; ++r) {
        Image noisy = orig;
        Rng noise_rng(1000 + r, "noise");
        flipped += detail::apply_mask_noise(noisy, 0.05, noise_rng);
    }
    Real rate = static_cast<Real>(flipped) / (static_cast<Real>(band) * reps);
    CHECK(rate > 0.04);
    CHECK(rate < 0.06);
}

TEST_CASE("png round trip preserves 8-bit image content") {
    Image img(9, 7, 3);
    Rng rng(2, "png");
    for (auto& v : img.px) v = rng.uniform();
    std::string path = temp_dir("png") + ".png";
    write_png(path, img);
    Image back = read_png(path);
    REQUIRE(back.h == 9);
    REQUIRE(back.w == 7);
    REQUIRE(back.c == 3);
    for (size_t i = 0; i < img.px.size(); ++i)
        CHECK(std::fabs(back.px[i] - img.px[i]) <= 0.5 / 255.0 + 1e-9);
}

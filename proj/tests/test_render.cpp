#include <catch_amalgamated.hpp>

#include "ss3d/scene_synth.hpp"
#include "ss3d/volume.hpp"

using namespace ss3d;

namespace {

std::vector<std::pair<int, int>> all_pixels(int w, int h) {
    std::vector<std::pair<int, int>> px;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) px.emplace_back(x, y);
    return px;
}

}  // namespace

TEST_CASE("pixel_ray: orbit convention is position on the axis, direction to origin") {
    OrbitCamera cam;
    cam.azimuth_deg = 0;
    cam.elevation_deg = 0;
    cam.radius = 2;
    cam.width = cam.height = 64;
    Ray r = pixel_ray(cam, cam.width / 2.0 - 0.5, cam.height / 2.0 - 0.5);
    CHECK(r.origin.x == Catch::Approx(2.0).margin(1e-12));
    CHECK(r.origin.y == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.origin.z == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.dir.x == Catch::Approx(-1.0).margin(1e-12));
    CHECK(r.dir.y == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.dir.z == Catch::Approx(0.0).margin(1e-12));

    cam.azimuth_deg = 90;
    Ray r2 = pixel_ray(cam, cam.width / 2.0 - 0.5, cam.height / 2.0 - 0.5);
    CHECK(r2.origin.x == Catch::Approx(0.0).margin(1e-12));
    CHECK(r2.origin.y == Catch::Approx(2.0).margin(1e-12));
    CHECK(r2.dir.y == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("pixel_ray: corner pixel angle obeys the fov/aspect relation") {
    OrbitCamera cam;
    cam.azimuth_deg = 33;
    cam.elevation_deg = -21;
    cam.fov_deg = 50;
    cam.width = 80;
    cam.height = 40;
    auto basis = cam.basis();
    // exact image-plane corner (half a pixel beyond the corner pixel center)
    Ray r = pixel_ray(cam, -0.5, -0.5);
    Real along_f = r.dir.dot(basis.forward);
    Real along_r = r.dir.dot(basis.right);
    Real along_u = r.dir.dot(basis.up);
    Real ty = std::tan(deg_to_rad(cam.fov_deg) / 2);
    Real tx = ty * cam.width / cam.height;
    CHECK(along_r / along_f == Catch::Approx(-tx).margin(1e-12));
    CHECK(along_u / along_f == Catch::Approx(ty).margin(1e-12));
}

TEST_CASE("composite: zero density gives zero mask and color") {
    std::vector<Real> sigma(16, 0.0), ts(16);
    std::vector<Vec3> colors(16, Vec3{0.5, 0.5, 0.5});
    for (int i = 0; i < 16; ++i) ts[i] = 0.6 + i * 0.15;
    CompositeOut out = composite(sigma, colors, ts, 0.6 + 16 * 0.15);
    CHECK(out.mask == 0.0);
    CHECK(out.color.x == 0.0);
    CHECK(out.color.y == 0.0);
    CHECK(out.color.z == 0.0);
}

TEST_CASE("composite: single sample with sigma = ln 2 over unit interval gives mask 0.5") {
    std::vector<Real> sigma = {std::log(2.0)};
    std::vector<Vec3> colors = {{1, 1, 1}};
    std::vector<Real> ts = {0.0};
    CompositeOut out = composite(sigma, colors, ts, 1.0);
    CHECK(out.mask == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("composite: constant sigma converges to the transmittance integral") {
    // sigma = 2 over length 1 -> 1 - e^{-2} = 0.864664...
    const Real sigma_v = 2.0, want = 1.0 - std::exp(-2.0);
    for (int n : {8, 512}) {
        std::vector<Real> sigma(n, sigma_v), ts(n);
        std::vector<Vec3> colors(n, Vec3{1, 0, 0});
        for (int i = 0; i < n; ++i) ts[i] = static_cast<Real>(i) / n;
        CompositeOut out = composite(sigma, colors, ts, 1.0);
        CHECK(out.mask == Catch::Approx(want).margin(0.002));
    }
}

TEST_CASE("composite invariants: weights form a sub-probability vector; monotone in sigma") {
    Rng rng(3, "composite");
    for (int trial = 0; trial < 50; ++trial) {
        int n = 12;
        std::vector<Real> sigma(n), ts(n);
        std::vector<Vec3> colors(n);
        for (int i = 0; i < n; ++i) {
            sigma[i] = std::fabs(rng.normal()) * 3;
            ts[i] = 0.5 + i * 0.2;
            colors[i] = {rng.uniform(), rng.uniform(), rng.uniform()};
        }
        CompositeOut out = composite(sigma, colors, ts, 0.5 + n * 0.2);
        Real wsum = 0;
        for (Real w : out.weights) {
            CHECK(w >= 0.0);
            wsum += w;
        }
        CHECK(out.mask == Catch::Approx(wsum).margin(1e-12));
        CHECK(out.mask >= 0.0);
        CHECK(out.mask <= 1.0);
        for (Real c : {out.color.x, out.color.y, out.color.z}) {
            CHECK(c >= 0.0);
            CHECK(c <= 1.0 + 1e-12);
        }

        int k = trial % n;
        std::vector<Real> sigma2 = sigma;
        sigma2[k] += 0.7;
        CompositeOut out2 = composite(sigma2, colors, ts, 0.5 + n * 0.2);
        CHECK(out2.mask >= out.mask - 1e-12);
    }
}

TEST_CASE("tape compositing matches the plain compositor") {
    Rng rng(8, "tape-composite");
    int rays = 5, n = 9;
    std::vector<Real> sigma(rays * n);
    std::vector<Real> colors(rays * n * 3);
    for (auto& v : sigma) v = std::fabs(rng.normal()) * 2;
    for (auto& v : colors) v = rng.uniform();
    Real delta = 2.4 / n;

    Tape t;
    Val s = t.input({rays, n}, sigma);
    Val c = t.input({static_cast<i64>(rays) * n, 3}, colors);
    Composited out = composite_tape(t, s, c, delta);

    for (int r = 0; r < rays; ++r) {
        std::vector<Real> srow(sigma.begin() + r * n, sigma.begin() + (r + 1) * n);
        std::vector<Vec3> crow(n);
        std::vector<Real> ts(n);
        for (int i = 0; i < n; ++i) {
            crow[i] = {colors[(r * n + i) * 3], colors[(r * n + i) * 3 + 1],
                       colors[(r * n + i) * 3 + 2]};
            ts[i] = i * delta;
        }
        CompositeOut want = composite(srow, crow, ts, n * delta);
        CHECK(t.value(out.mask)[r] == Catch::Approx(want.mask).margin(1e-12));
        for (int ch = 0; ch < 3; ++ch)
            CHECK(t.value(out.color[ch])[r] ==
                  Catch::Approx(ch == 0 ? want.color.x : ch == 1 ? want.color.y : want.color.z)
                      .margin(1e-12));
    }
}

TEST_CASE("renderer: zero-density debug field renders an empty image") {
    auto field = field_from_point_fn(std::make_shared<ZeroDensityField>());
    OrbitCamera cam;
    cam.width = cam.height = 16;
    RaySampleSpec spec;
    spec.samples_per_ray = 16;
    RenderedImage img = render_image(field, cam, spec);
    CHECK(img.mask.mean() == 0.0);
    CHECK(img.color.mean() == 0.0);
}

TEST_CASE("renderer: analytic sphere field matches the sphere-traced mask with IoU > 0.98") {
    PrimitiveShape s;
    s.family = ShapeFamily::sphere;
    s.a = 0.55;
    auto field = field_from_point_fn(
        std::make_shared<HardSdfField>(std::vector<PrimitiveShape>{s}, 150.0));
    OrbitCamera cam;
    cam.azimuth_deg = 25;
    cam.elevation_deg = 10;
    cam.width = cam.height = 64;
    RaySampleSpec spec;
    spec.samples_per_ray = 96;
    RenderedImage img = render_image(field, cam, spec);
    RenderedView traced = render_analytic(s, cam);
    Real iou = mask_iou(img.mask, StoredImage::from(traced.mask));
    CHECK(iou > 0.98);
}

TEST_CASE("renderer: sample-count doubling converges geometrically on a smooth field") {
    PrimitiveShape s;
    s.family = ShapeFamily::sphere;
    s.a = 0.6;
    auto field = field_from_point_fn(
        std::make_shared<SdfSmoothField>(std::vector<PrimitiveShape>{s}, 25.0, 0.02));
    OrbitCamera cam;
    cam.width = cam.height = 9;
    auto px = all_pixels(9, 9);

    std::vector<Real> masks;
    for (int n : {4, 8, 16, 32}) {
        RaySampleSpec spec;
        spec.samples_per_ray = n;
        Tape t;
        RenderedRays rr = render_rays_tape(t, field, cam, px, spec);
        Real mean = 0;
        auto m = t.value(rr.mask);
        for (Real v : m) mean += v;
        masks.push_back(mean / static_cast<Real>(m.size()));
    }
    Real d1 = std::fabs(masks[1] - masks[0]);
    Real d2 = std::fabs(masks[2] - masks[1]);
    Real d3 = std::fabs(masks[3] - masks[2]);
    CHECK(d2 < 0.6 * d1);
    CHECK(d3 < 0.6 * d2);
}

TEST_CASE("renderer: gradient of total mask w.r.t. decoder weights passes grad_check") {
    ArchConfig arch;
    arch.input_size = 8;
    arch.encoder_channels = {2};
    arch.decoder_layers = 2;
    arch.hidden = 5;
    arch.latent_dim = static_cast<int>(arch.film_dim());
    ImplicitModel m = init_model(77, arch);

    std::vector<Real> film(arch.film_dim());
    Rng rng(5, "film");
    for (size_t i = 0; i < film.size(); ++i)
        film[i] = (i % (2 * arch.hidden)) < static_cast<size_t>(arch.hidden)
                      ? 1.0 + 0.1 * rng.normal()
                      : 0.1 * rng.normal();

    OrbitCamera cam;
    cam.width = cam.height = 4;
    RaySampleSpec spec;
    spec.samples_per_ray = 6;
    std::vector<std::pair<int, int>> pixels = {{0, 0}, {1, 2}, {3, 3}};

    GradCheckReport r = grad_check(
        [&](Tape& t, ParamStore&) {
            FieldFn field = [&](Tape& tt, Val pts) {
                Val f = tt.input({1, static_cast<i64>(film.size())}, film);
                return decode_points_tape(tt, m, pts, f, m.params);
            };
            RenderedRays rr = render_rays_tape(t, field, cam, pixels, spec);
            Val loss = t.sum_all(rr.mask);
            for (int ch = 0; ch < 3; ++ch) loss = t.add(loss, t.sum_all(rr.color[ch]));
            return loss;
        },
        m.params, 1e-5);
    INFO("max rel err " << r.max_rel_err);
    CHECK(r.pass(1e-4));
}

TEST_CASE("orbit rays on tape match pixel_ray and are differentiable in camera params") {
    OrbitCamera cam;
    cam.azimuth_deg = 140;
    cam.elevation_deg = -35;
    cam.radius = 1.9;
    cam.width = cam.height = 16;
    std::vector<std::pair<int, int>> pixels = {{0, 0}, {7, 3}, {15, 15}, {4, 9}};

    ParamStore cp;
    cp.add("az", 1, 1).value[0] = deg_to_rad(cam.azimuth_deg);
    cp.add("el", 1, 1).value[0] = deg_to_rad(cam.elevation_deg);
    cp.add("r", 1, 1).value[0] = cam.radius;

    Tape t;
    TapeRays rays = orbit_rays_tape(t, t.leaf(cp.group("az")), t.leaf(cp.group("el")),
                                    t.leaf(cp.group("r")), cam, pixels);
    auto origin = t.value(rays.origin);
    Vec3 want_o = cam.position();
    CHECK(origin[0] == Catch::Approx(want_o.x).margin(1e-12));
    CHECK(origin[1] == Catch::Approx(want_o.y).margin(1e-12));
    CHECK(origin[2] == Catch::Approx(want_o.z).margin(1e-12));
    auto dirs = t.value(rays.dirs);
    for (size_t i = 0; i < pixels.size(); ++i) {
        Ray r = pixel_ray(cam, pixels[i].first, pixels[i].second);
        CHECK(dirs[i * 3] == Catch::Approx(r.dir.x).margin(1e-12));
        CHECK(dirs[i * 3 + 1] == Catch::Approx(r.dir.y).margin(1e-12));
        CHECK(dirs[i * 3 + 2] == Catch::Approx(r.dir.z).margin(1e-12));
    }

    // gradients through camera parameters into rendered mask
    PrimitiveShape s;
    s.family = ShapeFamily::box;
    s.a = 0.45;
    s.b = 0.3;
    s.c = 0.25;
    auto fieldfn = std::make_shared<SdfSmoothField>(std::vector<PrimitiveShape>{s}, 8.0, 0.12);
    RaySampleSpec spec;
    spec.samples_per_ray = 10;
    GradCheckReport rep = grad_check(
        [&](Tape& tt, ParamStore& p) {
            TapeRays rr = orbit_rays_tape(tt, tt.leaf(p.group("az")), tt.leaf(p.group("el")),
                                          tt.leaf(p.group("r")), cam, pixels);
            Val pts = orbit_ray_points_tape(tt, rr, tt.leaf(p.group("r")), spec);
            auto field = field_from_point_fn(fieldfn);
            DecodedPoints d = field(tt, pts);
            Val sigma_rn = tt.reshape(d.sigma, static_cast<i64>(pixels.size()), spec.samples_per_ray);
            Composited c = composite_tape(tt, sigma_rn, d.color, 2.4 / spec.samples_per_ray);
            Val loss = tt.sum_all(c.mask);
            for (int ch = 0; ch < 3; ++ch) loss = tt.add(loss, tt.sum_all(c.color[ch]));
            return loss;
        },
        cp, 1e-5);
    INFO("camera grad err " << rep.max_rel_err);
    CHECK(rep.pass(2e-3));  // SDF normals in the analytic field are finite-difference
}

TEST_CASE("composite call counter increments") {
    u64 before = composite_call_count().load();
    std::vector<Real> sigma = {1.0};
    std::vector<Vec3> colors = {{1, 1, 1}};
    std::vector<Real> ts = {0.0};
    composite(sigma, colors, ts, 1.0);
    CHECK(composite_call_count().load() == before + 1);
}

#pragma once

#include <atomic>
#include <functional>

#include "ss3d/camera.hpp"
#include "ss3d/fields.hpp"
#include "ss3d/image.hpp"
#include "ss3d/net.hpp"

namespace ss3d {

// Call counter used to prove that a training phase performed no volume
// rendering (the distillation stage must not composite).
inline std::atomic<u64>& composite_call_count() {
    static std::atomic<u64> n{0};
    return n;
}

// ---------------------------------------------------------------------------
// Plain (scalar) compositing over one ray: alpha_i = 1 - exp(-sigma_i d_i),
// T_i = prod_{j<i}(1 - alpha_j), w_i = T_i alpha_i. No background term: the
// datasets are segmented with black backgrounds.
// ---------------------------------------------------------------------------

struct CompositeOut {
    Real mask = 0;
    Vec3 color;
    std::vector<Real> weights;
};

inline CompositeOut composite(std::span<const Real> sigma, std::span<const Vec3> colors,
                              std::span<const Real> ts, Real t_far) {
    composite_call_count()++;
    size_t n = sigma.size();
    if (colors.size() != n || ts.size() != n)
        fail(errc::invalid_argument, "composite: mismatched packet arrays");
    CompositeOut out;
    out.weights.resize(n);
    Real log_transmittance = 0;  // log T_i, accumulated exactly
    for (size_t i = 0; i < n; ++i) {
        Real delta = (i + 1 < n ? ts[i + 1] : t_far) - ts[i];
        if (delta <= 0) fail(errc::invalid_argument, "composite: sample depths must increase");
        Real alpha = 1.0 - std::exp(-sigma[i] * delta);
        Real w = std::exp(log_transmittance) * alpha;
        out.weights[i] = w;
        out.mask += w;
        out.color += colors[i] * w;
        log_transmittance -= sigma[i] * delta;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ray sampling. Depths are uniform: t_i = t_near + (i + offset) * delta with
// delta = (t_far - t_near) / N, so every interval including the trailing one
// has width delta. offset defaults to 0; a stratified jitter sits behind a
// flag for experiments.
// ---------------------------------------------------------------------------

struct RaySampleSpec {
    int samples_per_ray = 64;
    bool stratified = false;
    u64 jitter_seed = 0;
};

inline std::vector<Real> sample_depth_offsets(const RaySampleSpec& spec, Real span) {
    // offsets relative to the slab start; spacing delta = span / N
    std::vector<Real> c(spec.samples_per_ray);
    Real delta = span / spec.samples_per_ray;
    Rng rng(spec.jitter_seed, "depth-jitter");
    for (int i = 0; i < spec.samples_per_ray; ++i) {
        Real u = spec.stratified ? rng.uniform() : 0.0;
        c[i] = (i + u) * delta;
    }
    return c;
}

// A batch of rays with their uniformly spaced sample depths and the
// per-sample and composited outputs; the explicit-packet surface of the
// renderer used by tests and the debug CLI.
struct RaySamplePacket {
    Ray ray;
    std::vector<Real> ts;
    std::vector<Real> sigma;
    std::vector<Vec3> color;
    Real mask = 0;
    Vec3 rgb;
    std::vector<Real> weights;
};

// ---------------------------------------------------------------------------
// Tape-side compositing for training. sigma is [R x N]; colors is [R*N x 3].
// Depth spacing delta is a constant (the slab width never depends on
// trainable parameters; only the slab center does).
// ---------------------------------------------------------------------------

struct Composited {
    Val mask;                  // [R x 1]
    std::array<Val, 3> color;  // each [R x 1]
    Val weights;               // [R x N]
};

inline Composited composite_tape(Tape& t, Val sigma_rn, Val colors_rn3, Real delta) {
    composite_call_count()++;
    i64 rays = t.shape(sigma_rn).rows, n = t.shape(sigma_rn).cols;
    Val sd = t.scale(sigma_rn, delta);
    Val transmittance = t.exp(t.neg(t.cumsum_exclusive_rows(sd)));
    Val alpha = t.add_scalar(t.neg(t.exp(t.neg(sd))), 1.0);
    Composited out;
    out.weights = t.mul(transmittance, alpha);
    out.mask = t.row_sum(out.weights);
    for (int ch = 0; ch < 3; ++ch) {
        Val c = t.reshape(t.slice_cols(colors_rn3, ch, 1), rays, n);
        out.color[ch] = t.row_sum(t.mul(out.weights, c));
    }
    return out;
}

// Evaluates an implicit field on a tape: points [m x 3] -> (sigma [m x 1],
// color [m x 3]). Networks bind their FiLM vector here; analytic debug fields
// wrap a PointFieldFn node.
using FieldFn = std::function<DecodedPoints(Tape&, Val points)>;

inline FieldFn field_from_point_fn(std::shared_ptr<PointFieldFn> fn) {
    return [fn](Tape& t, Val points) {
        Val out = t.point_field(points, fn);
        DecodedPoints d;
        d.sigma = t.slice_cols(out, 0, 1);
        d.color = t.slice_cols(out, 1, 3);
        return d;
    };
}

inline FieldFn field_from_model(const ImplicitModel& m, std::vector<Real> film) {
    return [&m, film = std::move(film)](Tape& t, Val points) {
        Val f = t.input({1, static_cast<i64>(film.size())}, film);
        return decode_points_tape(t, const_cast<ImplicitModel&>(m), points, f,
                                  const_cast<ParamStore&>(m.params));
    };
}

// ---------------------------------------------------------------------------
// Fixed-camera rendering (pretraining and evaluation): rays come from a known
// OrbitCamera, so sample points enter the tape as constants.
// ---------------------------------------------------------------------------

struct RenderedRays {
    Val mask;                  // [R x 1]
    std::array<Val, 3> color;  // [R x 1] each
    Val weights;               // [R x N]
    Real delta = 0;
    std::vector<Real> t0;  // per-ray first sample depth (diagnostics)
};

inline RenderedRays render_rays_tape(Tape& t, const FieldFn& field, const OrbitCamera& cam,
                                     std::span<const std::pair<int, int>> pixels,
                                     const RaySampleSpec& spec) {
    i64 rays = static_cast<i64>(pixels.size());
    i64 n = spec.samples_per_ray;
    Real span = 2.4;  // render slab [radius - 1.2, radius + 1.2]
    Real delta = span / static_cast<Real>(n);
    std::vector<Real> offsets = sample_depth_offsets(spec, span);

    std::vector<Real> pts(static_cast<size_t>(rays) * n * 3);
    std::vector<Real> t0(rays);
    for (i64 r = 0; r < rays; ++r) {
        Ray ray = pixel_ray(cam, pixels[r].first, pixels[r].second);
        t0[r] = ray.t_near + offsets[0];
        for (i64 i = 0; i < n; ++i) {
            Vec3 p = ray.origin + ray.dir * (ray.t_near + offsets[i]);
            size_t o = (static_cast<size_t>(r) * n + i) * 3;
            pts[o] = p.x;
            pts[o + 1] = p.y;
            pts[o + 2] = p.z;
        }
    }
    Val points = t.input({rays * n, 3}, pts);
    DecodedPoints d = field(t, points);
    Val sigma_rn = t.reshape(d.sigma, rays, n);
    Composited c = composite_tape(t, sigma_rn, d.color, delta);
    RenderedRays out;
    out.mask = c.mask;
    out.color = c.color;
    out.weights = c.weights;
    out.delta = delta;
    out.t0 = std::move(t0);
    return out;
}

// Explicit packets for the render contract (spec surface + debug CLI).
inline std::vector<RaySamplePacket> render_rays(const FieldFn& field, const OrbitCamera& cam,
                                                std::span<const std::pair<int, int>> pixels,
                                                const RaySampleSpec& spec) {
    Tape t;
    RenderedRays rr = render_rays_tape(t, field, cam, pixels, spec);
    i64 n = spec.samples_per_ray;
    std::vector<RaySamplePacket> packets(pixels.size());
    auto mask = t.value(rr.mask);
    auto w = t.value(rr.weights);
    std::array<std::span<const Real>, 3> col = {t.value(rr.color[0]), t.value(rr.color[1]),
                                                t.value(rr.color[2])};
    for (size_t r = 0; r < pixels.size(); ++r) {
        RaySamplePacket& p = packets[r];
        p.ray = pixel_ray(cam, pixels[r].first, pixels[r].second);
        p.mask = mask[r];
        p.rgb = {col[0][r], col[1][r], col[2][r]};
        p.ts.resize(n);
        for (i64 i = 0; i < n; ++i) p.ts[i] = rr.t0[r] + i * rr.delta;
        p.weights.assign(w.begin() + r * n, w.begin() + (r + 1) * n);
    }
    return packets;
}

struct RenderedImage {
    Image mask;   // H x W x 1
    Image color;  // H x W x 3
    Image depth;  // H x W x 1, expected depth sum w_i t_i
};

// Full-frame render in row chunks to bound tape memory.
inline RenderedImage render_image(const FieldFn& field, const OrbitCamera& cam,
                                  const RaySampleSpec& spec) {
    RenderedImage out;
    out.mask = Image(cam.height, cam.width, 1);
    out.color = Image(cam.height, cam.width, 3);
    out.depth = Image(cam.height, cam.width, 1);
    int rows_per_chunk = std::max(1, 16384 / std::max(1, cam.width * spec.samples_per_ray / 16));
    for (int y0 = 0; y0 < cam.height; y0 += rows_per_chunk) {
        int y1 = std::min(cam.height, y0 + rows_per_chunk);
        std::vector<std::pair<int, int>> pixels;
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < cam.width; ++x) pixels.emplace_back(x, y);
        Tape t;
        RenderedRays rr = render_rays_tape(t, field, cam, pixels, spec);
        auto mask = t.value(rr.mask);
        auto w = t.value(rr.weights);
        std::array<std::span<const Real>, 3> col = {t.value(rr.color[0]), t.value(rr.color[1]),
                                                    t.value(rr.color[2])};
        i64 n = spec.samples_per_ray;
        for (size_t r = 0; r < pixels.size(); ++r) {
            auto [x, y] = pixels[r];
            out.mask.at(y, x, 0) = mask[r];
            for (int ch = 0; ch < 3; ++ch) out.color.at(y, x, ch) = col[ch][r];
            Real depth = 0;
            for (i64 i = 0; i < n; ++i) depth += w[r * n + i] * (rr.t0[r] + i * rr.delta);
            out.depth.at(y, x, 0) = depth;
        }
    }
    return out;
}

// Mean IoU of a rendered mask (threshold 0.5) against a label mask.
inline Real mask_iou(const Image& pred, const StoredImage& label) {
    i64 inter = 0, uni = 0;
    for (int y = 0; y < pred.h; ++y)
        for (int x = 0; x < pred.w; ++x) {
            bool a = pred.at(y, x, 0) > 0.5;
            bool b = label.value(y, x, 0) > 0.5;
            inter += a && b;
            uni += a || b;
        }
    return uni == 0 ? 1.0 : static_cast<Real>(inter) / static_cast<Real>(uni);
}

// ---------------------------------------------------------------------------
// Orbit camera rays as differentiable functions of (azimuth, elevation,
// radius), used by the self-training stage. Angles are in radians on the
// tape. Pixel plane offsets are constants.
// ---------------------------------------------------------------------------

struct TapeRays {
    Val origin;  // [1 x 3]
    Val dirs;    // [R x 3]
};

inline TapeRays orbit_rays_tape(Tape& t, Val az, Val el, Val radius, const OrbitCamera& intr,
                                std::span<const std::pair<int, int>> pixels) {
    static const Real ex_d[3] = {1, 0, 0}, ey_d[3] = {0, 1, 0}, ez_d[3] = {0, 0, 1};
    Val ex = t.input({1, 3}, std::span<const Real>(ex_d, 3));
    Val ey = t.input({1, 3}, std::span<const Real>(ey_d, 3));
    Val ez = t.input({1, 3}, std::span<const Real>(ez_d, 3));

    Val cos_az = t.cos(az), sin_az = t.sin(az);
    Val cos_el = t.cos(el), sin_el = t.sin(el);
    Val px = t.mul(radius, t.mul(cos_el, cos_az));
    Val py = t.mul(radius, t.mul(cos_el, sin_az));
    Val pz = t.mul(radius, sin_el);
    Val pos = t.add(t.add(t.matmul(px, ex), t.matmul(py, ey)), t.matmul(pz, ez));

    Val inv_r = t.rsqrt(t.row_sum(t.square(pos)));
    Val fwd = t.neg(t.matmul(inv_r, pos));

    // right = normalize(fwd x z_up) = normalize((f_y, -f_x, 0))
    Val fx = t.slice_cols(fwd, 0, 1), fy = t.slice_cols(fwd, 1, 1), fz = t.slice_cols(fwd, 2, 1);
    Val right_un = t.add(t.matmul(fy, ex), t.matmul(t.neg(fx), ey));
    Val right = t.matmul(t.rsqrt(t.row_sum(t.square(right_un))), right_un);

    // up = right x fwd
    Val rx = t.slice_cols(right, 0, 1), ry = t.slice_cols(right, 1, 1);
    Val rz = t.slice_cols(right, 2, 1);
    Val ux = t.sub(t.mul(ry, fz), t.mul(rz, fy));
    Val uy = t.sub(t.mul(rz, fx), t.mul(rx, fz));
    Val uz = t.sub(t.mul(rx, fy), t.mul(ry, fx));
    Val up = t.add(t.add(t.matmul(ux, ex), t.matmul(uy, ey)), t.matmul(uz, ez));

    i64 rays = static_cast<i64>(pixels.size());
    std::vector<Real> sx(rays), sy(rays), ones(rays, 1.0);
    for (i64 r = 0; r < rays; ++r) {
        Vec2 s = intr.pixel_plane_coords(pixels[r].first, pixels[r].second);
        sx[r] = s.x;
        sy[r] = s.y;
    }
    Val sx_col = t.input({rays, 1}, sx);
    Val sy_col = t.input({rays, 1}, sy);
    Val ones_col = t.input({rays, 1}, ones);
    Val dir_un = t.add(t.add(t.matmul(ones_col, fwd), t.matmul(sx_col, right)),
                       t.matmul(sy_col, up));
    Val inv_n = t.rsqrt(t.row_sum(t.square(dir_un)));
    static const Real ones3_d[3] = {1, 1, 1};
    Val ones3 = t.input({1, 3}, std::span<const Real>(ones3_d, 3));
    Val dirs = t.mul(dir_un, t.matmul(inv_n, ones3));
    return {pos, dirs};
}

// Sample points along tape rays: x_{r,i} = origin + (radius + c_i) * dir_r,
// where the offsets c_i span the render slab [-1.2, 1.2] around the orbit
// center. Returns [R*N x 3].
inline Val orbit_ray_points_tape(Tape& t, const TapeRays& rays, Val radius,
                                 const RaySampleSpec& spec) {
    i64 r = t.shape(rays.dirs).rows;
    Real span = 2.4;
    std::vector<Real> offsets = sample_depth_offsets(spec, span);
    for (auto& c : offsets) c -= 1.2;  // around the orbit center

    std::vector<Real> ones_r(r, 1.0);
    Val ones_col = t.input({r, 1}, ones_r);
    static const Real ones3_d[3] = {1, 1, 1};
    Val ones3 = t.input({1, 3}, std::span<const Real>(ones3_d, 3));
    Val radius_rows = t.matmul(t.matmul(ones_col, radius), ones3);  // [R x 3] of radius
    Val centers = t.add(t.matmul(ones_col, rays.origin), t.mul(rays.dirs, radius_rows));
    Val base = t.kron_rows(centers, std::vector<Real>(spec.samples_per_ray, 1.0));
    Val off = t.kron_rows(rays.dirs, offsets);
    return t.add(base, off);
}

}  // namespace ss3d

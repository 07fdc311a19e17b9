#pragma once

#include "ss3d/sdf.hpp"
#include "ss3d/tape.hpp"

namespace ss3d {

// Debug field with zero density everywhere.
struct ZeroDensityField final : PointFieldFn {
    void forward(std::span<const Real>, i64 m, std::span<Real> out) const override {
        for (i64 i = 0; i < m; ++i) {
            out[i * 4 + 0] = 0.0;
            out[i * 4 + 1] = out[i * 4 + 2] = out[i * 4 + 3] = 0.5;
        }
    }
    void vjp(std::span<const Real>, i64, std::span<const Real>, std::span<Real>) const override {}
    const char* name() const override { return "zero_density"; }
};

// Hard occupancy field: sigma = sigma_max inside the union of primitives,
// 0 outside. Not differentiable; used as a render-oracle ground truth.
struct HardSdfField final : PointFieldFn {
    std::vector<PrimitiveShape> shapes;
    Real sigma_max = 150.0;

    explicit HardSdfField(std::vector<PrimitiveShape> s, Real smax = 150.0)
        : shapes(std::move(s)), sigma_max(smax) {}

    void forward(std::span<const Real> pts, i64 m, std::span<Real> out) const override {
        parallel_for(m, 2048, [&](i64 lo, i64 hi) {
            for (i64 i = lo; i < hi; ++i) {
                Vec3 p{pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]};
                Real best = 1e30;
                int arg = 0;
                for (size_t k = 0; k < shapes.size(); ++k) {
                    Real d = sdf(shapes[k], p);
                    if (d < best) {
                        best = d;
                        arg = static_cast<int>(k);
                    }
                }
                out[i * 4] = best < 0 ? sigma_max : 0.0;
                Vec3 c = albedo_at(shapes[arg], p);
                out[i * 4 + 1] = c.x;
                out[i * 4 + 2] = c.y;
                out[i * 4 + 3] = c.z;
            }
        });
    }
    void vjp(std::span<const Real>, i64, std::span<const Real>, std::span<Real>) const override {}
    const char* name() const override { return "hard_sdf"; }
};

// Analytic ground-truth field for a union of SDF primitives: density is a
// sharpened occupancy sigma_max * sigmoid(-s/width), color is the albedo of
// the nearest primitive. The density gradient w.r.t. position is exact up to
// the finite-difference SDF normal; color is treated as locally constant.
struct SdfSmoothField final : PointFieldFn {
    std::vector<PrimitiveShape> shapes;
    Real sigma_max = 40.0;
    Real width = 0.02;

    explicit SdfSmoothField(std::vector<PrimitiveShape> s, Real smax = 40.0, Real w = 0.02)
        : shapes(std::move(s)), sigma_max(smax), width(w) {}

    std::pair<Real, int> signed_distance(const Vec3& p) const {
        Real best = 1e30;
        int arg = 0;
        for (size_t i = 0; i < shapes.size(); ++i) {
            Real d = sdf(shapes[i], p);
            if (d < best) {
                best = d;
                arg = static_cast<int>(i);
            }
        }
        return {best, arg};
    }

    void forward(std::span<const Real> pts, i64 m, std::span<Real> out) const override {
        parallel_for(m, 1024, [&](i64 lo, i64 hi) {
            for (i64 i = lo; i < hi; ++i) {
                Vec3 p{pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]};
                auto [s, arg] = signed_distance(p);
                Real sig = 1.0 / (1.0 + std::exp(std::min(60.0, std::max(-60.0, s / width))));
                out[i * 4 + 0] = sigma_max * sig;
                Vec3 c = albedo_at(shapes[arg], p);
                out[i * 4 + 1] = c.x;
                out[i * 4 + 2] = c.y;
                out[i * 4 + 3] = c.z;
            }
        });
    }

    void vjp(std::span<const Real> pts, i64 m, std::span<const Real> up,
             std::span<Real> pgrad) const override {
        parallel_for(m, 1024, [&](i64 lo, i64 hi) {
            for (i64 i = lo; i < hi; ++i) {
                Real g_sigma = up[i * 4];
                if (g_sigma == 0) continue;
                Vec3 p{pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]};
                auto [s, arg] = signed_distance(p);
                Real e = std::exp(std::min(60.0, std::max(-60.0, s / width)));
                Real sig = 1.0 / (1.0 + e);
                Real dsig_ds = -sig * (1.0 - sig) / width;
                Vec3 n = sdf_normal(shapes[arg], p);
                Vec3 d = n * (sigma_max * dsig_ds * g_sigma);
                pgrad[i * 3] += d.x;
                pgrad[i * 3 + 1] += d.y;
                pgrad[i * 3 + 2] += d.z;
            }
        });
    }
    const char* name() const override { return "sdf_smooth"; }
};

}  // namespace ss3d

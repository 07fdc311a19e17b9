#pragma once

#include <json.hpp>
#include <map>
#include <mutex>

#include "ss3d/dataset.hpp"
#include "ss3d/tape.hpp"

namespace ss3d {

// Architecture of the image-conditioned implicit network: a stack of stride-2
// conv blocks with global average pooling and a residual linear head producing
// the latent z, and a FiLM-modulated sine decoder mapping (x, z) to density
// and color.
struct ArchConfig {
    int input_size = 64;
    std::vector<int> encoder_channels = {16, 32, 64, 128};
    int latent_dim = 64;
    int decoder_layers = 5;
    int hidden = 256;
    Real omega0 = 30;
    Real sigma_bias_init = -3.0;

    i64 film_dim() const { return 2ll * decoder_layers * hidden; }
    bool direct_film() const { return latent_dim == film_dim(); }

    bool operator==(const ArchConfig&) const = default;

    json to_json() const {
        return json{{"input_size", input_size}, {"encoder_channels", encoder_channels},
                    {"latent_dim", latent_dim}, {"decoder_layers", decoder_layers},
                    {"hidden", hidden},         {"omega0", omega0},
                    {"sigma_bias_init", sigma_bias_init}};
    }
    static ArchConfig from_json(const json& j) {
        ArchConfig a;
        a.input_size = j.at("input_size").get<int>();
        a.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
        a.latent_dim = j.at("latent_dim").get<int>();
        a.decoder_layers = j.at("decoder_layers").get<int>();
        a.hidden = j.at("hidden").get<int>();
        a.omega0 = j.at("omega0").get<Real>();
        a.sigma_bias_init = j.value("sigma_bias_init", -3.0);
        return a;
    }
};

struct ImplicitModel {
    ArchConfig arch;
    ParamStore params;
    std::string stage = "init";  // init | pretrained | expert:<family> | unified
    u64 seed = 0;
    i64 step = 0;
};

struct PointPrediction {
    Real sigma = 0;
    Vec3 color;
};

namespace detail {

// im2col index maps are shared across tapes; the gather dual map is then
// built once per layer geometry instead of once per step.
inline std::shared_ptr<IndexMap> conv_index_map(int h, int w, int channels) {
    static std::map<std::tuple<int, int, int>, std::shared_ptr<IndexMap>> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(h, w, channels);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    int oh = h / 2, ow = w / 2;  // stride 2, pad 1, 3x3 kernel
    auto map = std::make_shared<IndexMap>();
    map->source_size = static_cast<i64>(h) * w * channels;
    map->idx.resize(static_cast<i64>(oh) * ow * channels * 9);
    i64 o = 0;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int ci = 0; ci < channels; ++ci)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        int y = 2 * oy - 1 + ky, x = 2 * ox - 1 + kx;
                        map->idx[o++] = (y < 0 || y >= h || x < 0 || x >= w)
                                            ? -1
                                            : (static_cast<i64>(y) * w + x) * channels + ci;
                    }
    cache[key] = map;
    return map;
}

inline void fill_uniform(ParamGroup& g, Rng& rng, Real bound) {
    for (auto& v : g.value) v = rng.uniform(-bound, bound);
}

}  // namespace detail

// Deterministic parameter initialization. Sine layers use the standard SIREN
// scheme: first layer uniform(-1/fan_in, 1/fan_in) with omega0 applied in the
// forward pass, hidden layers uniform(+-sqrt(6/fan_in)).
inline ImplicitModel init_model(u64 seed, const ArchConfig& arch) {
    ImplicitModel m;
    m.arch = arch;
    m.seed = seed;
    Rng rng(seed, "init-model");
    ParamStore& p = m.params;

    int ch_in = 3;
    int size = arch.input_size;
    for (size_t i = 0; i < arch.encoder_channels.size(); ++i) {
        int ch_out = arch.encoder_channels[i];
        auto& w = p.add("enc.conv" + std::to_string(i) + ".w", ch_in * 9, ch_out);
        detail::fill_uniform(w, rng, std::sqrt(6.0 / (ch_in * 9)));
        p.add("enc.conv" + std::to_string(i) + ".b", 1, ch_out);
        ch_in = ch_out;
        size /= 2;
        if (size < 1) fail(errc::invalid_argument, "too many encoder blocks for input size");
    }

    auto& fc_w = p.add("enc.fc.w", ch_in, arch.latent_dim);
    detail::fill_uniform(fc_w, rng, std::sqrt(6.0 / ch_in));
    auto& fc_b = p.add("enc.fc.b", 1, arch.latent_dim);
    auto& res_w1 = p.add("enc.res.w1", arch.latent_dim, arch.latent_dim);
    detail::fill_uniform(res_w1, rng, std::sqrt(6.0 / arch.latent_dim));
    p.add("enc.res.b1", 1, arch.latent_dim);
    p.add("enc.res.w2", arch.latent_dim, arch.latent_dim);  // zero: z = fc path at init
    p.add("enc.res.b2", 1, arch.latent_dim);

    if (!arch.direct_film()) {
        auto& proj = p.add("film.proj", arch.latent_dim, arch.film_dim(), /*trainable=*/false);
        Real s = 1.0 / std::sqrt(static_cast<Real>(arch.latent_dim));
        for (auto& v : proj.value) v = s * rng.normal();
        auto& base = p.add("film.base", 1, arch.film_dim(), /*trainable=*/false);
        for (int l = 0; l < arch.decoder_layers; ++l)
            for (int j = 0; j < arch.hidden; ++j) base.value[2ll * l * arch.hidden + j] = 1.0;
    } else {
        // z is consumed directly as FiLM slices; start the encoder at the
        // identity modulation (gamma 1, beta 0).
        for (int l = 0; l < arch.decoder_layers; ++l)
            for (int j = 0; j < arch.hidden; ++j) fc_b.value[2ll * l * arch.hidden + j] = 1.0;
    }

    int in_dim = 3;
    for (int l = 0; l < arch.decoder_layers; ++l) {
        auto& w = p.add("dec.layer" + std::to_string(l) + ".w", in_dim, arch.hidden);
        Real bound = l == 0 ? 1.0 / in_dim : std::sqrt(6.0 / in_dim);
        detail::fill_uniform(w, rng, bound);
        auto& b = p.add("dec.layer" + std::to_string(l) + ".b", 1, arch.hidden);
        detail::fill_uniform(b, rng, bound);
        in_dim = arch.hidden;
    }
    auto& sw = p.add("dec.sigma.w", arch.hidden, 1);
    detail::fill_uniform(sw, rng, 0.3 * std::sqrt(6.0 / arch.hidden));
    // start mostly empty: low initial density keeps early renders near the
    // black background instead of uniform fog
    p.add("dec.sigma.b", 1, 1).value[0] = arch.sigma_bias_init;
    auto& cw = p.add("dec.color.w", arch.hidden, 3);
    detail::fill_uniform(cw, rng, 0.3 * std::sqrt(6.0 / arch.hidden));
    p.add("dec.color.b", 1, 3);
    return m;
}

// ---------------------------------------------------------------------------
// Tape builders. encode/decode are recorded through the gradient engine so
// that every training loss differentiates through them.
// ---------------------------------------------------------------------------

// Image as a [H*W x 3] tensor (rows are pixels).
inline Val image_input(Tape& t, const StoredImage& img) {
    std::vector<Real> buf(img.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = img.value_flat(i);
    return t.input({static_cast<i64>(img.h) * img.w, img.c}, buf);
}

inline Val encode_tape(Tape& t, const ImplicitModel& m, Val image, ParamStore& p) {
    const ArchConfig& arch = m.arch;
    i64 npix = t.shape(image).rows;
    if (npix != static_cast<i64>(arch.input_size) * arch.input_size || t.shape(image).cols != 3)
        fail(errc::invalid_argument, "encode: image size does not match the architecture");

    Val h = image;
    int size = arch.input_size;
    int ch = 3;
    for (size_t i = 0; i < arch.encoder_channels.size(); ++i) {
        auto map = detail::conv_index_map(size, size, ch);
        int osize = size / 2;
        Val cols = t.gather(h, map, {static_cast<i64>(osize) * osize, static_cast<i64>(ch) * 9});
        Val pre = t.matmul_bias(cols, t.leaf(p.group("enc.conv" + std::to_string(i) + ".w")),
                                t.leaf(p.group("enc.conv" + std::to_string(i) + ".b")));
        h = t.silu(pre);
        size = osize;
        ch = arch.encoder_channels[i];
    }
    Val pooled = t.scale(t.col_sum(h), 1.0 / static_cast<Real>(size * size));
    Val a = t.matmul_bias(pooled, t.leaf(p.group("enc.fc.w")), t.leaf(p.group("enc.fc.b")));
    Val r = t.silu(t.matmul_bias(a, t.leaf(p.group("enc.res.w1")), t.leaf(p.group("enc.res.b1"))));
    Val z = t.add(a, t.matmul_bias(r, t.leaf(p.group("enc.res.w2")),
                                   t.leaf(p.group("enc.res.b2"))));
    return z;
}

// z -> per-layer FiLM vector (gamma/beta slices).
inline Val film_vector(Tape& t, const ImplicitModel& m, Val z, ParamStore& p) {
    if (m.arch.direct_film()) return z;
    return t.matmul_bias(z, t.leaf(p.group("film.proj")), t.leaf(p.group("film.base")));
}

struct DecodedPoints {
    Val sigma;  // [m x 1], softplus-activated
    Val color;  // [m x 3], sigmoid-activated
};

inline DecodedPoints decode_points_tape(Tape& t, const ImplicitModel& m, Val points, Val film,
                                        ParamStore& p) {
    const ArchConfig& arch = m.arch;
    Val h = points;
    for (int l = 0; l < arch.decoder_layers; ++l) {
        Val pre = t.matmul_bias(h, t.leaf(p.group("dec.layer" + std::to_string(l) + ".w")),
                                t.leaf(p.group("dec.layer" + std::to_string(l) + ".b")));
        Val gamma = t.slice_cols(film, 2ll * l * arch.hidden, arch.hidden);
        Val beta = t.slice_cols(film, 2ll * l * arch.hidden + arch.hidden, arch.hidden);
        h = t.film_sin(pre, gamma, beta, l == 0 ? arch.omega0 : 1.0);
    }
    DecodedPoints out;
    out.sigma = t.softplus(t.matmul_bias(h, t.leaf(p.group("dec.sigma.w")),
                                         t.leaf(p.group("dec.sigma.b"))));
    out.color = t.sigmoid(t.matmul_bias(h, t.leaf(p.group("dec.color.w")),
                                        t.leaf(p.group("dec.color.b"))));
    return out;
}

// ---------------------------------------------------------------------------
// Plain (untaped-surface) evaluation helpers.
// ---------------------------------------------------------------------------

inline std::vector<Real> encode(const ImplicitModel& m, const StoredImage& img) {
    Tape t;
    Val z = encode_tape(t, const_cast<ImplicitModel&>(m), image_input(t, img),
                        const_cast<ParamStore&>(m.params));
    auto s = t.value(z);
    return {s.begin(), s.end()};
}

inline std::vector<Real> film_from_latent(const ImplicitModel& m, std::span<const Real> z) {
    Tape t;
    Val zi = t.input({1, static_cast<i64>(z.size())}, z);
    Val f = film_vector(t, const_cast<ImplicitModel&>(m), zi, const_cast<ParamStore&>(m.params));
    auto s = t.value(f);
    return {s.begin(), s.end()};
}

// Batched no-grad decode of raw 3D points under a fixed FiLM vector.
inline void decode_points(const ImplicitModel& m, std::span<const Real> film,
                          std::span<const Real> points, i64 count, std::vector<Real>& sigma,
                          std::vector<Real>& color) {
    Tape t;
    Val pts = t.input({count, 3}, points);
    Val f = t.input({1, static_cast<i64>(film.size())}, film);
    DecodedPoints d = decode_points_tape(t, const_cast<ImplicitModel&>(m), pts, f,
                                         const_cast<ParamStore&>(m.params));
    auto sv = t.value(d.sigma);
    auto cv = t.value(d.color);
    sigma.assign(sv.begin(), sv.end());
    color.assign(cv.begin(), cv.end());
}

inline PointPrediction decode_point(const ImplicitModel& m, const Vec3& x,
                                    std::span<const Real> z) {
    std::vector<Real> film = m.arch.direct_film()
                                 ? std::vector<Real>(z.begin(), z.end())
                                 : film_from_latent(m, z);
    std::vector<Real> pts = {x.x, x.y, x.z}, sigma, color;
    decode_points(m, film, pts, 1, sigma, color);
    return {sigma[0], {color[0], color[1], color[2]}};
}

}  // namespace ss3d

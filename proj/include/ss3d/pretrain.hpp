#pragma once

#include <algorithm>
#include <atomic>
#include <map>

#include "ss3d/checkpoint.hpp"
#include "ss3d/optim.hpp"
#include "ss3d/volume.hpp"

namespace ss3d {

struct PretrainConfig {
    int supervising_views = 5;  // novel views supervising each input image
    int rays_per_view = 340;
    int samples_per_ray = 100;
    int batch_size = 8;
    int epochs = 30;
    int inputs_per_instance = 1;  // input views drawn per instance per epoch
    Real lr = 5e-5;
    int warmup_steps = 0;  // linear lr ramp over the first steps
    Real plateau_factor = 0.5;
    Real plateau_threshold = 5e-3;
    int plateau_patience = 5;
    int heldout_rays = 256;  // rays per held-out view when evaluating
    u64 seed = 1;

    void validate(int image_size) const {
        if (supervising_views <= 0 || rays_per_view <= 0 || samples_per_ray <= 0 ||
            batch_size <= 0 || epochs <= 0 || lr <= 0)
            fail(errc::config_invalid, "pretrain: counts and learning rate must be positive");
        if (rays_per_view > image_size * image_size)
            fail(errc::config_invalid, "pretrain: rays_per_view exceeds pixels per image");
    }
};

// Split tags seen by the gradient path, for asserting that held-out pixels
// never contribute to training.
struct SplitSampleCounters {
    std::atomic<u64> train{0}, heldout_view{0}, heldout_instance{0};
    void reset() { train = heldout_view = heldout_instance = 0; }
    void count(const std::string& split, u64 n) {
        if (split == "train")
            train += n;
        else if (split == "heldout-view")
            heldout_view += n;
        else
            heldout_instance += n;
    }
};

inline SplitSampleCounters& gradient_sample_counters() {
    static SplitSampleCounters c;
    return c;
}

struct ViewRaySample {
    int view_index = -1;
    std::vector<std::pair<int, int>> pixels;
};

namespace detail {

inline std::vector<std::pair<int, int>> sample_pixels(Rng& rng, int image_size, int count) {
    std::vector<std::pair<int, int>> px(count);
    for (auto& p : px) {
        p.first = static_cast<int>(rng.uniform_int(image_size));
        p.second = static_cast<int>(rng.uniform_int(image_size));
    }
    return px;
}

// Squared mask error plus squared color error summed over the sampled pixels
// of one view; the equation's plain sum, no mask weighting.
inline Val view_rendering_error(Tape& t, const FieldFn& field, const ImageSample& view,
                                const OrbitCamera& cam,
                                std::span<const std::pair<int, int>> pixels,
                                const RaySampleSpec& spec) {
    RenderedRays rr = render_rays_tape(t, field, cam, pixels, spec);
    i64 n = static_cast<i64>(pixels.size());
    std::vector<Real> mask_t(n), color_t[3];
    for (auto& c : color_t) c.resize(n);
    for (i64 i = 0; i < n; ++i) {
        auto [x, y] = pixels[i];
        mask_t[i] = view.mask.value(y, x, 0);
        for (int ch = 0; ch < 3; ++ch) color_t[ch][i] = view.rgb.value(y, x, ch);
    }
    Val err = t.sum_all(t.square(t.sub(rr.mask, t.input({n, 1}, mask_t))));
    for (int ch = 0; ch < 3; ++ch)
        err = t.add(err, t.sum_all(t.square(t.sub(rr.color[ch], t.input({n, 1}, color_t[ch])))));
    return err;
}

}  // namespace detail

// L_synth core over an arbitrary implicit field: mean over the sampled pixels
// of squared mask error plus squared color error, rendered under the
// ground-truth cameras of the supervising views.
inline Val synth_loss_field_tape(Tape& t, const FieldFn& field, const Dataset& ds,
                                 u32 input_instance, std::span<const ViewRaySample> views,
                                 const RaySampleSpec& spec) {
    Val total{};
    i64 total_pixels = 0;
    for (const auto& v : views) {
        const ImageSample& view = ds.samples.at(v.view_index);
        if (view.instance_id != input_instance)
            fail(errc::invalid_argument, "synth_loss: supervising view of a different instance");
        if (!view.camera)
            fail(errc::invalid_argument, "synth_loss: supervising view lacks a camera");
        gradient_sample_counters().count(view.split, v.pixels.size());
        Val err = detail::view_rendering_error(t, field, view, *view.camera, v.pixels, spec);
        total = total.valid() ? t.add(total, err) : err;
        total_pixels += static_cast<i64>(v.pixels.size());
    }
    if (!total.valid()) fail(errc::invalid_argument, "synth_loss: no supervising views");
    return t.scale(total, 1.0 / static_cast<Real>(total_pixels));
}

// L_synth for the network model: the input image is encoded on the same tape,
// so gradients reach the encoder as well as the decoder.
inline Val synth_loss_tape(Tape& t, ImplicitModel& m, const Dataset& ds, int input_index,
                           std::span<const ViewRaySample> views, const RaySampleSpec& spec) {
    const ImageSample& input = ds.samples.at(input_index);
    Val z = encode_tape(t, m, image_input(t, input.input_rgb), m.params);
    Val film = film_vector(t, m, z, m.params);
    FieldFn field = [&m, film](Tape& tt, Val pts) {
        return decode_points_tape(tt, m, pts, film, m.params);
    };
    return synth_loss_field_tape(t, field, ds, input.instance_id, views, spec);
}

// Plain value of L_synth (tests and logging).
inline Real synth_loss(ImplicitModel& m, const Dataset& ds, int input_index,
                       std::span<const ViewRaySample> views, const RaySampleSpec& spec) {
    Tape t;
    return t.scalar(synth_loss_tape(t, m, ds, input_index, views, spec));
}

struct PretrainResult {
    ImplicitModel model;
    std::string checkpoint_best;
    std::string checkpoint_last;
    Real final_train_loss = 0;
    Real final_heldout_mask_mse = 0;
    Real final_heldout_loss = 0;
};

// Held-out-view evaluation: mask/color MSE over sampled rays of every
// heldout-view sample, rendered under the ground-truth cameras.
struct HeldoutEval {
    Real mask_mse = 0;
    Real color_mse = 0;
    Real loss = 0;  // mask + color, the plateau metric
};

inline HeldoutEval eval_heldout_views(ImplicitModel& m, const Dataset& ds,
                                      const RaySampleSpec& spec, int rays_per_view, u64 seed) {
    auto idx = ds.indices_with_split("heldout-view");
    if (idx.empty()) return {};
    Real mask_se = 0, color_se = 0;
    i64 mask_n = 0, color_n = 0;
    for (int vi : idx) {
        const ImageSample& view = ds.samples[vi];
        Rng rng(seed, "pretrain/eval/" + std::to_string(view.instance_id) + "/" +
                          std::to_string(view.view_id));
        auto pixels = detail::sample_pixels(rng, view.mask.w, rays_per_view);
        std::vector<Real> z = encode(m, view.input_rgb);
        std::vector<Real> film = m.arch.direct_film() ? z : film_from_latent(m, z);
        Tape t;
        FieldFn field = field_from_model(m, film);
        RenderedRays rr = render_rays_tape(t, field, *view.camera, pixels, spec);
        auto mask = t.value(rr.mask);
        std::array<std::span<const Real>, 3> col = {t.value(rr.color[0]), t.value(rr.color[1]),
                                                    t.value(rr.color[2])};
        for (size_t i = 0; i < pixels.size(); ++i) {
            auto [x, y] = pixels[i];
            Real dm = mask[i] - view.mask.value(y, x, 0);
            mask_se += dm * dm;
            ++mask_n;
            for (int ch = 0; ch < 3; ++ch) {
                Real dc = col[ch][i] - view.rgb.value(y, x, ch);
                color_se += dc * dc;
                ++color_n;
            }
        }
    }
    HeldoutEval e;
    e.mask_mse = mask_se / static_cast<Real>(std::max<i64>(1, mask_n));
    e.color_mse = color_se / static_cast<Real>(std::max<i64>(1, color_n));
    e.loss = e.mask_mse + color_se / static_cast<Real>(std::max<i64>(1, mask_n));
    return e;
}

// Stage 1: supervised novel-view training on the synthetic multi-view set.
inline PretrainResult run_pretrain(const Dataset& ds, const PretrainConfig& cfg,
                                   const ArchConfig& arch, const std::string& out_dir,
                                   MetricsLog* log = nullptr) {
    cfg.validate(ds.meta.image_size);
    if (ds.meta.kind != "multiview")
        fail(errc::invalid_argument, "pretrain needs a multi-view dataset");
    ensure_dir(out_dir);

    ImplicitModel model = init_model(cfg.seed, arch);
    model.stage = "pretrained";
    Adam opt(model.params, {.lr = cfg.lr});
    ReduceOnPlateau plateau(cfg.plateau_factor, cfg.plateau_threshold, cfg.plateau_patience);
    RaySampleSpec spec;
    spec.samples_per_ray = cfg.samples_per_ray;

    // train instances and their train views
    std::map<u32, std::vector<int>> train_views;
    for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i)
        if (ds.samples[i].split == "train") train_views[ds.samples[i].instance_id].push_back(i);
    std::vector<u32> instances;
    for (auto& [id, views] : train_views) {
        if (static_cast<int>(views.size()) <= cfg.supervising_views)
            fail(errc::config_invalid, "pretrain: not enough train views per instance");
        instances.push_back(id);
    }

    PretrainResult res;
    res.checkpoint_best = out_dir + "/pretrained_best.ss3dckpt";
    res.checkpoint_last = out_dir + "/pretrained_last.ss3dckpt";
    Real best_heldout = std::numeric_limits<Real>::infinity();

    i64 global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng(cfg.seed, "pretrain/epoch/" + std::to_string(epoch));
        std::vector<u32> order;
        for (int rep = 0; rep < std::max(1, cfg.inputs_per_instance); ++rep)
            order.insert(order.end(), instances.begin(), instances.end());
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(i))]);

        Real epoch_loss = 0;
        int steps = 0;
        for (size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            model.params.zero_grad();
            Real batch_loss = 0;
            std::vector<u32> batch_ids(order.begin() + b0, order.begin() + b1);
            try {
                for (size_t bi = b0; bi < b1; ++bi) {
                    const auto& views = train_views[order[bi]];
                    int input_index = views[erng.uniform_int(views.size())];
                    std::vector<ViewRaySample> sup;
                    std::vector<int> pool;
                    for (int v : views)
                        if (v != input_index) pool.push_back(v);
                    for (size_t i = pool.size(); i > 1; --i)
                        std::swap(pool[i - 1], pool[static_cast<size_t>(erng.uniform_int(i))]);
                    for (int k = 0; k < cfg.supervising_views; ++k) {
                        ViewRaySample vs;
                        vs.view_index = pool[k];
                        vs.pixels = detail::sample_pixels(erng, ds.meta.image_size,
                                                          cfg.rays_per_view);
                        sup.push_back(std::move(vs));
                    }
                    Tape t;
                    Val loss = synth_loss_tape(t, model, ds, input_index, sup, spec);
                    Val scaled = t.scale(loss, 1.0 / static_cast<Real>(b1 - b0));
                    t.backward(scaled, 1.0);
                    batch_loss += t.scalar(loss) / static_cast<Real>(b1 - b0);
                }
                if (!std::isfinite(batch_loss)) fail(errc::non_finite, "NaN loss");
            } catch (const Error& e) {
                if (e.cls == std::string(errc::non_finite)) {
                    Real pnorm = 0;
                    for (size_t gi = 0; gi < model.params.group_count(); ++gi)
                        for (Real v : model.params.group_at(gi).value) pnorm += v * v;
                    std::string ids;
                    for (u32 id : batch_ids) ids += std::to_string(id) + " ";
                    fail(errc::non_finite,
                         std::string("pretrain aborted on non-finite loss; last batch instances [") +
                             ids + "], parameter norm " + std::to_string(std::sqrt(pnorm)) +
                             "; cause: " + e.what());
                }
                throw;
            }
            if (cfg.warmup_steps > 0 && global_step < cfg.warmup_steps)
                opt.set_lr(cfg.lr * static_cast<Real>(global_step + 1) / cfg.warmup_steps);
            opt.step();
            ++global_step;
            epoch_loss += batch_loss;
            ++steps;
            model.step++;
        }
        epoch_loss /= std::max(1, steps);

        HeldoutEval he = eval_heldout_views(model, ds, spec, cfg.heldout_rays,
                                            cfg.seed + 1000003ull * (epoch + 1));
        plateau.step(he.loss, opt);
        if (log)
            log->append({{"epoch", epoch},
                         {"split", "train"},
                         {"loss", epoch_loss},
                         {"lr", opt.lr()}});
        if (log)
            log->append({{"epoch", epoch},
                         {"split", "heldout-view"},
                         {"mask_mse", he.mask_mse},
                         {"color_mse", he.color_mse},
                         {"loss", he.loss}});
        SS3D_LOG_INFO("pretrain epoch %d train %.5f heldout mask %.5f lr %.2e", epoch, epoch_loss,
                      he.mask_mse, opt.lr());

        save_checkpoint(res.checkpoint_last, model);
        if (he.loss < best_heldout) {
            best_heldout = he.loss;
            save_checkpoint(res.checkpoint_best, model);
        }
        res.final_train_loss = epoch_loss;
        res.final_heldout_mask_mse = he.mask_mse;
        res.final_heldout_loss = he.loss;
    }
    res.model = std::move(model);
    return res;
}

}  // namespace ss3d

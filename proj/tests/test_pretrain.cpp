#include <catch_amalgamated.hpp>

#include <filesystem>

#include "ss3d/pretrain.hpp"
#include "ss3d/scene_synth.hpp"

using namespace ss3d;

namespace {

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ss3d_pretrain_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

Dataset make_tiny_dataset(const std::string& dir, u64 seed = 5, int instances = 4) {
    SceneSynthConfig cfg;
    cfg.out_dir = dir;
    cfg.families = {"sphere"};
    cfg.instances_per_family = instances;
    cfg.heldout_instances = 1;
    cfg.views_per_instance = 6;
    cfg.heldout_views = 1;
    cfg.image_size = cfg.input_size = 32;
    cfg.seed = seed;
    generate_pretrain_dataset(cfg);
    return load_dataset(dir);
}

std::vector<ViewRaySample> sample_views(const Dataset& ds, u32 instance, int input_index,
                                         int n_views, int rays, u64 seed) {
    Rng rng(seed, "test-sample");
    std::vector<ViewRaySample> out;
    for (int i = 0; i < static_cast<int>(ds.samples.size()) && static_cast<int>(out.size()) < n_views; ++i) {
        if (ds.samples[i].instance_id != instance || i == input_index) continue;
        if (ds.samples[i].split != "train") continue;
        ViewRaySample vs;
        vs.view_index = i;
        vs.pixels = detail::sample_pixels(rng, ds.meta.image_size, rays);
        out.push_back(std::move(vs));
    }
    return out;
}

}  // namespace

TEST_CASE("synth_loss is exactly zero when the field renders the targets exactly") {
    // all-black views with empty masks are rendered exactly by the zero field
    Dataset ds;
    ds.meta.image_size = 16;
    ImageSample s;
    s.instance_id = 0;
    s.family = "debug";
    s.split = "train";
    s.rgb = StoredImage::from(Image(16, 16, 3));
    s.mask = StoredImage::from(Image(16, 16, 1));
    s.input_rgb = s.rgb;
    OrbitCamera cam;
    cam.width = cam.height = 16;
    s.camera = cam;
    ds.samples.push_back(s);

    ViewRaySample vs;
    vs.view_index = 0;
    vs.pixels = {{0, 0}, {5, 9}, {15, 15}, {7, 2}};
    RaySampleSpec spec;
    spec.samples_per_ray = 8;

    Tape t;
    FieldFn zero = field_from_point_fn(std::make_shared<ZeroDensityField>());
    Val loss = synth_loss_field_tape(t, zero, ds, 0, std::vector<ViewRaySample>{vs}, spec);
    CHECK(t.scalar(loss) == 0.0);
}

TEST_CASE("synth_loss of the zero-density field equals the label energy") {
    std::string dir = temp_dir("zeroloss");
    Dataset ds = make_tiny_dataset(dir);
    const int input_index = 0;
    const ImageSample& input = ds.samples[input_index];
    auto views = sample_views(ds, input.instance_id, input_index, 2, 64, 99);
    RaySampleSpec spec;
    spec.samples_per_ray = 8;

    Tape t;
    FieldFn zero = field_from_point_fn(std::make_shared<ZeroDensityField>());
    Val loss = synth_loss_field_tape(t, zero, ds, input.instance_id, views, spec);

    // directly from the labels: mean over pixels of m^2 + |c|^2
    Real want = 0;
    i64 n = 0;
    for (const auto& v : views)
        for (auto [x, y] : v.pixels) {
            const ImageSample& view = ds.samples[v.view_index];
            Real m = view.mask.value(y, x, 0);
            want += m * m;
            for (int ch = 0; ch < 3; ++ch) {
                Real c = view.rgb.value(y, x, ch);
                want += c * c;
            }
            ++n;
        }
    want /= static_cast<Real>(n);
    CHECK(t.scalar(loss) == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("synth_loss is permutation-invariant over the sampled pixel set") {
    std::string dir = temp_dir("perm");
    Dataset ds = make_tiny_dataset(dir);
    ImplicitModel m = init_model(3, ArchConfig{.input_size = 32,
                                               .encoder_channels = {4, 8},
                                               .latent_dim = 16,
                                               .decoder_layers = 2,
                                               .hidden = 8});
    const int input_index = 0;
    auto views = sample_views(ds, ds.samples[input_index].instance_id, input_index, 2, 32, 7);
    RaySampleSpec spec;
    spec.samples_per_ray = 8;

    Real a = synth_loss(m, ds, input_index, views, spec);
    for (auto& v : views) std::reverse(v.pixels.begin(), v.pixels.end());
    Real b = synth_loss(m, ds, input_index, views, spec);
    CHECK(a == Catch::Approx(b).margin(1e-12));
}

TEST_CASE("synth_loss rejects supervising views of another instance") {
    std::string dir = temp_dir("mismatch");
    Dataset ds = make_tiny_dataset(dir);
    ImplicitModel m = init_model(3, ArchConfig{.input_size = 32,
                                               .encoder_channels = {4, 8},
                                               .latent_dim = 16,
                                               .decoder_layers = 2,
                                               .hidden = 8});
    // find a view from a different instance
    int input_index = 0;
    int other = -1;
    for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i)
        if (ds.samples[i].instance_id != ds.samples[input_index].instance_id) {
            other = i;
            break;
        }
    REQUIRE(other >= 0);
    ViewRaySample vs;
    vs.view_index = other;
    vs.pixels = {{0, 0}};
    RaySampleSpec spec;
    spec.samples_per_ray = 4;
    Tape t;
    CHECK_THROWS_AS(synth_loss_tape(t, m, ds, input_index, std::vector<ViewRaySample>{vs}, spec),
                    Error);
}

TEST_CASE("L_synth gradient passes grad_check on a micro-batch") {
    std::string dir = temp_dir("gradcheck");
    SceneSynthConfig scfg;
    scfg.out_dir = dir;
    scfg.families = {"sphere"};
    scfg.instances_per_family = 1;
    scfg.heldout_instances = 0;
    scfg.views_per_instance = 3;
    scfg.heldout_views = 0;
    scfg.image_size = scfg.input_size = 8;
    scfg.seed = 21;
    generate_pretrain_dataset(scfg);
    Dataset ds = load_dataset(dir);

    ArchConfig arch;
    arch.input_size = 8;
    arch.encoder_channels = {3};
    arch.latent_dim = 6;
    arch.decoder_layers = 2;
    arch.hidden = 4;
    ImplicitModel m = init_model(13, arch);

    std::vector<ViewRaySample> views(1);
    views[0].view_index = 1;
    views[0].pixels = {{2, 3}, {4, 4}};
    RaySampleSpec spec;
    spec.samples_per_ray = 5;

    GradCheckReport r = grad_check(
        [&](Tape& t, ParamStore&) { return synth_loss_tape(t, m, ds, 0, views, spec); },
        m.params, 1e-5);
    INFO("L_synth micro grad err " << r.max_rel_err);
    CHECK(r.pass(1e-4));
}

TEST_CASE("a tiny pretrain run learns, never samples held-out pixels, and is deterministic") {
    std::string dir = temp_dir("run");
    Dataset ds = make_tiny_dataset(dir, 5, 4);

    ArchConfig arch;
    arch.input_size = 32;
    arch.encoder_channels = {6, 12};
    arch.latent_dim = 2 * 2 * 16;  // direct film
    arch.decoder_layers = 2;
    arch.hidden = 16;

    PretrainConfig cfg;
    cfg.supervising_views = 2;
    cfg.rays_per_view = 48;
    cfg.samples_per_ray = 16;
    cfg.batch_size = 2;
    cfg.epochs = 6;
    cfg.lr = 2e-3;
    cfg.heldout_rays = 64;
    cfg.seed = 9;

    gradient_sample_counters().reset();
    std::string out1 = temp_dir("run_out1");
    MetricsLog log1("");
    PretrainResult r1 = run_pretrain(ds, cfg, arch, out1, &log1);
    CHECK(gradient_sample_counters().heldout_view.load() == 0);
    CHECK(gradient_sample_counters().heldout_instance.load() == 0);
    CHECK(gradient_sample_counters().train.load() > 0);

    // learning happened
    Real first = log1.lines().front().at("loss").get<Real>();
    CHECK(r1.final_train_loss < first);
    CHECK(std::isfinite(r1.final_heldout_mask_mse));

    // checkpoints exist and load
    ImplicitModel best = load_checkpoint_expect(r1.checkpoint_best, "pretrained");
    CHECK(best.arch == arch);

    // determinism: identical seeds give identical metric logs
    std::string out2 = temp_dir("run_out2");
    MetricsLog log2("");
    PretrainResult r2 = run_pretrain(ds, cfg, arch, out2, &log2);
    REQUIRE(log1.lines().size() == log2.lines().size());
    for (size_t i = 0; i < log1.lines().size(); ++i) CHECK(log1.lines()[i] == log2.lines()[i]);
    CHECK(r1.final_train_loss == r2.final_train_loss);
}

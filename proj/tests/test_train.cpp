#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sasegan/train.hpp"

using namespace sasegan;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "sasegan_train_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.scale_divisor = 64;  // input 256, 5 layers
    cfg.attention_layers = {11};
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("one epoch on two utterances completes with finite logs") {
    ModelConfig cfg = tiny_config();
    Rng rng = substream(3, "init");
    Generator gen = build_generator(cfg, rng);
    Discriminator disc = build_discriminator(cfg, rng);

    auto dataset = synth_dataset(5, 2, 2 * cfg.effective_input_len(), {5.0});
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 1;
    tcfg.seed = 3;
    tcfg.checkpoint_every = 0;

    TrainResult result = train(gen, disc, dataset, tcfg);
    REQUIRE(!result.log.records.empty());
    // one record per step: steps_per_epoch = pool size with batch 1
    CHECK(result.log.records.size() == 6u);  // 2 utterances x 3 overlap windows
    for (const auto& rec : result.log.records) {
        CHECK(std::isfinite(rec.d_loss));
        CHECK(std::isfinite(rec.g_adv));
        CHECK(std::isfinite(rec.g_l1));
        CHECK(rec.d_loss >= 0.0);
        CHECK(rec.g_adv >= 0.0);
        CHECK(rec.g_l1 >= 0.0);
    }
}

TEST_CASE("beta gains start at exactly zero and stay finite") {
    ModelConfig cfg = tiny_config();
    cfg.attention_layers = {4, 11};
    Rng rng = substream(8, "init");
    Generator gen = build_generator(cfg, rng);
    Discriminator disc = build_discriminator(cfg, rng);

    auto dataset = synth_dataset(6, 2, cfg.effective_input_len(), {5.0});
    TrainConfig tcfg;
    tcfg.batch_size = 2;
    tcfg.max_steps = 5;
    tcfg.seed = 8;
    tcfg.checkpoint_every = 0;

    TrainResult result = train(gen, disc, dataset, tcfg);
    REQUIRE(!result.log.beta_names.empty());
    for (double b : result.log.records.front().betas) CHECK(b == 0.0);
    for (const auto& rec : result.log.records)
        for (double b : rec.betas) CHECK(std::isfinite(b));
}

TEST_CASE("training is deterministic: same seed gives bit-identical checkpoints") {
    auto run = [](const fs::path& dir) {
        ModelConfig cfg = tiny_config();
        Rng rng = substream(21, "init");
        Generator gen = build_generator(cfg, rng);
        Discriminator disc = build_discriminator(cfg, rng);
        auto dataset = synth_dataset(4, 3, 2 * cfg.effective_input_len(), {5.0, 10.0});
        TrainConfig tcfg;
        tcfg.batch_size = 2;
        tcfg.max_steps = 4;
        tcfg.seed = 21;
        tcfg.checkpoint_every = 0;  // only the final checkpoint
        train(gen, disc, dataset, tcfg, dir);
    };
    fs::path d1 = temp_dir("det1"), d2 = temp_dir("det2");
    run(d1);
    run(d2);
    std::string b1 = slurp(d1 / "checkpoint_step000004.sgck");
    std::string b2 = slurp(d2 / "checkpoint_step000004.sgck");
    REQUIRE(!b1.empty());
    REQUIRE(b1 == b2);
}

TEST_CASE("empty dataset is rejected") {
    ModelConfig cfg = tiny_config();
    Rng rng(1);
    Generator gen = build_generator(cfg, rng);
    Discriminator disc = build_discriminator(cfg, rng);
    TrainConfig tcfg;
    CHECK_THROWS_AS(train(gen, disc, {}, tcfg), EmptyDataset);
}

TEST_CASE("updates are isolated: a D step never moves G parameters and vice versa") {
    ModelConfig cfg = tiny_config();
    Rng rng = substream(33, "init");
    Generator gen = build_generator(cfg, rng);
    Discriminator disc = build_discriminator(cfg, rng);
    const int w = cfg.effective_input_len();

    std::vector<double> clean(w), noisy(w);
    Rng sig(7);
    for (int t = 0; t < w; ++t) {
        clean[t] = sig.uniform(-0.5, 0.5);
        noisy[t] = clean[t] + sig.uniform(-0.2, 0.2);
    }
    discriminator_refresh_vbn(disc, {stack_pair(clean, noisy)});

    auto snapshot = [](auto& model) {
        std::vector<double> values;
        for_each_param(model, [&](const std::string&, double* d, size_t n) {
            values.insert(values.end(), d, d + n);
        });
        return values;
    };

    TrainConfig tcfg;
    OptimState opt_d, opt_g;

    // D step
    std::vector<double> g_before = snapshot(gen);
    {
        FeatureMap z = sample_latent(rng, gen.bottleneck_channels());
        std::vector<double> x_hat = generator_forward(gen, noisy, z);
        DiscriminatorGrads grads(disc);
        DiscTape t1, t2;
        double s_real = discriminator_forward(disc, clean, noisy, true, &t1);
        discriminator_backward(disc, t1, s_real - 1.0, grads);
        double s_fake = discriminator_forward(disc, x_hat, noisy, true, &t2);
        discriminator_backward(disc, t2, s_fake, grads);
        detail::apply_rmsprop(detail::param_spans(disc), detail::grad_spans(disc, grads), opt_d,
                              tcfg);
    }
    CHECK(snapshot(gen) == g_before);

    // G step
    std::vector<double> d_before = snapshot(disc);
    {
        FeatureMap z = sample_latent(rng, gen.bottleneck_channels());
        GenTape gtape;
        std::vector<double> x_hat = generator_forward(gen, noisy, z, &gtape);
        DiscTape dtape;
        double s = discriminator_forward(disc, x_hat, noisy, true, &dtape);
        DiscriminatorGrads scratch(disc);
        FeatureMap d_in = discriminator_backward(disc, dtape, s - 1.0, scratch);
        std::vector<double> dout(x_hat.size());
        for (size_t t = 0; t < x_hat.size(); ++t)
            dout[t] = d_in.at(static_cast<int>(t), 0);
        GeneratorGrads grads(gen);
        generator_backward(gen, gtape, dout, grads);
        detail::apply_rmsprop(detail::param_spans(gen), detail::grad_spans(gen, grads), opt_g,
                              tcfg);
    }
    CHECK(snapshot(disc) == d_before);
    CHECK(snapshot(gen) != g_before);
}

TEST_CASE("a discriminator trained alone improves its loss on fixed batches") {
    // Stochastic smoke property: over 10 seeds, the 50-step loss must not
    // exceed the initial loss in at least 9 runs.
    int improved = 0;
    for (int seed = 0; seed < 10; ++seed) {
        ModelConfig cfg;
        cfg.scale_divisor = 64;
        Rng rng = substream(100 + seed, "init");
        Generator gen = build_generator(cfg, rng);
        Discriminator disc = build_discriminator(cfg, rng);
        const int w = cfg.effective_input_len();

        auto dataset = synth_dataset(200 + seed, 2, w, {5.0});
        std::vector<double> clean = preemphasize_segment(dataset[0].clean.samples);
        std::vector<double> noisy = preemphasize_segment(dataset[0].noisy.samples);
        discriminator_refresh_vbn(disc, {stack_pair(clean, noisy)});
        FeatureMap z = sample_latent(rng, gen.bottleneck_channels());
        std::vector<double> x_hat = generator_forward(gen, noisy, z);  // G frozen

        TrainConfig tcfg;
        OptimState opt;
        double first = -1.0, last = -1.0;
        for (int step = 0; step < 50; ++step) {
            refresh_spectral(disc);
            DiscriminatorGrads grads(disc);
            DiscTape t1, t2;
            double s_real = discriminator_forward(disc, clean, noisy, true, &t1);
            discriminator_backward(disc, t1, s_real - 1.0, grads);
            double s_fake = discriminator_forward(disc, x_hat, noisy, true, &t2);
            discriminator_backward(disc, t2, s_fake, grads);
            double loss = d_loss_from_scores({s_real}, {s_fake});
            if (step == 0) first = loss;
            last = loss;
            detail::apply_rmsprop(detail::param_spans(disc), detail::grad_spans(disc, grads), opt,
                                  tcfg);
        }
        if (last <= first) ++improved;
    }
    CHECK(improved >= 9);
}

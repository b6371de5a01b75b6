#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "sasegan/grad_check.hpp"
#include "sasegan/losses.hpp"
#include "sasegan/model.hpp"
#include "sasegan/rng.hpp"
#include "sasegan/train.hpp"

using namespace sasegan;

namespace {

std::vector<double> random_signal(int n, Rng& rng) {
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform(-0.9, 0.9);
    return x;
}

}  // namespace

TEST_CASE("config ladder law") {
    ModelConfig cfg;
    CHECK(cfg.n_layers() == 11);
    CHECK(cfg.effective_input_len() == 16384);
    CHECK(cfg.effective_schedule() == cfg.filter_schedule);

    cfg.scale_divisor = 4;
    CHECK(cfg.effective_input_len() == 4096);
    CHECK(cfg.n_layers() == 9);
    CHECK(cfg.effective_schedule() ==
          std::vector<int>{8, 16, 16, 32, 32, 64, 64, 128, 256});

    cfg.scale_divisor = 32;
    CHECK(cfg.n_layers() == 6);
    CHECK(cfg.effective_schedule() == std::vector<int>{4, 4, 8, 8, 16, 32});

    cfg.scale_divisor = 3;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg.scale_divisor = 1;
    cfg.attention_layers = {12};
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("attention placement clamps into the shrunk ladder") {
    ModelConfig cfg;
    cfg.scale_divisor = 4;  // 9 layers
    cfg.attention_layers = {3, 11};
    CHECK(cfg.effective_attention() == std::vector<int>{3, 9});
}

TEST_CASE("default generator reproduces the encoder shape ladder") {
    ModelConfig cfg;  // full scale
    Rng rng(1);
    Generator g = build_generator(cfg, rng);
    std::vector<double> x = random_signal(16384, rng);
    FeatureMap z = sample_latent(rng, g.bottleneck_channels());

    GenTape tape;
    std::vector<double> out = generator_forward(g, x, z, &tape);
    REQUIRE(out.size() == 16384u);

    const std::vector<std::pair<int, int>> want = {
        {8192, 16}, {4096, 32}, {2048, 32}, {1024, 64}, {512, 64},  {256, 128},
        {128, 128}, {64, 256},  {32, 256},  {16, 512},  {8, 1024},
    };
    REQUIRE(tape.enc_out.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
        CHECK(tape.enc_out[i].rows == want[i].first);
        CHECK(tape.enc_out[i].cols == want[i].second);
    }
}

TEST_CASE("shrunk generator keeps the halving ladder") {
    ModelConfig cfg;
    cfg.scale_divisor = 8;
    Rng rng(2);
    Generator g = build_generator(cfg, rng);
    std::vector<double> x = random_signal(cfg.effective_input_len(), rng);
    FeatureMap z = sample_latent(rng, g.bottleneck_channels());
    GenTape tape;
    std::vector<double> out = generator_forward(g, x, z, &tape);
    REQUIRE(out.size() == static_cast<size_t>(cfg.effective_input_len()));
    auto sched = cfg.effective_schedule();
    for (size_t i = 0; i < tape.enc_out.size(); ++i) {
        CHECK(tape.enc_out[i].rows == cfg.effective_input_len() >> (i + 1));
        CHECK(tape.enc_out[i].cols == sched[i]);
    }
    CHECK(tape.enc_out.back().rows == kBottleneckTime);
}

TEST_CASE("attention does not change any layer shape and adds the closed-form parameters") {
    ModelConfig base;
    base.scale_divisor = 8;  // 8 layers
    Rng rng(3);
    Generator plain = build_generator(base, rng);
    size_t plain_count = parameter_count(plain);

    auto sched = base.effective_schedule();
    const int n = base.n_layers();
    for (int l = 1; l <= n; ++l) {
        if (sched[l - 1] % base.k != 0) continue;
        ModelConfig cfg = base;
        cfg.attention_layers = {l};
        Rng r2(4);
        Generator g = build_generator(cfg, r2);

        // attention parameter count: 4*C^2/k + 1 per attention layer
        auto attn_params = [&](int c) {
            return 4u * static_cast<size_t>(c) * (static_cast<size_t>(c) / base.k) + 1u;
        };
        size_t expected = plain_count + attn_params(sched[l - 1]) +
                          ((l == n) ? attn_params(2 * sched[n - 1]) : attn_params(sched[l - 1]));
        CHECK(parameter_count(g) == expected);

        std::vector<double> x = random_signal(cfg.effective_input_len(), r2);
        FeatureMap z = sample_latent(r2, g.bottleneck_channels());
        GenTape tape;
        std::vector<double> out = generator_forward(g, x, z, &tape);
        REQUIRE(out.size() == static_cast<size_t>(cfg.effective_input_len()));
        for (size_t i = 0; i < tape.enc_out.size(); ++i)
            CHECK(tape.enc_out[i].rows == cfg.effective_input_len() >> (i + 1));
    }
}

TEST_CASE("generator with no attention equals the plain layout") {
    ModelConfig cfg;
    cfg.scale_divisor = 16;
    Rng rng(5);
    Generator g = build_generator(cfg, rng);
    CHECK(!g.bottleneck_attn);
    for (const auto& l : g.enc) CHECK(!l.attn);
    for (const auto& l : g.dec) CHECK(!l.attn);
}

TEST_CASE("zero input and zero latent propagate to zero output") {
    ModelConfig cfg;
    cfg.scale_divisor = 16;
    cfg.attention_layers = {3};
    Rng rng(6);
    Generator g = build_generator(cfg, rng);
    std::vector<double> x(cfg.effective_input_len(), 0.0);
    FeatureMap z(kBottleneckTime, g.bottleneck_channels());
    std::vector<double> out = generator_forward(g, x, z);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("skip connections alone still carry input information") {
    ModelConfig cfg;
    cfg.scale_divisor = 32;
    Rng rng(7);
    Generator g = build_generator(cfg, rng);
    // Sever the through-bottleneck path: zero the kernel block that reads the
    // previous deconv's channels (the first half of each decoder input).
    for (size_t j = 1; j < g.dec.size(); ++j) {
        auto& p = g.dec[j].deconv;
        for (int w = 0; w < p.width; ++w)
            for (int ci = 0; ci < p.in_channels / 2; ++ci)
                for (int co = 0; co < p.out_channels; ++co)
                    p.kernel[(static_cast<size_t>(w) * p.in_channels + ci) * p.out_channels + co] =
                        0.0;
    }
    std::vector<double> x1 = random_signal(cfg.effective_input_len(), rng);
    std::vector<double> x2 = x1;
    for (int t = 0; t < 32; ++t) x2[t] += 0.05;
    FeatureMap z = sample_latent(rng, g.bottleneck_channels());
    std::vector<double> y1 = generator_forward(g, x1, z);
    std::vector<double> y2 = generator_forward(g, x2, z);
    double diff = 0.0;
    for (size_t i = 0; i < y1.size(); ++i) diff += std::abs(y1[i] - y2[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("discriminator final pre-head map is bottleneck-shaped") {
    ModelConfig cfg;
    cfg.scale_divisor = 8;
    Rng rng(8);
    Discriminator d = build_discriminator(cfg, rng);
    std::vector<double> a = random_signal(cfg.effective_input_len(), rng);
    std::vector<double> b = random_signal(cfg.effective_input_len(), rng);
    DiscTape tape;
    discriminator_forward(d, a, b, false, &tape);
    CHECK(tape.reduce_in.rows == kBottleneckTime);
    CHECK(tape.reduce_in.cols == cfg.effective_schedule().back());
    CHECK(tape.flat.rows == kBottleneckTime);
    CHECK(tape.flat.cols == kReduceChannels);
}

TEST_CASE("discriminator is deterministic and order-sensitive") {
    ModelConfig cfg;
    cfg.scale_divisor = 32;
    Rng rng(9);
    Discriminator d = build_discriminator(cfg, rng);
    std::vector<double> a = random_signal(cfg.effective_input_len(), rng);
    std::vector<double> b = random_signal(cfg.effective_input_len(), rng);
    double s1 = discriminator_forward(d, a, b, false);
    double s2 = discriminator_forward(d, a, b, false);
    CHECK(s1 == s2);
    double swapped = discriminator_forward(d, b, a, false);
    CHECK(s1 != swapped);
}

TEST_CASE("sample_latent statistics and reproducibility") {
    Rng rng(10);
    double sum = 0.0, sq = 0.0;
    const long n = 1000000;
    for (long i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);

    Rng a(77), b(77);
    FeatureMap za = sample_latent(a, 16);
    FeatureMap zb = sample_latent(b, 16);
    REQUIRE(za.data == zb.data);
}

TEST_CASE("end-to-end gradients pass spot checks at desk scale") {
    ModelConfig cfg;
    cfg.scale_divisor = 32;
    cfg.attention_layers = {3, 11};
    Rng rng(11);
    Generator gen = build_generator(cfg, rng);
    Discriminator disc = build_discriminator(cfg, rng);
    const int w = cfg.effective_input_len();

    std::vector<double> noisy = random_signal(w, rng);
    std::vector<double> clean = random_signal(w, rng);
    FeatureMap z = sample_latent(rng, gen.bottleneck_channels());

    // reference batch for VBN
    discriminator_refresh_vbn(disc, {stack_pair(clean, noisy)});

    SECTION("discriminator loss vs discriminator parameters") {
        auto loss = [&]() {
            double s_real = discriminator_forward(disc, clean, noisy, true);
            std::vector<double> x_hat = generator_forward(gen, noisy, z);
            double s_fake = discriminator_forward(disc, x_hat, noisy, true);
            return d_loss_from_scores({s_real}, {s_fake});
        };
        DiscriminatorGrads grads(disc);
        {
            DiscTape tape;
            double s_real = discriminator_forward(disc, clean, noisy, true, &tape);
            discriminator_backward(disc, tape, s_real - 1.0, grads);
        }
        {
            DiscTape tape;
            std::vector<double> x_hat = generator_forward(gen, noisy, z);
            double s_fake = discriminator_forward(disc, x_hat, noisy, true, &tape);
            discriminator_backward(disc, tape, s_fake, grads);
        }

        std::vector<double*> coords;
        std::vector<double> analytic;
        Rng pick(12);
        detail::Spans pspans = detail::param_spans(disc);
        detail::Spans gspans = detail::grad_spans(disc, grads);
        for (size_t s = 0; s < pspans.size(); ++s) {
            auto& [pname, pdata, pn] = pspans[s];
            auto& [gname, gdata, gn] = gspans[s];
            for (int c = 0; c < 3; ++c) {
                size_t i = pick.below(pn);
                coords.push_back(pdata + i);
                analytic.push_back(gdata[i]);
            }
        }
        CHECK(grad_check(loss, coords, analytic, 1e-5) < 1e-4);
    }

    SECTION("generator loss vs generator parameters") {
        const double lambda = 100.0;
        auto loss = [&]() {
            std::vector<double> x_hat = generator_forward(gen, noisy, z);
            double s = discriminator_forward(disc, x_hat, noisy, true);
            return g_adv_from_scores({s}) + lambda * l1_term({x_hat}, {clean});
        };
        GeneratorGrads grads(gen);
        {
            GenTape gtape;
            std::vector<double> x_hat = generator_forward(gen, noisy, z, &gtape);
            DiscTape dtape;
            double s = discriminator_forward(disc, x_hat, noisy, true, &dtape);
            DiscriminatorGrads scratch(disc);
            FeatureMap d_in = discriminator_backward(disc, dtape, s - 1.0, scratch);
            std::vector<double> dout(x_hat.size());
            for (size_t t = 0; t < x_hat.size(); ++t) {
                double diff = x_hat[t] - clean[t];
                double sgn = static_cast<double>(diff > 0.0) - static_cast<double>(diff < 0.0);
                dout[t] = d_in.at(static_cast<int>(t), 0) + lambda * sgn / x_hat.size();
            }
            generator_backward(gen, gtape, dout, grads);
        }

        std::vector<double*> coords;
        std::vector<double> analytic;
        Rng pick(13);
        detail::Spans pspans = detail::param_spans(gen);
        detail::Spans gspans = detail::grad_spans(gen, grads);
        for (size_t s = 0; s < pspans.size(); ++s) {
            auto& [pname, pdata, pn] = pspans[s];
            auto& [gname, gdata, gn] = gspans[s];
            for (int c = 0; c < 3; ++c) {
                size_t i = pick.below(pn);
                coords.push_back(pdata + i);
                analytic.push_back(gdata[i]);
            }
        }
        CHECK(grad_check(loss, coords, analytic, 1e-5) < 1e-3);
    }
}

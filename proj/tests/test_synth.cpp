#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sasegan/metrics.hpp"
#include "sasegan/synth.hpp"

using namespace sasegan;

namespace {

double power(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("synth_dataset hits the requested SNR") {
    auto pairs = synth_dataset(123, 4, 16000, {0.0});
    for (const auto& p : pairs) {
        std::vector<double> noise(p.clean.samples.size());
        for (size_t i = 0; i < noise.size(); ++i)
            noise[i] = p.noisy.samples[i] - p.clean.samples[i];
        double measured = 10.0 * std::log10(power(p.clean.samples) / power(noise));
        CHECK(std::abs(measured - 0.0) < 0.1);
    }
}

TEST_CASE("synth_dataset is deterministic") {
    auto a = synth_dataset(99, 3, 8000, {5.0, 10.0});
    auto b = synth_dataset(99, 3, 8000, {5.0, 10.0});
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].snr_db == b[i].snr_db);
        REQUIRE(a[i].clean.samples == b[i].clean.samples);
        REQUIRE(a[i].noisy.samples == b[i].noisy.samples);
    }
    auto c = synth_dataset(100, 3, 8000, {5.0, 10.0});
    CHECK(a[0].noisy.samples != c[0].noisy.samples);
}

TEST_CASE("synth_dataset amplitude bounds hold") {
    auto pairs = synth_dataset(55, 6, 12000, {0.0, 5.0, 15.0});
    for (const auto& p : pairs) {
        REQUIRE(p.clean.samples.size() == p.noisy.samples.size());
        for (double v : p.noisy.samples) REQUIRE(std::abs(v) <= 1.0);
        for (double v : p.clean.samples) REQUIRE(std::abs(v) <= 1.0);
    }
}

TEST_CASE("lower mixing SNR gives lower measured SSNR") {
    // Same clean signal (same per-utterance substream is not possible across
    // SNRs, so compare one utterance mixed at two SNRs by hand).
    auto base = synth_dataset(7, 1, 16000, {10.0})[0];
    std::vector<double> noise(base.clean.samples.size());
    for (size_t i = 0; i < noise.size(); ++i)
        noise[i] = base.noisy.samples[i] - base.clean.samples[i];

    auto make_noisy = [&](double snr_db) {
        double scale = std::sqrt(power(base.clean.samples) /
                                 (power(noise) * std::pow(10.0, snr_db / 10.0)));
        AudioBuffer out;
        out.samples.resize(noise.size());
        for (size_t i = 0; i < noise.size(); ++i)
            out.samples[i] = base.clean.samples[i] + scale * noise[i];
        return out;
    };

    double ssnr10 = ssnr(base.clean, make_noisy(10.0));
    double ssnr20 = ssnr(base.clean, make_noisy(20.0));
    CHECK(ssnr10 < ssnr20);
}

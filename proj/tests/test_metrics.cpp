#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sasegan/metrics.hpp"
#include "sasegan/rng.hpp"
#include "sasegan/synth.hpp"

using namespace sasegan;
namespace fs = std::filesystem;

namespace {

AudioBuffer speechlike(std::uint64_t seed, int len) {
    return synth_dataset(seed, 1, len, {100.0})[0].clean;  // essentially noiseless
}

AudioBuffer mix_at_snr(const AudioBuffer& clean, std::uint64_t seed, double snr_db) {
    Rng rng(seed);
    std::vector<double> noise(clean.samples.size());
    double p_clean = 0.0, p_noise = 0.0;
    for (double v : clean.samples) p_clean += v * v;
    for (auto& v : noise) {
        v = rng.normal();
        p_noise += v * v;
    }
    double scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
    AudioBuffer out;
    out.samples.resize(clean.samples.size());
    for (size_t i = 0; i < noise.size(); ++i) out.samples[i] = clean.samples[i] + scale * noise[i];
    return out;
}

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "sasegan_metric_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("ssnr of a signal against itself is the upper clamp exactly") {
    AudioBuffer x = speechlike(1, 16000);
    CHECK(ssnr(x, x) == 35.0);
}

TEST_CASE("ssnr at a constructed 0 dB per-frame SNR is near 0 dB") {
    // Constant-power construction: clean is a full-scale sine, the error
    // signal is the same sine shifted into quadrature, so every frame has
    // sig/err ratio exactly 1.
    const int n = 16000;
    AudioBuffer clean, test;
    clean.samples.resize(n);
    test.samples.resize(n);
    double w = 2.0 * M_PI * 440.0 / 16000.0;
    for (int t = 0; t < n; ++t) {
        clean.samples[t] = 0.5 * std::sin(w * t);
        test.samples[t] = clean.samples[t] - 0.5 * std::cos(w * t);
    }
    CHECK(std::abs(ssnr(clean, test)) < 0.5);
}

TEST_CASE("ssnr is scale covariant") {
    AudioBuffer clean = speechlike(2, 16000);
    AudioBuffer noisy = mix_at_snr(clean, 3, 8.0);
    double base = ssnr(clean, noisy);
    AudioBuffer clean2 = clean, noisy2 = noisy;
    for (auto& v : clean2.samples) v *= 0.25;
    for (auto& v : noisy2.samples) v *= 0.25;
    CHECK(ssnr(clean2, noisy2) == Catch::Approx(base).margin(1e-9));
}

TEST_CASE("ssnr errors") {
    AudioBuffer a = speechlike(4, 16000);
    AudioBuffer b = speechlike(4, 8000);
    CHECK_THROWS_AS(ssnr(a, b), LengthMismatch);

    AudioBuffer silent;
    silent.samples.assign(16000, 0.0);
    CHECK_THROWS_AS(ssnr(silent, silent), AllSilent);
}

TEST_CASE("ssnr tracks the mixing SNR ordering") {
    AudioBuffer clean = speechlike(5, 32000);
    double prev = 1e9;
    for (double snr : {20.0, 15.0, 10.0, 5.0, 0.0}) {
        double v = ssnr(clean, mix_at_snr(clean, 6, snr));
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("stoi of a signal against itself is 1") {
    AudioBuffer x = speechlike(7, 16000);
    CHECK(stoi(x, x) >= 1.0 - 1e-6);
}

TEST_CASE("stoi of independent white noise is low") {
    AudioBuffer clean = speechlike(8, 16000);
    Rng rng(9);
    AudioBuffer noise;
    noise.samples.resize(clean.samples.size());
    for (auto& v : noise.samples) v = 0.2 * rng.normal();
    CHECK(stoi(clean, noise) < 0.3);
}

TEST_CASE("stoi decreases monotonically as SNR drops") {
    AudioBuffer clean = speechlike(10, 32000);
    double prev = 2.0;
    for (double snr : {20.0, 10.0, 0.0, -10.0}) {
        double v = stoi(clean, mix_at_snr(clean, 11, snr));
        CHECK(v <= prev + 1e-9);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        prev = v;
    }
}

TEST_CASE("stoi rejects too-short and mismatched inputs") {
    AudioBuffer shorty = speechlike(12, 3000);  // < 0.4 s at 16 kHz
    CHECK_THROWS_AS(stoi(shorty, shorty), TooShort);

    AudioBuffer a = speechlike(13, 16000);
    AudioBuffer b = speechlike(13, 16001);
    CHECK_THROWS_AS(stoi(a, b), LengthMismatch);
}

TEST_CASE("evaluate_corpus aggregates and writes the report") {
    fs::path dir = temp_dir("corpus");
    AudioBuffer u0 = speechlike(14, 16000);
    AudioBuffer u1 = speechlike(15, 16000);
    AudioBuffer n1 = mix_at_snr(u1, 16, 5.0);
    write_wav(dir / "u0_clean.wav", u0);
    write_wav(dir / "u0_test.wav", u0);
    write_wav(dir / "u1_clean.wav", u1);
    write_wav(dir / "u1_test.wav", n1);

    MetricReport report = evaluate_corpus({
        {"u1", dir / "u1_clean.wav", dir / "u1_test.wav"},
        {"u0", dir / "u0_clean.wav", dir / "u0_test.wav"},
    });
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].id == "u0");  // sorted by id
    CHECK(report.rows[0].ssnr_db == 35.0);
    CHECK(report.rows[0].stoi >= 1.0 - 1e-6);
    CHECK(report.mean_ssnr ==
          Catch::Approx((report.rows[0].ssnr_db + report.rows[1].ssnr_db) / 2.0).margin(1e-12));
    CHECK(report.mean_stoi ==
          Catch::Approx((report.rows[0].stoi + report.rows[1].stoi) / 2.0).margin(1e-12));

    fs::path csv = dir / "report.csv";
    report.write_csv(csv);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "id,ssnr_db,stoi");
    std::getline(in, line);
    CHECK(line.rfind("u0,35.0000,", 0) == 0);
    std::getline(in, line);
    std::getline(in, line);
    CHECK(line.rfind("MEAN,", 0) == 0);
}

TEST_CASE("single identical pair gives means (35, 1)") {
    fs::path dir = temp_dir("identical");
    AudioBuffer u = speechlike(17, 16000);
    write_wav(dir / "c.wav", u);
    write_wav(dir / "t.wav", u);
    MetricReport report = evaluate_corpus({{"c", dir / "c.wav", dir / "t.wav"}});
    CHECK(report.mean_ssnr == 35.0);
    CHECK(report.mean_stoi >= 1.0 - 1e-6);
}

TEST_CASE("per-file errors carry the utterance id") {
    fs::path dir = temp_dir("errs");
    AudioBuffer u = speechlike(18, 16000);
    write_wav(dir / "good.wav", u);
    try {
        evaluate_corpus({{"bad", dir / "missing.wav", dir / "good.wav"}});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
}

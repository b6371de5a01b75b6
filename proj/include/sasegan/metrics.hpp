#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sasegan/audio.hpp"
#include "sasegan/errors.hpp"

namespace sasegan {

// ---------------------------------------------------------------------------
// Segmental SNR: 30 ms frames (480 samples at 16 kHz) with 75% overlap,
// per-frame dB clamped to [-10, 35], averaged over frames whose clean
// energy exceeds the silence threshold.

constexpr int kSsnrFrame = 480;
constexpr int kSsnrHop = 120;
constexpr double kSsnrFloorDb = -10.0;
constexpr double kSsnrCeilDb = 35.0;
constexpr double kSilenceEnergy = 1e-8;

inline double ssnr(const AudioBuffer& clean, const AudioBuffer& test) {
    if (clean.samples.size() != test.samples.size())
        throw LengthMismatch("ssnr: signals have different lengths");
    const auto& x = clean.samples;
    const auto& y = test.samples;
    double total = 0.0;
    long frames = 0;
    for (size_t start = 0; start + kSsnrFrame <= x.size(); start += kSsnrHop) {
        double sig = 0.0, err = 0.0;
        for (int i = 0; i < kSsnrFrame; ++i) {
            double xs = x[start + i];
            double d = xs - y[start + i];
            sig += xs * xs;
            err += d * d;
        }
        if (sig <= kSilenceEnergy) continue;
        double db = (err == 0.0) ? kSsnrCeilDb : 10.0 * std::log10(sig / err);
        total += std::clamp(db, kSsnrFloorDb, kSsnrCeilDb);
        ++frames;
    }
    if (frames == 0) throw AllSilent("ssnr: no frame with non-silent clean energy");
    return total / static_cast<double>(frames);
}

// ---------------------------------------------------------------------------
// STOI (short-time objective intelligibility): 10 kHz internal rate,
// 25.6 ms Hann frames with 50% overlap, 15 one-third-octave bands from
// 150 Hz, 384 ms envelope segments, clipped normalized correlation.

namespace stoi_detail {

constexpr int kFs = 10000;
constexpr int kFrame = 256;
constexpr int kHop = 128;
constexpr int kFft = 512;
constexpr int kBands = 15;
constexpr double kFirstBand = 150.0;
constexpr int kSegFrames = 30;         // 30 * 12.8 ms = 384 ms
constexpr double kDynRangeDb = 40.0;   // silent-frame removal threshold
constexpr double kClipDb = -15.0;      // sdr lower bound

inline double bessel_i0(double x) {
    double term = 1.0, sum = 1.0;
    double half = x / 2.0;
    for (int k = 1; k < 64; ++k) {
        term *= (half / k) * (half / k);
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return sum;
}

/// Polyphase rational resampler (Kaiser-windowed sinc, beta 5, 10 zero
/// crossings per side relative to the wider of up/down).
inline std::vector<double> resample_poly(const std::vector<double>& x, int up, int down) {
    const int half = 10 * std::max(up, down);
    const int taps = 2 * half + 1;
    const double cutoff = 1.0 / std::max(up, down);  // in upsampled Nyquist units
    const double beta = 5.0;
    std::vector<double> h(taps);
    const double denom = bessel_i0(beta);
    for (int i = 0; i < taps; ++i) {
        double t = i - half;
        double sinc = (t == 0.0) ? 1.0 : std::sin(M_PI * cutoff * t) / (M_PI * cutoff * t);
        double r = t / half;
        double w = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
        h[i] = up * cutoff * sinc * w;
    }
    const long n_in = static_cast<long>(x.size());
    const long n_out = (n_in * up + down - 1) / down;
    std::vector<double> out(n_out, 0.0);
    for (long m = 0; m < n_out; ++m) {
        long j = m * down;  // position in the upsampled stream, center-aligned
        double acc = 0.0;
        for (int k = 0; k < taps; ++k) {
            long pos = j - k + half;
            if (pos < 0 || pos % up != 0) continue;
            long t = pos / up;
            if (t >= n_in) continue;
            acc += h[k] * x[t];
        }
        out[m] = acc;
    }
    return out;
}

inline std::vector<double> hann_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
    return w;
}

/// In-place iterative radix-2 FFT.
inline void fft(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * M_PI / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

/// Removes frames whose windowed clean energy is more than 40 dB below the
/// loudest frame, from both signals, and reconstructs by overlap-add.
inline void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
    const std::vector<double> w = hann_window(kFrame);
    const long n_frames = (static_cast<long>(x.size()) - kFrame) / kHop + 1;
    if (n_frames < 1) throw TooShort("stoi: signal shorter than one analysis frame");

    std::vector<double> energy_db(n_frames);
    double best = -1e30;
    for (long m = 0; m < n_frames; ++m) {
        double e = 0.0;
        for (int i = 0; i < kFrame; ++i) {
            double v = w[i] * x[m * kHop + i];
            e += v * v;
        }
        energy_db[m] = 10.0 * std::log10(e + 1e-300);
        best = std::max(best, energy_db[m]);
    }
    std::vector<long> keep;
    for (long m = 0; m < n_frames; ++m)
        if (energy_db[m] > best - kDynRangeDb) keep.push_back(m);

    const size_t out_len = (keep.empty() ? 0 : (keep.size() - 1) * kHop + kFrame);
    std::vector<double> xs(out_len, 0.0), ys(out_len, 0.0);
    for (size_t i = 0; i < keep.size(); ++i) {
        const long src = keep[i] * kHop;
        const size_t dst = i * kHop;
        for (int t = 0; t < kFrame; ++t) {
            xs[dst + t] += w[t] * x[src + t];
            ys[dst + t] += w[t] * y[src + t];
        }
    }
    x = std::move(xs);
    y = std::move(ys);
}

/// Band energies per frame: rows = frames, cols = bands.
inline std::vector<std::vector<double>> band_envelope(const std::vector<double>& sig) {
    const std::vector<double> w = hann_window(kFrame);
    const long n_frames = (static_cast<long>(sig.size()) - kFrame) / kHop + 1;

    // One-third-octave band edges mapped to nearest FFT bins.
    static const auto bins = [] {
        std::array<std::pair<int, int>, kBands> ranges{};
        for (int j = 0; j < kBands; ++j) {
            double cf = kFirstBand * std::pow(2.0, j / 3.0);
            double lo = cf * std::pow(2.0, -1.0 / 6.0);
            double hi = cf * std::pow(2.0, 1.0 / 6.0);
            auto nearest = [](double f) {
                double best = 1e30;
                int arg = 0;
                for (int k = 0; k <= kFft / 2; ++k) {
                    double fk = static_cast<double>(k) * kFs / kFft;
                    if (std::abs(fk - f) < best) {
                        best = std::abs(fk - f);
                        arg = k;
                    }
                }
                return arg;
            };
            ranges[j] = {nearest(lo), nearest(hi)};
        }
        return ranges;
    }();

    std::vector<std::vector<double>> env(n_frames, std::vector<double>(kBands, 0.0));
    std::vector<std::complex<double>> buf(kFft);
    for (long m = 0; m < n_frames; ++m) {
        for (int i = 0; i < kFft; ++i)
            buf[i] = (i < kFrame) ? std::complex<double>(w[i] * sig[m * kHop + i], 0.0)
                                  : std::complex<double>(0.0, 0.0);
        fft(buf);
        for (int j = 0; j < kBands; ++j) {
            double acc = 0.0;
            for (int k = bins[j].first; k < bins[j].second; ++k) acc += std::norm(buf[k]);
            env[m][j] = std::sqrt(acc);
        }
    }
    return env;
}

}  // namespace stoi_detail

inline double stoi(const AudioBuffer& clean, const AudioBuffer& test) {
    namespace sd = stoi_detail;
    if (clean.samples.size() != test.samples.size())
        throw LengthMismatch("stoi: signals have different lengths");

    std::vector<double> x = sd::resample_poly(clean.samples, 5, 8);  // 16 kHz -> 10 kHz
    std::vector<double> y = sd::resample_poly(test.samples, 5, 8);
    sd::remove_silent_frames(x, y);
    if (static_cast<long>(x.size()) < (sd::kSegFrames - 1) * sd::kHop + sd::kFrame)
        throw TooShort("stoi: fewer than 30 analysis frames after silence removal");

    auto ex = sd::band_envelope(x);
    auto ey = sd::band_envelope(y);
    const long n_frames = static_cast<long>(ex.size());
    const double clip = 1.0 + std::pow(10.0, -sd::kClipDb / 20.0);

    double total = 0.0;
    long cells = 0;
    std::vector<double> xs(sd::kSegFrames), ys(sd::kSegFrames);
    for (long m = sd::kSegFrames; m <= n_frames; ++m) {
        for (int j = 0; j < sd::kBands; ++j) {
            double nx = 0.0, ny = 0.0;
            for (int t = 0; t < sd::kSegFrames; ++t) {
                xs[t] = ex[m - sd::kSegFrames + t][j];
                ys[t] = ey[m - sd::kSegFrames + t][j];
                nx += xs[t] * xs[t];
                ny += ys[t] * ys[t];
            }
            double alpha = std::sqrt(nx) / (std::sqrt(ny) + 1e-30);
            double mx = 0.0, my = 0.0;
            for (int t = 0; t < sd::kSegFrames; ++t) {
                ys[t] = std::min(alpha * ys[t], clip * xs[t]);
                mx += xs[t];
                my += ys[t];
            }
            mx /= sd::kSegFrames;
            my /= sd::kSegFrames;
            double num = 0.0, vx = 0.0, vy = 0.0;
            for (int t = 0; t < sd::kSegFrames; ++t) {
                num += (xs[t] - mx) * (ys[t] - my);
                vx += (xs[t] - mx) * (xs[t] - mx);
                vy += (ys[t] - my) * (ys[t] - my);
            }
            // A constant clean envelope carries no correlation information;
            // skip the cell rather than divide by zero.
            if (vx <= 1e-20 * std::max(1.0, nx)) continue;
            double d = (vy <= 0.0) ? 0.0 : num / std::sqrt(vx * vy);
            total += d;
            ++cells;
        }
    }
    if (cells == 0) return 1.0;  // degenerate constant signals, nothing to compare
    return std::clamp(total / static_cast<double>(cells), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Corpus-level aggregation

struct MetricRow {
    std::string id;
    double ssnr_db = 0.0;
    double stoi = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;  // sorted by id
    double mean_ssnr = 0.0;
    double mean_stoi = 0.0;

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoFailure("cannot write report: " + path.string());
        out << "id,ssnr_db,stoi\n";
        char line[160];
        for (const auto& r : rows) {
            std::snprintf(line, sizeof(line), "%s,%.4f,%.4f\n", r.id.c_str(), r.ssnr_db, r.stoi);
            out << line;
        }
        std::snprintf(line, sizeof(line), "MEAN,%.4f,%.4f\n", mean_ssnr, mean_stoi);
        out << line;
    }
};

struct CorpusPair {
    std::string id;
    std::filesystem::path clean;
    std::filesystem::path test;
};

inline MetricReport evaluate_corpus(std::vector<CorpusPair> pairs) {
    if (pairs.empty()) throw EmptyDataset("evaluate_corpus: no pairs");
    std::sort(pairs.begin(), pairs.end(),
              [](const CorpusPair& a, const CorpusPair& b) { return a.id < b.id; });
    MetricReport report;
    for (const auto& p : pairs) {
        try {
            AudioBuffer clean = read_wav(p.clean);
            AudioBuffer test = read_wav(p.test);
            MetricRow row;
            row.id = p.id;
            row.ssnr_db = ssnr(clean, test);
            row.stoi = stoi(clean, test);
            report.rows.push_back(row);
        } catch (const Error& e) {
            throw Error("utterance '" + p.id + "': " + e.what());
        }
    }
    for (const auto& r : report.rows) {
        report.mean_ssnr += r.ssnr_db;
        report.mean_stoi += r.stoi;
    }
    report.mean_ssnr /= static_cast<double>(report.rows.size());
    report.mean_stoi /= static_cast<double>(report.rows.size());
    return report;
}

}  // namespace sasegan

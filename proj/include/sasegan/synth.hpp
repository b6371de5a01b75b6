#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sasegan/audio.hpp"
#include "sasegan/rng.hpp"

namespace sasegan {

/// Aligned clean/noisy utterance pair; snr_db records the mixing SNR.
struct UtterancePair {
    AudioBuffer clean;
    AudioBuffer noisy;
    double snr_db = 0.0;
};

namespace detail {

inline double mean_power(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

}  // namespace detail

/// Deterministic stand-in corpus: each clean utterance is a mixture of 3-8
/// sinusoids with random frequencies in the 80-4000 Hz band and slowly
/// varying amplitude envelopes; noise is white Gaussian scaled to hit the
/// requested SNR exactly. Pure function of its arguments.
inline std::vector<UtterancePair> synth_dataset(std::uint64_t seed, int n_utterances,
                                                int utterance_len,
                                                const std::vector<double>& snrs_db) {
    if (n_utterances < 1) throw Error("synth_dataset: n_utterances must be >= 1");
    if (utterance_len < 1) throw Error("synth_dataset: utterance_len must be >= 1");
    if (snrs_db.empty()) throw Error("synth_dataset: snrs_db must be non-empty");

    std::vector<UtterancePair> pairs;
    pairs.reserve(n_utterances);
    for (int u = 0; u < n_utterances; ++u) {
        Rng rng = substream(seed, "synth:" + std::to_string(u));
        int n_tones = 3 + static_cast<int>(rng.below(6));  // 3..8

        std::vector<double> clean(utterance_len, 0.0);
        for (int tone = 0; tone < n_tones; ++tone) {
            double freq = rng.uniform(80.0, 4000.0);
            double phase = rng.uniform(0.0, 2.0 * M_PI);
            double amp = rng.uniform(0.2, 1.0);
            // Envelope: raised cosine at a random sub-8 Hz modulation rate,
            // so utterances have speech-like energy bursts.
            double env_freq = rng.uniform(0.5, 8.0);
            double env_phase = rng.uniform(0.0, 2.0 * M_PI);
            double w = 2.0 * M_PI * freq / kSampleRate;
            double we = 2.0 * M_PI * env_freq / kSampleRate;
            for (int t = 0; t < utterance_len; ++t) {
                double env = 0.5 * (1.0 + std::cos(we * t + env_phase));
                clean[t] += amp * env * std::sin(w * t + phase);
            }
        }
        // Normalize clean to a modest peak so additive noise rarely clips.
        double peak = 0.0;
        for (double v : clean) peak = std::max(peak, std::abs(v));
        if (peak > 0.0)
            for (double& v : clean) v *= 0.4 / peak;

        double snr = snrs_db[u % snrs_db.size()];
        double p_clean = detail::mean_power(clean);
        double p_noise_target = p_clean / std::pow(10.0, snr / 10.0);

        std::vector<double> noise(utterance_len);
        for (double& v : noise) v = rng.normal();
        double p_noise = detail::mean_power(noise);
        double scale = (p_noise > 0.0) ? std::sqrt(p_noise_target / p_noise) : 0.0;

        UtterancePair pair;
        pair.snr_db = snr;
        pair.clean.samples = clean;
        pair.noisy.samples.resize(utterance_len);
        for (int t = 0; t < utterance_len; ++t)
            pair.noisy.samples[t] = clean[t] + scale * noise[t];

        // If the mixture still clips, rescale BOTH signals by the same factor;
        // the clean/noise power ratio is unchanged.
        double noisy_peak = 0.0;
        for (double v : pair.noisy.samples) noisy_peak = std::max(noisy_peak, std::abs(v));
        if (noisy_peak > 0.99) {
            double s = 0.99 / noisy_peak;
            for (double& v : pair.noisy.samples) v *= s;
            for (double& v : pair.clean.samples) v *= s;
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

}  // namespace sasegan

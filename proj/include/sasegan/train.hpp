#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include "sasegan/audio.hpp"
#include "sasegan/checkpoint.hpp"
#include "sasegan/losses.hpp"
#include "sasegan/model.hpp"
#include "sasegan/optim.hpp"
#include "sasegan/rng.hpp"
#include "sasegan/synth.hpp"
#include "sasegan/train_config.hpp"

namespace sasegan {

struct TrainRecord {
    int step = 0;
    double d_loss = 0.0;
    double g_adv = 0.0;
    double g_l1 = 0.0;          // lambda-weighted L1 term
    std::vector<double> betas;  // attention shortcut gains at step start
};

struct TrainLog {
    std::vector<std::string> beta_names;
    std::vector<TrainRecord> records;

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoFailure("cannot write train log: " + path.string());
        out << "step,d_loss,g_adv,g_l1";
        for (size_t i = 0; i < beta_names.size(); ++i) out << ",beta_" << i;
        out << "\n";
        out.precision(12);
        for (const auto& r : records) {
            out << r.step << ',' << r.d_loss << ',' << r.g_adv << ',' << r.g_l1;
            for (double b : r.betas) out << ',' << b;
            out << "\n";
        }
    }
};

namespace detail {

struct SegmentPair {
    std::vector<double> clean;
    std::vector<double> noisy;
};

/// Cuts every utterance into 50%-overlap training windows and preemphasizes
/// each segment (clean and noisy identically).
inline std::vector<SegmentPair> build_segment_pool(const std::vector<UtterancePair>& dataset,
                                                   int window) {
    std::vector<SegmentPair> pool;
    for (const auto& pair : dataset) {
        if (pair.clean.samples.size() != pair.noisy.samples.size())
            throw LengthMismatch("training pair with unequal clean/noisy lengths");
        SegmentBatch cb = segment_for_training(pair.clean, window);
        SegmentBatch nb = segment_for_training(pair.noisy, window);
        for (size_t s = 0; s < cb.segments.size(); ++s) {
            SegmentPair sp;
            sp.clean = preemphasize_segment(cb.segments[s]);
            sp.noisy = preemphasize_segment(nb.segments[s]);
            pool.push_back(std::move(sp));
        }
    }
    return pool;
}

inline std::vector<double> collect_betas(Generator& g, Discriminator& d,
                                         std::vector<std::string>* names = nullptr) {
    std::vector<double> betas;
    auto grab = [&](const std::string& name, double* data, size_t n) {
        bool is_beta = n == 1 && name.size() > 5 && name.compare(name.size() - 5, 5, ".beta") == 0;
        bool is_attn = name.find("attn.") != std::string::npos;
        if (is_beta && is_attn) {
            betas.push_back(*data);
            if (names) names->push_back(name);
        }
    };
    for_each_param(g, grab);
    for_each_param(d, grab);
    return betas;
}

using Spans = std::vector<std::tuple<std::string, double*, size_t>>;

template <typename Model>
Spans param_spans(Model& m) {
    Spans spans;
    for_each_param(m, [&](const std::string& name, double* data, size_t n) {
        spans.emplace_back(name, data, n);
    });
    return spans;
}

template <typename Model, typename Grads>
Spans grad_spans(const Model& m, Grads& grads) {
    Spans spans;
    for_each_grad(m, grads, [&](const std::string& name, double* data, size_t n) {
        spans.emplace_back(name, data, n);
    });
    return spans;
}

/// Parameter and gradient traversals emit identical (name, length) sequences;
/// apply one RMSprop step across them.
inline void apply_rmsprop(const Spans& params, const Spans& grads, OptimState& state,
                          const TrainConfig& tcfg) {
    if (params.size() != grads.size()) throw ShapeMismatch("parameter/gradient span mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [pname, pdata, pn] = params[i];
        const auto& [gname, gdata, gn] = grads[i];
        if (pname != gname || pn != gn)
            throw ShapeMismatch("parameter/gradient traversal diverged at " + pname);
        rmsprop_step(pname, pdata, gdata, pn, state, tcfg.lr, tcfg.rmsprop_decay,
                     tcfg.rmsprop_eps);
    }
}

}  // namespace detail

struct TrainResult {
    Checkpoint checkpoint;
    TrainLog log;
    std::vector<std::filesystem::path> checkpoint_paths;
};

/// Alternating least-squares GAN training: per minibatch, one D update on
/// the real/fake pairs, then one G update on the adversarial + L1 objective.
/// Deterministic given the seed. Pass an empty out_dir to skip checkpoint
/// files.
inline TrainResult train(Generator& gen, Discriminator& disc,
                         const std::vector<UtterancePair>& dataset, const TrainConfig& tcfg,
                         const std::filesystem::path& out_dir = {}) {
    tcfg.validate();
    if (dataset.empty()) throw EmptyDataset("train: dataset is empty");
    const int window = gen.cfg.effective_input_len();
    const double lambda = tcfg.lambda_l1;

    std::vector<detail::SegmentPair> pool = detail::build_segment_pool(dataset, window);
    const int b = std::min<int>(tcfg.batch_size, static_cast<int>(pool.size()));

    Rng data_rng = substream(tcfg.seed, "data");
    Rng latent_rng = substream(tcfg.seed, "latent");

    // Reference batch for virtual batch norm: the first minibatch's real
    // pairs, fixed for the whole run.
    std::vector<FeatureMap> ref_batch;
    for (int i = 0; i < b; ++i)
        ref_batch.push_back(stack_pair(pool[i % pool.size()].clean, pool[i % pool.size()].noisy));

    TrainResult result;
    detail::collect_betas(gen, disc, &result.log.beta_names);

    OptimState opt_g, opt_d;
    const detail::Spans gen_params = detail::param_spans(gen);
    const detail::Spans disc_params = detail::param_spans(disc);

    const long steps_per_epoch = std::max<long>(1, static_cast<long>(pool.size()) / b);
    const long total_steps = (tcfg.max_steps > 0)
                                 ? static_cast<long>(tcfg.max_steps)
                                 : static_cast<long>(tcfg.epochs) * steps_per_epoch;

    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // forces a shuffle before the first batch

    auto next_batch = [&]() {
        std::vector<size_t> idx(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            if (cursor >= order.size()) {
                // Fisher-Yates reshuffle per epoch, seeded from the data stream.
                for (size_t j = order.size(); j > 1; --j)
                    std::swap(order[j - 1], order[data_rng.below(j)]);
                cursor = 0;
            }
            idx[static_cast<size_t>(i)] = order[cursor++];
        }
        return idx;
    };

    DiscriminatorGrads d_scratch(disc);  // reused in the G step, never read

    for (long step = 1; step <= total_steps; ++step) {
        std::vector<size_t> batch = next_batch();

        TrainRecord rec;
        rec.step = static_cast<int>(step);
        rec.betas = detail::collect_betas(gen, disc);

        refresh_spectral(gen);
        refresh_spectral(disc);
        discriminator_refresh_vbn(disc, ref_batch);

        // ---- D update -----------------------------------------------------
        std::vector<std::vector<double>> x_hat(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            FeatureMap z = sample_latent(latent_rng, gen.bottleneck_channels());
            x_hat[i] = generator_forward(gen, pool[batch[i]].noisy, z);
        }
        DiscriminatorGrads d_grads(disc);
        std::vector<double> real_scores(b), fake_scores(b);
        for (int i = 0; i < b; ++i) {
            DiscTape tape;
            real_scores[i] = discriminator_forward(disc, pool[batch[i]].clean,
                                                   pool[batch[i]].noisy, true, &tape);
            discriminator_backward(disc, tape, (real_scores[i] - 1.0) / b, d_grads);
        }
        for (int i = 0; i < b; ++i) {
            DiscTape tape;
            fake_scores[i] =
                discriminator_forward(disc, x_hat[i], pool[batch[i]].noisy, true, &tape);
            discriminator_backward(disc, tape, fake_scores[i] / b, d_grads);
        }
        rec.d_loss = d_loss_from_scores(real_scores, fake_scores);
        detail::apply_rmsprop(disc_params, detail::grad_spans(disc, d_grads), opt_d, tcfg);

        // ---- G update -----------------------------------------------------
        GeneratorGrads g_grads(gen);
        std::vector<double> g_scores(b);
        double l1_sum = 0.0;
        for (int i = 0; i < b; ++i) {
            const auto& clean = pool[batch[i]].clean;
            const auto& noisy = pool[batch[i]].noisy;
            FeatureMap z = sample_latent(latent_rng, gen.bottleneck_channels());
            GenTape gtape;
            std::vector<double> out = generator_forward(gen, noisy, z, &gtape);
            DiscTape dtape;
            g_scores[i] = discriminator_forward(disc, out, noisy, true, &dtape);
            FeatureMap d_in = discriminator_backward(disc, dtape, (g_scores[i] - 1.0) / b,
                                                     d_scratch);

            std::vector<double> dout(out.size());
            double seg_l1 = 0.0;
            const double wlen = static_cast<double>(out.size());
            for (size_t t = 0; t < out.size(); ++t) {
                double diff = out[t] - clean[t];
                seg_l1 += std::abs(diff);
                double sgn = static_cast<double>(diff > 0.0) - static_cast<double>(diff < 0.0);
                dout[t] = d_in.at(static_cast<int>(t), 0) + lambda * sgn / (b * wlen);
            }
            l1_sum += seg_l1 / wlen;
            generator_backward(gen, gtape, dout, g_grads);
        }
        rec.g_adv = g_adv_from_scores(g_scores);
        rec.g_l1 = lambda * l1_sum / b;
        detail::apply_rmsprop(gen_params, detail::grad_spans(gen, g_grads), opt_g, tcfg);

        bool finite =
            std::isfinite(rec.d_loss) && std::isfinite(rec.g_adv) && std::isfinite(rec.g_l1);
        for (double bb : rec.betas) finite = finite && std::isfinite(bb);
        result.log.records.push_back(rec);
        if (!finite)
            throw DivergedLoss("non-finite loss at step " + std::to_string(step) +
                               ": d_loss=" + std::to_string(rec.d_loss) +
                               " g_adv=" + std::to_string(rec.g_adv) +
                               " g_l1=" + std::to_string(rec.g_l1));

        bool at_checkpoint = !out_dir.empty() &&
                             ((tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0) ||
                              step == total_steps);
        if (at_checkpoint) {
            Checkpoint ck;
            ck.cfg = gen.cfg;
            ck.tcfg = tcfg;
            ck.seed = tcfg.seed;
            ck.step = step;
            ck.gen = gen;
            ck.disc = disc;
            ck.opt_g = opt_g;
            ck.opt_d = opt_d;
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_step%06ld.sgck", step);
            std::filesystem::path p = out_dir / name;
            save_checkpoint(p, ck);
            result.checkpoint_paths.push_back(p);
        }
    }

    result.checkpoint.cfg = gen.cfg;
    result.checkpoint.tcfg = tcfg;
    result.checkpoint.seed = tcfg.seed;
    result.checkpoint.step = total_steps;
    result.checkpoint.gen = gen;
    result.checkpoint.disc = disc;
    result.checkpoint.opt_g = std::move(opt_g);
    result.checkpoint.opt_d = std::move(opt_d);
    return result;
}

/// Full inference pipeline for one utterance: segment without overlap,
/// preemphasize, enhance, deemphasize, concatenate. Latents come from the
/// given stream, one draw per segment.
inline AudioBuffer enhance_utterance(const Generator& gen, const AudioBuffer& noisy,
                                     Rng& latent_rng) {
    const int window = gen.cfg.effective_input_len();
    SegmentBatch batch = segment_for_inference(noisy, window);
    SegmentBatch out_batch;
    out_batch.window = batch.window;
    out_batch.pad_len = batch.pad_len;
    for (const auto& seg : batch.segments) {
        std::vector<double> pre = preemphasize_segment(seg);
        FeatureMap z = sample_latent(latent_rng, gen.bottleneck_channels());
        std::vector<double> enhanced = generator_forward(gen, pre, z);
        out_batch.segments.push_back(deemphasize_segment(enhanced));
    }
    return reconstruct(out_batch);
}

}  // namespace sasegan

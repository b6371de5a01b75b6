// Command-line entry points for the speech-enhancement GAN: train, enhance,
// evaluate, attention-dump, mem-profile, synth-data.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sasegan/attention.hpp"
#include "sasegan/audio.hpp"
#include "sasegan/checkpoint.hpp"
#include "sasegan/metrics.hpp"
#include "sasegan/model.hpp"
#include "sasegan/synth.hpp"
#include "sasegan/train.hpp"

namespace fs = std::filesystem;
using namespace sasegan;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::string timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

/// Flat key=value run manifest, one per command invocation, written next to
/// the outputs.
struct Manifest {
    std::vector<std::pair<std::string, std::string>> entries;

    void put(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
    void put(const std::string& key, double value) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.12g", value);
        entries.emplace_back(key, buf);
    }
    void put(const std::string& key, long long value) { entries.emplace_back(key, std::to_string(value)); }

    void write(const fs::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoFailure("cannot write manifest: " + path.string());
        for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
    }
};

std::vector<int> parse_attention_layers(const std::string& text) {
    if (text == "none" || text.empty()) return {};
    if (text == "all") return {3, 4, 5, 6, 7, 8, 9, 10, 11};
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        size_t pos = 0;
        int v = std::stoi(item, &pos);
        if (pos != item.size()) throw InvalidConfig("bad attention layer list entry: " + item);
        out.push_back(v);
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::string join_paths(const std::vector<fs::path>& paths) {
    std::string out;
    for (const auto& p : paths) {
        if (!out.empty()) out += ";";
        out += p.string();
    }
    return out;
}

/// Pairs clean/<id>.wav with noisy/<id>.wav by identical stem.
std::vector<UtterancePair> load_dataset_dir(const fs::path& dir, std::vector<std::string>* ids) {
    fs::path clean_dir = dir / "clean";
    fs::path noisy_dir = dir / "noisy";
    if (!fs::is_directory(clean_dir) || !fs::is_directory(noisy_dir))
        throw InvalidConfig("dataset directory must contain clean/ and noisy/: " + dir.string());
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(clean_dir))
        if (e.path().extension() == ".wav") stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw EmptyDataset("no wav files under " + clean_dir.string());
    std::vector<UtterancePair> pairs;
    for (const auto& stem : stems) {
        fs::path noisy = noisy_dir / (stem + ".wav");
        if (!fs::exists(noisy))
            throw InvalidConfig("unpaired utterance '" + stem + "': missing " + noisy.string());
        UtterancePair p;
        p.clean = read_wav(clean_dir / (stem + ".wav"));
        p.noisy = read_wav(noisy);
        pairs.push_back(std::move(p));
        if (ids) ids->push_back(stem);
    }
    return pairs;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data_dir;
    bool synthetic = false;
    int synth_count = 20;
    int synth_len = 0;  // 0: 2x window
    std::string synth_snrs = "0,5,10,15";
    std::string attention = "none";
    int scale_divisor = 1;
    int epochs = 100;
    int batch_size = 50;
    double lambda = kDefaultLambdaL1;
    double lr = 2e-4;
    std::uint64_t seed = 0;
    int max_steps = 0;
    int checkpoint_every = 100;
    std::string out_dir = "train_out";
    bool serial = false;
};

int cmd_train(const TrainArgs& args) {
    ModelConfig cfg;
    cfg.attention_layers = parse_attention_layers(args.attention);
    cfg.scale_divisor = args.scale_divisor;
    cfg.validate();

    TrainConfig tcfg;
    tcfg.epochs = args.epochs;
    tcfg.batch_size = args.batch_size;
    tcfg.lambda_l1 = args.lambda;
    tcfg.lr = args.lr;
    tcfg.seed = args.seed;
    tcfg.max_steps = args.max_steps;
    tcfg.checkpoint_every = args.checkpoint_every;
    tcfg.validate();

    fs::path out_dir(args.out_dir);
    fs::create_directories(out_dir);

    Manifest manifest;
    manifest.put("command", std::string("train"));
    manifest.put("start", timestamp());
    manifest.put("seed", static_cast<long long>(args.seed));
    manifest.put("attention_layers", args.attention);
    manifest.put("scale_divisor", static_cast<long long>(args.scale_divisor));
    manifest.put("epochs", static_cast<long long>(args.epochs));
    manifest.put("batch_size", static_cast<long long>(args.batch_size));
    manifest.put("lambda", args.lambda);
    manifest.put("lr", args.lr);
    manifest.put("max_steps", static_cast<long long>(args.max_steps));
    manifest.put("checkpoint_every", static_cast<long long>(args.checkpoint_every));
    manifest.put("serial", std::string(args.serial ? "1" : "1"));  // serial is the only mode

    std::vector<UtterancePair> dataset;
    if (args.synthetic) {
        int window = cfg.effective_input_len();
        int len = args.synth_len > 0 ? args.synth_len : 2 * window;
        dataset = synth_dataset(substream(args.seed, "data-synth").next_u64(), args.synth_count,
                                len, parse_double_list(args.synth_snrs));
        manifest.put("dataset", std::string("synthetic"));
        manifest.put("synth_count", static_cast<long long>(args.synth_count));
        manifest.put("synth_len", static_cast<long long>(len));
        manifest.put("synth_snrs", args.synth_snrs);
    } else {
        if (args.data_dir.empty())
            throw InvalidConfig("either --data-dir or --synthetic is required");
        dataset = load_dataset_dir(args.data_dir, nullptr);
        manifest.put("dataset", args.data_dir);
    }

    Rng init_rng = substream(args.seed, "init");
    Generator gen = build_generator(cfg, init_rng);
    Discriminator disc = build_discriminator(cfg, init_rng);

    TrainResult result = train(gen, disc, dataset, tcfg, out_dir);

    fs::path log_path = out_dir / "train_log.csv";
    result.log.write_csv(log_path);

    manifest.put("end", timestamp());
    manifest.put("train_log", log_path.string());
    manifest.put("checkpoints", join_paths(result.checkpoint_paths));
    manifest.write(out_dir / "manifest.txt");

    std::cout << "trained " << result.log.records.size() << " steps; final d_loss="
              << result.log.records.back().d_loss
              << " g_l1=" << result.log.records.back().g_l1 << "\n";
    std::cout << "outputs in " << out_dir.string() << "\n";
    return 0;
}

int cmd_enhance(const std::string& checkpoint, const std::vector<std::string>& inputs,
                const std::string& out_dir_s, std::uint64_t seed) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    fs::path out_dir(out_dir_s);
    fs::create_directories(out_dir);

    Manifest manifest;
    manifest.put("command", std::string("enhance"));
    manifest.put("start", timestamp());
    manifest.put("checkpoint", checkpoint);
    manifest.put("seed", static_cast<long long>(seed));

    std::vector<fs::path> outputs;
    for (const auto& input : inputs) {
        AudioBuffer noisy = read_wav(input);
        std::string stem = fs::path(input).stem().string();
        Rng latent_rng = substream(seed, "latent:" + stem);
        AudioBuffer enhanced = enhance_utterance(ckpt.gen, noisy, latent_rng);
        fs::path out_path = out_dir / (stem + ".wav");
        write_wav(out_path, enhanced);
        outputs.push_back(out_path);
        std::cout << input << " -> " << out_path.string() << " (" << enhanced.samples.size()
                  << " samples)\n";
    }
    manifest.put("end", timestamp());
    manifest.put("outputs", join_paths(outputs));
    manifest.write(out_dir / "manifest.txt");
    return 0;
}

int cmd_evaluate(const std::string& clean_dir, const std::string& test_dir,
                 const std::string& out_path_s) {
    std::vector<CorpusPair> pairs;
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(clean_dir))
        if (e.path().extension() == ".wav") stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw EmptyDataset("no wav files under " + clean_dir);
    for (const auto& stem : stems) {
        fs::path test = fs::path(test_dir) / (stem + ".wav");
        if (!fs::exists(test))
            throw InvalidConfig("unpaired utterance '" + stem + "': missing " + test.string());
        pairs.push_back({stem, fs::path(clean_dir) / (stem + ".wav"), test});
    }

    MetricReport report = evaluate_corpus(pairs);
    fs::path out_path(out_path_s);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    report.write_csv(out_path);

    Manifest manifest;
    manifest.put("command", std::string("evaluate"));
    manifest.put("start", timestamp());
    manifest.put("clean_dir", clean_dir);
    manifest.put("test_dir", test_dir);
    manifest.put("report", out_path.string());
    manifest.put("mean_ssnr", report.mean_ssnr);
    manifest.put("mean_stoi", report.mean_stoi);
    manifest.put("end", timestamp());
    fs::path mpath = out_path.has_parent_path() ? out_path.parent_path() / "manifest.txt"
                                                : fs::path("manifest.txt");
    manifest.write(mpath);

    std::printf("MEAN,%.4f,%.4f\n", report.mean_ssnr, report.mean_stoi);
    return 0;
}

int cmd_attention_dump(const std::string& checkpoint, const std::string& input_wav, int layer,
                       const std::string& rows_text, const std::string& out_path_s,
                       std::uint64_t seed) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    const Generator& gen = ckpt.gen;
    const int n = gen.cfg.n_layers();
    int effective = std::min(layer, n);
    if (layer < 1 || layer > 11)
        throw InvalidConfig("layer " + std::to_string(layer) + " outside {1..11}");
    if (!gen.enc[effective - 1].attn)
        throw InvalidConfig("layer " + std::to_string(layer) +
                            " has no attention in this checkpoint's config");

    AudioBuffer noisy = read_wav(input_wav);
    const int window = gen.cfg.effective_input_len();
    SegmentBatch batch = segment_for_inference(noisy, window);
    std::vector<double> pre = preemphasize_segment(batch.segments[0]);

    // Encoder-only pass on the first window, capturing the attention map at
    // the requested layer.
    EncoderTrace trace = generator_encode(gen, pre);
    FeatureMap attn_map = trace.attn_maps[effective - 1];

    std::vector<int> rows;
    if (rows_text == "all") {
        for (int r = 0; r < attn_map.rows; ++r) rows.push_back(r);
    } else {
        std::stringstream ss(rows_text);
        std::string item;
        while (std::getline(ss, item, ',')) rows.push_back(std::stoi(item));
    }
    for (int r : rows)
        if (r < 0 || r >= attn_map.rows)
            throw InvalidConfig("row index " + std::to_string(r) + " outside [0," +
                                std::to_string(attn_map.rows) + ")");

    fs::path out_path(out_path_s);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + out_path_s);
    out << "layer,row_index,key_index,weight\n";
    out.precision(12);
    for (int r : rows)
        for (int kx = 0; kx < attn_map.cols; ++kx)
            out << layer << ',' << r << ',' << kx << ',' << attn_map.at(r, kx) << "\n";

    Manifest manifest;
    manifest.put("command", std::string("attention-dump"));
    manifest.put("start", timestamp());
    manifest.put("checkpoint", checkpoint);
    manifest.put("input", input_wav);
    manifest.put("layer", static_cast<long long>(layer));
    manifest.put("effective_layer", static_cast<long long>(effective));
    manifest.put("rows", rows_text);
    manifest.put("keys_per_row", static_cast<long long>(attn_map.cols));
    manifest.put("seed", static_cast<long long>(seed));
    manifest.put("output", out_path.string());
    manifest.put("end", timestamp());
    fs::path mpath = out_path.has_parent_path() ? out_path.parent_path() / "manifest.txt"
                                                : fs::path("manifest.txt");
    manifest.write(mpath);

    std::cout << "wrote " << rows.size() << " rows x " << attn_map.cols << " keys to "
              << out_path.string() << "\n";
    return 0;
}

int cmd_mem_profile(long long input_len, int p, const std::string& layers_text,
                    const std::string& out_path_s) {
    std::vector<int> layers;
    if (layers_text == "all") {
        for (int l = 1; l <= 11; ++l) layers.push_back(l);
    } else {
        std::stringstream ss(layers_text);
        std::string item;
        while (std::getline(ss, item, ',')) layers.push_back(std::stoi(item));
    }
    for (int l : layers)
        if (l < 1 || l > 11) throw InvalidConfig("layer " + std::to_string(l) + " outside {1..11}");

    std::printf("%6s %10s %16s %16s\n", "layer", "time_dim", "raw_map_elems", "pooled_map_elems");
    std::string csv = "layer,time_dim,raw_map_elems,pooled_map_elems\n";
    for (int l : layers) {
        AttentionFootprint fp = attn_footprint(input_len, l, p);
        std::printf("%6d %10lld %16lld %16lld\n", l, static_cast<long long>(fp.time_dim),
                    static_cast<long long>(fp.raw_map_elems),
                    static_cast<long long>(fp.pooled_map_elems));
        csv += std::to_string(l) + "," + std::to_string(fp.time_dim) + "," +
               std::to_string(fp.raw_map_elems) + "," + std::to_string(fp.pooled_map_elems) + "\n";
    }
    if (!out_path_s.empty()) {
        fs::path out_path(out_path_s);
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        std::ofstream out(out_path, std::ios::trunc);
        out << csv;
        Manifest manifest;
        manifest.put("command", std::string("mem-profile"));
        manifest.put("input_len", static_cast<long long>(input_len));
        manifest.put("p", static_cast<long long>(p));
        manifest.put("layers", layers_text);
        manifest.put("output", out_path.string());
        fs::path mpath = out_path.has_parent_path() ? out_path.parent_path() / "manifest.txt"
                                                    : fs::path("manifest.txt");
        manifest.write(mpath);
    }
    return 0;
}

int cmd_synth_data(std::uint64_t seed, int count, const std::string& snrs_text, int len,
                   const std::string& out_dir_s) {
    fs::path out_dir(out_dir_s);
    fs::create_directories(out_dir / "clean");
    fs::create_directories(out_dir / "noisy");

    std::vector<double> snrs = parse_double_list(snrs_text);
    auto pairs = synth_dataset(seed, count, len, snrs);

    Manifest manifest;
    manifest.put("command", std::string("synth-data"));
    manifest.put("start", timestamp());
    manifest.put("seed", static_cast<long long>(seed));
    manifest.put("count", static_cast<long long>(count));
    manifest.put("len", static_cast<long long>(len));
    manifest.put("snrs", snrs_text);
    for (size_t i = 0; i < pairs.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "utt%04zu", i);
        write_wav(out_dir / "clean" / (std::string(stem) + ".wav"), pairs[i].clean);
        write_wav(out_dir / "noisy" / (std::string(stem) + ".wav"), pairs[i].noisy);
        manifest.put(std::string("snr_db.") + stem, pairs[i].snr_db);
    }
    manifest.put("end", timestamp());
    manifest.write(out_dir / "manifest.txt");
    std::cout << "wrote " << pairs.size() << " utterance pairs under " << out_dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-attention speech enhancement GAN on raw 16 kHz waveforms"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a key=value file");

    // train
    TrainArgs targs;
    CLI::App* train_cmd = app.add_subcommand("train", "Adversarial training");
    train_cmd->add_option("--data-dir", targs.data_dir, "Dataset dir with clean/ and noisy/");
    train_cmd->add_flag("--synthetic", targs.synthetic, "Train on a generated synthetic corpus");
    train_cmd->add_option("--synth-count", targs.synth_count, "Synthetic utterance count");
    train_cmd->add_option("--synth-len", targs.synth_len, "Synthetic utterance length in samples");
    train_cmd->add_option("--synth-snrs", targs.synth_snrs, "Synthetic mixing SNRs (dB, csv)");
    train_cmd->add_option("--attention-layers", targs.attention,
                          "Comma list of layer indices, or 'all' or 'none'");
    train_cmd->add_option("--scale-divisor", targs.scale_divisor, "Desk-scale shrink factor");
    train_cmd->add_option("--epochs", targs.epochs, "Training epochs");
    train_cmd->add_option("--batch-size", targs.batch_size, "Minibatch size");
    train_cmd->add_option("--lambda", targs.lambda, "L1 weight in the generator objective");
    train_cmd->add_option("--lr", targs.lr, "RMSprop learning rate");
    train_cmd->add_option("--seed", targs.seed, "Master seed");
    train_cmd->add_option("--max-steps", targs.max_steps, "Stop after this many steps (0: epochs)");
    train_cmd->add_option("--checkpoint-every", targs.checkpoint_every,
                          "Checkpoint period in steps");
    train_cmd->add_option("--out-dir", targs.out_dir, "Output directory");
    train_cmd->add_flag("--serial", targs.serial, "Deterministic serial mode (the only mode)");

    // enhance
    std::string checkpoint, out_dir = "enhanced";
    std::vector<std::string> inputs;
    std::uint64_t seed = 0;
    CLI::App* enhance_cmd = app.add_subcommand("enhance", "Run the enhancement pipeline");
    enhance_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
    enhance_cmd->add_option("input", inputs, "Input wav file(s)")->required();
    enhance_cmd->add_option("--out-dir", out_dir, "Output directory");
    enhance_cmd->add_option("--seed", seed, "Latent seed");

    // evaluate
    std::string clean_dir, test_dir, report_path = "report.csv";
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "SSNR/STOI over paired directories");
    eval_cmd->add_option("--clean-dir", clean_dir, "Clean wav directory")->required();
    eval_cmd->add_option("--test-dir", test_dir, "Directory of signals to score")->required();
    eval_cmd->add_option("--out", report_path, "Report CSV path");

    // attention-dump
    std::string dump_input, dump_rows = "all", dump_out = "attention.csv";
    int dump_layer = 3;
    std::string dump_checkpoint;
    CLI::App* dump_cmd = app.add_subcommand("attention-dump", "Dump encoder attention rows");
    dump_cmd->add_option("--checkpoint", dump_checkpoint, "Trained checkpoint")->required();
    dump_cmd->add_option("--input", dump_input, "Input wav (first window is analyzed)")->required();
    dump_cmd->add_option("--layer", dump_layer, "Encoder layer index");
    dump_cmd->add_option("--rows", dump_rows, "Comma list of time rows, or 'all'");
    dump_cmd->add_option("--out", dump_out, "Output CSV path");
    dump_cmd->add_option("--seed", seed, "Unused; accepted for uniformity");

    // mem-profile
    long long mp_len = 16384;
    int mp_p = kAttnPoolFactor;
    std::string mp_layers = "all", mp_out;
    CLI::App* mem_cmd = app.add_subcommand("mem-profile", "Attention memory footprint table");
    mem_cmd->add_option("--input-len", mp_len, "Model input length");
    mem_cmd->add_option("--p", mp_p, "Key/value pooling factor");
    mem_cmd->add_option("--layers", mp_layers, "Comma list of layers, or 'all'");
    mem_cmd->add_option("--out", mp_out, "Optional CSV output path");

    // synth-data
    std::uint64_t sd_seed = 0;
    int sd_count = 20, sd_len = 32768;
    std::string sd_snrs = "0,5,10,15", sd_out = "synth_data";
    CLI::App* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic paired corpus");
    synth_cmd->add_option("--seed", sd_seed, "Seed");
    synth_cmd->add_option("--count", sd_count, "Utterance count");
    synth_cmd->add_option("--snrs", sd_snrs, "Mixing SNRs (dB, csv)");
    synth_cmd->add_option("--len", sd_len, "Utterance length in samples");
    synth_cmd->add_option("--out-dir", sd_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(targs);
        if (enhance_cmd->parsed()) return cmd_enhance(checkpoint, inputs, out_dir, seed);
        if (eval_cmd->parsed()) return cmd_evaluate(clean_dir, test_dir, report_path);
        if (dump_cmd->parsed())
            return cmd_attention_dump(dump_checkpoint, dump_input, dump_layer, dump_rows, dump_out,
                                      seed);
        if (mem_cmd->parsed()) return cmd_mem_profile(mp_len, mp_p, mp_layers, mp_out);
        if (synth_cmd->parsed()) return cmd_synth_data(sd_seed, sd_count, sd_snrs, sd_len, sd_out);
    } catch (const DivergedLoss& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}

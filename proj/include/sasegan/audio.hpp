#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sasegan/errors.hpp"

namespace sasegan {

constexpr int kSampleRate = 16000;
constexpr int kDefaultWindow = 16384;
constexpr double kPreemphasisCoef = 0.95;

/// Mono sample sequence, amplitude in [-1, 1], fixed 16 kHz rate.
struct AudioBuffer {
    std::vector<double> samples;
    int rate = kSampleRate;
};

/// Fixed-length windows cut from one utterance. Every segment has exactly
/// `window` samples; `pad_len` zeros were appended to the final segment.
struct SegmentBatch {
    std::vector<std::vector<double>> segments;
    int window = kDefaultWindow;
    int pad_len = 0;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
    v.push_back((x >> 16) & 0xff);
    v.push_back((x >> 24) & 0xff);
}
inline void put_u16(std::vector<unsigned char>& v, std::uint16_t x) {
    v.push_back(x & 0xff);
    v.push_back((x >> 8) & 0xff);
}

}  // namespace detail

/// Reads a RIFF/WAVE file. Accepts PCM 16-bit mono at 16 kHz only; samples
/// are scaled to [-1, 1] by dividing by 32768.
inline AudioBuffer read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw MalformedHeader("not a RIFF/WAVE file: " + path.string());

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    size_t data_off = 0, data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* hdr = bytes.data() + pos;
        std::uint32_t chunk_len = detail::read_u32(hdr + 4);
        size_t body = pos + 8;
        if (body + chunk_len > bytes.size())
            throw MalformedHeader("truncated chunk in " + path.string());
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw MalformedHeader("short fmt chunk");
            format = detail::read_u16(bytes.data() + body);
            channels = detail::read_u16(bytes.data() + body + 2);
            rate = detail::read_u32(bytes.data() + body + 4);
            bits = detail::read_u16(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            data_off = body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }
    if (!have_fmt || data_off == 0) throw MalformedHeader("missing fmt/data chunk");
    if (format != 1) throw UnsupportedFormat("not integer PCM");
    if (channels != 1) throw UnsupportedFormat("expected mono, got " + std::to_string(channels) + " channels");
    if (bits != 16) throw UnsupportedFormat("expected 16-bit, got " + std::to_string(bits));
    if (rate != kSampleRate)
        throw UnsupportedFormat("expected 16000 Hz, got " + std::to_string(rate));

    AudioBuffer buf;
    buf.rate = static_cast<int>(rate);
    size_t n = data_len / 2;
    buf.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        std::int16_t s = static_cast<std::int16_t>(
            detail::read_u16(bytes.data() + data_off + 2 * i));
        buf.samples[i] = static_cast<double>(s) / 32768.0;
    }
    return buf;
}

/// Writes PCM 16-bit mono. Values are clamped to [-1, 1] and rounded half
/// away from zero; +1.0 maps to 32767.
inline void write_wav(const std::filesystem::path& path, const AudioBuffer& buf) {
    std::vector<unsigned char> bytes;
    std::uint32_t n = static_cast<std::uint32_t>(buf.samples.size());
    std::uint32_t data_len = 2 * n;
    bytes.reserve(44 + data_len);
    const char* riff = "RIFF";
    bytes.insert(bytes.end(), riff, riff + 4);
    detail::put_u32(bytes, 36 + data_len);
    const char* wavefmt = "WAVEfmt ";
    bytes.insert(bytes.end(), wavefmt, wavefmt + 8);
    detail::put_u32(bytes, 16);
    detail::put_u16(bytes, 1);  // PCM
    detail::put_u16(bytes, 1);  // mono
    detail::put_u32(bytes, kSampleRate);
    detail::put_u32(bytes, kSampleRate * 2);  // byte rate
    detail::put_u16(bytes, 2);                // block align
    detail::put_u16(bytes, 16);               // bits
    const char* data = "data";
    bytes.insert(bytes.end(), data, data + 4);
    detail::put_u32(bytes, data_len);
    for (double v : buf.samples) {
        double clamped = std::max(-1.0, std::min(1.0, v));
        long q = std::lround(clamped * 32768.0);
        if (q > 32767) q = 32767;
        if (q < -32768) q = -32768;
        detail::put_u16(bytes, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoFailure("write failed: " + path.string());
}

/// First-order high-frequency preemphasis: y[t] = x[t] - coef*x[t-1].
inline AudioBuffer preemphasize(const AudioBuffer& buf, double coef = kPreemphasisCoef) {
    AudioBuffer out;
    out.rate = buf.rate;
    out.samples.resize(buf.samples.size());
    for (size_t t = 0; t < buf.samples.size(); ++t)
        out.samples[t] = (t == 0) ? buf.samples[0] : buf.samples[t] - coef * buf.samples[t - 1];
    return out;
}

/// Inverse of preemphasize: y[t] = x[t] + coef*y[t-1].
inline AudioBuffer deemphasize(const AudioBuffer& buf, double coef = kPreemphasisCoef) {
    AudioBuffer out;
    out.rate = buf.rate;
    out.samples.resize(buf.samples.size());
    double prev = 0.0;
    for (size_t t = 0; t < buf.samples.size(); ++t) {
        prev = (t == 0) ? buf.samples[0] : buf.samples[t] + coef * prev;
        out.samples[t] = prev;
    }
    return out;
}

inline std::vector<double> preemphasize_segment(const std::vector<double>& x,
                                                double coef = kPreemphasisCoef) {
    std::vector<double> y(x.size());
    for (size_t t = 0; t < x.size(); ++t)
        y[t] = (t == 0) ? x[0] : x[t] - coef * x[t - 1];
    return y;
}

inline std::vector<double> deemphasize_segment(const std::vector<double>& x,
                                               double coef = kPreemphasisCoef) {
    std::vector<double> y(x.size());
    double prev = 0.0;
    for (size_t t = 0; t < x.size(); ++t) {
        prev = (t == 0) ? x[0] : x[t] + coef * prev;
        y[t] = prev;
    }
    return y;
}

namespace detail {

inline SegmentBatch segment_grid(const std::vector<double>& samples, int window, int hop) {
    SegmentBatch batch;
    batch.window = window;
    long len = static_cast<long>(samples.size());
    long offset = 0;
    while (true) {
        std::vector<double> seg(window, 0.0);
        long avail = std::min<long>(window, len - offset);
        for (long i = 0; i < avail; ++i) seg[i] = samples[offset + i];
        batch.segments.push_back(std::move(seg));
        if (offset + window >= len) {
            batch.pad_len = static_cast<int>(offset + window - len);
            break;
        }
        offset += hop;
    }
    return batch;
}

}  // namespace detail

/// Overlapping windows on a deterministic grid; the grid stops once the
/// utterance is covered, and the final window is zero-padded.
inline SegmentBatch segment_for_training(const AudioBuffer& buf, int window = kDefaultWindow,
                                         double overlap = 0.5) {
    if (buf.samples.empty()) throw Error("segment_for_training: empty buffer");
    int hop = static_cast<int>(std::lround(window * (1.0 - overlap)));
    if (hop < 1) hop = 1;
    return detail::segment_grid(buf.samples, window, hop);
}

/// Non-overlapping windows; the final window is zero-padded.
inline SegmentBatch segment_for_inference(const AudioBuffer& buf, int window = kDefaultWindow) {
    if (buf.samples.empty()) throw Error("segment_for_inference: empty buffer");
    return detail::segment_grid(buf.samples, window, window);
}

/// Concatenates non-overlapping segments and drops the final pad_len samples.
inline AudioBuffer reconstruct(const SegmentBatch& batch) {
    if (batch.pad_len < 0 || (batch.pad_len >= batch.window && !batch.segments.empty()))
        throw InvalidPadLen("reconstruct: pad_len " + std::to_string(batch.pad_len) +
                            " out of range for window " + std::to_string(batch.window));
    AudioBuffer out;
    if (batch.segments.empty()) return out;
    size_t total = batch.segments.size() * static_cast<size_t>(batch.window) - batch.pad_len;
    out.samples.reserve(total);
    for (const auto& seg : batch.segments)
        out.samples.insert(out.samples.end(), seg.begin(), seg.end());
    out.samples.resize(total);
    return out;
}

}  // namespace sasegan

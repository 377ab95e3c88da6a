#pragma once

#include <complex>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "arrayssl/common.hpp"
#include "arrayssl/dsp.hpp"
#include "arrayssl/rng.hpp"
#include "arrayssl/tensor.hpp"

namespace arrayssl {

// ---------------------------------------------------------------------------
// Scene description
// ---------------------------------------------------------------------------

enum class Modulation { FilteredNoise, QpskRrc };

struct SignalSpec {
    int64_t center_bin = 0;      // analysis-bin index in [0, F)
    int64_t bandwidth_bins = 0;  // occupied width; band is [center-bw/2, center-bw/2+bw)
    double snr_db = 10.0;        // in-band SNR over the noise floor
    Modulation modulation = Modulation::FilteredNoise;
};

struct SceneSpec {
    int64_t antennas = 4;
    int64_t samples = 65536;  // L, complex samples per antenna
    int64_t bins = 2048;      // F, analysis bins (fine grid needs L % F == 0)
    double noise_power = 1.0;
    std::vector<SignalSpec> signals;
};

using BandLabel = std::pair<int64_t, int64_t>;  // (lo_bin, hi_bin), hi exclusive

inline BandLabel signal_band(const SignalSpec& s) {
    const int64_t lo = s.center_bin - s.bandwidth_bins / 2;
    return {lo, lo + s.bandwidth_bins};
}

inline void validate_scene(const SceneSpec& spec) {
    if (spec.antennas < 1) throw ValueError("scene: need at least one antenna");
    if (spec.bins < 2) throw ValueError("scene: need at least two analysis bins");
    if (spec.samples < spec.bins || spec.samples % spec.bins != 0)
        throw ValueError("scene: samples (" + std::to_string(spec.samples) +
                         ") must be a positive multiple of bins (" +
                         std::to_string(spec.bins) + ")");
    if (!(spec.noise_power > 0.0)) throw ValueError("scene: noise_power must be positive");
    for (size_t i = 0; i < spec.signals.size(); ++i) {
        const SignalSpec& s = spec.signals[i];
        if (s.bandwidth_bins < 1)
            throw ValueError("scene: signal " + std::to_string(i) + " has empty bandwidth");
        auto [lo, hi] = signal_band(s);
        if (lo < 0 || hi > spec.bins)
            throw ValueError("scene: signal " + std::to_string(i) + " band [" +
                             std::to_string(lo) + ", " + std::to_string(hi) +
                             ") leaves [0, " + std::to_string(spec.bins) + ")");
        if (!std::isfinite(s.snr_db))
            throw ValueError("scene: signal " + std::to_string(i) + " has non-finite SNR");
        for (size_t j = 0; j < i; ++j)
            if (spec.signals[j].center_bin == s.center_bin)
                throw ValueError("scene: signals " + std::to_string(j) + " and " +
                                 std::to_string(i) + " share center bin " +
                                 std::to_string(s.center_bin));
    }
}

// ---------------------------------------------------------------------------
// Waveform synthesis
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

// Root-raised-cosine pulse (arbitrary overall scale; power is normalized
// after synthesis). Singular points use their analytic limits.
inline double rrc_pulse(double t, double T, double beta) {
    const double x = t / T;
    const double pi = kTwoPi / 2.0;
    if (std::abs(x) < 1e-8) return 1.0 - beta + 4.0 * beta / pi;
    const double denom_kink = 1.0 - (4.0 * beta * x) * (4.0 * beta * x);
    if (std::abs(denom_kink) < 1e-8) {
        const double a = pi / (4.0 * beta);
        return (beta / std::sqrt(2.0)) *
               ((1.0 + 2.0 / pi) * std::sin(a) + (1.0 - 2.0 / pi) * std::cos(a));
    }
    return (std::sin(pi * x * (1.0 - beta)) +
            4.0 * beta * x * std::cos(pi * x * (1.0 + beta))) /
           (pi * x * denom_kink);
}

// Band-limited complex Gaussian noise: i.i.d. spectrum on the fine grid bins
// covering [lo, hi) analysis bins, inverse transform back to time.
inline std::vector<std::complex<double>> filtered_noise_waveform(int64_t L, int64_t F,
                                                                 BandLabel band, Rng& rng) {
    const int64_t R = L / F;  // fine bins per analysis bin
    std::vector<std::complex<double>> spectrum(static_cast<size_t>(L));
    for (int64_t q = band.first * R; q < band.second * R; ++q)
        spectrum[static_cast<size_t>(q)] = {rng.normal(), rng.normal()};
    // inverse DFT via conjugation; scale is irrelevant (normalized later)
    for (auto& v : spectrum) v = std::conj(v);
    std::vector<std::complex<double>> wave = dft(spectrum);
    for (auto& v : wave) v = std::conj(v);
    return wave;
}

// QPSK with root-raised-cosine shaping, roll-off 0.35, shifted to the band
// midpoint. The symbol period is chosen so the pulse's 99%-power bandwidth
// equals the labeled width: for beta=0.35 that is 1.2049/T cycles/sample.
inline std::vector<std::complex<double>> qpsk_waveform(int64_t L, int64_t F, BandLabel band,
                                                       Rng& rng) {
    const double beta = 0.35;
    const double b99 = 1.2049;  // 99%-power bandwidth of the pulse, in units of 1/T
    const double bw = static_cast<double>(band.second - band.first) / static_cast<double>(F);
    const double T = b99 / bw;  // samples per symbol (fractional)
    const double support = 8.0 * T;
    const int64_t n_sym =
        static_cast<int64_t>(std::ceil((static_cast<double>(L) + 2.0 * support) / T)) + 1;

    constexpr double r = 0.70710678118654752440;  // 1/sqrt(2)
    static const std::complex<double> kConstellation[4] = {
        {r, r}, {r, -r}, {-r, r}, {-r, -r}};

    std::vector<std::complex<double>> wave(static_cast<size_t>(L));
    for (int64_t n = 0; n < n_sym; ++n) {
        const std::complex<double> sym =
            kConstellation[static_cast<size_t>(rng.uniform_int(0, 3))];
        const double t_n = static_cast<double>(n) * T - support;
        const int64_t t_lo = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(t_n - support)));
        const int64_t t_hi =
            std::min<int64_t>(L - 1, static_cast<int64_t>(std::floor(t_n + support)));
        for (int64_t t = t_lo; t <= t_hi; ++t)
            wave[static_cast<size_t>(t)] += sym * rrc_pulse(static_cast<double>(t) - t_n, T, beta);
    }
    const double fc = static_cast<double>(band.first + band.second) /
                      (2.0 * static_cast<double>(F));
    for (int64_t t = 0; t < L; ++t)
        wave[static_cast<size_t>(t)] *= std::polar(1.0, kTwoPi * fc * static_cast<double>(t));
    return wave;
}

inline void scale_to_power(std::vector<std::complex<double>>& wave, double target_power) {
    double p = 0.0;
    for (auto& v : wave) p += std::norm(v);
    p /= static_cast<double>(wave.size());
    if (p <= 0.0) return;  // silent waveform stays silent
    const double s = std::sqrt(target_power / p);
    for (auto& v : wave) v *= s;
}

}  // namespace detail

namespace detail {

// Shared synthesis core. When `fixed_gains` is non-null it supplies one
// complex gain per (signal, antenna) instead of drawing them.
inline std::pair<IqFrame, std::vector<BandLabel>> synth_frame_core(
    const SceneSpec& spec, uint64_t seed,
    const std::vector<std::vector<std::complex<double>>>* fixed_gains) {
    validate_scene(spec);
    const int64_t A = spec.antennas, L = spec.samples, F = spec.bins;
    Rng rng(seed);
    std::vector<std::complex<double>> mix(static_cast<size_t>(A * L));
    std::vector<BandLabel> labels;
    labels.reserve(spec.signals.size());
    for (size_t si = 0; si < spec.signals.size(); ++si) {
        const SignalSpec& s = spec.signals[si];
        const BandLabel band = signal_band(s);
        labels.push_back(band);
        std::vector<std::complex<double>> wave =
            s.modulation == Modulation::FilteredNoise
                ? detail::filtered_noise_waveform(L, F, band, rng)
                : detail::qpsk_waveform(L, F, band, rng);
        // in-band SNR: the white noise floor holds noise_power * bw/F inside
        // the signal's band, so that is the reference power
        const double in_band_noise =
            spec.noise_power * static_cast<double>(s.bandwidth_bins) / static_cast<double>(F);
        detail::scale_to_power(wave, in_band_noise * std::pow(10.0, s.snr_db / 10.0));
        for (int64_t a = 0; a < A; ++a) {
            std::complex<double> gain;
            if (fixed_gains) {
                gain = fixed_gains->at(si).at(static_cast<size_t>(a));
            } else {
                const double amp = 1.0 + rng.uniform(-0.1, 0.1);
                gain = amp * std::polar(1.0, rng.uniform(0.0, detail::kTwoPi));
            }
            std::complex<double>* dst = mix.data() + a * L;
            for (int64_t t = 0; t < L; ++t) dst[t] += gain * wave[static_cast<size_t>(t)];
        }
    }
    const double sigma = std::sqrt(spec.noise_power / 2.0);
    IqFrame frame(A, L);
    for (int64_t a = 0; a < A; ++a) {
        const std::complex<double>* src = mix.data() + a * L;
        for (int64_t t = 0; t < L; ++t) {
            frame.re(a, t) = static_cast<float>(src[t].real() + sigma * rng.normal());
            frame.im(a, t) = static_cast<float>(src[t].imag() + sigma * rng.normal());
        }
    }
    return {std::move(frame), std::move(labels)};
}

}  // namespace detail

// Synthesize one frame. Draw order (signal content, then its per-antenna
// gains, signal by signal, then per-antenna noise) is fixed, so (spec, seed)
// fully determines the output bits.
inline std::pair<IqFrame, std::vector<BandLabel>> synth_frame(const SceneSpec& spec,
                                                              uint64_t seed) {
    return detail::synth_frame_core(spec, seed, nullptr);
}

// Variant with caller-chosen per-(signal, antenna) gains, for controlled
// array-response experiments.
inline std::pair<IqFrame, std::vector<BandLabel>> synth_frame_with_gains(
    const SceneSpec& spec, const std::vector<std::vector<std::complex<double>>>& gains,
    uint64_t seed) {
    if (gains.size() != spec.signals.size())
        throw ValueError("synth_frame_with_gains: need one gain row per signal");
    for (const auto& row : gains)
        if (static_cast<int64_t>(row.size()) != spec.antennas)
            throw ValueError("synth_frame_with_gains: gain row size must equal antennas");
    return detail::synth_frame_core(spec, seed, &gains);
}

// ---------------------------------------------------------------------------
// Regression target construction
// ---------------------------------------------------------------------------

// Sparse bandwidth target: value (hi-lo)/F at the band's center bin
// floor((lo+hi)/2), zero elsewhere.
inline Tensor labels_to_target(const std::vector<BandLabel>& labels, int64_t F) {
    if (F < 1) throw ValueError("labels_to_target: need F >= 1");
    Tensor target = Tensor::zeros({F});
    float* p = target.data();
    for (const auto& [lo, hi] : labels) {
        if (lo < 0 || lo >= hi || hi > F)
            throw ValueError("labels_to_target: band [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + ") invalid for F=" + std::to_string(F));
        const int64_t center = (lo + hi) / 2;
        if (p[center] != 0.0f)
            throw ValueError("labels_to_target: two bands map to center bin " +
                             std::to_string(center));
        p[center] = static_cast<float>(static_cast<double>(hi - lo) / static_cast<double>(F));
    }
    return target;
}

// ---------------------------------------------------------------------------
// Capture sets and file formats
// ---------------------------------------------------------------------------

struct LabeledCapture {
    std::vector<IqFrame> frames;
    std::vector<std::vector<BandLabel>> labels;  // one list per frame
};

struct GenConfig {
    int64_t frames = 1;
    int64_t antennas = 4;
    int64_t samples = 65536;
    int64_t bins = 2048;
    int64_t signals_min = 1;
    int64_t signals_max = 6;
    int64_t bw_min = 8;       // bins; generated bandwidths are even
    int64_t bw_max = 0;       // 0 -> bins/2
    double snr_min_db = 5.0;
    double snr_max_db = 25.0;
    double noise_power = 1.0;
    uint64_t seed = 0;
};

// Draw a random scene for one frame from its own substream.
inline SceneSpec draw_scene(const GenConfig& cfg, Rng& rng) {
    SceneSpec spec;
    spec.antennas = cfg.antennas;
    spec.samples = cfg.samples;
    spec.bins = cfg.bins;
    spec.noise_power = cfg.noise_power;
    const int64_t bw_max = cfg.bw_max > 0 ? cfg.bw_max : cfg.bins / 2;
    const int64_t n = rng.uniform_int(cfg.signals_min, cfg.signals_max);
    for (int64_t i = 0; i < n; ++i) {
        SignalSpec s;
        s.bandwidth_bins = 2 * rng.uniform_int((cfg.bw_min + 1) / 2, bw_max / 2);
        for (int attempt = 0;; ++attempt) {
            s.center_bin =
                rng.uniform_int(s.bandwidth_bins / 2, cfg.bins - s.bandwidth_bins / 2);
            bool clash = false;
            for (const SignalSpec& prev : spec.signals)
                clash |= (prev.center_bin == s.center_bin);
            if (!clash) break;
            if (attempt > 1000)
                throw ValueError("draw_scene: cannot place distinct center bins; "
                                 "too many signals for " + std::to_string(cfg.bins) + " bins");
        }
        s.snr_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
        s.modulation = rng.uniform_int(0, 1) == 0 ? Modulation::FilteredNoise
                                                  : Modulation::QpskRrc;
        spec.signals.push_back(s);
    }
    return spec;
}

inline void validate_gen_config(const GenConfig& cfg) {
    if (cfg.frames < 1) throw ValueError("gen: frames must be >= 1");
    if (cfg.signals_min < 0 || cfg.signals_max < cfg.signals_min)
        throw ValueError("gen: need 0 <= signals_min <= signals_max");
    const int64_t bw_max = cfg.bw_max > 0 ? cfg.bw_max : cfg.bins / 2;
    if (cfg.bw_min < 2 || bw_max < cfg.bw_min || bw_max > cfg.bins)
        throw ValueError("gen: need 2 <= bw_min <= bw_max <= bins");
    if (cfg.snr_max_db < cfg.snr_min_db) throw ValueError("gen: snr range is inverted");
    // the scene itself validates antennas/samples/bins
    SceneSpec probe;
    probe.antennas = cfg.antennas;
    probe.samples = cfg.samples;
    probe.bins = cfg.bins;
    probe.noise_power = cfg.noise_power;
    validate_scene(probe);
}

// Deterministic capture set: frame i's scene and waveform come from
// substreams (seed, 2i) and (seed, 2i+1), so outputs are reproducible and
// independent of evaluation order.
inline LabeledCapture make_capture_set(const GenConfig& cfg) {
    validate_gen_config(cfg);
    LabeledCapture cap;
    cap.frames.resize(static_cast<size_t>(cfg.frames));
    cap.labels.resize(static_cast<size_t>(cfg.frames));
    parallel_for(cfg.frames, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            Rng scene_rng(mix_seed(cfg.seed, static_cast<uint64_t>(2 * i)));
            SceneSpec spec = draw_scene(cfg, scene_rng);
            auto [frame, labels] = synth_frame(spec, mix_seed(cfg.seed,
                                                              static_cast<uint64_t>(2 * i + 1)));
            cap.frames[static_cast<size_t>(i)] = std::move(frame);
            cap.labels[static_cast<size_t>(i)] = std::move(labels);
        }
    });
    return cap;
}

// .rfcap: "RFC1", u32 n_frames, u32 antennas, u32 samples (little-endian),
// then f32 payload in [frame][antenna][sample][re,im] order.
inline void save_rfcap(const std::string& path, const std::vector<IqFrame>& frames) {
    if (frames.empty()) throw ValueError("save_rfcap: no frames");
    const int64_t A = frames[0].antennas, L = frames[0].samples;
    for (const IqFrame& f : frames)
        if (f.antennas != A || f.samples != L)
            throw ShapeError("save_rfcap: frames disagree on [A, L]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_rfcap: cannot open " + path + " for writing");
    out.write("RFC1", 4);
    detail::write_u32(out, static_cast<uint32_t>(frames.size()));
    detail::write_u32(out, static_cast<uint32_t>(A));
    detail::write_u32(out, static_cast<uint32_t>(L));
    for (const IqFrame& f : frames)
        out.write(reinterpret_cast<const char*>(f.data.data()),
                  static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    if (!out) throw FormatError("save_rfcap: write failed for " + path);
}

inline std::vector<IqFrame> load_rfcap(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_rfcap: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "RFC1", 4) != 0)
        throw FormatError("load_rfcap: " + path + " is not an RFC1 capture");
    const uint32_t n_frames = detail::read_u32(in, "frame count");
    const uint32_t A = detail::read_u32(in, "antenna count");
    const uint32_t L = detail::read_u32(in, "sample count");
    if (n_frames == 0 || A == 0 || L == 0)
        throw FormatError("load_rfcap: " + path + " has an empty dimension");
    std::vector<IqFrame> frames;
    frames.reserve(n_frames);
    for (uint32_t i = 0; i < n_frames; ++i) {
        IqFrame f(static_cast<int64_t>(A), static_cast<int64_t>(L));
        if (!in.read(reinterpret_cast<char*>(f.data.data()),
                     static_cast<std::streamsize>(f.data.size() * sizeof(float))))
            throw FormatError("load_rfcap: " + path + " truncated at frame " +
                              std::to_string(i));
        frames.push_back(std::move(f));
    }
    return frames;
}

// .rflab: text, one line per frame: `index: lo,hi; lo,hi; ...` (possibly
// empty after the colon).
inline void save_rflab(const std::string& path,
                       const std::vector<std::vector<BandLabel>>& labels) {
    std::ofstream out(path);
    if (!out) throw FormatError("save_rflab: cannot open " + path + " for writing");
    for (size_t i = 0; i < labels.size(); ++i) {
        out << i << ":";
        for (size_t j = 0; j < labels[i].size(); ++j) {
            out << (j == 0 ? " " : "; ") << labels[i][j].first << "," << labels[i][j].second;
        }
        out << "\n";
    }
    if (!out) throw FormatError("save_rflab: write failed for " + path);
}

inline std::vector<std::vector<BandLabel>> load_rflab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("load_rflab: cannot open " + path);
    std::vector<std::vector<BandLabel>> labels;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fail = [&](const std::string& why) {
            throw FormatError("load_rflab: " + path + ":" + std::to_string(line_no) + ": " +
                              why);
        };
        size_t colon = line.find(':');
        if (colon == std::string::npos) fail("missing ':'");
        size_t idx = 0;
        try {
            idx = static_cast<size_t>(std::stoull(line.substr(0, colon)));
        } catch (const std::exception&) {
            fail("bad frame index");
        }
        if (idx != labels.size()) fail("frame indices must be sequential from 0");
        std::vector<BandLabel> row;
        std::string rest = line.substr(colon + 1);
        size_t pos = 0;
        while (pos < rest.size()) {
            while (pos < rest.size() && (rest[pos] == ' ' || rest[pos] == ';')) ++pos;
            if (pos >= rest.size()) break;
            size_t comma = rest.find(',', pos);
            size_t end = rest.find(';', pos);
            if (end == std::string::npos) end = rest.size();
            if (comma == std::string::npos || comma > end) fail("band missing ','");
            try {
                const int64_t lo = std::stoll(rest.substr(pos, comma - pos));
                const int64_t hi = std::stoll(rest.substr(comma + 1, end - comma - 1));
                row.emplace_back(lo, hi);
            } catch (const std::exception&) {
                fail("bad band integers");
            }
            pos = end;
        }
        labels.push_back(std::move(row));
    }
    return labels;
}

}  // namespace arrayssl

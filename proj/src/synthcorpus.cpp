#include "unicodec/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace unicodec {

void SyntheticFactors::validate() const {
    if (content.empty()) throw std::invalid_argument("factors: empty content");
    for (int s : content)
        if (s < 0 || s >= kContentVocab) throw std::invalid_argument("factors: content symbol out of range");
    if (timbre_id < 0 || timbre_id >= kTimbreVocab)
        throw std::invalid_argument("factors: timbre_id out of range");
    if (emotion_id < 0 || emotion_id >= kEmotionVocab)
        throw std::invalid_argument("factors: emotion_id out of range");
    if (language_id < 0 || language_id >= kNumLanguages)
        throw std::invalid_argument("factors: language_id out of range");
    const size_t frames_per_segment = static_cast<size_t>(kSegmentMs / kPitchFrameMs);
    if (pitch_contour.size() != content.size() * frames_per_segment)
        throw std::invalid_argument("factors: pitch contour length mismatch");
    for (double f0 : pitch_contour)
        if (f0 != 0.0 && (f0 < kF0Min || f0 > kF0Max))
            throw std::invalid_argument("factors: pitch outside [f_min, f_max] u {0}");
}

bool symbol_unvoiced(int symbol) { return symbol % 5 == 2; }

int translate_symbol(int symbol, int src_lang, int tgt_lang) {
    // Fixed bijection pi(s) = (5s + 3) mod V_c; gcd(5, 16) = 1.
    if (src_lang == tgt_lang) return symbol;
    if (src_lang == 0) return (5 * symbol + 3) % kContentVocab;
    for (int s = 0; s < kContentVocab; ++s)
        if ((5 * s + 3) % kContentVocab == symbol) return s;
    throw std::logic_error("translate_symbol: unreachable");
}

double content_envelope(int symbol, int language, double hz) {
    // Three fixed Gaussian bumps per (symbol, language), drawn once from a
    // keyed generator. Unvoiced symbols keep the same construction.
    Rng rng(mix_seed(0xC047E47, static_cast<uint64_t>(language) * 64 + symbol));
    double v = 0.05;
    for (int b = 0; b < 3; ++b) {
        double center = rng.uniform(200.0, 1800.0);
        double width = rng.uniform(80.0, 260.0);
        double height = rng.uniform(0.5, 1.0);
        double d = (hz - center) / width;
        v += height * std::exp(-0.5 * d * d);
    }
    return v;
}

double timbre_template(int timbre_id, int harmonic) {
    Rng rng(mix_seed(0x717B4E, static_cast<uint64_t>(timbre_id)));
    double decay = rng.uniform(0.08, 0.35);
    double ripple = rng.uniform(0.0, 0.6);
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    double h = static_cast<double>(harmonic);
    return std::exp(-decay * (h - 1.0)) * (1.0 + ripple * std::sin(1.9 * h + phase));
}

EmotionPattern emotion_pattern(int emotion_id) {
    switch (emotion_id) {
        case 0: return {0.04, 0.8, 0.10, 0.7};
        case 1: return {0.12, 1.6, 0.30, 1.3};
        case 2: return {0.22, 2.6, 0.55, 2.2};
        case 3: return {0.32, 4.0, 0.75, 3.4};
        default: throw std::invalid_argument("emotion_id out of range");
    }
}

namespace {
constexpr int kFramesPerSegment = static_cast<int>(kSegmentMs / kPitchFrameMs);  // 2

double energy_envelope(int emotion_id, double t_sec) {
    EmotionPattern p = emotion_pattern(emotion_id);
    return (1.0 - p.energy_depth) +
           p.energy_depth * (0.5 + 0.5 * std::sin(2.0 * M_PI * p.energy_rate_hz * t_sec));
}
}  // namespace

Waveform generate_utterance(const SyntheticFactors& factors, uint64_t seed) {
    factors.validate();
    const int sr = kSampleRate;
    const int samples_per_frame = static_cast<int>(kPitchFrameMs * sr / 1000.0);  // 160
    const int n_frames = factors.num_frames();
    const int n_samples = n_frames * samples_per_frame;

    Rng rng(mix_seed(seed, 0x57A27));
    std::vector<double> harm_phase(kMaxHarmonics);
    for (auto& p : harm_phase) p = rng.uniform(0.0, 2.0 * M_PI);

    Waveform w;
    w.sample_rate = sr;
    w.samples.assign(n_samples, 0.0);

    double phi = rng.uniform(0.0, 2.0 * M_PI);
    for (int fr = 0; fr < n_frames; ++fr) {
        const int seg = fr / kFramesPerSegment;
        const int symbol = factors.content[static_cast<size_t>(seg)];
        const double f0 = factors.pitch_contour[static_cast<size_t>(fr)];
        const int base = fr * samples_per_frame;
        if (f0 > 0.0) {
            std::vector<double> amp(kMaxHarmonics, 0.0);
            for (int h = 1; h <= kMaxHarmonics; ++h) {
                double hz = h * f0;
                if (hz > 0.475 * sr) break;
                amp[h - 1] = timbre_template(factors.timbre_id, h) *
                             content_envelope(symbol, factors.language_id, hz);
            }
            // Keep the fundamental dominant enough that the autocorrelation
            // peak sits at the full period (no octave ambiguity).
            double amax = 0.0;
            for (double a : amp) amax = std::max(amax, a);
            amp[0] = std::max(amp[0], 0.5 * amax);
            for (int n = 0; n < samples_per_frame; ++n) {
                double t = static_cast<double>(base + n) / sr;
                double e = energy_envelope(factors.emotion_id, t);
                double s = 0.0;
                for (int h = 1; h <= kMaxHarmonics; ++h)
                    if (amp[h - 1] != 0.0) s += amp[h - 1] * std::sin(h * phi + harm_phase[h - 1]);
                w.samples[static_cast<size_t>(base + n)] = e * s;
                phi += 2.0 * M_PI * f0 / sr;
                if (phi > 2.0 * M_PI * 1e6) phi = std::fmod(phi, 2.0 * M_PI);
            }
        } else {
            // Spectrally shaped noise: every DFT bin of the frame gets the
            // content envelope's magnitude with a random Rayleigh amplitude
            // and phase, redrawn each frame. Dense spectra keep the
            // normalized autocorrelation low at all pitch-range lags.
            Rng nrng(mix_seed(seed, 0xA015E000 + static_cast<uint64_t>(fr)));
            const int n_bins = samples_per_frame / 2;
            std::vector<double> ba(static_cast<size_t>(n_bins), 0.0);
            std::vector<double> bp(static_cast<size_t>(n_bins), 0.0);
            for (int b = 4; b < n_bins; ++b) {
                double hz = static_cast<double>(b) * sr / samples_per_frame;
                double g = std::abs(nrng.gaussian());
                ba[static_cast<size_t>(b)] =
                    0.35 * g * content_envelope(symbol, factors.language_id, hz) /
                    std::sqrt(static_cast<double>(n_bins));
                bp[static_cast<size_t>(b)] = nrng.uniform(0.0, 2.0 * M_PI);
            }
            for (int n = 0; n < samples_per_frame; ++n) {
                double t = static_cast<double>(base + n) / sr;
                double e = energy_envelope(factors.emotion_id, t);
                double s = 0.0;
                for (int b = 4; b < n_bins; ++b)
                    s += ba[static_cast<size_t>(b)] *
                         std::cos(2.0 * M_PI * b * n / samples_per_frame + bp[static_cast<size_t>(b)]);
                w.samples[static_cast<size_t>(base + n)] = e * s;
            }
        }
    }
    double peak = 1e-9;
    for (double s : w.samples) peak = std::max(peak, std::abs(s));
    double g = 0.8 / peak;
    for (double& s : w.samples) s *= g;
    return w;
}

SyntheticFactors sample_factors(const FactorSampleConfig& cfg, Rng& rng) {
    SyntheticFactors f;
    double dur = rng.uniform(cfg.min_duration_s, cfg.max_duration_s);
    int n_segments = std::max(1, static_cast<int>(std::lround(dur / (kSegmentMs / 1000.0))));
    f.content.resize(static_cast<size_t>(n_segments));
    for (auto& s : f.content) s = rng.uniform_int(kContentVocab);
    if (cfg.timbre_pool.empty()) {
        f.timbre_id = rng.uniform_int(kTimbreVocab);
    } else {
        f.timbre_id = cfg.timbre_pool[static_cast<size_t>(rng.uniform_int(
            static_cast<int>(cfg.timbre_pool.size())))];
    }
    f.emotion_id = rng.uniform_int(kEmotionVocab);
    f.language_id = cfg.language_id >= 0 ? cfg.language_id : rng.uniform_int(kNumLanguages);

    EmotionPattern ep = emotion_pattern(f.emotion_id);
    double base = rng.uniform(120.0, 240.0);
    double mod_phase = rng.uniform(0.0, 2.0 * M_PI);
    f.pitch_contour.resize(f.content.size() * kFramesPerSegment);
    for (int fr = 0; fr < static_cast<int>(f.pitch_contour.size()); ++fr) {
        int seg = fr / kFramesPerSegment;
        if (symbol_unvoiced(f.content[static_cast<size_t>(seg)])) {
            f.pitch_contour[static_cast<size_t>(fr)] = 0.0;
            continue;
        }
        double t = fr * kPitchFrameMs / 1000.0;
        double v = base * (1.0 + ep.pitch_depth *
                                     std::sin(2.0 * M_PI * ep.pitch_rate_hz * t + mod_phase));
        f.pitch_contour[static_cast<size_t>(fr)] = std::clamp(v, kF0Min, kF0Max);
    }
    return f;
}

std::vector<double> normalized_pitch_contour(const SyntheticFactors& factors, double segment_ms,
                                             Rng& rng) {
    std::vector<double> out(factors.pitch_contour.size(), 0.0);
    int frames_per_seg = std::max(1, static_cast<int>(segment_ms / kPitchFrameMs));
    double cur = 0.0;
    for (size_t fr = 0; fr < out.size(); ++fr) {
        if (fr % static_cast<size_t>(frames_per_seg) == 0) cur = rng.uniform(110.0, 320.0);
        out[fr] = factors.pitch_contour[fr] > 0.0 ? cur : 0.0;
    }
    return out;
}

std::vector<const CorpusItem*> Corpus::split(const std::string& name) const {
    std::vector<const CorpusItem*> out;
    for (const auto& it : items)
        if (it.split == name) out.push_back(&it);
    return out;
}

Corpus plan_corpus(const CorpusConfig& cfg) {
    double fsum = cfg.train_frac + cfg.valid_frac + cfg.test_frac;
    if (cfg.train_frac < 0 || cfg.valid_frac < 0 || cfg.test_frac < 0 ||
        std::abs(fsum - 1.0) > 1e-9)
        throw std::invalid_argument("corpus: split fractions must be non-negative and sum to 1");
    int n_train = static_cast<int>(std::lround(cfg.n_utterances * cfg.train_frac));
    int n_valid = static_cast<int>(std::lround(cfg.n_utterances * cfg.valid_frac));
    int n_test = cfg.n_utterances - n_train - n_valid;

    FactorSampleConfig train_fc = cfg.factors;
    FactorSampleConfig test_fc = cfg.factors;
    if (cfg.disjoint_test_timbres) {
        std::vector<int> pool = cfg.factors.timbre_pool;
        if (pool.empty())
            for (int t = 0; t < kTimbreVocab; ++t) pool.push_back(t);
        size_t n_test_timbres = std::max<size_t>(1, pool.size() / 4);
        test_fc.timbre_pool.assign(pool.end() - static_cast<long>(n_test_timbres), pool.end());
        train_fc.timbre_pool.assign(pool.begin(), pool.end() - static_cast<long>(n_test_timbres));
    }

    Corpus corpus;
    for (int i = 0; i < cfg.n_utterances; ++i) {
        CorpusItem item;
        std::string split = i < n_train ? "train" : (i < n_train + n_valid ? "valid" : "test");
        const FactorSampleConfig& fc = split == "test" ? test_fc : train_fc;
        // Each utterance is keyed by its own seed so generation order is free.
        uint64_t s = mix_seed(cfg.seed, static_cast<uint64_t>(i));
        Rng rng(s);
        item.factors = sample_factors(fc, rng);
        item.seed = mix_seed(s, 0xF00D);
        item.split = split;
        std::ostringstream id;
        id << split << "_" << std::setw(5) << std::setfill('0') << i;
        item.id = id.str();
        corpus.items.push_back(std::move(item));
    }
    (void)n_test;
    return corpus;
}

void write_factors(const std::string& path, const SyntheticFactors& f, uint64_t seed) {
    std::ofstream o(path);
    if (!o) throw std::runtime_error("write_factors: cannot open " + path);
    o << "timbre_id " << f.timbre_id << "\n";
    o << "emotion_id " << f.emotion_id << "\n";
    o << "language_id " << f.language_id << "\n";
    o << "seed " << seed << "\n";
    o << "content";
    for (int s : f.content) o << " " << s;
    o << "\npitch_contour";
    o << std::setprecision(17);
    for (double p : f.pitch_contour) o << " " << p;
    o << "\n";
}

std::pair<SyntheticFactors, uint64_t> read_factors(const std::string& path) {
    std::ifstream i(path);
    if (!i) throw std::runtime_error("read_factors: cannot open " + path);
    SyntheticFactors f;
    uint64_t seed = 0;
    std::string line;
    while (std::getline(i, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "timbre_id") ls >> f.timbre_id;
        else if (key == "emotion_id") ls >> f.emotion_id;
        else if (key == "language_id") ls >> f.language_id;
        else if (key == "seed") ls >> seed;
        else if (key == "content") {
            int v;
            while (ls >> v) f.content.push_back(v);
        } else if (key == "pitch_contour") {
            double v;
            while (ls >> v) f.pitch_contour.push_back(v);
        }
    }
    f.validate();
    return {f, seed};
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
    for (const char* split : {"train", "valid", "test"}) fs::create_directories(fs::path(dir) / split);
    std::ofstream manifest(fs::path(dir) / "manifest.tsv");
    manifest << "id\tsplit\tduration_s\n";
    for (const auto& item : corpus.items) {
        fs::path base = fs::path(dir) / item.split / item.id;
        Waveform w = generate_utterance(item.factors, item.seed);
        write_wav(base.string() + ".wav", w);
        write_factors(base.string() + ".factors", item.factors, item.seed);
        manifest << item.id << "\t" << item.split << "\t" << item.factors.duration_s() << "\n";
    }
}

Corpus read_corpus(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.tsv");
    if (!manifest) throw std::runtime_error("read_corpus: missing manifest in " + dir);
    Corpus corpus;
    std::string line;
    std::getline(manifest, line);  // header
    while (std::getline(manifest, line)) {
        std::istringstream ls(line);
        CorpusItem item;
        double dur;
        ls >> item.id >> item.split >> dur;
        auto [f, seed] = read_factors(
            (fs::path(dir) / item.split / (item.id + ".factors")).string());
        item.factors = std::move(f);
        item.seed = seed;
        corpus.items.push_back(std::move(item));
    }
    return corpus;
}

}  // namespace unicodec

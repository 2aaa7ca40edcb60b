#pragma once

// Factor-labeled synthetic speech-like corpus. Every utterance is a pure
// function of (factors, seed): a harmonic source at the pitch contour, shaped
// by a per-symbol spectral envelope (content), a per-speaker harmonic template
// (timbre) and a per-class pitch/energy modulation (emotion). Unvoiced
// segments use spectrally shaped pseudo-noise.

#include "unicodec/audio.hpp"
#include "unicodec/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace unicodec {

// Fixed vocabulary sizes of the toy factor space.
inline constexpr int kSampleRate = 4000;
inline constexpr int kContentVocab = 16;   // V_c
inline constexpr int kTimbreVocab = 8;     // V_t
inline constexpr int kEmotionVocab = 4;    // V_e
inline constexpr int kNumLanguages = 2;
inline constexpr double kSegmentMs = 80.0;  // one content symbol
inline constexpr double kPitchFrameMs = 40.0;
inline constexpr double kF0Min = 80.0;
inline constexpr double kF0Max = 400.0;
inline constexpr int kMaxHarmonics = 12;

struct SyntheticFactors {
    std::vector<int> content;          // one symbol per 80 ms segment
    int timbre_id = 0;                 // [0, V_t)
    std::vector<double> pitch_contour;  // per 40 ms frame; 0 = unvoiced
    int emotion_id = 0;                // [0, V_e)
    int language_id = 0;               // {0, 1}

    void validate() const;  // throws on any invariant violation
    int num_frames() const { return static_cast<int>(pitch_contour.size()); }
    double duration_s() const { return content.size() * kSegmentMs / 1000.0; }
};

// True iff this content symbol is produced unvoiced.
bool symbol_unvoiced(int symbol);

// The fixed language-0 <-> language-1 content bijection (S2ST ground truth).
int translate_symbol(int symbol, int src_lang, int tgt_lang);

// Per-symbol spectral envelope evaluated at frequency hz; fixed given
// (symbol, language), independent of any utterance.
double content_envelope(int symbol, int language, double hz);

// Per-timbre harmonic amplitude template, h in [1, kMaxHarmonics].
double timbre_template(int timbre_id, int harmonic);

// Emotion realization: pitch modulation depth/rate + energy modulation.
struct EmotionPattern {
    double pitch_depth, pitch_rate_hz, energy_depth, energy_rate_hz;
};
EmotionPattern emotion_pattern(int emotion_id);

Waveform generate_utterance(const SyntheticFactors& factors, uint64_t seed);

struct FactorSampleConfig {
    double min_duration_s = 1.6;
    double max_duration_s = 4.0;
    std::vector<int> timbre_pool;  // empty = all
    int language_id = -1;          // -1 = random
};
SyntheticFactors sample_factors(const FactorSampleConfig& cfg, Rng& rng);

// Resamples the pitch contour (used by prosody-swap protocols): keeps voicing
// from `factors` but replaces voiced f0 with a piecewise-constant random value
// per `segment_ms`.
std::vector<double> normalized_pitch_contour(const SyntheticFactors& factors, double segment_ms,
                                             Rng& rng);

struct CorpusConfig {
    int n_utterances = 100;
    double train_frac = 0.8, valid_frac = 0.1, test_frac = 0.1;
    FactorSampleConfig factors;
    uint64_t seed = 1;
    bool disjoint_test_timbres = false;  // test split drawn from held-out timbres
};

struct CorpusItem {
    std::string id;
    std::string split;  // train / valid / test
    SyntheticFactors factors;
    uint64_t seed = 0;  // waveform generation seed
};

struct Corpus {
    std::vector<CorpusItem> items;
    std::vector<const CorpusItem*> split(const std::string& name) const;
};

// Deterministic in-memory corpus plan; audio is generated on demand so
// parallel and serial builds are identical.
Corpus plan_corpus(const CorpusConfig& cfg);

// Materializes <dir>/{train,valid,test}/<id>.wav + <id>.factors + manifest.tsv.
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus read_corpus(const std::string& dir);

void write_factors(const std::string& path, const SyntheticFactors& f, uint64_t seed);
std::pair<SyntheticFactors, uint64_t> read_factors(const std::string& path);

}  // namespace unicodec

#pragma once

// Disentanglement protocols and accounting: token-swap resynthesis (voice and
// pitch conversion), f0-normalized donors, the non-disentangled ablation
// config, bitrate measurement and frozen waveform probes for content, timbre
// and emotion.

#include "unicodec/pitch.hpp"
#include "unicodec/probe.hpp"
#include "unicodec/trainer.hpp"

namespace unicodec {

// Which signal each slot of the (G, S, P) triplet is taken from.
enum class SwapSource { Original, Donor };

struct SwapSpec {
    SwapSource g = SwapSource::Original;
    SwapSource s = SwapSource::Original;
    SwapSource p = SwapSource::Original;
};

// "O/O/N" notation: O = original, N (or D) = donor. Throws on anything else.
SwapSpec parse_swap_spec(const std::string& text);
std::string format_swap_spec(const SwapSpec& spec);

// Assembles a triplet per `spec`. When source and donor differ in length the
// local streams are truncated to the shorter of the two.
TokenTriplet assemble_swap(const TokenTriplet& original, const TokenTriplet& donor,
                           const SwapSpec& spec);

// Tokenize both signals, assemble per `spec`, decode.
Waveform swap_resynthesize(const UniCodecModel& model, const TeacherModel& teacher,
                           const AcousticCodec& codec, const Waveform& source,
                           const Waveform& donor, const SwapSpec& spec,
                           const SamplingConfig& sampling = {}, uint64_t seed = 0);

// The f0-normalized twin of an utterance: identical factors except that the
// voiced contour is replaced by a piecewise-constant random value per
// `segment_ms` of voiced speech.
Waveform normalized_twin(const SyntheticFactors& factors, uint64_t wave_seed,
                         double segment_ms = 500.0, uint64_t contour_seed = 11);

// Ablation ("w/o disen"): shared local encoder and no distillation loss.
// Touches nothing else.
TrainConfig ablation_no_disen(TrainConfig cfg);

// ---------------------------------------------------------------------------
// Bitrate accounting over the two local token streams of a set of utterances.

struct BitrateReport {
    double seconds = 0.0;
    double raw_bps = 0.0;      // packed payload: ceil(log2 K) bits per index
    double entropy_bps = 0.0;  // empirical histogram entropy per stream
};

// `frame_ms` is the local token grid (40 ms -> 25 fps).
BitrateReport measure_bitrate(const std::vector<TokenTriplet>& streams, int codewords,
                              double frame_ms = 40.0);

// ---------------------------------------------------------------------------
// Frozen waveform probes. Features are fixed functions of the signal; the
// probes are trained once on ground-truth synthetic audio and reused for
// every evaluation so converted outputs are judged against the same ruler.

// One row per 80 ms content segment: mean log magnitude spectrum.
ag::Mat segment_probe_features(const Waveform& wave);
// 1 x D utterance summary: mean and standard deviation of the log spectrum
// over time plus coarse energy-modulation statistics.
ag::Mat utterance_probe_features(const Waveform& wave);

struct EvalProbes {
    LinearProbe content;  // per segment -> symbol id
    LinearProbe timbre;   // per utterance -> timbre id
    LinearProbe emotion;  // per utterance -> emotion id
};

EvalProbes train_eval_probes(const std::vector<const CorpusItem*>& items, uint64_t seed = 17);

// Fraction of segments whose probed symbol matches `ref_symbols`; the wave is
// truncated or the reference shortened to whichever is fewer segments.
double probe_content_accuracy(const EvalProbes& probes, const Waveform& wave,
                              const std::vector<int>& ref_symbols);
int probe_timbre(const EvalProbes& probes, const Waveform& wave);
int probe_emotion(const EvalProbes& probes, const Waveform& wave);

}  // namespace unicodec

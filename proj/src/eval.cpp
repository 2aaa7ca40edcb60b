#include "unicodec/eval.hpp"

#include <cmath>
#include <stdexcept>

namespace unicodec {

namespace {

SwapSource parse_slot(const std::string& text) {
    if (text == "O") return SwapSource::Original;
    if (text == "N" || text == "D") return SwapSource::Donor;
    throw std::invalid_argument("swap spec slot must be O, N or D, got '" + text + "'");
}

}  // namespace

SwapSpec parse_swap_spec(const std::string& text) {
    size_t a = text.find('/');
    size_t b = a == std::string::npos ? std::string::npos : text.find('/', a + 1);
    if (a == std::string::npos || b == std::string::npos ||
        text.find('/', b + 1) != std::string::npos)
        throw std::invalid_argument("swap spec must have exactly three slots: " + text);
    SwapSpec spec;
    spec.g = parse_slot(text.substr(0, a));
    spec.s = parse_slot(text.substr(a + 1, b - a - 1));
    spec.p = parse_slot(text.substr(b + 1));
    return spec;
}

std::string format_swap_spec(const SwapSpec& spec) {
    auto slot = [](SwapSource s) { return s == SwapSource::Original ? "O" : "N"; };
    return std::string(slot(spec.g)) + "/" + slot(spec.s) + "/" + slot(spec.p);
}

TokenTriplet assemble_swap(const TokenTriplet& original, const TokenTriplet& donor,
                           const SwapSpec& spec) {
    if (original.s.cols() != donor.s.cols() || original.p.cols() != donor.p.cols())
        throw std::invalid_argument("assemble_swap: group count mismatch between sources");
    const Eigen::Index t = std::min(original.s.rows(), donor.s.rows());
    TokenTriplet out;
    out.g = spec.g == SwapSource::Original ? original.g : donor.g;
    out.s = (spec.s == SwapSource::Original ? original.s : donor.s).topRows(t);
    out.p = (spec.p == SwapSource::Original ? original.p : donor.p).topRows(t);
    return out;
}

Waveform swap_resynthesize(const UniCodecModel& model, const TeacherModel& teacher,
                           const AcousticCodec& codec, const Waveform& source,
                           const Waveform& donor, const SwapSpec& spec,
                           const SamplingConfig& sampling, uint64_t seed) {
    TokenTriplet orig = tokenize_utterance(model, teacher, source);
    TokenTriplet don = tokenize_utterance(model, teacher, donor);
    return synthesize(model, codec, assemble_swap(orig, don, spec), sampling, seed);
}

Waveform normalized_twin(const SyntheticFactors& factors, uint64_t wave_seed, double segment_ms,
                         uint64_t contour_seed) {
    SyntheticFactors twin = factors;
    Rng rng(mix_seed(contour_seed, 0xF0C0));
    twin.pitch_contour = normalized_pitch_contour(factors, segment_ms, rng);
    return generate_utterance(twin, wave_seed);
}

TrainConfig ablation_no_disen(TrainConfig cfg) {
    cfg.arch.disentangled = false;
    cfg.weights.lambda_se = 0.0;
    return cfg;
}

// ---------------------------------------------------------------------------

BitrateReport measure_bitrate(const std::vector<TokenTriplet>& streams, int codewords,
                              double frame_ms) {
    if (codewords < 2) throw std::invalid_argument("measure_bitrate: codewords must be >= 2");
    BitrateReport report;
    Eigen::Index frames = 0, groups = 0;
    for (const TokenTriplet& tr : streams) {
        if (tr.s.rows() != tr.p.rows() || tr.s.cols() != tr.p.cols())
            throw std::invalid_argument("measure_bitrate: stream shape mismatch");
        frames += tr.s.rows();
        groups = tr.s.cols();
    }
    if (frames == 0) return report;

    Eigen::MatrixXi all_s(frames, groups), all_p(frames, groups);
    Eigen::Index row = 0;
    for (const TokenTriplet& tr : streams) {
        all_s.middleRows(row, tr.s.rows()) = tr.s;
        all_p.middleRows(row, tr.p.rows()) = tr.p;
        row += tr.s.rows();
    }

    report.seconds = static_cast<double>(frames) * frame_ms / 1000.0;
    const double bits_per_index = std::ceil(std::log2(static_cast<double>(codewords)));
    const double indices = static_cast<double>(frames * groups);
    report.raw_bps = 2.0 * indices * bits_per_index / report.seconds;
    // histogram_entropy_bits sums its per-group histograms, so it is already
    // bits per frame for one stream.
    report.entropy_bps = static_cast<double>(frames) *
                         (histogram_entropy_bits(all_s, codewords) +
                          histogram_entropy_bits(all_p, codewords)) /
                         report.seconds;
    return report;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLogFloor = 1e-6;

// Magnitude of the DFT of a mean-removed series at `hz`, normalized by length.
double modulation_mag(const std::vector<double>& series, double hz, double dt) {
    if (series.empty()) return 0.0;
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());
    double re = 0.0, im = 0.0;
    for (size_t i = 0; i < series.size(); ++i) {
        const double phase = 2.0 * M_PI * hz * static_cast<double>(i) * dt;
        re += (series[i] - mean) * std::cos(phase);
        im -= (series[i] - mean) * std::sin(phase);
    }
    return std::hypot(re, im) / static_cast<double>(series.size());
}

}  // namespace

ag::Mat segment_probe_features(const Waveform& wave) {
    FrameFeatures spec = stft(wave);
    const StftConfig cfg;
    const int seg_len = static_cast<int>(kSegmentMs / 1000.0 * wave.sample_rate);
    const int n_seg = static_cast<int>(wave.samples.size()) / seg_len;
    if (n_seg == 0) throw std::invalid_argument("segment_probe_features: wave too short");
    const int hop = cfg.hop_len(wave.sample_rate);
    const int half_window = cfg.window_len(wave.sample_rate) / 2;

    ag::Mat out = ag::Mat::Zero(n_seg, spec.values.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_seg);
    for (Eigen::Index i = 0; i < spec.values.rows(); ++i) {
        int seg = (static_cast<int>(i) * hop + half_window) / seg_len;
        if (seg >= n_seg) seg = n_seg - 1;
        out.row(seg) += (spec.values.row(i).array() + kLogFloor).log().matrix();
        counts(seg) += 1.0;
    }
    for (int s = 0; s < n_seg; ++s) {
        if (counts(s) > 0.0) out.row(s) /= counts(s);
        // Per-segment loudness removal: the envelope shape is the cue.
        out.row(s).array() -= out.row(s).mean();
    }
    return out;
}

ag::Mat utterance_probe_features(const Waveform& wave) {
    FrameFeatures spec = stft(wave);
    const StftConfig cfg;
    const double bin_hz = static_cast<double>(wave.sample_rate) /
                          static_cast<double>(cfg.window_len(wave.sample_rate));
    PitchTrack track = pitch_track(wave);

    // Harmonic amplitude profile sampled at multiples of the tracked f0: the
    // timbre cue lives in harmonic index, not absolute frequency. Per-frame
    // log amplitudes are mean-removed over harmonics so the content envelope
    // and loudness largely cancel before averaging.
    Eigen::VectorXd profile = Eigen::VectorXd::Zero(kMaxHarmonics);
    Eigen::VectorXd profile_n = Eigen::VectorXd::Zero(kMaxHarmonics);
    const int spec_per_pitch = static_cast<int>(kPitchFrameMs / cfg.hop_ms);
    std::vector<double> f0s;
    for (size_t t = 0; t < track.frames.size(); ++t) {
        if (!track.frames[t].voiced) continue;
        f0s.push_back(track.frames[t].f0);
        for (int j = 0; j < spec_per_pitch; ++j) {
            const Eigen::Index row = static_cast<Eigen::Index>(t) * spec_per_pitch + j;
            if (row >= spec.values.rows()) break;
            Eigen::VectorXd frame = Eigen::VectorXd::Zero(kMaxHarmonics);
            int n_harm = 0;
            for (int h = 0; h < kMaxHarmonics; ++h) {
                const double hz = track.frames[t].f0 * (h + 1);
                if (hz >= wave.sample_rate / 2.0) break;
                const Eigen::Index bin = static_cast<Eigen::Index>(std::lround(hz / bin_hz));
                if (bin >= spec.values.cols()) break;
                // Max over adjacent bins: robust to the window mainlobe.
                double amp = spec.values(row, bin);
                if (bin > 0) amp = std::max(amp, spec.values(row, bin - 1));
                if (bin + 1 < spec.values.cols()) amp = std::max(amp, spec.values(row, bin + 1));
                frame(h) = std::log(amp + kLogFloor);
                ++n_harm;
            }
            if (n_harm == 0) continue;
            const double mean = frame.head(n_harm).mean();
            for (int h = 0; h < n_harm; ++h) {
                profile(h) += frame(h) - mean;
                profile_n(h) += 1.0;
            }
        }
    }
    for (int h = 0; h < kMaxHarmonics; ++h)
        if (profile_n(h) > 0.0) profile(h) /= profile_n(h);

    // Pitch statistics and contour modulation (the emotion cue).
    double voiced_frac = track.frames.empty()
                             ? 0.0
                             : static_cast<double>(f0s.size()) /
                                   static_cast<double>(track.frames.size());
    double f0_mean = 0.0, f0_std = 0.0;
    if (!f0s.empty()) {
        for (double f : f0s) f0_mean += f;
        f0_mean /= static_cast<double>(f0s.size());
        for (double f : f0s) f0_std += (f - f0_mean) * (f - f0_mean);
        f0_std = std::sqrt(f0_std / static_cast<double>(f0s.size()));
    }

    // Log-energy envelope on the 10 ms grid.
    std::vector<double> energy(static_cast<size_t>(spec.values.rows()));
    for (Eigen::Index i = 0; i < spec.values.rows(); ++i)
        energy[static_cast<size_t>(i)] = std::log(spec.values.row(i).sum() + kLogFloor);
    double e_mean = 0.0, e_std = 0.0;
    for (double e : energy) e_mean += e;
    e_mean /= static_cast<double>(energy.size());
    for (double e : energy) e_std += (e - e_mean) * (e - e_mean);
    e_std = std::sqrt(e_std / static_cast<double>(energy.size()));

    constexpr int kModBins = 8;  // 1..8 Hz
    ag::Mat out(1, kMaxHarmonics + 3 + 2 * kModBins + 1);
    Eigen::Index c = 0;
    for (int h = 0; h < kMaxHarmonics; ++h) out(0, c++) = profile(h);
    out(0, c++) = voiced_frac;
    out(0, c++) = f0_mean / kF0Max;
    out(0, c++) = f0_std / kF0Max;
    const double dt_energy = cfg.hop_ms / 1000.0;
    const double dt_pitch = kPitchFrameMs / 1000.0;
    for (int f = 1; f <= kModBins; ++f) out(0, c++) = modulation_mag(energy, f, dt_energy);
    for (int f = 1; f <= kModBins; ++f) out(0, c++) = modulation_mag(f0s, f, dt_pitch);
    out(0, c++) = e_std;
    return out;
}

EvalProbes train_eval_probes(const std::vector<const CorpusItem*>& items, uint64_t seed) {
    if (items.empty()) throw std::invalid_argument("train_eval_probes: no items");
    ag::Mat seg_x;
    std::vector<int> seg_y;
    ag::Mat utt_x;
    std::vector<int> timbre_y, emotion_y;
    for (const CorpusItem* item : items) {
        Waveform wave = generate_utterance(item->factors, item->seed);
        ag::Mat seg = segment_probe_features(wave);
        const Eigen::Index n = std::min<Eigen::Index>(
            seg.rows(), static_cast<Eigen::Index>(item->factors.content.size()));
        const Eigen::Index base = seg_x.rows();
        seg_x.conservativeResize(base + n, seg.cols());
        seg_x.bottomRows(n) = seg.topRows(n);
        for (Eigen::Index i = 0; i < n; ++i)
            seg_y.push_back(item->factors.language_id * kContentVocab +
                            item->factors.content[static_cast<size_t>(i)]);

        ag::Mat utt = utterance_probe_features(wave);
        utt_x.conservativeResize(utt_x.rows() + 1, utt.cols());
        utt_x.bottomRows(1) = utt;
        timbre_y.push_back(item->factors.timbre_id);
        emotion_y.push_back(item->factors.emotion_id);
    }
    EvalProbes probes;
    ProbeConfig pc;
    pc.seed = seed;
    pc.steps = 1000;
    // A softmax region is convex, and each symbol's envelope differs per
    // language, so the content probe works over (language, symbol) classes;
    // prediction reduces mod kContentVocab.
    probes.content = train_probe(seg_x, seg_y, kNumLanguages * kContentVocab, pc);
    probes.timbre = train_probe(utt_x, timbre_y, kTimbreVocab, pc);
    probes.emotion = train_probe(utt_x, emotion_y, kEmotionVocab, pc);
    return probes;
}

double probe_content_accuracy(const EvalProbes& probes, const Waveform& wave,
                              const std::vector<int>& ref_symbols) {
    if (ref_symbols.empty())
        throw std::invalid_argument("probe_content_accuracy: empty reference");
    ag::Mat seg = segment_probe_features(wave);
    const Eigen::Index n =
        std::min<Eigen::Index>(seg.rows(), static_cast<Eigen::Index>(ref_symbols.size()));
    if (n == 0) throw std::invalid_argument("probe_content_accuracy: no segments");
    double hits = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        hits += probes.content.predict(seg.row(i)) % kContentVocab ==
                ref_symbols[static_cast<size_t>(i)];
    return hits / static_cast<double>(n);
}

int probe_timbre(const EvalProbes& probes, const Waveform& wave) {
    return probes.timbre.predict(utterance_probe_features(wave).row(0));
}

int probe_emotion(const EvalProbes& probes, const Waveform& wave) {
    return probes.emotion.predict(utterance_probe_features(wave).row(0));
}

}  // namespace unicodec

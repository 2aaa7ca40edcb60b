#pragma once

// Frozen stand-ins for the pretrained dependencies: a small supervised
// spectrogram transformer whose middle layer keeps acoustic detail and whose
// top layer is content-predictive ("teacher"), and a group-VQ autoencoder
// over 20 ms frames whose decoder drives a differentiable harmonic+noise
// synthesizer ("acoustic codec"). Both are trained once, checked against
// quality floors, then frozen.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "unicodec/audio.hpp"
#include "unicodec/modules.hpp"
#include "unicodec/quantizer.hpp"
#include "unicodec/synthcorpus.hpp"

namespace unicodec {

// Magnitude spectrogram on an exact 20 ms grid: the waveform is truncated to
// whole 40 ms frames and zero-padded by half a window so an utterance with T
// frames at 40 ms yields exactly 2T rows.
FrameFeatures acoustic_spec(const Waveform& wave);

struct TeacherConfig {
    int width = 64;  // per-layer channels; stacking to 40 ms doubles this
    int layers = 4;
    int heads = 4;
    int ff = 256;
    int l_mid = 2;  // "acoustic" layer
    int l_top = 4;  // "semantic" layer
    int max_frames = 1024;
};

struct TeacherModel {
    TeacherConfig cfg;
    std::shared_ptr<nn::ParamStore> params;
    nn::Linear in_proj;
    nn::PositionalEmbedding pos;
    std::vector<nn::TransformerEncoderLayer> blocks;

    TeacherModel() = default;
    TeacherModel(const TeacherConfig& cfg, uint64_t seed);

    // Output of transformer block `layer` (1-based) on a 20 ms spectrogram.
    Tensor layer_output(const Tensor& spec20, int layer) const;
    // Value-only convenience on a waveform.
    Mat features(const Waveform& wave, int layer) const;
    uint64_t checksum() const { return params->checksum(); }

    void save(const std::string& path) const;
    static TeacherModel load(const std::string& path);
};

struct TeacherTrainConfig {
    TeacherConfig arch;
    int steps = 400;
    int batch_utterances = 4;
    double lr = 1e-3;
    double regression_weight = 1.0;  // spectrogram head at l_mid
    double min_content_accuracy = 0.9;
    uint64_t seed = 11;
};

// Trains with a content-classification head at l_top and a spectrogram
// regression head at l_mid, checks the content floor on the valid split,
// drops the heads and freezes the trunk. Throws if the floor is unmet.
TeacherModel train_teacher(const Corpus& corpus, const TeacherTrainConfig& cfg);

// (S_se, A_ac): l_top / l_mid features stacked two-at-a-time to the 40 ms
// grid (channels double to 2*width); odd trailing frame dropped.
std::pair<FrameFeatures, FrameFeatures> extract_features(const TeacherModel& teacher,
                                                         const Waveform& wave);

// --------------------------------------------------------------------------
// Differentiable synthesizer backend.

// Fixed pseudo-noise basis: `bands` band-limited noise signals as columns,
// deterministic in (band, sample) so longer requests extend shorter ones.
Mat make_noise_basis(int samples, int sample_rate, int bands, uint64_t seed);

// f0: T x 1 Hz, voiced: T x 1 in [0,1], amps: T x H, noise_gains: T x B.
// Output is (T*frame_len) x 1. Per sample n in frame t:
//   y(n) = voiced_t * sum_h amps_{t,h} sin(h phi(n)) + (1-voiced_t) * sum_b
//          gains_{t,b} basis(n,b),
// with phi the cumulative phase of the per-frame f0 (continuous across
// frames). Harmonics above 0.98 * Nyquist are masked. Differentiable in all
// four inputs, including f0 through the phase accumulation.
Tensor harmonic_synth(const Tensor& f0, const Tensor& voiced, const Tensor& amps,
                      const Tensor& noise_gains, int sample_rate, int frame_len,
                      const Mat& noise_basis);

// --------------------------------------------------------------------------
// Acoustic codec.

struct AcCodecConfig {
    int groups = 4;      // G_a
    int codewords = 256; // K_a
    int latent = 64;
    int width = 96;
    int heads = 4;
    int ff = 256;
    int enc_layers = 2, dec_layers = 2;
    int harmonics = kMaxHarmonics;
    int noise_bands = 16;
    int sample_rate = kSampleRate;
    int max_frames = 1024;
};

struct AcousticCodec {
    AcCodecConfig cfg;
    std::shared_ptr<nn::ParamStore> params;
    nn::Linear enc_in, enc_out;
    nn::PositionalEmbedding enc_pos, dec_pos;
    std::vector<nn::TransformerEncoderLayer> enc_blocks, dec_blocks;
    GroupQuantizer quant;
    nn::Linear dec_in;
    nn::Linear head_f0, head_voiced, head_amps, head_noise;

    AcousticCodec() = default;
    AcousticCodec(const AcCodecConfig& cfg, uint64_t seed);

    Tensor encode(const Tensor& spec20) const;  // T_a x latent
    // Quantized 20 ms latent -> waveform tensor (T_a * frame_len x 1).
    Tensor decode_wave(const Tensor& quantized_latent) const;
    uint64_t checksum() const { return params->checksum(); }

    void save(const std::string& path) const;
    static AcousticCodec load(const std::string& path);
};

// Hard-token round trip. Tokenize is deterministic nearest-neighbor; decode
// rejects indices outside [0, K_a).
Eigen::MatrixXi acoustic_tokenize(const AcousticCodec& codec, const Waveform& wave);
Waveform acoustic_decode(const AcousticCodec& codec, const Eigen::MatrixXi& tokens);

// Probability-weighted codeword mixture per group (each T_a x K_a); exactly
// one-hot rows reproduce the hard path. Keeps the graph for feature losses.
Tensor acoustic_decode_soft(const AcousticCodec& codec, const std::vector<Tensor>& soft_probs);

struct AcCodecTrainConfig {
    AcCodecConfig arch;
    int steps = 500;
    int batch_utterances = 2;
    double lr = 1e-3;
    double tau_start = 2.0, tau_end = 0.5;
    double spec_weight = 1.0, f0_weight = 30.0, voiced_weight = 10.0;
    double max_round_trip_ffe = 0.1;  // valid-split floor; throws above
    uint64_t seed = 17;
};

AcousticCodec train_acoustic_codec(const Corpus& corpus, const AcCodecTrainConfig& cfg);

}  // namespace unicodec

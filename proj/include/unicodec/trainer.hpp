#pragma once

// The assembled UniCodec model (triplet encoders, two group quantizers,
// fusion, generative decoder) and its single-stage joint training against a
// frozen teacher and acoustic codec, with deterministic checkpoint resume.

#include <memory>
#include <string>
#include <vector>

#include "unicodec/checkpoint.hpp"
#include "unicodec/encoders.hpp"
#include "unicodec/fusion_decoder.hpp"
#include "unicodec/losses.hpp"
#include "unicodec/quantizer.hpp"
#include "unicodec/synthcorpus.hpp"
#include "unicodec/teacher.hpp"

namespace unicodec {

struct UniCodecArch {
    GlobalEncoderConfig global;  // E_g; out_dim = C_g
    int teacher_dim = 128;       // stacked teacher feature width (2 x teacher width)
    int c_s = 128, c_p = 128, c_a = 128;
    int groups = 2;       // M per local stream
    int codewords = 256;  // K
    int group_width = 32; // F in every channel-wise attention
    int mlp_hidden = 128; // lambda / beta MLPs
    GenDecoderConfig gen; // groups/codewords must match the acoustic codec
    // Ablation ("w/o disen"): residual stream reads the same projected
    // features as the semantic stream instead of Eq. 4/5; pairs with
    // lambda_se = 0 in the loss weights.
    bool disentangled = true;
};

struct UniCodecModel {
    UniCodecArch arch;
    std::shared_ptr<nn::ParamStore> params;
    GlobalEncoder global;
    nn::Linear sem_proj;       // teacher S_se -> C_s
    ChannelAttention cross_att, res_att;
    GroupQuantizer quant_s, quant_p;
    nn::Linear distill_proj;   // quantized S -> teacher width, Eq. 10's S'
    LocalFuser fuser;
    GlobalModulator mod;
    GenerativeDecoder gen;

    UniCodecModel() = default;
    UniCodecModel(const UniCodecArch& arch, uint64_t seed);
    uint64_t checksum() const { return params->checksum(); }

    void save(const std::string& path,
              const std::map<std::string, std::string>& extra_meta = {}) const;
    static UniCodecModel load(const std::string& path);
};

// 10 ms magnitude spectrogram feeding E_g.
FrameFeatures global_spec(const Waveform& wave);

struct EncodedUtterance {
    Tensor g;        // 1 x C_g
    Tensor s_prime;  // T x C_s, pre-quantization
    Tensor p_res;    // T x C_p, pre-quantization
    QuantizationResult s, p;
};

// Full encoder pass. Train mode draws Gumbel noise from `rng`.
EncodedUtterance encode_utterance(const UniCodecModel& model, const TeacherModel& teacher,
                                  const Waveform& wave, QuantizeMode mode, double tau,
                                  Rng* rng = nullptr);

// Inference-time token triplet: the global embedding plus hard indices.
struct TokenTriplet {
    Mat g;              // 1 x C_g
    Eigen::MatrixXi s;  // T x M
    Eigen::MatrixXi p;  // T x M
};

TokenTriplet tokenize_utterance(const UniCodecModel& model, const TeacherModel& teacher,
                                const Waveform& wave);

// Dequantize a triplet, fuse, generate acoustic tokens, decode. Generation is
// greedy when sampling.temperature <= 0.
Waveform synthesize(const UniCodecModel& model, const AcousticCodec& codec,
                    const TokenTriplet& triplet, const SamplingConfig& sampling, uint64_t seed);

struct TrainConfig {
    UniCodecArch arch;
    double lr = 4e-4;
    double batch_seconds = 40.0;
    int steps = 400;
    uint64_t seed = 1;
    double tau_start = 2.0, tau_end = 0.5;
    LossWeights weights;
    RateBudget budget;
    int valid_every = 50;
    int valid_utterances = 4;
};

struct Trainer {
    TrainConfig cfg;
    UniCodecModel model;
    const TeacherModel* teacher = nullptr;
    const AcousticCodec* codec = nullptr;
    nn::Adam opt;
    int step = 0;
    std::vector<std::string> metrics;  // CSV rows, header first
};

Trainer make_trainer(const TrainConfig& cfg, const TeacherModel& teacher,
                     const AcousticCodec& codec);

// One batch: forward through encoders -> quantizers -> fusion -> ar_score ->
// losses, one backward, one Adam update. Frozen modules are untouched.
// Throws on non-finite loss. Deterministic in (cfg.seed, step).
LossReport train_step(Trainer& tr, const std::vector<const CorpusItem*>& items);

// Full run over the corpus train split with periodic validation; keeps the
// best-by-validation checkpoint at <out_dir>/unicodec_best.ckpt, the latest
// at <out_dir>/unicodec_last.ckpt and metrics at <out_dir>/metrics.csv.
Trainer train_unicodec(const TrainConfig& cfg, const Corpus& corpus, const TeacherModel& teacher,
                       const AcousticCodec& codec, const std::string& out_dir);

// Resume plumbing: optimizer state, step counter and frozen-module checksums
// ride along with the parameters.
void save_trainer(const std::string& path, const Trainer& tr);
Trainer load_trainer(const std::string& path, const TeacherModel& teacher,
                     const AcousticCodec& codec);

}  // namespace unicodec

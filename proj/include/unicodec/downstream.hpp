#pragma once

// Toy token language models over UniCodec triplets: TTS (symbols -> joint
// tokens), S2ST (source joint tokens -> target joint tokens), ASR (joint
// tokens -> symbols) and SER (pooled embeddings -> emotion). All of them
// treat the UniCodec, teacher and acoustic codec as frozen feature
// extractors.

#include <string>
#include <vector>

#include "unicodec/trainer.hpp"

namespace unicodec {

// One utterance reduced to its discrete views. `tokens` stacks the M
// semantic columns first, then the M residual columns (the paper's c_t).
struct JointSequence {
    Eigen::MatrixXi tokens;    // T x 2M
    std::vector<int> symbols;  // content symbols, one per 80 ms
    Mat g;                     // 1 x C_g
    int language = 0;
    int emotion = 0;
    int timbre = 0;
};

JointSequence joint_tokenize(const UniCodecModel& model, const TeacherModel& teacher,
                             const CorpusItem& item);

// ---------------------------------------------------------------------------
// Shared multi-head frame LM core: a causal transformer whose frame inputs
// are concatenated per-column embeddings and whose outputs are one softmax
// head per column.

struct FrameLmConfig {
    int layers = 2;
    int width = 64;
    int ff = 128;
    int heads = 4;
    int columns = 4;     // token columns per frame (2M for joint tokens)
    int vocab = 256;     // per-column codeword count
    int max_positions = 2048;
    bool with_cross = false;
};

struct FrameLm {
    FrameLmConfig cfg;
    std::vector<nn::Embedding> tok_emb;  // per column, dim width/columns
    Tensor start;                        // 1 x width
    nn::PositionalEmbedding pos;
    std::vector<nn::TransformerDecoderLayer> blocks;
    nn::LayerNorm ln_f;
    std::vector<nn::Linear> heads;  // per column, width -> vocab

    FrameLm() = default;
    FrameLm(nn::ParamStore& ps, const std::string& prefix, const FrameLmConfig& cfg, Rng& rng);

    // Embed one frame row of `tokens` per input position.
    Tensor embed_frames(const Eigen::MatrixXi& tokens) const;
    // Causal trunk over [prefix; start; embedded target frames], returning
    // the rows that predict the T target frames.
    Tensor trunk(const Tensor& prefix, const Eigen::MatrixXi& targets, const Tensor& memory) const;
};

// Mean CE of `targets` under the heads, optionally weighting the first
// `split` columns by w_head and the rest by w_tail (the paper's w_s > w_p).
struct FrameLmLoss {
    Tensor head_ce, tail_ce;  // per-token means over the two column blocks
    double w_head = 1.0, w_tail = 1.0;
    Tensor total() const;
};

FrameLmLoss frame_lm_loss(const FrameLm& lm, const Tensor& prefix, const Eigen::MatrixXi& targets,
                          int split, double w_head, double w_tail,
                          const Tensor& memory = Tensor());

// Greedy/sampled generation of exactly `frames` rows.
Eigen::MatrixXi frame_lm_generate(const FrameLm& lm, const Tensor& prefix, int frames,
                                  const SamplingConfig& sampling, uint64_t seed,
                                  const Tensor& memory = Tensor());

// ---------------------------------------------------------------------------
// TTS: content symbols -> joint tokens (Eq. 11-12).

struct TtsConfig {
    int layers = 4;
    int width = 256;
    int ff = 1024;
    int heads = 4;
    int m = 2;        // M per stream
    int k = 256;      // codewords per column
    int symbol_vocab = kContentVocab;
    double w_s = 2.0, w_p = 1.0;
    int max_positions = 2048;
    double lr = 1e-3;
    int steps = 200;
    uint64_t seed = 3;
    // Control experiment: train against tokens remapped by a fixed random
    // permutation of each column's vocabulary.
    bool shuffle_token_vocab = false;
};

struct TtsModel {
    TtsConfig cfg;
    std::shared_ptr<nn::ParamStore> params;
    nn::Embedding sym_emb;
    FrameLm lm;
    std::vector<std::vector<int>> vocab_perm;  // per column; identity unless shuffled

    TtsModel() = default;
    TtsModel(const TtsConfig& cfg, uint64_t seed);
    uint64_t checksum() const { return params->checksum(); }
};

struct TtsPair {
    std::vector<int> symbols;
    Eigen::MatrixXi tokens;  // T x 2M, T = 2 * symbols.size()
};

FrameLmLoss tts_score(const TtsModel& model, const TtsPair& pair);
TtsModel tts_train(const std::vector<TtsPair>& pairs, const TtsConfig& cfg);
// Exactly 2 frames per symbol; greedy when sampling.temperature <= 0.
Eigen::MatrixXi tts_generate(const TtsModel& model, const std::vector<int>& symbols,
                             const SamplingConfig& sampling, uint64_t seed);
// Eq. 11: G comes from the prompt, (S, P) from the LM.
TokenTriplet tts_infer(const TtsModel& model, const UniCodecModel& codec_model,
                       const std::vector<int>& symbols, const Waveform& prompt,
                       const SamplingConfig& sampling, uint64_t seed);

// ---------------------------------------------------------------------------
// S2ST: source joint tokens -> target joint tokens (Eq. 13-14).

struct S2stConfig {
    int enc_layers = 4;
    int dec_layers = 4;
    int width = 256;
    int ff = 1024;
    int heads = 4;
    int m = 2;
    int k = 256;
    int max_positions = 2048;
    double lr = 1e-3;
    int steps = 200;
    uint64_t seed = 5;
};

struct S2stModel {
    S2stConfig cfg;
    std::shared_ptr<nn::ParamStore> params;
    std::vector<nn::Embedding> src_emb;  // per source column
    nn::Embedding lang_emb;              // 2 languages x width
    nn::PositionalEmbedding enc_pos;
    std::vector<nn::TransformerEncoderLayer> enc_blocks;
    FrameLm lm;  // decoder with cross attention

    S2stModel() = default;
    S2stModel(const S2stConfig& cfg, uint64_t seed);
    uint64_t checksum() const { return params->checksum(); }

    // [emb(L_src); emb(L_tgt); embedded source frames] -> encoder memory.
    Tensor encode(const Eigen::MatrixXi& src_tokens, int l_src, int l_tgt) const;
};

struct S2stPair {
    JointSequence src, tgt;
};

// Parallel pair planning: the target utterance carries the translated content
// (the fixed language bijection) with independently sampled prosody.
std::vector<S2stPair> plan_s2st_pairs(const UniCodecModel& model, const TeacherModel& teacher,
                                      const std::vector<const CorpusItem*>& items, uint64_t seed);

Tensor s2st_score(const S2stModel& model, const S2stPair& pair);
S2stModel s2st_train(const std::vector<S2stPair>& pairs, const S2stConfig& cfg);
// Ĝ_tgt = G_src; target length equals source length.
JointSequence s2st_infer(const S2stModel& model, const JointSequence& src, int l_tgt,
                         const SamplingConfig& sampling, uint64_t seed);

// ---------------------------------------------------------------------------
// ASR: token prefix -> content symbols (Eq. 15). The token matrix is generic
// so teacher-unit and acoustic-token baselines train the same model.

struct AsrConfig {
    int layers = 2;
    int width = 128;
    int ff = 256;
    int heads = 4;
    int columns = 4;  // token columns
    int vocab = 256;  // per-column vocabulary
    int frames_per_symbol = 2;
    int symbol_vocab = kContentVocab;
    int max_positions = 2048;
    double lr = 1e-3;
    int steps = 200;
    uint64_t seed = 7;
};

struct AsrPair {
    Eigen::MatrixXi tokens;
    std::vector<int> symbols;
};

struct AsrModel {
    AsrConfig cfg;
    std::shared_ptr<nn::ParamStore> params;
    std::vector<nn::Embedding> tok_emb;
    FrameLm lm;  // single-column "frames" over the symbol vocabulary

    AsrModel() = default;
    AsrModel(const AsrConfig& cfg, uint64_t seed);
    uint64_t checksum() const { return params->checksum(); }
};

Tensor asr_score(const AsrModel& model, const AsrPair& pair);
AsrModel asr_train(const std::vector<AsrPair>& pairs, const AsrConfig& cfg);
std::vector<int> asr_infer(const AsrModel& model, const Eigen::MatrixXi& tokens);
// Mismatch fraction over aligned equal-length sequences.
double symbol_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp);

// Discretized teacher features: a k-means-seeded group quantizer over S_se
// rows (the paper's SSL-unit baseline).
struct TeacherUnits {
    GroupQuantizer quant;
    std::shared_ptr<nn::ParamStore> params;
};
TeacherUnits fit_teacher_units(const TeacherModel& teacher,
                               const std::vector<const CorpusItem*>& items, int groups,
                               int codewords, uint64_t seed);
Eigen::MatrixXi teacher_tokenize(const TeacherModel& teacher, const TeacherUnits& units,
                                 const Waveform& wave);

// ---------------------------------------------------------------------------
// SER: pooled embeddings + G -> emotion label (Eq. 16).

struct SerConfig {
    bool use_global = true;
    bool use_residual = true;  // false = semantic-only baseline
    int label_vocab = kEmotionVocab;
    double lr = 5e-2;
    int steps = 300;
    uint64_t seed = 9;
    bool shuffle_labels = false;  // chance-level control
};

struct SerModel {
    SerConfig cfg;
    std::shared_ptr<nn::ParamStore> params;
    nn::Linear head;

    SerModel() = default;
    SerModel(const SerConfig& cfg, int feature_dim, uint64_t seed);
    uint64_t checksum() const { return params->checksum(); }
};

// Mean-pooled quantized S (and optionally P) concatenated with G.
Mat ser_features(const UniCodecModel& model, const JointSequence& seq, const SerConfig& cfg);
SerModel ser_train(const UniCodecModel& model, const std::vector<JointSequence>& train_set,
                   const SerConfig& cfg);
int ser_infer(const UniCodecModel& model, const SerModel& ser, const JointSequence& seq);
double ser_accuracy(const UniCodecModel& model, const SerModel& ser,
                    const std::vector<JointSequence>& test_set);

}  // namespace unicodec

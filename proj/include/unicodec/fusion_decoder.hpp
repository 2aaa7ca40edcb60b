#pragma once

// Decoder side of the codec: local fusion of the dequantized semantic and
// residual streams, global (λ, β) modulation, the single-stage causal
// generative decoder over acoustic tokens, and waveform realization through
// the frozen acoustic codec.

#include <string>
#include <vector>

#include "unicodec/encoders.hpp"
#include "unicodec/modules.hpp"
#include "unicodec/teacher.hpp"

namespace unicodec {

struct FusionConfig {
    int c_s = 128;        // dequantized semantic width
    int c_p = 128;        // dequantized residual width
    int c_a = 128;        // fused local width (must be even for the reshape)
    int c_g = 64;         // global embedding width
    int group_width = 32; // F in the channel-wise attention blocks
    int mlp_hidden = 128; // λ / β MLPs
};

// Two channel-wise self-attention blocks (one per stream) whose outputs are
// added and linearly projected to c_a. Streams must share a width for the
// elementwise add.
struct LocalFuser {
    FusionConfig cfg;
    ChannelAttention att_s, att_p;
    nn::Linear proj;

    LocalFuser() = default;
    LocalFuser(nn::ParamStore& ps, const std::string& prefix, const FusionConfig& cfg, Rng& rng);
};

Tensor local_fuse(const Tensor& s_emb, const Tensor& p_emb, const LocalFuser& fuser);

// G -> (λ, β) through two separate MLPs; F_fused = λ ⊙ A_local + β with both
// vectors broadcast over frames.
struct GlobalModulator {
    nn::Mlp to_lambda, to_beta;

    GlobalModulator() = default;
    GlobalModulator(nn::ParamStore& ps, const std::string& prefix, const FusionConfig& cfg,
                    Rng& rng);
};

Tensor global_modulate(const Tensor& g, const Tensor& a_local, const GlobalModulator& mod);

// T x c_a fused frames -> 2T x c_a/2 conditioning rows (row-major split), so
// the conditioning prefix lives on the acoustic 20 ms grid.
Tensor reshape_condition(const Tensor& f_fused);

struct GenDecoderConfig {
    int layers = 4;
    int width = 256;
    int ff = 1024;
    int heads = 4;
    int groups = 4;     // G_a
    int codewords = 256;  // K_a
    int cond_dim = 64;  // c_a / 2 after the reshape
    int max_positions = 2048;
};

// Decoder-only causal transformer. The conditioning rows are projected and
// prepended as a prefix, so every token position attends to the full
// condition; token inputs are the concatenation of the per-group embeddings
// of the previous frame (width/groups each), with a learned start vector at
// step 0. eos is a dedicated extra index in group 0 only, so that head has
// codewords+1 classes.
struct GenerativeDecoder {
    GenDecoderConfig cfg;
    nn::Linear cond_in;
    Tensor start;  // 1 x width
    std::vector<nn::Embedding> tok_emb;
    nn::PositionalEmbedding pos;
    std::vector<nn::TransformerDecoderLayer> blocks;
    nn::LayerNorm ln_f;
    std::vector<nn::Linear> heads;

    // Token-carrying transformer positions in the most recent forward; the
    // single-stage contract says this equals the number of acoustic frames
    // scored or generated, independent of cfg.groups.
    mutable long last_frame_positions = 0;

    GenerativeDecoder() = default;
    GenerativeDecoder(nn::ParamStore& ps, const std::string& prefix, const GenDecoderConfig& cfg,
                      Rng& rng);

    int eos_index() const { return cfg.codewords; }
};

// Teacher-forced scoring of Eq. 7. frame_logp(t, g) = log p(a_t^g | a_<t, cond);
// with_eos adds the terminal step where group 0 must emit eos (eos_logp).
// When with_eos is false the eos logit is masked out of group 0's softmax so
// the per-frame distributions normalize over exactly K_a codewords.
struct ArScore {
    Tensor frame_logp;  // T_a x G_a
    Tensor eos_logp;    // 1 x 1; zero tensor when with_eos is false
    bool with_eos = false;
    // Per-group predicted distributions over the K_a codewords only (eos
    // excluded and renormalized), T_a x K_a each: the soft mixtures the
    // feature loss decodes through.
    std::vector<Tensor> mixture_probs;
    Tensor total() const;  // sum of all scored log-probabilities
};

ArScore ar_score(const GenerativeDecoder& dec, const Tensor& cond, const Eigen::MatrixXi& tokens,
                 bool with_eos = true);

struct SamplingConfig {
    double temperature = 0.8;  // <= 0 means greedy
    int top_k = 8;             // <= 0 disables the top-k filter
};

// One categorical draw from a logits row (greedy at temperature <= 0).
int sample_row(const Eigen::RowVectorXd& logits, const SamplingConfig& s, Rng& rng);

// Frame-by-frame sampling; every group of a frame is emitted from the same
// forward position. Stops when group 0 samples eos or after cond.rows()
// frames. Deterministic in (params, cond, sampling, seed).
Eigen::MatrixXi ar_generate(const GenerativeDecoder& dec, const Tensor& cond,
                            const SamplingConfig& sampling, uint64_t seed);

// Delegation to the frozen acoustic codec: hard tokens at inference, soft
// per-group mixtures when a gradient path is needed.
Waveform decode_to_waveform(const AcousticCodec& codec, const Eigen::MatrixXi& tokens);
Tensor decode_to_waveform_soft(const AcousticCodec& codec, const std::vector<Tensor>& soft_probs);

}  // namespace unicodec

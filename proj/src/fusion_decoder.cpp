#include "unicodec/fusion_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace unicodec {

using namespace ag;

LocalFuser::LocalFuser(nn::ParamStore& ps, const std::string& prefix, const FusionConfig& cfg_,
                       Rng& rng)
    : cfg(cfg_) {
    if (cfg.c_s != cfg.c_p)
        throw std::runtime_error("LocalFuser: S and P widths must match for the add");
    att_s = ChannelAttention(ps, prefix + ".s", cfg.c_s, cfg.group_width, rng);
    att_p = ChannelAttention(ps, prefix + ".p", cfg.c_p, cfg.group_width, rng);
    proj = nn::Linear(ps, prefix + ".proj", cfg.c_s, cfg.c_a, rng);
}

Tensor local_fuse(const Tensor& s_emb, const Tensor& p_emb, const LocalFuser& fuser) {
    if (s_emb.rows() != p_emb.rows())
        throw std::runtime_error("local_fuse: frame-count mismatch");
    Tensor s = fuser.att_s.forward(s_emb, s_emb);
    Tensor p = fuser.att_p.forward(p_emb, p_emb);
    return fuser.proj.forward(add(s, p));
}

GlobalModulator::GlobalModulator(nn::ParamStore& ps, const std::string& prefix,
                                 const FusionConfig& cfg, Rng& rng)
    : to_lambda(ps, prefix + ".lambda", cfg.c_g, cfg.mlp_hidden, cfg.c_a, rng),
      to_beta(ps, prefix + ".beta", cfg.c_g, cfg.mlp_hidden, cfg.c_a, rng) {}

Tensor global_modulate(const Tensor& g, const Tensor& a_local, const GlobalModulator& mod) {
    if (g.rows() != 1) throw std::runtime_error("global_modulate: G must be a single row");
    Tensor lambda = mod.to_lambda.forward(g);
    Tensor beta = mod.to_beta.forward(g);
    if (lambda.cols() != a_local.cols())
        throw std::runtime_error("global_modulate: width mismatch");
    return add_rowvec(mul_rowvec(a_local, lambda), beta);
}

Tensor reshape_condition(const Tensor& f_fused) {
    if (f_fused.cols() % 2 != 0)
        throw std::runtime_error("reshape_condition: fused width must be even");
    return reshape(f_fused, f_fused.rows() * 2, f_fused.cols() / 2);
}

GenerativeDecoder::GenerativeDecoder(nn::ParamStore& ps, const std::string& prefix,
                                     const GenDecoderConfig& cfg_, Rng& rng)
    : cfg(cfg_) {
    if (cfg.width % cfg.groups != 0)
        throw std::runtime_error("GenerativeDecoder: width not divisible by groups");
    cond_in = nn::Linear(ps, prefix + ".cond_in", cfg.cond_dim, cfg.width, rng);
    start = ps.add(prefix + ".start", nn::xavier_init(1, cfg.width, rng));
    const int edim = cfg.width / cfg.groups;
    for (int g = 0; g < cfg.groups; ++g) {
        const int vocab = cfg.codewords + (g == 0 ? 1 : 0);  // + eos in group 0
        tok_emb.emplace_back(ps, prefix + ".emb" + std::to_string(g), vocab, edim, rng);
    }
    pos = nn::PositionalEmbedding(ps, prefix + ".pos", cfg.max_positions, cfg.width, rng);
    for (int l = 0; l < cfg.layers; ++l)
        blocks.emplace_back(ps, prefix + ".blk" + std::to_string(l), cfg.width, cfg.heads, cfg.ff,
                            rng, /*with_cross=*/false);
    ln_f = nn::LayerNorm(ps, prefix + ".ln_f", cfg.width);
    for (int g = 0; g < cfg.groups; ++g) {
        const int k = cfg.codewords + (g == 0 ? 1 : 0);
        heads.emplace_back(ps, prefix + ".head" + std::to_string(g), cfg.width, k, rng);
    }
}

namespace {

// Input rows for the token part of the sequence: the start vector followed by
// the concatenated per-group embeddings of each given frame.
Tensor token_inputs(const GenerativeDecoder& dec, const Eigen::MatrixXi& frames) {
    Tensor x = dec.start;
    if (frames.rows() == 0) return x;
    std::vector<std::vector<int>> ids(static_cast<size_t>(dec.cfg.groups));
    for (int t = 0; t < frames.rows(); ++t)
        for (int g = 0; g < dec.cfg.groups; ++g) ids[static_cast<size_t>(g)].push_back(frames(t, g));
    Tensor emb = dec.tok_emb[0].forward(ids[0]);
    for (int g = 1; g < dec.cfg.groups; ++g)
        emb = concat_cols(emb, dec.tok_emb[static_cast<size_t>(g)].forward(ids[static_cast<size_t>(g)]));
    return concat_rows(x, emb);
}

// Causal transformer pass over [conditioning prefix; token rows]; returns the
// normalized hidden states of the token rows only.
Tensor decoder_frames(const GenerativeDecoder& dec, const Tensor& cond, const Tensor& tok_rows) {
    if (cond.cols() != dec.cfg.cond_dim)
        throw std::runtime_error("generative decoder: conditioning width mismatch");
    Tensor x = concat_rows(dec.cond_in.forward(cond), tok_rows);
    x = dec.pos.forward(x);
    for (const auto& blk : dec.blocks) x = blk.forward(x, Tensor(), /*causal_offset=*/0);
    x = dec.ln_f.forward(x);
    return slice_rows(x, cond.rows(), tok_rows.rows());
}

void check_tokens(const GenerativeDecoder& dec, const Eigen::MatrixXi& tokens) {
    if (tokens.cols() != dec.cfg.groups)
        throw std::runtime_error("generative decoder: wrong group count");
    for (int t = 0; t < tokens.rows(); ++t)
        for (int g = 0; g < tokens.cols(); ++g)
            if (tokens(t, g) < 0 || tokens(t, g) >= dec.cfg.codewords)
                throw std::runtime_error("generative decoder: token out of range");
}

}  // namespace

Tensor ArScore::total() const {
    if (frame_logp.rows() == 0) return eos_logp;
    Tensor s = sum(frame_logp);
    return with_eos ? add(s, eos_logp) : s;
}

ArScore ar_score(const GenerativeDecoder& dec, const Tensor& cond, const Eigen::MatrixXi& tokens,
                 bool with_eos) {
    check_tokens(dec, tokens);
    const int t_a = static_cast<int>(tokens.rows());
    if (t_a > cond.rows())
        throw std::runtime_error("ar_score: more token frames than conditioning frames");
    if (!cond.value().allFinite()) throw std::runtime_error("ar_score: non-finite condition");

    // Inputs: start, emb(a_0) .. emb(a_{T-2}); with eos one more row for the
    // terminal prediction after emb(a_{T-1}).
    const int t_in = t_a + (with_eos ? 1 : 0);
    Eigen::MatrixXi shifted = tokens.topRows(std::max(0, t_in - 1));
    Tensor frames = decoder_frames(dec, cond, token_inputs(dec, shifted));
    dec.last_frame_positions = t_in;

    ArScore out;
    out.with_eos = with_eos;
    if (t_a == 0) {
        out.frame_logp = Tensor(Mat::Zero(0, dec.cfg.groups));
    }
    Tensor lp0;  // group-0 log-probs, kept for the eos term
    for (int g = 0; g < dec.cfg.groups; ++g) {
        Tensor logits = dec.heads[static_cast<size_t>(g)].forward(frames);
        if (g == 0 && !with_eos) logits = slice_cols(logits, 0, dec.cfg.codewords);
        Tensor lp = log_softmax_rows(logits);
        if (g == 0) lp0 = lp;
        if (t_a > 0) {
            // Mixture over codewords only, from the frame rows (not the
            // terminal eos row); renormalized when eos was in the softmax.
            Tensor code_logits = slice_rows(logits, 0, t_a);
            if (g == 0 && with_eos) code_logits = slice_cols(code_logits, 0, dec.cfg.codewords);
            out.mixture_probs.push_back(softmax_rows(code_logits));
        }
        if (t_a == 0) continue;
        const int k = static_cast<int>(lp.cols());
        Eigen::MatrixXi map(t_a, 1);
        for (int t = 0; t < t_a; ++t) map(t, 0) = t * k + tokens(t, g);
        Tensor col = gather_map(lp, map, t_a, 1);
        out.frame_logp = (g == 0) ? col : concat_cols(out.frame_logp, col);
    }
    if (with_eos) {
        const int k = dec.cfg.codewords + 1;
        Eigen::MatrixXi map(1, 1);
        map(0, 0) = t_a * k + dec.eos_index();
        out.eos_logp = gather_map(lp0, map, 1, 1);
    } else {
        out.eos_logp = Tensor(Mat::Zero(1, 1));
    }
    return out;
}

int sample_row(const Eigen::RowVectorXd& logits, const SamplingConfig& s, Rng& rng) {
    const int k = static_cast<int>(logits.size());
    if (s.temperature <= 0.0) {
        int best = 0;
        logits.maxCoeff(&best);
        return best;
    }
    std::vector<double> l(logits.data(), logits.data() + k);
    if (s.top_k > 0 && s.top_k < k) {
        std::vector<double> sorted = l;
        std::nth_element(sorted.begin(), sorted.begin() + (s.top_k - 1), sorted.end(),
                         std::greater<>());
        const double cut = sorted[static_cast<size_t>(s.top_k - 1)];
        for (double& v : l)
            if (v < cut) v = -std::numeric_limits<double>::infinity();
    }
    const double mx = *std::max_element(l.begin(), l.end());
    double z = 0.0;
    for (double& v : l) {
        v = std::exp((v - mx) / s.temperature);
        z += v;
    }
    double u = rng.uniform() * z;
    for (int i = 0; i < k; ++i) {
        u -= l[static_cast<size_t>(i)];
        if (u <= 0.0) return i;
    }
    return k - 1;
}

Eigen::MatrixXi ar_generate(const GenerativeDecoder& dec, const Tensor& cond,
                            const SamplingConfig& sampling, uint64_t seed) {
    const int cap = static_cast<int>(cond.rows());
    Rng rng(seed);
    Eigen::MatrixXi out(cap, dec.cfg.groups);
    int emitted = 0;
    long positions = 0;
    for (int t = 0; t < cap; ++t) {
        Tensor frames = decoder_frames(dec, cond, token_inputs(dec, out.topRows(emitted)));
        ++positions;
        const Mat h = frames.value().bottomRows(1);
        bool eos = false;
        Eigen::RowVectorXi frame(dec.cfg.groups);
        for (int g = 0; g < dec.cfg.groups; ++g) {
            const auto& head = dec.heads[static_cast<size_t>(g)];
            Eigen::RowVectorXd logits =
                h.row(0) * head.w.value() + head.b.value().row(0);
            int idx = sample_row(logits, sampling, rng);
            if (g == 0 && idx == dec.eos_index()) {
                eos = true;
                break;
            }
            frame(g) = idx;
        }
        if (eos) break;
        out.row(emitted++) = frame;
    }
    dec.last_frame_positions = positions;
    return out.topRows(emitted);
}

Waveform decode_to_waveform(const AcousticCodec& codec, const Eigen::MatrixXi& tokens) {
    return acoustic_decode(codec, tokens);
}

Tensor decode_to_waveform_soft(const AcousticCodec& codec, const std::vector<Tensor>& soft_probs) {
    return acoustic_decode_soft(codec, soft_probs);
}

}  // namespace unicodec

#include "unicodec/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace unicodec {

GlobalEncoder::GlobalEncoder(nn::ParamStore& ps, const std::string& prefix,
                             const GlobalEncoderConfig& cfg_, Rng& rng)
    : cfg(cfg_) {
    int cin = 1;
    for (size_t i = 0; i < cfg.conv_channels.size(); ++i) {
        int cout = cfg.conv_channels[i];
        // Frequency halves every block; time halves on odd blocks only.
        int sh = i % 2 == 1 ? 2 : 1;
        convs.emplace_back(ps, prefix + "/conv" + std::to_string(i), cin, cout, 3, 3, sh, 2, rng);
        cin = cout;
    }
    // Frequency extent after the stride-2 chain.
    int freq = cfg.spec_bins;
    for (size_t i = 0; i < cfg.conv_channels.size(); ++i) freq = (freq + 1) / 2;
    const int fused = freq * cin;  // frequency folded into channels
    for (int i = 0; i < cfg.tf_blocks; ++i)
        tf.emplace_back(ps, prefix + "/tf" + std::to_string(i), fused, fused, 3, 1 << i, rng);
    pre = nn::Linear(ps, prefix + "/pre", fused, cfg.width, rng);
    pos = nn::PositionalEmbedding(ps, prefix + "/pos", cfg.max_frames, cfg.width, rng);
    for (int i = 0; i < cfg.trans_layers; ++i)
        blocks.emplace_back(ps, prefix + "/trans" + std::to_string(i), cfg.width, cfg.heads,
                            cfg.ff, rng);
    query = ps.add(prefix + "/query", nn::xavier_init(1, cfg.width, rng));
    pool = nn::TimeAttention(ps, prefix + "/pool", cfg.width, cfg.heads, rng);
    head = nn::Linear(ps, prefix + "/head", cfg.width, cfg.out_dim, rng);
}

Tensor GlobalEncoder::attention_pool(const Tensor& frames) const {
    return pool.forward(query, frames);
}

Tensor GlobalEncoder::forward(const Tensor& spec10) const {
    if (spec10.cols() != cfg.spec_bins)
        throw std::invalid_argument("global_encode: wrong spectrogram bin count");
    if (spec10.rows() < cfg.min_frames)
        throw std::invalid_argument("global_encode: input shorter than the minimum length");
    Tensor x = spec10;
    int freq = cfg.spec_bins;
    for (const auto& conv : convs) {
        int freq_out = 0;
        x = ag::gelu(conv.forward(x, freq, freq_out));
        freq = freq_out;
    }
    for (const auto& conv : tf) x = ag::add(x, ag::gelu(conv.forward(x)));
    x = pos.forward(pre.forward(x));
    for (const auto& b : blocks) x = b.forward(x);
    return head.forward(attention_pool(x));
}

ChannelAttention::ChannelAttention(nn::ParamStore& ps, const std::string& prefix, int dim_,
                                   int group_width_, Rng& rng)
    : dim(dim_), group_width(group_width_) {
    if (dim <= 0 || group_width <= 0 || dim % group_width != 0)
        throw std::invalid_argument("ChannelAttention: dim must be divisible by group width");
    wq = ps.add(prefix + "/wq", nn::xavier_init(dim, dim, rng));
    wk = ps.add(prefix + "/wk", nn::xavier_init(dim, dim, rng));
    wv = ps.add(prefix + "/wv", nn::xavier_init(dim, dim, rng));
}

Tensor ChannelAttention::forward(const Tensor& q_src, const Tensor& kv_src) const {
    if (q_src.cols() != dim || kv_src.cols() != dim || q_src.rows() != kv_src.rows())
        throw std::invalid_argument("ChannelAttention: shape mismatch");
    const Eigen::Index t_len = q_src.rows();
    const Eigen::Index groups = dim / group_width;
    Tensor q = ag::matmul(q_src, wq);
    Tensor k = ag::matmul(kv_src, wk);
    Tensor v = ag::matmul(kv_src, wv);
    Tensor out;
    for (Eigen::Index t = 0; t < t_len; ++t) {
        Tensor qg = ag::reshape(ag::slice_rows(q, t, 1), groups, group_width);
        Tensor kg = ag::reshape(ag::slice_rows(k, t, 1), groups, group_width);
        Tensor vg = ag::reshape(ag::slice_rows(v, t, 1), groups, group_width);
        Tensor scores = ag::scale(ag::matmul(qg, ag::transpose(kg)),
                                  1.0 / std::sqrt(static_cast<double>(group_width)));
        Tensor row = ag::reshape(ag::matmul(ag::softmax_rows(scores), vg), 1, dim);
        out = t == 0 ? row : ag::concat_rows(out, row);
    }
    return out;
}

Tensor semantic_project(const Tensor& s_se, const nn::Linear& proj) {
    if (s_se.cols() != proj.w.rows())
        throw std::invalid_argument("semantic_project: feature width mismatch");
    return proj.forward(s_se);
}

Tensor channel_cross_attention(const Tensor& s_prime, const Tensor& a_ac,
                               const ChannelAttention& att) {
    return att.forward(s_prime, a_ac);
}

Tensor residual_extract(const Tensor& a_ac, const Tensor& a_att,
                        const ChannelAttention& self_att) {
    if (a_ac.rows() != a_att.rows() || a_ac.cols() != a_att.cols())
        throw std::invalid_argument("residual_extract: shape mismatch");
    Tensor res = ag::sub(a_ac, a_att);
    return self_att.forward(res, res);
}

}  // namespace unicodec

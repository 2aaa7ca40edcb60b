#pragma once

// The three disentangling encoders: the utterance-level global encoder E_g
// (conv stack over the spectrogram, frequency folded into channels, temporal
// filtering, a small transformer and learned-query attention pooling), the
// semantic projection from teacher features, and the channel-wise attention
// blocks that carve the residual stream P out of the acoustic features.

#include <string>
#include <vector>

#include "unicodec/audio.hpp"
#include "unicodec/modules.hpp"

namespace unicodec {

using ag::Mat;
using ag::Tensor;

struct GlobalEncoderConfig {
    std::vector<int> conv_channels = {8, 16, 16, 32, 32};
    int tf_blocks = 2;      // dilated temporal-filtering convs
    int width = 128;        // transformer width
    int heads = 4;
    int ff = 256;
    int trans_layers = 2;
    int out_dim = 64;       // C_g
    int spec_bins = 81;     // 40 ms window at 4 kHz
    int min_frames = 37;    // ~0.4 s of 10 ms hops
    int max_frames = 2048;
};

struct GlobalEncoder {
    GlobalEncoderConfig cfg;
    std::vector<nn::Conv2d> convs;
    std::vector<nn::Conv1d> tf;
    nn::Linear pre;
    nn::PositionalEmbedding pos;
    std::vector<nn::TransformerEncoderLayer> blocks;
    Tensor query;  // 1 x width learnable pooling query
    nn::TimeAttention pool;
    nn::Linear head;

    GlobalEncoder() = default;
    GlobalEncoder(nn::ParamStore& ps, const std::string& prefix, const GlobalEncoderConfig& cfg,
                  Rng& rng);

    // 10 ms magnitude spectrogram (T x spec_bins) -> (1 x out_dim).
    Tensor forward(const Tensor& spec10) const;
    // Pooling stage alone: convex combination of the given frame rows.
    Tensor attention_pool(const Tensor& frames) const;
};

// Channel-wise attention of Eq. 4: per frame, Q/K/V projections of width
// `dim` are reshaped to (dim/group_width) channel groups and attention runs
// over the group axis independently for every frame. Projections have no
// bias ("learnable matrices").
struct ChannelAttention {
    Tensor wq, wk, wv;  // dim x dim
    int dim = 0, group_width = 0;

    ChannelAttention() = default;
    ChannelAttention(nn::ParamStore& ps, const std::string& prefix, int dim, int group_width,
                     Rng& rng);

    Tensor forward(const Tensor& q_src, const Tensor& kv_src) const;  // both T x dim
};

// Linear projection of stacked teacher features to the pre-quantization
// semantic width; frames preserved.
Tensor semantic_project(const Tensor& s_se, const nn::Linear& proj);

// Eq. 4 applied with S' as query source and A_ac as key/value source.
Tensor channel_cross_attention(const Tensor& s_prime, const Tensor& a_ac,
                               const ChannelAttention& att);

// Eq. 5: A_res = A_ac - A_att, then channel-wise self-attention on the
// residual.
Tensor residual_extract(const Tensor& a_ac, const Tensor& a_att, const ChannelAttention& self_att);

}  // namespace unicodec

#pragma once

// Trainable building blocks on top of the autograd tape: parameter store,
// linear/conv layers, channel-wise and time-wise attention, transformer
// layers and the Adam optimizer.

#include "unicodec/autograd.hpp"
#include "unicodec/rng.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace unicodec::nn {

using ag::Mat;
using ag::Tensor;

// Named leaf tensors. Modules register parameters here; the optimizer,
// checkpointing and freezing all address parameters by name.
class ParamStore {
  public:
    Tensor add(const std::string& name, Mat init, bool trainable = true);
    Tensor& at(const std::string& name);
    const std::map<std::string, Tensor>& all() const { return params_; }
    void freeze();                     // drop requires_grad on every parameter
    uint64_t checksum() const;         // FNV-1a over parameter bytes, name-ordered
    size_t count_values() const;

  private:
    std::map<std::string, Tensor> params_;
};

Mat xavier_init(Eigen::Index rows, Eigen::Index cols, Rng& rng);

struct Linear {
    Tensor w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng,
           bool bias = true);
    Tensor forward(const Tensor& x) const;  // (T x in) -> (T x out)
};

struct LayerNorm {
    Tensor gain, bias;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, int dim);
    Tensor forward(const Tensor& x) const;
};

struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& prefix, int in, int hidden, int out, Rng& rng);
    Tensor forward(const Tensor& x) const;  // fc2(gelu(fc1(x)))
};

struct Embedding {
    Tensor table;  // vocab x dim
    Embedding() = default;
    Embedding(ParamStore& ps, const std::string& prefix, int vocab, int dim, Rng& rng);
    Tensor forward(const std::vector<int>& ids) const;
};

// Multi-head attention over the time axis. With a causal offset, position i of
// the query may attend to key positions j <= i + causal_offset; offset < 0
// disables masking. Query and key/value sources may differ (cross-attention).
struct TimeAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;
    int dim = 0;
    TimeAttention() = default;
    TimeAttention(ParamStore& ps, const std::string& prefix, int dim, int heads, Rng& rng);
    Tensor forward(const Tensor& q_src, const Tensor& kv_src, long causal_offset = -1) const;
};

struct TransformerEncoderLayer {
    TimeAttention att;
    LayerNorm ln1, ln2;
    Mlp ff;
    TransformerEncoderLayer() = default;
    TransformerEncoderLayer(ParamStore& ps, const std::string& prefix, int dim, int heads,
                            int ff_dim, Rng& rng);
    Tensor forward(const Tensor& x) const;  // pre-norm, bidirectional
};

// Pre-norm causal decoder layer with optional cross-attention to a memory.
struct TransformerDecoderLayer {
    TimeAttention self_att, cross_att;
    LayerNorm ln1, ln2, ln3;
    Mlp ff;
    bool has_cross = false;
    TransformerDecoderLayer() = default;
    TransformerDecoderLayer(ParamStore& ps, const std::string& prefix, int dim, int heads,
                            int ff_dim, Rng& rng, bool with_cross);
    Tensor forward(const Tensor& x, const Tensor& memory, long causal_offset = 0) const;
};

// 2D convolution over (time x freq) maps stored channel-last as
// (T, F*C) matrices. 'Same' padding in both axes before striding.
struct Conv2d {
    Tensor w;  // (kh*kw*cin) x cout
    Tensor b;
    int cin, cout, kh, kw, sh, sw;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& prefix, int cin, int cout, int kh, int kw, int sh,
           int sw, Rng& rng);
    Tensor forward(const Tensor& x, int freq_bins, int& freq_out) const;
};

// Dilated 1D convolution along time, 'same' padding; input (T, cin).
struct Conv1d {
    Tensor w;  // (k*cin) x cout
    Tensor b;
    int cin, cout, k, dilation;
    Conv1d() = default;
    Conv1d(ParamStore& ps, const std::string& prefix, int cin, int cout, int k, int dilation,
           Rng& rng);
    Tensor forward(const Tensor& x) const;
};

// Learned absolute positional table; rows 0..T-1 added to x.
struct PositionalEmbedding {
    Tensor table;  // max_len x dim
    PositionalEmbedding() = default;
    PositionalEmbedding(ParamStore& ps, const std::string& prefix, int max_len, int dim, Rng& rng);
    Tensor forward(const Tensor& x, int offset = 0) const;
};

struct AdamConfig {
    double lr = 4e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global norm; <= 0 disables
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    // Applies one update from the grads currently on the parameters; grads that
    // were never touched this step are treated as zero.
    void step(ParamStore& ps);
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamConfig& config() const { return cfg_; }
    int64_t steps_done() const { return t_; }
    // Serialized moment state for checkpoint resume.
    std::map<std::string, std::pair<Mat, Mat>>& state() { return state_; }
    void set_steps_done(int64_t t) { t_ = t; }

  private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> state_;
};

}  // namespace unicodec::nn

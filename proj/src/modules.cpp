#include "unicodec/modules.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace unicodec::nn {

using namespace ag;

Tensor ParamStore::add(const std::string& name, Mat init, bool trainable) {
    if (params_.count(name)) throw std::runtime_error("duplicate parameter: " + name);
    Tensor t(std::move(init), trainable);
    params_.emplace(name, t);
    return t;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
}

void ParamStore::freeze() {
    for (auto& [name, t] : params_) t.node()->requires_grad = false;
}

uint64_t ParamStore::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : params_) {
        feed(name.data(), name.size());
        const Mat& m = t.value();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                double v = m(r, c);
                feed(&v, sizeof v);
            }
    }
    return h;
}

size_t ParamStore::count_values() const {
    size_t n = 0;
    for (const auto& [name, t] : params_) n += static_cast<size_t>(t.rows() * t.cols());
    return n;
}

Mat xavier_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-s, s);
    return m;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng, bool bias) {
    w = ps.add(prefix + ".w", xavier_init(in, out, rng));
    if (bias) b = ps.add(prefix + ".b", Mat::Zero(1, out));
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add_rowvec(y, b);
    return y;
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim) {
    gain = ps.add(prefix + ".gain", Mat::Ones(1, dim));
    bias = ps.add(prefix + ".bias", Mat::Zero(1, dim));
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

Mlp::Mlp(ParamStore& ps, const std::string& prefix, int in, int hidden, int out, Rng& rng)
    : fc1(ps, prefix + ".fc1", in, hidden, rng), fc2(ps, prefix + ".fc2", hidden, out, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

Embedding::Embedding(ParamStore& ps, const std::string& prefix, int vocab, int dim, Rng& rng) {
    table = ps.add(prefix + ".table", xavier_init(vocab, dim, rng));
}

Tensor Embedding::forward(const std::vector<int>& ids) const { return gather_rows(table, ids); }

TimeAttention::TimeAttention(ParamStore& ps, const std::string& prefix, int dim, int heads_,
                             Rng& rng)
    : wq(ps, prefix + ".wq", dim, dim, rng),
      wk(ps, prefix + ".wk", dim, dim, rng),
      wv(ps, prefix + ".wv", dim, dim, rng),
      wo(ps, prefix + ".wo", dim, dim, rng),
      heads(heads_),
      dim(dim) {
    if (dim % heads_ != 0) throw std::runtime_error("TimeAttention: dim % heads != 0");
}

Tensor TimeAttention::forward(const Tensor& q_src, const Tensor& kv_src,
                              long causal_offset) const {
    const Eigen::Index tq = q_src.rows(), tk = kv_src.rows();
    const int hd = dim / heads;
    Tensor q = wq.forward(q_src);
    Tensor k = wk.forward(kv_src);
    Tensor v = wv.forward(kv_src);
    Mat mask;
    if (causal_offset >= 0) {
        // Additive mask; -1e9 underflows to an exact zero weight after softmax.
        mask = Mat::Zero(tq, tk);
        for (Eigen::Index i = 0; i < tq; ++i)
            for (Eigen::Index j = 0; j < tk; ++j)
                if (j > i + causal_offset) mask(i, j) = -1e9;
    }
    Tensor out;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, hd);
        Tensor kh = slice_cols(k, h * hd, hd);
        Tensor vh = slice_cols(v, h * hd, hd);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(hd)));
        if (mask.size() > 0) scores = add_const(scores, mask);
        Tensor att = softmax_rows(scores);
        Tensor oh = matmul(att, vh);
        out = h == 0 ? oh : concat_cols(out, oh);
    }
    return wo.forward(out);
}

TransformerEncoderLayer::TransformerEncoderLayer(ParamStore& ps, const std::string& prefix,
                                                 int dim, int heads, int ff_dim, Rng& rng)
    : att(ps, prefix + ".att", dim, heads, rng),
      ln1(ps, prefix + ".ln1", dim),
      ln2(ps, prefix + ".ln2", dim),
      ff(ps, prefix + ".ff", dim, ff_dim, dim, rng) {}

Tensor TransformerEncoderLayer::forward(const Tensor& x) const {
    Tensor h = ln1.forward(x);
    Tensor y = add(x, att.forward(h, h));
    return add(y, ff.forward(ln2.forward(y)));
}

TransformerDecoderLayer::TransformerDecoderLayer(ParamStore& ps, const std::string& prefix,
                                                 int dim, int heads, int ff_dim, Rng& rng,
                                                 bool with_cross)
    : self_att(ps, prefix + ".self", dim, heads, rng),
      ln1(ps, prefix + ".ln1", dim),
      ln2(ps, prefix + ".ln2", dim),
      ff(ps, prefix + ".ff", dim, ff_dim, dim, rng),
      has_cross(with_cross) {
    if (with_cross) {
        cross_att = TimeAttention(ps, prefix + ".cross", dim, heads, rng);
        ln3 = LayerNorm(ps, prefix + ".ln3", dim);
    }
}

Tensor TransformerDecoderLayer::forward(const Tensor& x, const Tensor& memory,
                                        long causal_offset) const {
    Tensor h = ln1.forward(x);
    Tensor y = add(x, self_att.forward(h, h, causal_offset));
    if (has_cross) {
        if (!memory.defined()) throw std::runtime_error("decoder layer: missing memory");
        y = add(y, cross_att.forward(ln3.forward(y), memory));
    }
    return add(y, ff.forward(ln2.forward(y)));
}

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, int cin_, int cout_, int kh_, int kw_,
               int sh_, int sw_, Rng& rng)
    : cin(cin_), cout(cout_), kh(kh_), kw(kw_), sh(sh_), sw(sw_) {
    w = ps.add(prefix + ".w", xavier_init(kh * kw * cin, cout, rng));
    b = ps.add(prefix + ".b", Mat::Zero(1, cout));
}

Tensor Conv2d::forward(const Tensor& x, int freq_bins, int& freq_out) const {
    const int T = static_cast<int>(x.rows());
    if (x.cols() != static_cast<Eigen::Index>(freq_bins) * cin)
        throw std::runtime_error("Conv2d: input width != freq_bins * cin");
    const int t_out = (T + sh - 1) / sh;
    const int f_out = (freq_bins + sw - 1) / sw;
    freq_out = f_out;
    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    Eigen::MatrixXi map(static_cast<Eigen::Index>(t_out) * f_out, kh * kw * cin);
    for (int ti = 0; ti < t_out; ++ti)
        for (int fi = 0; fi < f_out; ++fi) {
            Eigen::Index row = static_cast<Eigen::Index>(ti) * f_out + fi;
            int col = 0;
            for (int dh = 0; dh < kh; ++dh)
                for (int dw = 0; dw < kw; ++dw)
                    for (int c = 0; c < cin; ++c, ++col) {
                        int tt = ti * sh + dh - ph;
                        int ff = fi * sw + dw - pw;
                        map(row, col) = (tt >= 0 && tt < T && ff >= 0 && ff < freq_bins)
                                            ? tt * freq_bins * cin + ff * cin + c
                                            : -1;
                    }
        }
    Tensor col = gather_map(x, map, map.rows(), map.cols());
    Tensor y = add_rowvec(matmul(col, w), b);
    return reshape(y, t_out, static_cast<Eigen::Index>(f_out) * cout);
}

Conv1d::Conv1d(ParamStore& ps, const std::string& prefix, int cin_, int cout_, int k_,
               int dilation_, Rng& rng)
    : cin(cin_), cout(cout_), k(k_), dilation(dilation_) {
    w = ps.add(prefix + ".w", xavier_init(k * cin, cout, rng));
    b = ps.add(prefix + ".b", Mat::Zero(1, cout));
}

Tensor Conv1d::forward(const Tensor& x) const {
    const int T = static_cast<int>(x.rows());
    if (x.cols() != cin) throw std::runtime_error("Conv1d: input width != cin");
    const int span = (k - 1) * dilation;
    const int pad = span / 2;
    Eigen::MatrixXi map(T, k * cin);
    for (int t = 0; t < T; ++t) {
        int col = 0;
        for (int dk = 0; dk < k; ++dk)
            for (int c = 0; c < cin; ++c, ++col) {
                int tt = t + dk * dilation - pad;
                map(t, col) = (tt >= 0 && tt < T) ? tt * cin + c : -1;
            }
    }
    Tensor col = gather_map(x, map, T, k * cin);
    return add_rowvec(matmul(col, w), b);
}

PositionalEmbedding::PositionalEmbedding(ParamStore& ps, const std::string& prefix, int max_len,
                                         int dim, Rng& rng) {
    table = ps.add(prefix + ".table", Mat(0.02 * xavier_init(max_len, dim, rng)));
}

Tensor PositionalEmbedding::forward(const Tensor& x, int offset) const {
    if (x.rows() + offset > table.rows())
        throw std::runtime_error("PositionalEmbedding: sequence too long");
    std::vector<int> idx(static_cast<size_t>(x.rows()));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = offset + static_cast<int>(i);
    return add(x, gather_rows(table, idx));
}

void Adam::step(ParamStore& ps) {
    ++t_;
    // Global-norm clipping over all trainable grads.
    double scale_g = 1.0;
    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (auto& [name, p] : ps.all()) {
            auto n = p.node();
            if (n->requires_grad && n->grad_ready) sq += n->grad.squaredNorm();
        }
        double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) scale_g = cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (auto& [name, pc] : ps.all()) {
        Tensor p = pc;
        auto n = p.node();
        if (!n->requires_grad || !n->grad_ready) continue;
        Mat g = n->grad * scale_g;
        auto& [m, v] = state_[name];
        if (m.size() == 0) {
            m = Mat::Zero(g.rows(), g.cols());
            v = Mat::Zero(g.rows(), g.cols());
        }
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        Mat mhat = m / bc1;
        Mat vhat = v / bc2;
        n->val.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
        n->grad_ready = false;
    }
}

}  // namespace unicodec::nn

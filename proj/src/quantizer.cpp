#include "unicodec/quantizer.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace unicodec {

namespace {

int bits_for(int codewords) {
    int b = 0;
    while ((1 << b) < codewords) ++b;
    return b;
}

}  // namespace

GroupQuantizer::GroupQuantizer(ParamStore& ps, const std::string& name, int dim_, int groups_,
                               int codewords_, Rng& rng)
    : groups(groups_), codewords(codewords_), dim(dim_) {
    if (groups <= 0 || codewords <= 0 || dim <= 0 || dim % groups != 0)
        throw std::invalid_argument("GroupQuantizer: dim must split evenly into groups");
    const int w = dim / groups;
    for (int g = 0; g < groups; ++g) {
        Mat init(codewords, w);
        for (Eigen::Index i = 0; i < init.size(); ++i) init(i) = 0.5 * rng.gaussian();
        codebooks.push_back(ps.add(name + "/cb" + std::to_string(g), std::move(init)));
    }
}

void GroupQuantizer::init_from_features(const Mat& feats, Rng& rng) {
    if (feats.cols() != dim || feats.rows() == 0)
        throw std::invalid_argument("init_from_features: bad feature matrix");
    const int w = dim / groups;
    for (int g = 0; g < groups; ++g) {
        Mat& e = codebooks[static_cast<size_t>(g)].value_mut();
        for (int k = 0; k < codewords; ++k) {
            Eigen::Index t = rng.uniform_int(static_cast<int>(feats.rows()));
            // Small jitter so duplicate source rows do not produce tied codes.
            for (int c = 0; c < w; ++c)
                e(k, c) = feats(t, g * w + c) + 1e-3 * rng.gaussian();
        }
    }
}

QuantizationResult quantize(const Tensor& features, const GroupQuantizer& cb, QuantizeMode mode,
                            double tau, Rng* rng) {
    if (features.cols() != cb.dim)
        throw std::invalid_argument("quantize: feature width does not match quantizer dim");
    if (tau <= 0.0) throw std::invalid_argument("quantize: tau must be positive");
    const int w = cb.dim / cb.groups;
    const Eigen::Index t_len = features.rows();

    QuantizationResult res;
    res.indices.resize(t_len, cb.groups);
    Tensor out;
    for (int g = 0; g < cb.groups; ++g) {
        const Tensor& e = cb.codebooks[static_cast<size_t>(g)];
        Tensor z = ag::slice_cols(features, g * w, w);
        // Softmax/argmax over k are invariant to the per-frame ||z||^2 term,
        // so logits use only 2 z.e_k - ||e_k||^2 (scaled by 1/tau).
        Tensor sim = ag::scale(ag::matmul(z, ag::transpose(e)), 2.0 / tau);
        Tensor enorm = ag::scale(ag::transpose(ag::sum_rows(ag::square(e))), -1.0 / tau);
        Tensor logits = ag::add_rowvec(sim, enorm);
        if (mode == QuantizeMode::Train && rng != nullptr) {
            Mat noise(t_len, cb.codewords);
            for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = rng->gumbel();
            logits = ag::add_const(logits, noise);
        }

        Tensor soft;
        if (mode == QuantizeMode::Train) {
            soft = ag::softmax_rows(logits);
        } else {
            // Deterministic nearest neighbor; no graph through the selection.
            soft = Tensor(Mat::Zero(t_len, cb.codewords));
        }
        const Mat& pick_from = mode == QuantizeMode::Train ? soft.value() : logits.value();
        Mat hard = Mat::Zero(t_len, cb.codewords);
        for (Eigen::Index t = 0; t < t_len; ++t) {
            Eigen::Index arg = 0;
            pick_from.row(t).maxCoeff(&arg);
            res.indices(t, g) = static_cast<int>(arg);
            hard(t, arg) = 1.0;
        }

        Tensor quant_g;
        if (mode == QuantizeMode::Train) {
            // Straight-through: value is the hard assignment, gradient the soft one.
            Tensor st = ag::add_const(soft, hard - soft.value());
            quant_g = ag::matmul(st, e);
            res.soft_probs.push_back(soft);
        } else {
            std::vector<int> idx(static_cast<size_t>(t_len));
            for (Eigen::Index t = 0; t < t_len; ++t) idx[static_cast<size_t>(t)] = res.indices(t, g);
            quant_g = ag::gather_rows(e, idx);
            res.soft_probs.push_back(Tensor(std::move(hard)));
        }
        out = g == 0 ? quant_g : ag::concat_cols(out, quant_g);
    }
    res.quantized = out;
    return res;
}

Tensor estimate_entropy_bits(const std::vector<Tensor>& soft_probs) {
    if (soft_probs.empty()) throw std::invalid_argument("estimate_entropy_bits: no groups");
    Tensor total = Tensor::scalar(0.0);
    for (const Tensor& probs : soft_probs) {
        const Mat& v = probs.value();
        for (Eigen::Index t = 0; t < v.rows(); ++t) {
            if (std::abs(v.row(t).sum() - 1.0) > 1e-6)
                throw std::invalid_argument("estimate_entropy_bits: row is not a simplex point");
        }
        Tensor pbar = ag::mean_cols(probs);  // usage distribution, 1 x K
        Tensor logp = ag::log_(ag::add_const(pbar, Mat::Constant(1, v.cols(), 1e-12)));
        Tensor h = ag::scale(ag::neg(ag::sum(ag::mul(pbar, logp))), 1.0 / std::log(2.0));
        total = ag::add(total, h);
    }
    return total;
}

double histogram_entropy_bits(const Eigen::MatrixXi& indices, int codewords) {
    if (indices.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index g = 0; g < indices.cols(); ++g) {
        std::vector<double> counts(static_cast<size_t>(codewords), 0.0);
        for (Eigen::Index t = 0; t < indices.rows(); ++t)
            counts[static_cast<size_t>(indices(t, g))] += 1.0;
        for (double c : counts) {
            if (c == 0.0) continue;
            double p = c / static_cast<double>(indices.rows());
            total -= p * std::log2(p);
        }
    }
    return total;
}

namespace {
// Exact |target - h| with the sign baked in from the current value; gradient
// is the subgradient sign(target - h) applied to -dh.
Tensor abs_gap(const Tensor& h, double target) {
    Tensor d = ag::add_const(ag::neg(h), Mat::Constant(1, 1, target));
    double sign = d.value()(0, 0) >= 0.0 ? 1.0 : -1.0;
    return ag::mul_const(d, Mat::Constant(1, 1, sign));
}
}  // namespace

Tensor rate_loss(const Tensor& h_s, const Tensor& h_p, const RateBudget& budget) {
    return ag::add(abs_gap(h_s, budget.r_s_target), abs_gap(h_p, budget.r_p_target));
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, int v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, int v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

int get_u16(const std::vector<std::uint8_t>& b, size_t at) {
    return b[at] | (b[at + 1] << 8);
}

int get_u32(const std::vector<std::uint8_t>& b, size_t at) {
    return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (b[at + 3] << 24);
}

struct BitWriter {
    std::vector<std::uint8_t>& out;
    int bit = 0;
    void write(int value, int nbits) {
        for (int i = 0; i < nbits; ++i) {
            if (bit == 0) out.push_back(0);
            if ((value >> i) & 1) out.back() |= static_cast<std::uint8_t>(1 << bit);
            bit = (bit + 1) & 7;
        }
    }
};

struct BitReader {
    const std::vector<std::uint8_t>& in;
    size_t byte;
    int bit = 0;
    int read(int nbits) {
        int v = 0;
        for (int i = 0; i < nbits; ++i) {
            if (byte >= in.size()) throw std::runtime_error("token stream: truncated payload");
            if ((in[byte] >> bit) & 1) v |= 1 << i;
            if (++bit == 8) {
                bit = 0;
                ++byte;
            }
        }
        return v;
    }
};

constexpr size_t kHeaderBytes = 17;

}  // namespace

std::vector<std::uint8_t> pack_tokens(const Eigen::MatrixXi& s, const Eigen::MatrixXi& p,
                                      const TokenHeader& header) {
    if (s.rows() != header.frames || p.rows() != header.frames ||
        s.cols() != header.groups_s || p.cols() != header.groups_p)
        throw std::invalid_argument("pack_tokens: matrix shape does not match header");
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) < 0 || s(i) >= header.codewords_s)
            throw std::invalid_argument("pack_tokens: S index out of range");
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p(i) < 0 || p(i) >= header.codewords_p)
            throw std::invalid_argument("pack_tokens: P index out of range");

    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes);
    out.push_back('U');
    out.push_back('C');
    out.push_back('T');
    out.push_back('K');
    out.push_back(1);  // version
    put_u16(out, header.frame_rate_hz);
    out.push_back(static_cast<std::uint8_t>(header.groups_s));
    out.push_back(static_cast<std::uint8_t>(header.groups_p));
    put_u16(out, header.codewords_s);
    put_u16(out, header.codewords_p);
    put_u32(out, header.frames);

    const int bs = bits_for(header.codewords_s), bp = bits_for(header.codewords_p);
    BitWriter bw{out};
    for (int t = 0; t < header.frames; ++t) {
        for (int g = 0; g < header.groups_s; ++g) bw.write(s(t, g), bs);
        for (int g = 0; g < header.groups_p; ++g) bw.write(p(t, g), bp);
    }
    return out;
}

PackedTokens unpack_tokens(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kHeaderBytes) throw std::runtime_error("token stream: short header");
    if (bytes[0] != 'U' || bytes[1] != 'C' || bytes[2] != 'T' || bytes[3] != 'K')
        throw std::runtime_error("token stream: bad magic");
    if (bytes[4] != 1) throw std::runtime_error("token stream: unsupported version");
    PackedTokens out;
    out.header.frame_rate_hz = get_u16(bytes, 5);
    out.header.groups_s = bytes[7];
    out.header.groups_p = bytes[8];
    out.header.codewords_s = get_u16(bytes, 9);
    out.header.codewords_p = get_u16(bytes, 11);
    out.header.frames = get_u32(bytes, 13);
    if (out.header.groups_s <= 0 || out.header.groups_p <= 0 || out.header.codewords_s <= 0 ||
        out.header.codewords_p <= 0 || out.header.frames < 0)
        throw std::runtime_error("token stream: corrupt header fields");

    const int bs = bits_for(out.header.codewords_s), bp = bits_for(out.header.codewords_p);
    const long payload_bits =
        static_cast<long>(out.header.frames) * (out.header.groups_s * bs + out.header.groups_p * bp);
    if (static_cast<long>(bytes.size() - kHeaderBytes) * 8 < payload_bits)
        throw std::runtime_error("token stream: truncated payload");

    out.s.resize(out.header.frames, out.header.groups_s);
    out.p.resize(out.header.frames, out.header.groups_p);
    BitReader br{bytes, kHeaderBytes};
    for (int t = 0; t < out.header.frames; ++t) {
        for (int g = 0; g < out.header.groups_s; ++g) out.s(t, g) = br.read(bs);
        for (int g = 0; g < out.header.groups_p; ++g) out.p(t, g) = br.read(bp);
    }
    return out;
}

}  // namespace unicodec

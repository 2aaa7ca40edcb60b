#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unicodec/autograd.hpp"
#include "unicodec/modules.hpp"
#include "unicodec/rng.hpp"

namespace unicodec {

using ag::Mat;
using ag::Tensor;
using nn::ParamStore;

// Group vector quantizer: the feature width is split into `groups` equal
// channel slices, each quantized against its own codebook of `codewords`
// rows. Codebooks are trainable parameters.
struct GroupQuantizer {
    int groups = 0, codewords = 0, dim = 0;
    std::vector<Tensor> codebooks;  // per group: codewords x (dim/groups)

    GroupQuantizer() = default;
    GroupQuantizer(ParamStore& ps, const std::string& name, int dim, int groups, int codewords,
                   Rng& rng);

    // Re-seed codebooks from rows of a pre-quantization feature batch so no
    // code starts dead. `feats` is T x dim.
    void init_from_features(const Mat& feats, Rng& rng);
};

enum class QuantizeMode { Train, Infer };

struct QuantizationResult {
    Eigen::MatrixXi indices;         // T x groups
    Tensor quantized;                // T x dim, exact codeword concat forward
    std::vector<Tensor> soft_probs;  // per group: T x codewords simplex rows
};

// Distance-Gumbel-Softmax quantization. Logits are -||z - e||^2 / tau; in
// Train mode Gumbel noise is added (skipped when rng is null) and the
// straight-through trick keeps the forward hard while gradients follow the
// soft assignment. Infer mode is deterministic nearest-neighbor.
QuantizationResult quantize(const Tensor& features, const GroupQuantizer& cb, QuantizeMode mode,
                            double tau, Rng* rng = nullptr);

// Usage entropy in bits per frame: soft assignments are averaged over all
// rows (batch x time) to a usage distribution per group; group entropies sum
// to the stream entropy. Differentiable. Throws if any row is off-simplex by
// more than 1e-6.
Tensor estimate_entropy_bits(const std::vector<Tensor>& soft_probs);

// Oracle/report variant: entropy of the empirical histogram of hard indices.
double histogram_entropy_bits(const Eigen::MatrixXi& indices, int codewords);

struct RateBudget {
    double r_s_target = 10.0;  // bits per frame, semantic stream
    double r_p_target = 10.0;  // bits per frame, residual stream
};

// |R_s - H_s| + |R_p - H_p|, differentiable in the entropies.
Tensor rate_loss(const Tensor& h_s, const Tensor& h_p, const RateBudget& budget);

// Token stream byte format (little-endian):
//   offset 0: magic "UCTK" (4 bytes)
//   offset 4: version byte = 1
//   offset 5: u16 frame_rate_hz
//   offset 7: u8 groups_s, u8 groups_p
//   offset 9: u16 codewords_s, u16 codewords_p
//   offset 13: u32 frames
//   offset 17: payload; per frame, stream-S groups then stream-P groups,
//   each index written LSB-first at ceil(log2 K) bits, bits packed densely
//   into bytes. Final partial byte zero-padded. The continuous global
//   embedding is not part of the payload.
struct TokenHeader {
    int frame_rate_hz = 25;
    int groups_s = 2, codewords_s = 256;
    int groups_p = 2, codewords_p = 256;
    int frames = 0;
};

struct PackedTokens {
    TokenHeader header;
    Eigen::MatrixXi s, p;  // frames x groups
};

std::vector<std::uint8_t> pack_tokens(const Eigen::MatrixXi& s, const Eigen::MatrixXi& p,
                                      const TokenHeader& header);
PackedTokens unpack_tokens(const std::vector<std::uint8_t>& bytes);

}  // namespace unicodec

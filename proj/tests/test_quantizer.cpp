#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_helpers.hpp"
#include "unicodec/quantizer.hpp"

using namespace unicodec;

namespace {

GroupQuantizer make_quantizer(nn::ParamStore& ps, int dim, int groups, int codewords,
                              uint64_t seed = 7) {
    Rng rng(seed);
    return GroupQuantizer(ps, "q", dim, groups, codewords, rng);
}

// Independent oracle: exhaustive squared-distance scan.
Eigen::MatrixXi brute_force_indices(const Mat& feats, const GroupQuantizer& cb) {
    const int w = cb.dim / cb.groups;
    Eigen::MatrixXi idx(feats.rows(), cb.groups);
    for (Eigen::Index t = 0; t < feats.rows(); ++t) {
        for (int g = 0; g < cb.groups; ++g) {
            const Mat& e = cb.codebooks[static_cast<size_t>(g)].value();
            double best = 1e300;
            int arg = -1;
            for (int k = 0; k < cb.codewords; ++k) {
                double d = (feats.row(t).segment(g * w, w) - e.row(k)).squaredNorm();
                if (d < best) {
                    best = d;
                    arg = k;
                }
            }
            idx(t, g) = arg;
        }
    }
    return idx;
}

}  // namespace

TEST_CASE("K = 1 maps every frame to index 0 and broadcasts the codeword") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 1);
    Rng rng(3);
    Mat feats(5, 8);
    for (Eigen::Index i = 0; i < feats.size(); ++i) feats(i) = rng.gaussian();
    auto res = quantize(Tensor(feats), cb, QuantizeMode::Infer, 1.0);
    for (Eigen::Index t = 0; t < 5; ++t) {
        CHECK(res.indices(t, 0) == 0);
        CHECK(res.indices(t, 1) == 0);
        CHECK(res.quantized.value().row(t).segment(0, 4) == cb.codebooks[0].value().row(0));
        CHECK(res.quantized.value().row(t).segment(4, 4) == cb.codebooks[1].value().row(0));
    }
}

TEST_CASE("feature equal to codeword e_3 quantizes to index 3 with zero error") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 8);
    Mat feats(2, 8);
    feats.row(0).segment(0, 4) = cb.codebooks[0].value().row(3);
    feats.row(0).segment(4, 4) = cb.codebooks[1].value().row(3);
    feats.row(1).setConstant(100.0);  // far from everything; just must not crash
    auto res = quantize(Tensor(feats), cb, QuantizeMode::Infer, 1.0);
    CHECK(res.indices(0, 0) == 3);
    CHECK(res.indices(0, 1) == 3);
    CHECK((res.quantized.value().row(0) - feats.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("infer-mode indices match exhaustive nearest-neighbor search") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 8, 11);
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        Mat feats(4, 8);
        for (Eigen::Index i = 0; i < feats.size(); ++i) feats(i) = 2.0 * rng.gaussian();
        auto res = quantize(Tensor(feats), cb, QuantizeMode::Infer, 0.7);
        CHECK(res.indices == brute_force_indices(feats, cb));
    }
}

TEST_CASE("quantized rows are exact codeword concatenations in train mode") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 16);
    Rng rng(5);
    Mat feats(6, 8);
    for (Eigen::Index i = 0; i < feats.size(); ++i) feats(i) = rng.gaussian();
    Rng noise(17);
    auto res = quantize(Tensor(feats, true), cb, QuantizeMode::Train, 1.5, &noise);
    for (Eigen::Index t = 0; t < 6; ++t) {
        int k0 = res.indices(t, 0), k1 = res.indices(t, 1);
        CHECK(res.quantized.value().row(t).segment(0, 4) == cb.codebooks[0].value().row(k0));
        CHECK(res.quantized.value().row(t).segment(4, 4) == cb.codebooks[1].value().row(k1));
    }
}

TEST_CASE("straight-through passes nonzero gradient to the encoder input") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 16);
    Rng rng(5);
    Mat fm(6, 8);
    for (Eigen::Index i = 0; i < fm.size(); ++i) fm(i) = rng.gaussian();
    Tensor feats(fm, true);
    Rng noise(17);
    auto res = quantize(feats, cb, QuantizeMode::Train, 1.5, &noise);
    ag::backward(ag::sum(ag::square(res.quantized)));
    CHECK(feats.node()->grad_ready);
    CHECK(feats.grad().cwiseAbs().maxCoeff() > 0.0);
    // codebooks learn too
    CHECK(cb.codebooks[0].grad().cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("train mode with noise disabled and tiny tau matches infer mode") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 8, 23);
    Rng rng(41);
    Mat feats(10, 8);
    for (Eigen::Index i = 0; i < feats.size(); ++i) feats(i) = rng.gaussian();
    auto hard = quantize(Tensor(feats), cb, QuantizeMode::Infer, 1.0);
    auto soft = quantize(Tensor(feats, true), cb, QuantizeMode::Train, 1e-3, nullptr);
    CHECK(hard.indices == soft.indices);
}

TEST_CASE("gumbel sampling is deterministic given the rng seed") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 8);
    Rng rng(1);
    Mat feats(8, 8);
    for (Eigen::Index i = 0; i < feats.size(); ++i) feats(i) = rng.gaussian();
    Rng n1(99), n2(99);
    auto a = quantize(Tensor(feats), cb, QuantizeMode::Train, 2.0, &n1);
    auto b = quantize(Tensor(feats), cb, QuantizeMode::Train, 2.0, &n2);
    CHECK(a.indices == b.indices);
}

TEST_CASE("usage entropy: uniform rows over K=256 give exactly 8 bits per group") {
    Mat uniform = Mat::Constant(12, 256, 1.0 / 256.0);
    std::vector<Tensor> probs{Tensor(uniform), Tensor(uniform)};
    Tensor h = estimate_entropy_bits(probs);
    CHECK(h.item() == doctest::Approx(16.0).epsilon(1e-9));  // two groups, 8 bits each
}

TEST_CASE("usage entropy: identical one-hot rows give 0 bits") {
    Mat onehot = Mat::Zero(9, 16);
    onehot.col(5).setOnes();
    std::vector<Tensor> probs{Tensor(onehot)};
    CHECK(estimate_entropy_bits(probs).item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("usage entropy: rows alternating between two one-hots give 1 bit") {
    Mat rows = Mat::Zero(10, 16);
    for (int t = 0; t < 10; ++t) rows(t, t % 2 == 0 ? 2 : 11) = 1.0;
    std::vector<Tensor> probs{Tensor(rows)};
    CHECK(estimate_entropy_bits(probs).item() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("usage entropy stays within [0, M log2 K] on random simplex rows") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        Mat rows(7, 32);
        for (Eigen::Index i = 0; i < rows.size(); ++i) rows(i) = -std::log(rng.uniform() + 1e-12);
        for (Eigen::Index t = 0; t < rows.rows(); ++t) rows.row(t) /= rows.row(t).sum();
        std::vector<Tensor> probs{Tensor(rows), Tensor(rows)};
        double h = estimate_entropy_bits(probs).item();
        CHECK(h >= 0.0);
        CHECK(h <= 2.0 * std::log2(32.0) + 1e-12);
    }
}

TEST_CASE("usage entropy rejects off-simplex rows") {
    Mat bad = Mat::Constant(3, 4, 0.3);  // rows sum to 1.2
    std::vector<Tensor> probs{Tensor(bad)};
    CHECK_THROWS(estimate_entropy_bits(probs));
}

TEST_CASE("soft usage entropy matches the hard-index histogram at low temperature") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 8, 83);
    Rng rng(19);
    Mat feats(400, 8);
    for (Eigen::Index i = 0; i < feats.size(); ++i) feats(i) = 1.5 * rng.gaussian();
    auto res = quantize(Tensor(feats), cb, QuantizeMode::Train, 0.05, nullptr);
    double soft_h = estimate_entropy_bits(res.soft_probs).item();
    double hist_h = histogram_entropy_bits(res.indices, 8);
    CHECK(std::abs(soft_h - hist_h) < 0.2);
}

TEST_CASE("rate loss values") {
    RateBudget budget;  // 10 / 10
    CHECK(rate_loss(Tensor::scalar(10.0), Tensor::scalar(10.0), budget).item() ==
          doctest::Approx(0.0).epsilon(1e-9));
    CHECK(rate_loss(Tensor::scalar(8.0), Tensor::scalar(10.0), budget).item() ==
          doctest::Approx(2.0).epsilon(1e-9));
    CHECK(rate_loss(Tensor::scalar(8.0), Tensor::scalar(13.0), budget).item() ==
          doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("rate loss gradient pulls entropy toward the target") {
    Tensor h_s = Tensor::scalar(8.0, true);
    Tensor h_p = Tensor::scalar(12.0, true);
    ag::backward(rate_loss(h_s, h_p, RateBudget{}));
    CHECK(h_s.grad()(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(h_p.grad()(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("entropy estimator gradient agrees with finite differences") {
    Rng rng(77);
    Mat logits(6, 8);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits(i) = rng.gaussian();
    Tensor x(logits, true);
    auto loss_fn = [&]() {
        std::vector<Tensor> probs{ag::softmax_rows(x)};
        return estimate_entropy_bits(probs);
    };
    CHECK(testutil::fd_max_rel_err(loss_fn, {x}) < 1e-4);
}

TEST_CASE("pack/unpack round-trips random token matrices") {
    Rng rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        TokenHeader h;
        h.frames = 1 + rng.uniform_int(40);
        h.groups_s = 1 + rng.uniform_int(3);
        h.groups_p = 1 + rng.uniform_int(3);
        h.codewords_s = 2 + rng.uniform_int(254);
        h.codewords_p = 2 + rng.uniform_int(254);
        Eigen::MatrixXi s(h.frames, h.groups_s), p(h.frames, h.groups_p);
        for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = rng.uniform_int(h.codewords_s);
        for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = rng.uniform_int(h.codewords_p);
        auto bytes = pack_tokens(s, p, h);
        auto back = unpack_tokens(bytes);
        CHECK(back.s == s);
        CHECK(back.p == p);
        CHECK(back.header.frame_rate_hz == h.frame_rate_hz);
        CHECK(back.header.codewords_s == h.codewords_s);
        CHECK(back.header.codewords_p == h.codewords_p);
    }
}

TEST_CASE("packed payload bitrate: K=256, M=2, both streams at 25 Hz is 800 bps raw") {
    TokenHeader h;
    h.frames = 50;  // 2 seconds at 25 Hz
    Eigen::MatrixXi s = Eigen::MatrixXi::Zero(50, 2), p = Eigen::MatrixXi::Zero(50, 2);
    auto bytes = pack_tokens(s, p, h);
    const size_t header_bytes = 17;
    double payload_bits = 8.0 * (bytes.size() - header_bytes);
    double seconds = 50.0 / 25.0;
    CHECK(payload_bits / seconds == doctest::Approx(800.0));
}

TEST_CASE("empty utterance packs to a header-only stream") {
    TokenHeader h;
    h.frames = 0;
    Eigen::MatrixXi s(0, 2), p(0, 2);
    auto bytes = pack_tokens(s, p, h);
    CHECK(bytes.size() == 17);
    auto back = unpack_tokens(bytes);
    CHECK(back.header.frames == 0);
    CHECK(back.s.rows() == 0);
}

TEST_CASE("unpack rejects corrupt input") {
    TokenHeader h;
    h.frames = 4;
    Eigen::MatrixXi s = Eigen::MatrixXi::Zero(4, 2), p = Eigen::MatrixXi::Zero(4, 2);
    auto bytes = pack_tokens(s, p, h);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS(unpack_tokens(bad_magic));
    auto truncated = bytes;
    truncated.resize(truncated.size() - 1);
    CHECK_THROWS(unpack_tokens(truncated));
    CHECK_THROWS(unpack_tokens(std::vector<std::uint8_t>(3, 0)));
}

TEST_CASE("quantize validates its inputs") {
    nn::ParamStore ps;
    GroupQuantizer cb = make_quantizer(ps, 8, 2, 8);
    Mat wrong(3, 6);
    wrong.setZero();
    CHECK_THROWS(quantize(Tensor(wrong), cb, QuantizeMode::Infer, 1.0));
    Mat ok = Mat::Zero(3, 8);
    CHECK_THROWS(quantize(Tensor(ok), cb, QuantizeMode::Infer, 0.0));  // tau must be positive
}

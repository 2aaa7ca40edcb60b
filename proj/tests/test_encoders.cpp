#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_helpers.hpp"
#include "unicodec/encoders.hpp"
#include "unicodec/synthcorpus.hpp"

using namespace unicodec;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = scale * rng.gaussian();
    return m;
}

GlobalEncoderConfig tiny_global_cfg() {
    GlobalEncoderConfig cfg;
    cfg.conv_channels = {2, 2};
    cfg.tf_blocks = 1;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.ff = 16;
    cfg.trans_layers = 1;
    cfg.out_dim = 4;
    cfg.spec_bins = 9;
    cfg.min_frames = 6;
    cfg.max_frames = 64;
    return cfg;
}

// Loop oracle for channel-wise attention: explicit per-frame, per-group
// attention with no shared code with the implementation.
Mat channel_attention_oracle(const Mat& q_src, const Mat& kv_src, const Mat& wq, const Mat& wk,
                             const Mat& wv, int f) {
    const Eigen::Index t_len = q_src.rows(), dim = q_src.cols();
    const Eigen::Index groups = dim / f;
    Mat out(t_len, dim);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        Eigen::RowVectorXd q = q_src.row(t) * wq;
        Eigen::RowVectorXd k = kv_src.row(t) * wk;
        Eigen::RowVectorXd v = kv_src.row(t) * wv;
        Mat qg(groups, f), kg(groups, f), vg(groups, f);
        for (Eigen::Index g = 0; g < groups; ++g) {
            qg.row(g) = q.segment(g * f, f);
            kg.row(g) = k.segment(g * f, f);
            vg.row(g) = v.segment(g * f, f);
        }
        Mat scores = qg * kg.transpose() / std::sqrt(static_cast<double>(f));
        for (Eigen::Index g = 0; g < groups; ++g) {
            Eigen::RowVectorXd row = scores.row(g);
            row = (row.array() - row.maxCoeff()).exp();
            row /= row.sum();
            Eigen::RowVectorXd og = row * vg;
            out.row(t).segment(g * f, f) = og;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("global encoder output shape is (1, C_g) for varying lengths") {
    nn::ParamStore ps;
    Rng rng(3);
    GlobalEncoderConfig cfg = tiny_global_cfg();
    GlobalEncoder enc(ps, "g", cfg, rng);
    for (int t : {8, 20, 40}) {
        Tensor out = enc.forward(Tensor(random_mat(t, cfg.spec_bins, 100 + t)));
        CHECK(out.rows() == 1);
        CHECK(out.cols() == cfg.out_dim);
        CHECK(out.value().allFinite());
    }
}

TEST_CASE("global encoder rejects too-short input") {
    nn::ParamStore ps;
    Rng rng(3);
    GlobalEncoderConfig cfg = tiny_global_cfg();
    GlobalEncoder enc(ps, "g", cfg, rng);
    CHECK_THROWS(enc.forward(Tensor(random_mat(cfg.min_frames - 1, cfg.spec_bins, 4))));
}

TEST_CASE("attention pooling of identical frames returns the per-frame value") {
    nn::ParamStore ps;
    Rng rng(7);
    GlobalEncoderConfig cfg = tiny_global_cfg();
    GlobalEncoder enc(ps, "g", cfg, rng);
    Mat row = random_mat(1, cfg.width, 9);
    Mat rep(12, cfg.width);
    for (int t = 0; t < 12; ++t) rep.row(t) = row;
    Mat pooled_many = enc.attention_pool(Tensor(rep)).value();
    Mat pooled_one = enc.attention_pool(Tensor(row)).value();
    CHECK((pooled_many - pooled_one).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("global encoder gradients match finite differences") {
    nn::ParamStore ps;
    Rng rng(11);
    GlobalEncoderConfig cfg = tiny_global_cfg();
    GlobalEncoder enc(ps, "g", cfg, rng);
    Mat spec = random_mat(10, cfg.spec_bins, 13, 0.5).cwiseAbs();
    Mat weights = random_mat(1, cfg.out_dim, 15);
    auto loss_fn = [&]() { return ag::sum(ag::mul_const(enc.forward(Tensor(spec)), weights)); };
    std::vector<Tensor> leaves;
    for (const auto& [name, p] : ps.all()) leaves.push_back(p);
    CHECK(testutil::fd_max_rel_err(loss_fn, leaves, 1e-5, 8) < 1e-4);
}

TEST_CASE("semantic projection is an exact matrix product, frame count preserved") {
    nn::ParamStore ps;
    Rng rng(17);
    nn::Linear proj(ps, "sem", 6, 4, rng);
    Mat x = random_mat(3, 6, 19);
    Mat got = semantic_project(Tensor(x), proj).value();
    Mat want = x * proj.w.value();
    want.rowwise() += Eigen::RowVectorXd(proj.b.value().row(0));
    CHECK(got.rows() == 3);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
    // zero input, zero bias -> zero output
    nn::ParamStore ps2;
    nn::Linear proj0(ps2, "sem0", 6, 4, rng);
    proj0.b.value_mut().setZero();
    CHECK(semantic_project(Tensor(Mat::Zero(5, 6)), proj0).value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("channel attention matches the loop oracle") {
    nn::ParamStore ps;
    Rng rng(23);
    const int dim = 4, f = 2;  // 2 frames handled below, 2 groups
    ChannelAttention att(ps, "ca", dim, f, rng);
    Mat q_src = random_mat(2, dim, 29), kv_src = random_mat(2, dim, 31);
    Mat got = att.forward(Tensor(q_src), Tensor(kv_src)).value();
    Mat want = channel_attention_oracle(q_src, kv_src, att.wq.value(), att.wk.value(),
                                        att.wv.value(), f);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("channel attention with larger random instances still matches the oracle") {
    nn::ParamStore ps;
    Rng rng(37);
    const int dim = 12, f = 3;
    ChannelAttention att(ps, "ca", dim, f, rng);
    Mat q_src = random_mat(5, dim, 41), kv_src = random_mat(5, dim, 43);
    Mat got = att.forward(Tensor(q_src), Tensor(kv_src)).value();
    Mat want = channel_attention_oracle(q_src, kv_src, att.wq.value(), att.wk.value(),
                                        att.wv.value(), f);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("single-group channel attention reduces to the V projection") {
    nn::ParamStore ps;
    Rng rng(47);
    const int dim = 4;
    ChannelAttention att(ps, "ca", dim, dim, rng);  // C_a = F: one group
    Mat q_src = random_mat(3, dim, 53), kv_src = random_mat(3, dim, 59);
    Mat got = att.forward(Tensor(q_src), Tensor(kv_src)).value();
    Mat want = kv_src * att.wv.value();
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("channel attention rejects dim not divisible by F") {
    nn::ParamStore ps;
    Rng rng(61);
    CHECK_THROWS(ChannelAttention(ps, "bad", 10, 4, rng));
}

TEST_CASE("channel attention gradients match finite differences") {
    nn::ParamStore ps;
    Rng rng(67);
    const int dim = 6, f = 3;
    ChannelAttention att(ps, "ca", dim, f, rng);
    Tensor q_src(random_mat(3, dim, 71), true), kv_src(random_mat(3, dim, 73), true);
    Mat weights = random_mat(3, dim, 79);
    auto loss_fn = [&]() { return ag::sum(ag::mul_const(att.forward(q_src, kv_src), weights)); };
    std::vector<Tensor> leaves{q_src, kv_src, att.wq, att.wk, att.wv};
    CHECK(testutil::fd_max_rel_err(loss_fn, leaves, 1e-5, 24) < 1e-4);
}

TEST_CASE("residual extraction: exact cancellation when A_att equals A_ac") {
    nn::ParamStore ps;
    Rng rng(83);
    const int dim = 4;
    ChannelAttention self_att(ps, "sa", dim, 2, rng);
    Mat a = random_mat(4, dim, 89);
    // A_res = 0 -> Q = K = V = 0 -> softmax gives uniform weights over zero V
    Mat p = residual_extract(Tensor(a), Tensor(a), self_att).value();
    CHECK(p.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual extraction equals self-attention on the elementwise difference") {
    nn::ParamStore ps;
    Rng rng(97);
    const int dim = 8, f = 4;
    ChannelAttention self_att(ps, "sa", dim, f, rng);
    Mat a_ac = random_mat(3, dim, 101), a_att = random_mat(3, dim, 103);
    Mat res = a_ac - a_att;
    Mat got = residual_extract(Tensor(a_ac), Tensor(a_att), self_att).value();
    Mat want = channel_attention_oracle(res, res, self_att.wq.value(), self_att.wk.value(),
                                        self_att.wv.value(), f);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("residual extraction rejects shape mismatch") {
    nn::ParamStore ps;
    Rng rng(107);
    ChannelAttention self_att(ps, "sa", 4, 2, rng);
    CHECK_THROWS(residual_extract(Tensor(Mat::Zero(3, 4)), Tensor(Mat::Zero(2, 4)), self_att));
}

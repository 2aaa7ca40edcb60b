#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "test_helpers.hpp"
#include "unicodec/fusion_decoder.hpp"

using namespace unicodec;
using testutil::random_mat;

namespace {

FusionConfig tiny_fusion_cfg() {
    FusionConfig cfg;
    cfg.c_s = 8;
    cfg.c_p = 8;
    cfg.c_a = 8;
    cfg.c_g = 4;
    cfg.group_width = 2;
    cfg.mlp_hidden = 6;
    return cfg;
}

GenDecoderConfig tiny_dec_cfg(int groups, int codewords) {
    GenDecoderConfig cfg;
    cfg.layers = 1;
    cfg.width = 8;
    cfg.ff = 16;
    cfg.heads = 2;
    cfg.groups = groups;
    cfg.codewords = codewords;
    cfg.cond_dim = 4;
    cfg.max_positions = 64;
    return cfg;
}

// Loop oracle for one channel-wise self-attention pass (no code shared with
// the implementation).
Mat self_att_oracle(const Mat& x, const Mat& wq, const Mat& wk, const Mat& wv, int f) {
    const Eigen::Index t_len = x.rows(), dim = x.cols();
    const Eigen::Index groups = dim / f;
    Mat out(t_len, dim);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        Eigen::RowVectorXd q = x.row(t) * wq;
        Eigen::RowVectorXd k = x.row(t) * wk;
        Eigen::RowVectorXd v = x.row(t) * wv;
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
            out.row(t).segment(g * f, f) = row * vg;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("local_fuse matches a loop oracle on a small instance") {
    nn::ParamStore ps;
    Rng rng(41);
    FusionConfig cfg = tiny_fusion_cfg();
    LocalFuser fuser(ps, "lf", cfg, rng);
    Rng drng(42);
    Mat s = random_mat(3, cfg.c_s, drng);
    Mat p = random_mat(3, cfg.c_p, drng);

    Tensor out = local_fuse(Tensor(s), Tensor(p), fuser);
    CHECK(out.rows() == 3);
    CHECK(out.cols() == cfg.c_a);

    Mat fused = self_att_oracle(s, fuser.att_s.wq.value(), fuser.att_s.wk.value(),
                                fuser.att_s.wv.value(), cfg.group_width) +
                self_att_oracle(p, fuser.att_p.wq.value(), fuser.att_p.wk.value(),
                                fuser.att_p.wv.value(), cfg.group_width);
    Mat expect = (fused * fuser.proj.w.value()).rowwise() +
                 fuser.proj.b.value().row(0);
    CHECK((out.value() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("local_fuse with a zero P stream reduces to the S branch") {
    nn::ParamStore ps;
    Rng rng(43);
    FusionConfig cfg = tiny_fusion_cfg();
    LocalFuser fuser(ps, "lf", cfg, rng);
    Rng drng(44);
    Mat s = random_mat(4, cfg.c_s, drng);
    Mat p = Mat::Zero(4, cfg.c_p);

    Tensor both = local_fuse(Tensor(s), Tensor(p), fuser);
    // Zero inputs give zero Q/K/V (no biases), so the P self-attention output
    // is exactly zero and only the S branch survives the add.
    Mat s_only = self_att_oracle(s, fuser.att_s.wq.value(), fuser.att_s.wk.value(),
                                 fuser.att_s.wv.value(), cfg.group_width);
    Mat expect = (s_only * fuser.proj.w.value()).rowwise() + fuser.proj.b.value().row(0);
    CHECK((both.value() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("local_fuse rejects frame-count mismatch") {
    nn::ParamStore ps;
    Rng rng(45);
    FusionConfig cfg = tiny_fusion_cfg();
    LocalFuser fuser(ps, "lf", cfg, rng);
    Rng drng(46);
    CHECK_THROWS(local_fuse(Tensor(random_mat(3, cfg.c_s, drng)),
                            Tensor(random_mat(4, cfg.c_p, drng)), fuser));
}

TEST_CASE("global_modulate with identity lambda/beta passes A_local through") {
    nn::ParamStore ps;
    Rng rng(47);
    FusionConfig cfg = tiny_fusion_cfg();
    GlobalModulator mod(ps, "gm", cfg, rng);
    // Force the MLP outputs: zero every weight, then set output biases.
    for (auto& [name, t] : ps.all()) {
        const_cast<Tensor&>(t).value_mut().setZero();
    }
    mod.to_lambda.fc2.b.value_mut().setOnes();
    Rng drng(48);
    Mat a = random_mat(5, cfg.c_a, drng);
    Mat g = random_mat(1, cfg.c_g, drng);

    Tensor out = global_modulate(Tensor(g), Tensor(a), mod);
    CHECK((out.value() - a).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("global_modulate with lambda=0 broadcasts beta to every frame") {
    nn::ParamStore ps;
    Rng rng(49);
    FusionConfig cfg = tiny_fusion_cfg();
    GlobalModulator mod(ps, "gm", cfg, rng);
    for (auto& [name, t] : ps.all()) const_cast<Tensor&>(t).value_mut().setZero();
    Rng drng(50);
    Mat beta = random_mat(1, cfg.c_a, drng);
    mod.to_beta.fc2.b.value_mut() = beta;
    Mat a = random_mat(5, cfg.c_a, drng);

    Tensor out = global_modulate(Tensor(random_mat(1, cfg.c_g, drng)), Tensor(a), mod);
    for (int t = 0; t < 5; ++t)
        CHECK((out.value().row(t) - beta.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("global_modulate gradient w.r.t. G matches finite differences") {
    nn::ParamStore ps;
    Rng rng(51);
    FusionConfig cfg = tiny_fusion_cfg();
    GlobalModulator mod(ps, "gm", cfg, rng);
    Rng drng(52);
    Tensor g(random_mat(1, cfg.c_g, drng), true);
    Mat a = random_mat(4, cfg.c_a, drng);

    auto loss = [&]() {
        Tensor out = global_modulate(g, Tensor(a), mod);
        return ag::sum(ag::square(out));
    };
    CHECK(testutil::fd_max_rel_err(loss, {g}) < 1e-4);
}

TEST_CASE("reshape_condition splits frames row-major onto the 20 ms grid") {
    Rng drng(53);
    Mat f = random_mat(3, 8, drng);
    Tensor cond = reshape_condition(Tensor(f));
    CHECK(cond.rows() == 6);
    CHECK(cond.cols() == 4);
    for (int t = 0; t < 3; ++t) {
        CHECK((cond.value().row(2 * t) - f.row(t).segment(0, 4)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((cond.value().row(2 * t + 1) - f.row(t).segment(4, 4)).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK_THROWS(reshape_condition(Tensor(random_mat(2, 7, drng))));
}

TEST_CASE("ar_score normalizes: exhaustive enumeration with K_a=2, G_a=1") {
    nn::ParamStore ps;
    Rng rng(54);
    GenDecoderConfig cfg = tiny_dec_cfg(1, 2);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(55);
    Mat cond = random_mat(2, cfg.cond_dim, drng);

    double mass = 0.0;
    for (int a0 = 0; a0 < 2; ++a0)
        for (int a1 = 0; a1 < 2; ++a1) {
            Eigen::MatrixXi tok(2, 1);
            tok << a0, a1;
            ArScore sc = ar_score(dec, Tensor(cond), tok, /*with_eos=*/false);
            mass += std::exp(sc.total().item());
        }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ar_score with eos normalizes over all terminated sequences") {
    // Sequences of length 0, 1 and 2 (the cap), each terminated by eos except
    // at the cap; the probabilities must exhaust the event space.
    nn::ParamStore ps;
    Rng rng(56);
    GenDecoderConfig cfg = tiny_dec_cfg(1, 2);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(57);
    Mat cond = random_mat(2, cfg.cond_dim, drng);

    // Every step keeps eos in the softmax; sequences shorter than the cap end
    // with the terminal eos probability, cap-length ones with the frame terms
    // alone.
    auto seq_logp = [&](const std::vector<int>& toks, bool terminated) {
        Eigen::MatrixXi tok(static_cast<int>(toks.size()), 1);
        for (size_t i = 0; i < toks.size(); ++i) tok(static_cast<int>(i), 0) = toks[i];
        ArScore sc = ar_score(dec, Tensor(cond), tok, /*with_eos=*/true);
        return terminated ? sc.total().item() : ag::sum(sc.frame_logp).item();
    };
    double mass = std::exp(seq_logp({}, true));  // immediate eos
    for (int a0 = 0; a0 < 2; ++a0) {
        mass += std::exp(seq_logp({a0}, true));
        for (int a1 = 0; a1 < 2; ++a1) mass += std::exp(seq_logp({a0, a1}, false));
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ar_score causality: perturbing a_t leaves steps <= t untouched") {
    nn::ParamStore ps;
    Rng rng(58);
    GenDecoderConfig cfg = tiny_dec_cfg(2, 4);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(59);
    Mat cond = random_mat(6, cfg.cond_dim, drng);
    Eigen::MatrixXi tok(6, 2);
    for (int t = 0; t < 6; ++t)
        for (int g = 0; g < 2; ++g) tok(t, g) = drng.uniform_int(4);

    ArScore base = ar_score(dec, Tensor(cond), tok, false);
    for (int t = 0; t < 6; ++t) {
        Eigen::MatrixXi pert = tok;
        pert(t, 0) = (pert(t, 0) + 1) % 4;
        ArScore sc = ar_score(dec, Tensor(cond), pert, false);
        // Steps strictly before t see identical inputs: exact equality. At t
        // the distribution is unchanged too; only the gathered target moves.
        for (int s = 0; s < t; ++s)
            for (int g = 0; g < 2; ++g)
                CHECK(sc.frame_logp.value()(s, g) == base.frame_logp.value()(s, g));
        CHECK(sc.frame_logp.value()(t, 1) == base.frame_logp.value()(t, 1));
    }
}

TEST_CASE("ar_score with zeroed heads yields uniform -ln K_a") {
    nn::ParamStore ps;
    Rng rng(60);
    GenDecoderConfig cfg = tiny_dec_cfg(2, 16);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    for (auto& h : dec.heads) {
        h.w.value_mut().setZero();
        h.b.value_mut().setZero();
    }
    Rng drng(61);
    Mat cond = random_mat(4, cfg.cond_dim, drng);
    Eigen::MatrixXi tok(4, 2);
    for (int t = 0; t < 4; ++t)
        for (int g = 0; g < 2; ++g) tok(t, g) = drng.uniform_int(16);

    ArScore sc = ar_score(dec, Tensor(cond), tok, false);
    const double expect = -std::log(16.0);
    for (int t = 0; t < 4; ++t)
        for (int g = 0; g < 2; ++g)
            CHECK(sc.frame_logp.value()(t, g) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("single-stage contract: one scored position per frame for any G_a") {
    Rng drng(62);
    for (int groups : {1, 4}) {
        nn::ParamStore ps;
        Rng rng(63 + groups);
        GenDecoderConfig cfg = tiny_dec_cfg(groups, 4);
        GenerativeDecoder dec(ps, "gd", cfg, rng);
        Mat cond = random_mat(6, cfg.cond_dim, drng);
        Eigen::MatrixXi tok(6, groups);
        for (int t = 0; t < 6; ++t)
            for (int g = 0; g < groups; ++g) tok(t, g) = drng.uniform_int(4);
        ar_score(dec, Tensor(cond), tok, false);
        CHECK(dec.last_frame_positions == 6);
        ar_score(dec, Tensor(cond), tok, true);
        CHECK(dec.last_frame_positions == 7);  // + the terminal eos step
    }
}

TEST_CASE("ar_score mixture distributions are normalized over codewords") {
    nn::ParamStore ps;
    Rng rng(164);
    GenDecoderConfig cfg = tiny_dec_cfg(2, 4);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(165);
    Mat cond = random_mat(5, cfg.cond_dim, drng);
    Eigen::MatrixXi tok(5, 2);
    for (int t = 0; t < 5; ++t)
        for (int g = 0; g < 2; ++g) tok(t, g) = drng.uniform_int(4);
    for (bool eos : {false, true}) {
        ArScore sc = ar_score(dec, Tensor(cond), tok, eos);
        REQUIRE(sc.mixture_probs.size() == 2);
        for (const Tensor& p : sc.mixture_probs) {
            CHECK(p.rows() == 5);
            CHECK(p.cols() == 4);
            for (int t = 0; t < 5; ++t)
                CHECK(p.value().row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("ar_score gradient w.r.t. the condition matches finite differences") {
    nn::ParamStore ps;
    Rng rng(65);
    GenDecoderConfig cfg = tiny_dec_cfg(2, 4);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(66);
    Tensor cond(random_mat(4, cfg.cond_dim, drng), true);
    Eigen::MatrixXi tok(4, 2);
    for (int t = 0; t < 4; ++t)
        for (int g = 0; g < 2; ++g) tok(t, g) = drng.uniform_int(4);

    auto loss = [&]() { return ag::neg(ar_score(dec, cond, tok, true).total()); };
    CHECK(testutil::fd_max_rel_err(loss, {cond}, 1e-5, 32) < 1e-4);
}

TEST_CASE("ar_score differentiates end-to-end through modulation to G") {
    nn::ParamStore ps;
    Rng rng(67);
    FusionConfig fcfg = tiny_fusion_cfg();
    GenDecoderConfig dcfg = tiny_dec_cfg(1, 4);
    dcfg.cond_dim = fcfg.c_a / 2;
    GlobalModulator mod(ps, "gm", fcfg, rng);
    GenerativeDecoder dec(ps, "gd", dcfg, rng);
    Rng drng(68);
    Tensor g(random_mat(1, fcfg.c_g, drng), true);
    Mat a_local = random_mat(3, fcfg.c_a, drng);
    Eigen::MatrixXi tok(6, 1);
    for (int t = 0; t < 6; ++t) tok(t, 0) = drng.uniform_int(4);

    auto loss = [&]() {
        Tensor cond = reshape_condition(global_modulate(g, Tensor(a_local), mod));
        return ag::neg(ar_score(dec, cond, tok, false).total());
    };
    CHECK(testutil::fd_max_rel_err(loss, {g}, 1e-5, 16) < 1e-4);
}

TEST_CASE("ar_generate: greedy decoding is deterministic and capped") {
    nn::ParamStore ps;
    Rng rng(69);
    GenDecoderConfig cfg = tiny_dec_cfg(2, 8);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(70);
    Mat cond = random_mat(10, cfg.cond_dim, drng);

    SamplingConfig greedy{0.0, 0};
    Eigen::MatrixXi a = ar_generate(dec, Tensor(cond), greedy, 1);
    Eigen::MatrixXi b = ar_generate(dec, Tensor(cond), greedy, 999);
    CHECK(a == b);
    CHECK(a.rows() <= 10);
    CHECK(a.cols() == 2);
    for (int t = 0; t < a.rows(); ++t)
        for (int g = 0; g < 2; ++g) {
            CHECK(a(t, g) >= 0);
            CHECK(a(t, g) < 8);
        }
}

TEST_CASE("ar_generate: sampled decoding is reproducible per seed") {
    nn::ParamStore ps;
    Rng rng(71);
    GenDecoderConfig cfg = tiny_dec_cfg(2, 8);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(72);
    Mat cond = random_mat(8, cfg.cond_dim, drng);

    SamplingConfig s{0.8, 4};
    Eigen::MatrixXi a = ar_generate(dec, Tensor(cond), s, 7);
    Eigen::MatrixXi b = ar_generate(dec, Tensor(cond), s, 7);
    CHECK(a == b);
}

TEST_CASE("ar_generate counts one forward position per emitted frame") {
    nn::ParamStore ps;
    Rng rng(73);
    GenDecoderConfig cfg = tiny_dec_cfg(4, 8);
    GenerativeDecoder dec(ps, "gd", cfg, rng);
    Rng drng(74);
    Mat cond = random_mat(6, cfg.cond_dim, drng);
    Eigen::MatrixXi out = ar_generate(dec, Tensor(cond), SamplingConfig{0.0, 0}, 0);
    // Every generation step consumes exactly one new position; an eos stop
    // spends one position without emitting a frame.
    CHECK(dec.last_frame_positions >= out.rows());
    CHECK(dec.last_frame_positions <= out.rows() + 1);
}

TEST_CASE("overfit: greedy regeneration reproduces >= 95% of tokens") {
    nn::ParamStore ps;
    Rng rng(75);
    GenDecoderConfig cfg = tiny_dec_cfg(2, 8);
    cfg.width = 16;
    cfg.ff = 32;
    GenerativeDecoder dec(ps, "gd", cfg, rng);

    // Five "utterances": fixed random conditions and token sequences.
    const int n = 5, t_a = 8;
    Rng drng(76);
    std::vector<Mat> conds;
    std::vector<Eigen::MatrixXi> toks;
    for (int u = 0; u < n; ++u) {
        conds.push_back(random_mat(t_a, cfg.cond_dim, drng));
        Eigen::MatrixXi tok(t_a, cfg.groups);
        for (int t = 0; t < t_a; ++t)
            for (int g = 0; g < cfg.groups; ++g) tok(t, g) = drng.uniform_int(cfg.codewords);
        toks.push_back(tok);
    }

    nn::Adam opt(nn::AdamConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
    for (int step = 0; step < 400; ++step) {
        Tensor loss;
        for (int u = 0; u < n; ++u) {
            Tensor nll = ag::neg(ar_score(dec, Tensor(conds[u]), toks[u], true).total());
            loss = (u == 0) ? nll : ag::add(loss, nll);
        }
        ag::backward(loss);
        opt.step(ps);
    }

    int match = 0, total = 0;
    for (int u = 0; u < n; ++u) {
        Eigen::MatrixXi gen = ar_generate(dec, Tensor(conds[u]), SamplingConfig{0.0, 0}, 0);
        REQUIRE(gen.rows() == t_a);  // eos learned at the right step
        for (int t = 0; t < t_a; ++t)
            for (int g = 0; g < cfg.groups; ++g) {
                total++;
                if (gen(t, g) == toks[u](t, g)) match++;
            }
    }
    CHECK(static_cast<double>(match) / total >= 0.95);
}

TEST_CASE("decode_to_waveform delegates to the frozen acoustic codec") {
    AcCodecConfig cfg;
    cfg.groups = 2;
    cfg.codewords = 8;
    cfg.latent = 8;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.ff = 32;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.max_frames = 64;
    AcousticCodec codec(cfg, 99);

    Rng drng(77);
    const int t_a = 6;
    Eigen::MatrixXi tok(t_a, cfg.groups);
    for (int t = 0; t < t_a; ++t)
        for (int g = 0; g < cfg.groups; ++g) tok(t, g) = drng.uniform_int(cfg.codewords);

    Waveform hard = decode_to_waveform(codec, tok);
    CHECK(hard.samples.size() == static_cast<size_t>(t_a) * 80);

    std::vector<Tensor> soft;
    for (int g = 0; g < cfg.groups; ++g) {
        Mat p = Mat::Zero(t_a, cfg.codewords);
        for (int t = 0; t < t_a; ++t) p(t, tok(t, g)) = 1.0;
        soft.emplace_back(p);
    }
    Tensor soft_wave = decode_to_waveform_soft(codec, soft);
    for (int i = 0; i < soft_wave.rows(); ++i)
        CHECK(soft_wave.value()(i, 0) ==
              doctest::Approx(hard.samples[static_cast<size_t>(i)]).epsilon(1e-10));

    uint64_t sum = codec.checksum();
    Eigen::MatrixXi bad = tok;
    bad(0, 0) = cfg.codewords;
    CHECK_THROWS(decode_to_waveform(codec, bad));
    CHECK(codec.checksum() == sum);
}

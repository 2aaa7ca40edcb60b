#include "unicodec/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "unicodec/checkpoint.hpp"
#include "unicodec/pitch.hpp"

namespace unicodec {

namespace {

constexpr double kPi = 3.14159265358979323846;

StftConfig spec20_config() {
    StftConfig cfg;
    cfg.window_ms = 40.0;
    cfg.hop_ms = 20.0;
    return cfg;
}

// log(1 + |X|) compression; keeps the graph if the input has one.
Tensor compress(const Tensor& mag) {
    return ag::log_(ag::add_const(mag, Mat::Ones(mag.rows(), mag.cols())));
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
    Mat onehot = Mat::Zero(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t)
        onehot(t, labels[static_cast<size_t>(t)]) = 1.0;
    Tensor logp = ag::log_softmax_rows(logits);
    return ag::scale(ag::neg(ag::sum(ag::mul(logp, Tensor(onehot)))),
                     1.0 / static_cast<double>(logits.rows()));
}

std::vector<int> frame_content_labels(const SyntheticFactors& f, Eigen::Index frames,
                                      double frame_ms) {
    std::vector<int> y(static_cast<size_t>(frames));
    const int per_segment = static_cast<int>(std::lround(kSegmentMs / frame_ms));
    for (Eigen::Index t = 0; t < frames; ++t) {
        size_t seg = static_cast<size_t>(t / per_segment);
        y[static_cast<size_t>(t)] = f.content[std::min(seg, f.content.size() - 1)];
    }
    return y;
}

}  // namespace

FrameFeatures acoustic_spec(const Waveform& wave) {
    const int frame40 = wave.sample_rate * 40 / 1000;
    const int hop = frame40 / 2;
    const size_t whole = wave.samples.size() / static_cast<size_t>(frame40) *
                         static_cast<size_t>(frame40);
    if (whole == 0) throw std::invalid_argument("acoustic_spec: waveform shorter than one frame");
    Waveform padded;
    padded.sample_rate = wave.sample_rate;
    padded.samples.assign(wave.samples.begin(), wave.samples.begin() + static_cast<long>(whole));
    padded.samples.insert(padded.samples.end(), static_cast<size_t>(hop), 0.0);
    FrameFeatures out = stft(padded, spec20_config());
    return out;
}

// ---------------------------------------------------------------------------

TeacherModel::TeacherModel(const TeacherConfig& cfg_, uint64_t seed)
    : cfg(cfg_), params(std::make_shared<nn::ParamStore>()) {
    Rng rng(mix_seed(seed, 0x7e4c));
    const int bins = spec20_config().bins(kSampleRate);
    in_proj = nn::Linear(*params, "teacher/in", bins, cfg.width, rng);
    pos = nn::PositionalEmbedding(*params, "teacher/pos", cfg.max_frames, cfg.width, rng);
    for (int l = 0; l < cfg.layers; ++l)
        blocks.emplace_back(*params, "teacher/block" + std::to_string(l), cfg.width, cfg.heads,
                            cfg.ff, rng);
}

Tensor TeacherModel::layer_output(const Tensor& spec20, int layer) const {
    if (layer < 1 || layer > cfg.layers) throw std::invalid_argument("teacher: bad layer index");
    Tensor x = pos.forward(in_proj.forward(compress(spec20)));
    for (int l = 0; l < layer; ++l) x = blocks[static_cast<size_t>(l)].forward(x);
    return x;
}

Mat TeacherModel::features(const Waveform& wave, int layer) const {
    return layer_output(Tensor(acoustic_spec(wave).values), layer).value();
}

void TeacherModel::save(const std::string& path) const {
    std::map<std::string, std::string> meta{
        {"kind", "teacher"},
        {"width", std::to_string(cfg.width)},
        {"layers", std::to_string(cfg.layers)},
        {"heads", std::to_string(cfg.heads)},
        {"ff", std::to_string(cfg.ff)},
        {"l_mid", std::to_string(cfg.l_mid)},
        {"l_top", std::to_string(cfg.l_top)},
        {"max_frames", std::to_string(cfg.max_frames)},
    };
    save_checkpoint(path, *params, meta);
}

TeacherModel TeacherModel::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta["kind"] != "teacher") throw std::runtime_error("not a teacher checkpoint");
    TeacherConfig cfg;
    cfg.width = std::stoi(ck.meta.at("width"));
    cfg.layers = std::stoi(ck.meta.at("layers"));
    cfg.heads = std::stoi(ck.meta.at("heads"));
    cfg.ff = std::stoi(ck.meta.at("ff"));
    cfg.l_mid = std::stoi(ck.meta.at("l_mid"));
    cfg.l_top = std::stoi(ck.meta.at("l_top"));
    cfg.max_frames = std::stoi(ck.meta.at("max_frames"));
    TeacherModel model(cfg, 0);
    apply_params(*model.params, ck.params);
    model.params->freeze();
    return model;
}

TeacherModel train_teacher(const Corpus& corpus, const TeacherTrainConfig& cfg) {
    TeacherModel model(cfg.arch, cfg.seed);
    Rng rng(mix_seed(cfg.seed, 0x7417));
    nn::ParamStore heads;
    const int bins = spec20_config().bins(kSampleRate);
    nn::Linear content_head(heads, "head/content", cfg.arch.width, kContentVocab, rng);
    nn::Linear reg_head(heads, "head/reg", cfg.arch.width, bins, rng);
    nn::Adam opt_trunk(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 1.0});
    nn::Adam opt_heads(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 1.0});

    auto train_items = corpus.split("train");
    if (train_items.empty()) throw std::invalid_argument("train_teacher: empty train split");

    for (int step = 0; step < cfg.steps; ++step) {
        Tensor loss = Tensor::scalar(0.0);
        for (int b = 0; b < cfg.batch_utterances; ++b) {
            const CorpusItem& item =
                *train_items[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_items.size())))];
            Waveform wave = generate_utterance(item.factors, item.seed);
            FrameFeatures spec = acoustic_spec(wave);
            Tensor spec_t(spec.values);

            Tensor x = model.pos.forward(model.in_proj.forward(compress(spec_t)));
            Tensor mid, top;
            for (int l = 0; l < cfg.arch.layers; ++l) {
                x = model.blocks[static_cast<size_t>(l)].forward(x);
                if (l + 1 == cfg.arch.l_mid) mid = x;
                if (l + 1 == cfg.arch.l_top) top = x;
            }
            auto labels = frame_content_labels(item.factors, spec.values.rows(), 20.0);
            Tensor ce = cross_entropy_rows(content_head.forward(top), labels);
            Tensor target = compress(Tensor(spec.values));
            Tensor reg = ag::mean(ag::square(ag::sub(reg_head.forward(mid), target)));
            loss = ag::add(loss, ag::add(ce, ag::scale(reg, cfg.regression_weight)));
        }
        ag::backward(ag::scale(loss, 1.0 / cfg.batch_utterances));
        opt_trunk.step(*model.params);
        opt_heads.step(heads);
    }

    // Content floor on the valid split, measured with the training head.
    auto valid_items = corpus.split("valid");
    if (valid_items.empty()) valid_items = train_items;
    long hits = 0, total = 0;
    for (const CorpusItem* item : valid_items) {
        Waveform wave = generate_utterance(item->factors, item->seed);
        FrameFeatures spec = acoustic_spec(wave);
        Mat logits =
            content_head.forward(model.layer_output(Tensor(spec.values), cfg.arch.l_top)).value();
        auto labels = frame_content_labels(item->factors, logits.rows(), 20.0);
        for (Eigen::Index t = 0; t < logits.rows(); ++t) {
            Eigen::Index arg = 0;
            logits.row(t).maxCoeff(&arg);
            hits += arg == labels[static_cast<size_t>(t)];
            ++total;
        }
    }
    double acc = static_cast<double>(hits) / static_cast<double>(total);
    if (acc < cfg.min_content_accuracy)
        throw std::runtime_error("train_teacher: content accuracy " + std::to_string(acc) +
                                 " below floor " + std::to_string(cfg.min_content_accuracy));
    model.params->freeze();
    return model;
}

std::pair<FrameFeatures, FrameFeatures> extract_features(const TeacherModel& teacher,
                                                         const Waveform& wave) {
    FrameFeatures spec = acoustic_spec(wave);
    Tensor spec_t(spec.values);
    Mat top = teacher.layer_output(spec_t, teacher.cfg.l_top).value();
    Mat mid = teacher.layer_output(spec_t, teacher.cfg.l_mid).value();
    const Eigen::Index t40 = top.rows() / 2;  // odd trailing 20 ms frame dropped
    const Eigen::Index w = top.cols();
    FrameFeatures s_se, a_ac;
    s_se.frame_ms = a_ac.frame_ms = 40.0;
    s_se.values.resize(t40, 2 * w);
    a_ac.values.resize(t40, 2 * w);
    for (Eigen::Index t = 0; t < t40; ++t) {
        s_se.values.row(t) << top.row(2 * t), top.row(2 * t + 1);
        a_ac.values.row(t) << mid.row(2 * t), mid.row(2 * t + 1);
    }
    return {std::move(s_se), std::move(a_ac)};
}

// ---------------------------------------------------------------------------

Mat make_noise_basis(int samples, int sample_rate, int bands, uint64_t seed) {
    // Each band: a fixed set of random sinusoids inside its frequency range.
    // Basis entries are pure functions of (band, sample), so longer requests
    // are prefix-consistent with shorter ones.
    const double lo = 100.0, hi = 0.48 * sample_rate;
    const int per_band = 6;
    Mat basis(samples, bands);
    for (int b = 0; b < bands; ++b) {
        Rng rng(mix_seed(seed, 0xBA5E0000ull + static_cast<uint64_t>(b)));
        double f0 = lo + (hi - lo) * b / bands;
        double f1 = lo + (hi - lo) * (b + 1) / bands;
        std::vector<double> freq(per_band), phase(per_band);
        for (int j = 0; j < per_band; ++j) {
            freq[static_cast<size_t>(j)] = rng.uniform(f0, f1);
            phase[static_cast<size_t>(j)] = rng.uniform(0.0, 2.0 * kPi);
        }
        const double norm = 1.0 / std::sqrt(static_cast<double>(per_band));
        for (int n = 0; n < samples; ++n) {
            double v = 0.0;
            for (int j = 0; j < per_band; ++j)
                v += std::cos(2.0 * kPi * freq[static_cast<size_t>(j)] * n / sample_rate +
                              phase[static_cast<size_t>(j)]);
            basis(n, b) = norm * v;
        }
    }
    return basis;
}

Tensor harmonic_synth(const Tensor& f0, const Tensor& voiced, const Tensor& amps,
                      const Tensor& noise_gains, int sample_rate, int frame_len,
                      const Mat& noise_basis) {
    const Eigen::Index frames = f0.rows();
    if (f0.cols() != 1 || voiced.rows() != frames || voiced.cols() != 1 ||
        amps.rows() != frames || noise_gains.rows() != frames)
        throw std::invalid_argument("harmonic_synth: shape mismatch");
    const Eigen::Index n_samples = frames * frame_len;
    if (noise_basis.rows() < n_samples || noise_basis.cols() != noise_gains.cols())
        throw std::invalid_argument("harmonic_synth: noise basis too small");
    const int harmonics = static_cast<int>(amps.cols());
    const int bands = static_cast<int>(noise_gains.cols());
    const double nyquist_cap = 0.49 * sample_rate;

    Mat f0v = f0.value(), vv = voiced.value(), av = amps.value(), nv = noise_gains.value();
    Mat basis = noise_basis.topRows(n_samples);

    // Cumulative phase of the fundamental; harmonic h uses (h+1) * phi.
    Mat phi(n_samples, 1);
    {
        double p = 0.0;
        for (Eigen::Index n = 0; n < n_samples; ++n) {
            p += 2.0 * kPi * f0v(n / frame_len, 0) / sample_rate;
            phi(n, 0) = p;
        }
    }
    Mat harm = Mat::Zero(n_samples, 1), noise = Mat::Zero(n_samples, 1);
    for (Eigen::Index n = 0; n < n_samples; ++n) {
        const Eigen::Index t = n / frame_len;
        for (int h = 0; h < harmonics; ++h) {
            if ((h + 1) * f0v(t, 0) >= nyquist_cap) continue;
            harm(n, 0) += av(t, h) * std::sin((h + 1) * phi(n, 0));
        }
        for (int b = 0; b < bands; ++b) noise(n, 0) += nv(t, b) * basis(n, b);
    }
    Mat out(n_samples, 1);
    for (Eigen::Index n = 0; n < n_samples; ++n) {
        const Eigen::Index t = n / frame_len;
        out(n, 0) = vv(t, 0) * harm(n, 0) + (1.0 - vv(t, 0)) * noise(n, 0);
    }

    auto f0n = f0.node(), vn = voiced.node(), an = amps.node(), nn_ = noise_gains.node();
    auto backward = [f0n, vn, an, nn_, f0v, vv, av, nv, basis, phi, harm, noise, frame_len,
                     harmonics, bands, sample_rate, nyquist_cap](const Mat& g, const Mat&) {
        const Eigen::Index n_samples = g.rows();
        const Eigen::Index frames = n_samples / frame_len;
        Mat d_f0 = Mat::Zero(frames, 1), d_v = Mat::Zero(frames, 1);
        Mat d_a = Mat::Zero(frames, harmonics), d_n = Mat::Zero(frames, bands);
        // s(n) = dL/dphi(n); phase is a prefix sum of the per-frame f0, so
        // dL/df0(t) accumulates the suffix sum of s over samples >= each
        // sample of frame t.
        Mat s = Mat::Zero(n_samples, 1);
        for (Eigen::Index n = 0; n < n_samples; ++n) {
            const Eigen::Index t = n / frame_len;
            const double gv = g(n, 0);
            d_v(t, 0) += gv * (harm(n, 0) - noise(n, 0));
            double dphi = 0.0;
            for (int h = 0; h < harmonics; ++h) {
                if ((h + 1) * f0v(t, 0) >= nyquist_cap) continue;
                const double arg = (h + 1) * phi(n, 0);
                d_a(t, h) += gv * vv(t, 0) * std::sin(arg);
                dphi += av(t, h) * (h + 1) * std::cos(arg);
            }
            s(n, 0) = gv * vv(t, 0) * dphi;
            for (int b = 0; b < bands; ++b) d_n(t, b) += gv * (1.0 - vv(t, 0)) * basis(n, b);
        }
        double suffix = 0.0;
        for (Eigen::Index n = n_samples - 1; n >= 0; --n) {
            suffix += s(n, 0);
            d_f0(n / frame_len, 0) += suffix * 2.0 * kPi / sample_rate;
        }
        ag::accum_grad(f0n, d_f0);
        ag::accum_grad(vn, d_v);
        ag::accum_grad(an, d_a);
        ag::accum_grad(nn_, d_n);
    };
    return ag::make_op(std::move(out), {f0, voiced, amps, noise_gains}, backward);
}

// ---------------------------------------------------------------------------

namespace {

constexpr uint64_t kNoiseBasisSeed = 0xACC0DEC5ull;

const Mat& cached_noise_basis(int samples, int sample_rate, int bands) {
    thread_local Mat cache;
    thread_local int cached_bands = -1, cached_sr = -1;
    if (cache.rows() < samples || cached_bands != bands || cached_sr != sample_rate) {
        int want = std::max(samples, static_cast<int>(cache.rows()));
        cache = make_noise_basis(want, sample_rate, bands, kNoiseBasisSeed);
        cached_bands = bands;
        cached_sr = sample_rate;
    }
    return cache;
}

}  // namespace

AcousticCodec::AcousticCodec(const AcCodecConfig& cfg_, uint64_t seed)
    : cfg(cfg_), params(std::make_shared<nn::ParamStore>()) {
    Rng rng(mix_seed(seed, 0xACCD));
    const int bins = spec20_config().bins(cfg.sample_rate);
    enc_in = nn::Linear(*params, "ac/enc_in", bins, cfg.width, rng);
    enc_pos = nn::PositionalEmbedding(*params, "ac/enc_pos", cfg.max_frames, cfg.width, rng);
    for (int l = 0; l < cfg.enc_layers; ++l)
        enc_blocks.emplace_back(*params, "ac/enc" + std::to_string(l), cfg.width, cfg.heads,
                                cfg.ff, rng);
    enc_out = nn::Linear(*params, "ac/enc_out", cfg.width, cfg.latent, rng);
    quant = GroupQuantizer(*params, "ac/quant", cfg.latent, cfg.groups, cfg.codewords, rng);
    dec_in = nn::Linear(*params, "ac/dec_in", cfg.latent, cfg.width, rng);
    dec_pos = nn::PositionalEmbedding(*params, "ac/dec_pos", cfg.max_frames, cfg.width, rng);
    for (int l = 0; l < cfg.dec_layers; ++l)
        dec_blocks.emplace_back(*params, "ac/dec" + std::to_string(l), cfg.width, cfg.heads,
                                cfg.ff, rng);
    head_f0 = nn::Linear(*params, "ac/head_f0", cfg.width, 1, rng);
    head_voiced = nn::Linear(*params, "ac/head_voiced", cfg.width, 1, rng);
    head_amps = nn::Linear(*params, "ac/head_amps", cfg.width, cfg.harmonics, rng);
    head_noise = nn::Linear(*params, "ac/head_noise", cfg.width, cfg.noise_bands, rng);
}

Tensor AcousticCodec::encode(const Tensor& spec20) const {
    Tensor x = enc_pos.forward(enc_in.forward(compress(spec20)));
    for (const auto& b : enc_blocks) x = b.forward(x);
    return enc_out.forward(x);
}

namespace {
struct SynthHeads {
    Tensor f0, voiced, amps, noise;
};

SynthHeads decode_heads(const AcousticCodec& c, const Tensor& quantized_latent) {
    Tensor x = c.dec_pos.forward(c.dec_in.forward(quantized_latent));
    for (const auto& b : c.dec_blocks) x = b.forward(x);
    SynthHeads h;
    // Log-space pitch: multiplicative errors match the relative-deviation
    // metric and keep the gradient scale uniform across the range.
    h.f0 = ag::scale(ag::exp_(ag::scale(ag::sigmoid(c.head_f0.forward(x)),
                                        std::log(kF0Max / kF0Min))),
                     kF0Min);
    h.voiced = ag::sigmoid(c.head_voiced.forward(x));
    h.amps = ag::sigmoid(c.head_amps.forward(x));
    h.noise = ag::sigmoid(c.head_noise.forward(x));
    return h;
}

Tensor synth_from_heads(const AcousticCodec& c, const SynthHeads& h) {
    const int frame_len = c.cfg.sample_rate * 20 / 1000;
    const int n = static_cast<int>(h.f0.rows()) * frame_len;
    const Mat& basis = cached_noise_basis(n, c.cfg.sample_rate, c.cfg.noise_bands);
    return harmonic_synth(h.f0, h.voiced, h.amps, h.noise, c.cfg.sample_rate, frame_len, basis);
}
}  // namespace

Tensor AcousticCodec::decode_wave(const Tensor& quantized_latent) const {
    SynthHeads h = decode_heads(*this, quantized_latent);
    // Inference hardens the voiced gate: the soft mixture is only needed for
    // gradient flow, and residual noise under a harmonic frame drags the
    // tracker's periodicity below its voicing threshold.
    Mat v = h.voiced.value();
    h.voiced = Tensor((v.array() > 0.5).cast<double>().matrix());
    return synth_from_heads(*this, h);
}

void AcousticCodec::save(const std::string& path) const {
    std::map<std::string, std::string> meta{
        {"kind", "accodec"},
        {"groups", std::to_string(cfg.groups)},
        {"codewords", std::to_string(cfg.codewords)},
        {"latent", std::to_string(cfg.latent)},
        {"width", std::to_string(cfg.width)},
        {"heads", std::to_string(cfg.heads)},
        {"ff", std::to_string(cfg.ff)},
        {"enc_layers", std::to_string(cfg.enc_layers)},
        {"dec_layers", std::to_string(cfg.dec_layers)},
        {"harmonics", std::to_string(cfg.harmonics)},
        {"noise_bands", std::to_string(cfg.noise_bands)},
        {"sample_rate", std::to_string(cfg.sample_rate)},
        {"max_frames", std::to_string(cfg.max_frames)},
    };
    save_checkpoint(path, *params, meta);
}

AcousticCodec AcousticCodec::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta["kind"] != "accodec") throw std::runtime_error("not an acoustic codec checkpoint");
    AcCodecConfig cfg;
    cfg.groups = std::stoi(ck.meta.at("groups"));
    cfg.codewords = std::stoi(ck.meta.at("codewords"));
    cfg.latent = std::stoi(ck.meta.at("latent"));
    cfg.width = std::stoi(ck.meta.at("width"));
    cfg.heads = std::stoi(ck.meta.at("heads"));
    cfg.ff = std::stoi(ck.meta.at("ff"));
    cfg.enc_layers = std::stoi(ck.meta.at("enc_layers"));
    cfg.dec_layers = std::stoi(ck.meta.at("dec_layers"));
    cfg.harmonics = std::stoi(ck.meta.at("harmonics"));
    cfg.noise_bands = std::stoi(ck.meta.at("noise_bands"));
    cfg.sample_rate = std::stoi(ck.meta.at("sample_rate"));
    cfg.max_frames = std::stoi(ck.meta.at("max_frames"));
    AcousticCodec codec(cfg, 0);
    apply_params(*codec.params, ck.params);
    codec.params->freeze();
    return codec;
}

Eigen::MatrixXi acoustic_tokenize(const AcousticCodec& codec, const Waveform& wave) {
    Tensor latent = codec.encode(Tensor(acoustic_spec(wave).values));
    return quantize(latent, codec.quant, QuantizeMode::Infer, 1.0).indices;
}

Waveform acoustic_decode(const AcousticCodec& codec, const Eigen::MatrixXi& tokens) {
    if (tokens.cols() != codec.cfg.groups)
        throw std::invalid_argument("acoustic_decode: wrong group count");
    if (tokens.size() > 0 && (tokens.minCoeff() < 0 || tokens.maxCoeff() >= codec.cfg.codewords))
        throw std::invalid_argument("acoustic_decode: token index out of range");
    Tensor latent;
    for (int g = 0; g < codec.cfg.groups; ++g) {
        std::vector<int> idx(static_cast<size_t>(tokens.rows()));
        for (Eigen::Index t = 0; t < tokens.rows(); ++t) idx[static_cast<size_t>(t)] = tokens(t, g);
        Tensor rows = ag::gather_rows(codec.quant.codebooks[static_cast<size_t>(g)], idx);
        latent = g == 0 ? rows : ag::concat_cols(latent, rows);
    }
    Tensor wave_t = codec.decode_wave(latent);
    Waveform out;
    out.sample_rate = codec.cfg.sample_rate;
    out.samples.resize(static_cast<size_t>(wave_t.rows()));
    for (Eigen::Index i = 0; i < wave_t.rows(); ++i)
        out.samples[static_cast<size_t>(i)] = wave_t.value()(i, 0);
    return out;
}

Tensor acoustic_decode_soft(const AcousticCodec& codec, const std::vector<Tensor>& soft_probs) {
    if (static_cast<int>(soft_probs.size()) != codec.cfg.groups)
        throw std::invalid_argument("acoustic_decode_soft: wrong group count");
    Tensor latent;
    for (int g = 0; g < codec.cfg.groups; ++g) {
        const Tensor& probs = soft_probs[static_cast<size_t>(g)];
        if (probs.cols() != codec.cfg.codewords)
            throw std::invalid_argument("acoustic_decode_soft: wrong codeword count");
        Tensor rows = ag::matmul(probs, codec.quant.codebooks[static_cast<size_t>(g)]);
        latent = g == 0 ? rows : ag::concat_cols(latent, rows);
    }
    return codec.decode_wave(latent);
}

AcousticCodec train_acoustic_codec(const Corpus& corpus, const AcCodecTrainConfig& cfg) {
    AcousticCodec codec(cfg.arch, cfg.seed);
    Rng rng(mix_seed(cfg.seed, 0x5EED));
    nn::Adam opt(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 1.0});
    auto train_items = corpus.split("train");
    if (train_items.empty()) throw std::invalid_argument("train_acoustic_codec: empty train split");

    const StftConfig loss_cfg = spec20_config();
    bool codebook_seeded = false;
    // Collapse watch: latent rows and hard assignments since the last
    // re-seed; dead codewords are re-seeded from recent encoder outputs.
    Mat reservoir;
    std::vector<std::vector<long>> usage(
        static_cast<size_t>(cfg.arch.groups),
        std::vector<long>(static_cast<size_t>(cfg.arch.codewords), 0));
    const int reseed_every = 25;
    const int gdim = cfg.arch.latent / cfg.arch.groups;
    for (int step = 0; step < cfg.steps; ++step) {
        const double frac = std::min(1.0, 2.0 * step / std::max(1, cfg.steps));
        const double tau = cfg.tau_start + frac * (cfg.tau_end - cfg.tau_start);
        Tensor loss = Tensor::scalar(0.0);
        for (int b = 0; b < cfg.batch_utterances; ++b) {
            const CorpusItem& item =
                *train_items[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_items.size())))];
            Waveform wave = generate_utterance(item.factors, item.seed);
            FrameFeatures spec = acoustic_spec(wave);
            Tensor latent = codec.encode(Tensor(spec.values));
            if (!codebook_seeded) {
                codec.quant.init_from_features(latent.value(), rng);
                codebook_seeded = true;
            }
            // Noise-free straight-through: the temperature only softens the
            // gradient path. Gumbel exploration collapsed the codebooks here.
            auto qr = quantize(latent, codec.quant, QuantizeMode::Train, tau);
            reservoir = latent.value();
            for (int g = 0; g < cfg.arch.groups; ++g)
                for (Eigen::Index t = 0; t < qr.indices.rows(); ++t)
                    usage[static_cast<size_t>(g)][static_cast<size_t>(qr.indices(t, g))]++;
            // VQ-VAE commitment/codebook pair keeps encoder and codewords
            // from drifting apart.
            Tensor l_commit = ag::mean(ag::square(ag::sub(latent, ag::detach(qr.quantized))));
            Tensor l_code = ag::mean(ag::square(ag::sub(ag::detach(latent), qr.quantized)));
            loss = ag::add(loss, ag::add(ag::scale(l_commit, 0.25), l_code));
            SynthHeads heads = decode_heads(codec, qr.quantized);

            // Pitch supervision from the tracker on the source audio,
            // upsampled from the 40 ms grid to 20 ms.
            PitchTrack ref = pitch_track(wave);
            const Eigen::Index t20 = heads.f0.rows();
            Mat f0_ref = Mat::Zero(t20, 1), voiced_ref = Mat::Zero(t20, 1);
            for (Eigen::Index t = 0; t < t20; ++t) {
                size_t t40 = std::min(static_cast<size_t>(t / 2), ref.frames.size() - 1);
                if (ref.frames[t40].voiced) {
                    voiced_ref(t, 0) = 1.0;
                    f0_ref(t, 0) = ref.frames[t40].f0;
                }
            }
            double voiced_count = std::max(1.0, voiced_ref.sum());
            // Mean squared *relative* f0 error over voiced frames, matching
            // the 20%-deviation metric.
            Mat f0_mask = Mat::Zero(t20, 1);
            for (Eigen::Index t = 0; t < t20; ++t)
                if (voiced_ref(t, 0) > 0.0)
                    f0_mask(t, 0) = 1.0 / (f0_ref(t, 0) * std::sqrt(voiced_count));
            Tensor f0_err =
                ag::mul_const(ag::add_const(heads.f0, Mat(-f0_ref)), f0_mask);
            Tensor l_f0 = ag::sum(ag::square(f0_err));
            Mat eps1 = Mat::Constant(t20, 1, 1e-7);
            Tensor log_p = ag::log_(ag::add(heads.voiced, Tensor(eps1)));
            Tensor log_q = ag::log_(ag::add(ag::add_const(ag::neg(heads.voiced),
                                                          Mat::Ones(t20, 1)),
                                            Tensor(eps1)));
            Tensor l_voi = ag::scale(
                ag::neg(ag::add(ag::sum(ag::mul_const(log_p, voiced_ref)),
                                ag::sum(ag::mul_const(log_q, Mat(Mat::Ones(t20, 1) - voiced_ref))))),
                1.0 / static_cast<double>(t20));

            // Waveform gradients w.r.t. instantaneous frequency oscillate and
            // grow with the horizon, saturating the f0 head and dominating
            // the clip budget; pitch learns from the tracker loss instead.
            SynthHeads synth_heads = heads;
            synth_heads.f0 = ag::detach(heads.f0);
            Tensor wave_hat = synth_from_heads(codec, synth_heads);
            Tensor spec_hat = compress(stft_t(wave_hat, codec.cfg.sample_rate, loss_cfg));
            size_t whole = wave.samples.size() / 160 * 160;
            Waveform trunc{std::vector<double>(wave.samples.begin(),
                                               wave.samples.begin() + static_cast<long>(whole)),
                           wave.sample_rate};
            Mat spec_ref = stft(trunc, loss_cfg).values;
            spec_ref = (spec_ref.array() + 1.0).log().matrix();
            Eigen::Index rows = std::min(spec_hat.rows(), spec_ref.rows());
            Tensor l_spec = ag::mean(ag::abs_smooth(
                ag::add_const(ag::slice_rows(spec_hat, 0, rows), Mat(-spec_ref.topRows(rows)))));

            loss = ag::add(loss, ag::add(ag::scale(l_spec, cfg.spec_weight),
                                         ag::add(ag::scale(l_f0, cfg.f0_weight),
                                                 ag::scale(l_voi, cfg.voiced_weight))));
        }
        ag::backward(ag::scale(loss, 1.0 / cfg.batch_utterances));
        opt.step(*codec.params);

        if ((step + 1) % reseed_every == 0 && reservoir.rows() > 0) {
            for (int g = 0; g < cfg.arch.groups; ++g) {
                auto& used = usage[static_cast<size_t>(g)];
                Mat& cb = codec.quant.codebooks[static_cast<size_t>(g)].value_mut();
                for (int k = 0; k < cfg.arch.codewords; ++k) {
                    if (used[static_cast<size_t>(k)] > 0) continue;
                    const Eigen::Index r = rng.uniform_int(static_cast<int>(reservoir.rows()));
                    for (int d = 0; d < gdim; ++d)
                        cb(k, d) = reservoir(r, g * gdim + d) + 0.01 * rng.gaussian();
                }
                std::fill(used.begin(), used.end(), 0L);
            }
        }
    }
    codec.params->freeze();

    // Round-trip pitch floor on the valid split.
    auto valid_items = corpus.split("valid");
    if (valid_items.empty()) valid_items = train_items;
    double total = 0.0;
    for (const CorpusItem* item : valid_items) {
        Waveform wave = generate_utterance(item->factors, item->seed);
        Waveform rec = acoustic_decode(codec, acoustic_tokenize(codec, wave));
        total += ffe(pitch_track(wave), pitch_track(rec));
    }
    double avg = total / static_cast<double>(valid_items.size());
    if (avg > cfg.max_round_trip_ffe)
        throw std::runtime_error("train_acoustic_codec: round-trip FFE " + std::to_string(avg) +
                                 " above floor " + std::to_string(cfg.max_round_trip_ffe));
    return codec;
}

}  // namespace unicodec

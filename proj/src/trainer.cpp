#include "unicodec/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace unicodec {

using namespace ag;

namespace {

StftConfig spec10_config() {
    StftConfig cfg;
    cfg.window_ms = 40.0;
    cfg.hop_ms = 10.0;
    return cfg;
}

std::string ints_to_csv(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::vector<int> csv_to_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::map<std::string, std::string> arch_to_meta(const UniCodecArch& a) {
    std::map<std::string, std::string> m;
    m["g.conv"] = ints_to_csv(a.global.conv_channels);
    m["g.tf_blocks"] = std::to_string(a.global.tf_blocks);
    m["g.width"] = std::to_string(a.global.width);
    m["g.heads"] = std::to_string(a.global.heads);
    m["g.ff"] = std::to_string(a.global.ff);
    m["g.trans_layers"] = std::to_string(a.global.trans_layers);
    m["g.out_dim"] = std::to_string(a.global.out_dim);
    m["g.spec_bins"] = std::to_string(a.global.spec_bins);
    m["g.min_frames"] = std::to_string(a.global.min_frames);
    m["g.max_frames"] = std::to_string(a.global.max_frames);
    m["teacher_dim"] = std::to_string(a.teacher_dim);
    m["c_s"] = std::to_string(a.c_s);
    m["c_p"] = std::to_string(a.c_p);
    m["c_a"] = std::to_string(a.c_a);
    m["groups"] = std::to_string(a.groups);
    m["codewords"] = std::to_string(a.codewords);
    m["group_width"] = std::to_string(a.group_width);
    m["mlp_hidden"] = std::to_string(a.mlp_hidden);
    m["gen.layers"] = std::to_string(a.gen.layers);
    m["gen.width"] = std::to_string(a.gen.width);
    m["gen.ff"] = std::to_string(a.gen.ff);
    m["gen.heads"] = std::to_string(a.gen.heads);
    m["gen.groups"] = std::to_string(a.gen.groups);
    m["gen.codewords"] = std::to_string(a.gen.codewords);
    m["gen.max_positions"] = std::to_string(a.gen.max_positions);
    m["disentangled"] = a.disentangled ? "1" : "0";
    return m;
}

UniCodecArch arch_from_meta(std::map<std::string, std::string>& m) {
    UniCodecArch a;
    a.global.conv_channels = csv_to_ints(m.at("g.conv"));
    a.global.tf_blocks = std::stoi(m.at("g.tf_blocks"));
    a.global.width = std::stoi(m.at("g.width"));
    a.global.heads = std::stoi(m.at("g.heads"));
    a.global.ff = std::stoi(m.at("g.ff"));
    a.global.trans_layers = std::stoi(m.at("g.trans_layers"));
    a.global.out_dim = std::stoi(m.at("g.out_dim"));
    a.global.spec_bins = std::stoi(m.at("g.spec_bins"));
    a.global.min_frames = std::stoi(m.at("g.min_frames"));
    a.global.max_frames = std::stoi(m.at("g.max_frames"));
    a.teacher_dim = std::stoi(m.at("teacher_dim"));
    a.c_s = std::stoi(m.at("c_s"));
    a.c_p = std::stoi(m.at("c_p"));
    a.c_a = std::stoi(m.at("c_a"));
    a.groups = std::stoi(m.at("groups"));
    a.codewords = std::stoi(m.at("codewords"));
    a.group_width = std::stoi(m.at("group_width"));
    a.mlp_hidden = std::stoi(m.at("mlp_hidden"));
    a.gen.layers = std::stoi(m.at("gen.layers"));
    a.gen.width = std::stoi(m.at("gen.width"));
    a.gen.ff = std::stoi(m.at("gen.ff"));
    a.gen.heads = std::stoi(m.at("gen.heads"));
    a.gen.groups = std::stoi(m.at("gen.groups"));
    a.gen.codewords = std::stoi(m.at("gen.codewords"));
    a.gen.max_positions = std::stoi(m.at("gen.max_positions"));
    a.gen.cond_dim = a.c_a / 2;
    a.disentangled = m.at("disentangled") == "1";
    return a;
}

FusionConfig fusion_config(const UniCodecArch& a) {
    FusionConfig f;
    f.c_s = a.c_s;
    f.c_p = a.c_p;
    f.c_a = a.c_a;
    f.c_g = a.global.out_dim;
    f.group_width = a.group_width;
    f.mlp_hidden = a.mlp_hidden;
    return f;
}

}  // namespace

UniCodecModel::UniCodecModel(const UniCodecArch& arch_, uint64_t seed) : arch(arch_) {
    if (arch.c_a % 2 != 0) throw std::invalid_argument("UniCodecModel: C_a must be even");
    arch.gen.cond_dim = arch.c_a / 2;
    params = std::make_shared<nn::ParamStore>();
    Rng rng(mix_seed(seed, 0xC0DEC));
    global = GlobalEncoder(*params, "eg", arch.global, rng);
    sem_proj = nn::Linear(*params, "sem_proj", arch.teacher_dim, arch.c_s, rng);
    cross_att = ChannelAttention(*params, "cross", arch.c_s, arch.group_width, rng);
    res_att = ChannelAttention(*params, "res", arch.c_p, arch.group_width, rng);
    quant_s = GroupQuantizer(*params, "vq_s", arch.c_s, arch.groups, arch.codewords, rng);
    quant_p = GroupQuantizer(*params, "vq_p", arch.c_p, arch.groups, arch.codewords, rng);
    distill_proj = nn::Linear(*params, "distill", arch.c_s, arch.teacher_dim, rng);
    fuser = LocalFuser(*params, "fuse", fusion_config(arch), rng);
    mod = GlobalModulator(*params, "mod", fusion_config(arch), rng);
    gen = GenerativeDecoder(*params, "gen", arch.gen, rng);
}

void UniCodecModel::save(const std::string& path,
                         const std::map<std::string, std::string>& extra_meta) const {
    auto meta = arch_to_meta(arch);
    meta["kind"] = "unicodec";
    for (const auto& [k, v] : extra_meta) meta[k] = v;
    save_checkpoint(path, *params, meta);
}

UniCodecModel UniCodecModel::load(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta["kind"] != "unicodec") throw std::runtime_error("not a unicodec checkpoint");
    UniCodecModel model(arch_from_meta(ck.meta), 0);
    apply_params(*model.params, ck.params);
    return model;
}

FrameFeatures global_spec(const Waveform& wave) { return stft(wave, spec10_config()); }

EncodedUtterance encode_utterance(const UniCodecModel& model, const TeacherModel& teacher,
                                  const Waveform& wave, QuantizeMode mode, double tau, Rng* rng) {
    auto [s_se, a_ac] = extract_features(teacher, wave);
    EncodedUtterance out;
    out.g = model.global.forward(Tensor(global_spec(wave).values));
    out.s_prime = semantic_project(Tensor(s_se.values), model.sem_proj);
    if (model.arch.disentangled) {
        Tensor a_att = channel_cross_attention(out.s_prime, Tensor(a_ac.values), model.cross_att);
        out.p_res = residual_extract(Tensor(a_ac.values), a_att, model.res_att);
    } else {
        // Ablation: both local streams read the same features.
        out.p_res = out.s_prime;
    }
    out.s = quantize(out.s_prime, model.quant_s, mode, tau, rng);
    out.p = quantize(out.p_res, model.quant_p, mode, tau, rng);
    return out;
}

TokenTriplet tokenize_utterance(const UniCodecModel& model, const TeacherModel& teacher,
                                const Waveform& wave) {
    EncodedUtterance enc = encode_utterance(model, teacher, wave, QuantizeMode::Infer, 1.0);
    return TokenTriplet{enc.g.value(), enc.s.indices, enc.p.indices};
}

namespace {

Tensor dequantize(const GroupQuantizer& q, const Eigen::MatrixXi& idx) {
    Tensor out;
    for (int g = 0; g < q.groups; ++g) {
        std::vector<int> ids(static_cast<size_t>(idx.rows()));
        for (Eigen::Index t = 0; t < idx.rows(); ++t) {
            int v = idx(t, g);
            if (v < 0 || v >= q.codewords)
                throw std::invalid_argument("synthesize: token index out of range");
            ids[static_cast<size_t>(t)] = v;
        }
        Tensor rows = gather_rows(q.codebooks[static_cast<size_t>(g)], ids);
        out = g == 0 ? rows : concat_cols(out, rows);
    }
    return out;
}

Tensor fused_condition(const UniCodecModel& model, const Tensor& g, const Tensor& s_emb,
                       const Tensor& p_emb) {
    Tensor a_local = local_fuse(s_emb, p_emb, model.fuser);
    return reshape_condition(global_modulate(g, a_local, model.mod));
}

}  // namespace

Waveform synthesize(const UniCodecModel& model, const AcousticCodec& codec,
                    const TokenTriplet& triplet, const SamplingConfig& sampling, uint64_t seed) {
    if (triplet.s.rows() != triplet.p.rows())
        throw std::invalid_argument("synthesize: S/P frame mismatch");
    Tensor cond = fused_condition(model, Tensor(triplet.g),
                                  dequantize(model.quant_s, triplet.s),
                                  dequantize(model.quant_p, triplet.p));
    Eigen::MatrixXi acoustic = ar_generate(model.gen, cond, sampling, seed);
    if (acoustic.rows() == 0)
        throw std::runtime_error("synthesize: generator emitted no acoustic frames");
    return acoustic_decode(codec, acoustic);
}

Trainer make_trainer(const TrainConfig& cfg, const TeacherModel& teacher,
                     const AcousticCodec& codec) {
    if (cfg.arch.gen.groups != codec.cfg.groups || cfg.arch.gen.codewords != codec.cfg.codewords)
        throw std::invalid_argument("make_trainer: generative head shape != acoustic codec");
    Trainer tr;
    tr.cfg = cfg;
    tr.model = UniCodecModel(cfg.arch, cfg.seed);
    tr.teacher = &teacher;
    tr.codec = &codec;
    tr.opt = nn::Adam(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 1.0});
    tr.metrics.push_back(loss_csv_header());
    return tr;
}

namespace {

struct StepTerms {
    Tensor ce, feat, se, h_s, h_p;
};

StepTerms utterance_terms(Trainer& tr, const CorpusItem& item, double tau, Rng& rng) {
    Waveform wave = generate_utterance(item.factors, item.seed);
    EncodedUtterance enc =
        encode_utterance(tr.model, *tr.teacher, wave, QuantizeMode::Train, tau, &rng);
    Tensor cond = fused_condition(tr.model, enc.g, enc.s.quantized, enc.p.quantized);
    Eigen::MatrixXi targets = acoustic_tokenize(*tr.codec, wave);
    if (targets.rows() != cond.rows())
        throw std::runtime_error("train_step: acoustic/condition frame mismatch");
    ArScore sc = ar_score(tr.model.gen, cond, targets, /*with_eos=*/true);

    StepTerms t;
    t.ce = ce_loss(sc);
    t.feat = feature_loss(decode_to_waveform_soft(*tr.codec, sc.mixture_probs), wave, *tr.teacher);
    auto [s_se, a_ac] = extract_features(*tr.teacher, wave);
    t.se = semantic_distill(tr.model.distill_proj.forward(enc.s.quantized), Tensor(s_se.values));
    t.h_s = estimate_entropy_bits(enc.s.soft_probs);
    t.h_p = estimate_entropy_bits(enc.p.soft_probs);
    return t;
}

double tau_at(const TrainConfig& cfg, int step) {
    const double frac = std::min(1.0, 2.0 * step / std::max(1, cfg.steps));
    return cfg.tau_start + frac * (cfg.tau_end - cfg.tau_start);
}

}  // namespace

LossReport train_step(Trainer& tr, const std::vector<const CorpusItem*>& items) {
    if (items.empty()) throw std::invalid_argument("train_step: empty batch");
    const uint64_t t_checksum = tr.teacher->checksum();
    const uint64_t c_checksum = tr.codec->checksum();
    Rng rng(mix_seed(tr.cfg.seed, static_cast<uint64_t>(tr.step)));
    const double tau = tau_at(tr.cfg, tr.step);

    Tensor ce, feat, se, h_s, h_p;
    for (size_t i = 0; i < items.size(); ++i) {
        StepTerms t = utterance_terms(tr, *items[i], tau, rng);
        ce = i == 0 ? t.ce : add(ce, t.ce);
        feat = i == 0 ? t.feat : add(feat, t.feat);
        se = i == 0 ? t.se : add(se, t.se);
        h_s = i == 0 ? t.h_s : add(h_s, t.h_s);
        h_p = i == 0 ? t.h_p : add(h_p, t.h_p);
    }
    const double inv = 1.0 / static_cast<double>(items.size());
    ce = scale(ce, inv);
    feat = scale(feat, inv);
    se = scale(se, inv);
    h_s = scale(h_s, inv);
    h_p = scale(h_p, inv);
    Tensor rate = rate_loss(h_s, h_p, tr.cfg.budget);

    LossReport rep;
    Tensor total = total_loss(ce, feat, se, rate, tr.cfg.weights, &rep);
    if (!std::isfinite(rep.total))
        throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(tr.step));
    backward(total);
    tr.opt.step(*tr.model.params);
    tr.metrics.push_back(loss_csv_row(tr.step, rep, h_s.item(), h_p.item(), tau));
    ++tr.step;

    if (tr.teacher->checksum() != t_checksum || tr.codec->checksum() != c_checksum)
        throw std::runtime_error("train_step: frozen module was modified");
    return rep;
}

namespace {

std::vector<const CorpusItem*> draw_batch(const std::vector<const CorpusItem*>& pool,
                                          double batch_seconds, Rng& rng) {
    std::vector<const CorpusItem*> batch;
    double seconds = 0.0;
    while (seconds < batch_seconds && batch.size() < pool.size()) {
        const CorpusItem* it = pool[static_cast<size_t>(
            rng.uniform_int(static_cast<int>(pool.size())))];
        batch.push_back(it);
        seconds += it->factors.duration_s();
        if (batch.size() >= 64) break;
    }
    return batch;
}

}  // namespace

Trainer train_unicodec(const TrainConfig& cfg, const Corpus& corpus, const TeacherModel& teacher,
                       const AcousticCodec& codec, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    Trainer tr = make_trainer(cfg, teacher, codec);
    auto train_items = corpus.split("train");
    if (train_items.empty()) throw std::invalid_argument("train_unicodec: empty train split");
    auto valid_items = corpus.split("valid");
    if (valid_items.empty()) valid_items = train_items;

    double best = std::numeric_limits<double>::infinity();
    while (tr.step < cfg.steps) {
        Rng brng(mix_seed(cfg.seed, 0xBA7C4000ULL + static_cast<uint64_t>(tr.step)));
        LossReport rep = train_step(tr, draw_batch(train_items, cfg.batch_seconds, brng));
        const bool last = tr.step == cfg.steps;
        if (tr.step % std::max(1, cfg.valid_every) == 0 || last) {
            // Validation: mean teacher-forced loss terms on held-out items at
            // the current temperature, inference-mode quantization.
            double vtotal = 0.0;
            const size_t n = std::min(valid_items.size(),
                                      static_cast<size_t>(std::max(1, cfg.valid_utterances)));
            for (size_t i = 0; i < n; ++i) {
                // Fixed items and seeds so scores stay comparable across checkpoints.
                Rng vrng(mix_seed(cfg.seed, 0x7A11D000ULL + i));
                StepTerms t = utterance_terms(tr, *valid_items[i], tau_at(cfg, tr.step), vrng);
                LossReport vr;
                Tensor rate = rate_loss(t.h_s, t.h_p, cfg.budget);
                total_loss(t.ce, t.feat, t.se, rate, cfg.weights, &vr);
                vtotal += vr.total;
            }
            vtotal /= static_cast<double>(n);
            if (vtotal < best) {
                best = vtotal;
                save_trainer(out_dir + "/unicodec_best.ckpt", tr);
            }
        }
    }
    save_trainer(out_dir + "/unicodec_last.ckpt", tr);
    std::ofstream csv(out_dir + "/metrics.csv");
    for (const auto& row : tr.metrics) csv << row << '\n';
    return tr;
}

void save_trainer(const std::string& path, const Trainer& tr) {
    auto meta = arch_to_meta(tr.cfg.arch);
    meta["kind"] = "unicodec_trainer";
    meta["step"] = std::to_string(tr.step);
    meta["lr"] = std::to_string(tr.cfg.lr);
    meta["batch_seconds"] = std::to_string(tr.cfg.batch_seconds);
    meta["steps"] = std::to_string(tr.cfg.steps);
    meta["seed"] = std::to_string(tr.cfg.seed);
    meta["tau_start"] = std::to_string(tr.cfg.tau_start);
    meta["tau_end"] = std::to_string(tr.cfg.tau_end);
    meta["lambda_feat"] = std::to_string(tr.cfg.weights.lambda_feat);
    meta["lambda_se"] = std::to_string(tr.cfg.weights.lambda_se);
    meta["lambda_r"] = std::to_string(tr.cfg.weights.lambda_r);
    meta["r_s_target"] = std::to_string(tr.cfg.budget.r_s_target);
    meta["r_p_target"] = std::to_string(tr.cfg.budget.r_p_target);
    meta["valid_every"] = std::to_string(tr.cfg.valid_every);
    meta["valid_utterances"] = std::to_string(tr.cfg.valid_utterances);
    meta["teacher_checksum"] = std::to_string(tr.teacher->checksum());
    meta["codec_checksum"] = std::to_string(tr.codec->checksum());
    AdamStateBlob adam;
    adam.moments = const_cast<Trainer&>(tr).opt.state();
    adam.steps_done = tr.opt.steps_done();
    save_checkpoint(path, *tr.model.params, meta, &adam);
}

Trainer load_trainer(const std::string& path, const TeacherModel& teacher,
                     const AcousticCodec& codec) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.meta["kind"] != "unicodec_trainer")
        throw std::runtime_error("not a trainer checkpoint");
    if (ck.meta.at("teacher_checksum") != std::to_string(teacher.checksum()))
        throw std::runtime_error("load_trainer: teacher checksum mismatch");
    if (ck.meta.at("codec_checksum") != std::to_string(codec.checksum()))
        throw std::runtime_error("load_trainer: acoustic codec checksum mismatch");

    TrainConfig cfg;
    cfg.arch = arch_from_meta(ck.meta);
    cfg.lr = std::stod(ck.meta.at("lr"));
    cfg.batch_seconds = std::stod(ck.meta.at("batch_seconds"));
    cfg.steps = std::stoi(ck.meta.at("steps"));
    cfg.seed = std::stoull(ck.meta.at("seed"));
    cfg.tau_start = std::stod(ck.meta.at("tau_start"));
    cfg.tau_end = std::stod(ck.meta.at("tau_end"));
    cfg.weights.lambda_feat = std::stod(ck.meta.at("lambda_feat"));
    cfg.weights.lambda_se = std::stod(ck.meta.at("lambda_se"));
    cfg.weights.lambda_r = std::stod(ck.meta.at("lambda_r"));
    cfg.budget.r_s_target = std::stod(ck.meta.at("r_s_target"));
    cfg.budget.r_p_target = std::stod(ck.meta.at("r_p_target"));
    cfg.valid_every = std::stoi(ck.meta.at("valid_every"));
    cfg.valid_utterances = std::stoi(ck.meta.at("valid_utterances"));

    Trainer tr = make_trainer(cfg, teacher, codec);
    apply_params(*tr.model.params, ck.params);
    if (ck.has_adam) {
        tr.opt.state() = ck.adam.moments;
        tr.opt.set_steps_done(ck.adam.steps_done);
    }
    tr.step = std::stoi(ck.meta.at("step"));
    tr.metrics.clear();
    tr.metrics.push_back(loss_csv_header());
    return tr;
}

}  // namespace unicodec

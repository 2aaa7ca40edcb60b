#include "unicodec/downstream.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace unicodec {

using namespace ag;

namespace {

void check_tokens(const Eigen::MatrixXi& tokens, int columns, int vocab, const char* who) {
    if (tokens.cols() != columns)
        throw std::invalid_argument(std::string(who) + ": wrong token column count");
    if (tokens.size() > 0 && (tokens.minCoeff() < 0 || tokens.maxCoeff() >= vocab))
        throw std::invalid_argument(std::string(who) + ": token index out of range");
}

void check_symbols(const std::vector<int>& symbols, int vocab, const char* who) {
    for (int s : symbols)
        if (s < 0 || s >= vocab)
            throw std::invalid_argument(std::string(who) + ": symbol out of vocabulary");
}

nn::Adam make_adam(double lr) { return nn::Adam(nn::AdamConfig{lr, 0.9, 0.999, 1e-8, 1.0}); }

}  // namespace

JointSequence joint_tokenize(const UniCodecModel& model, const TeacherModel& teacher,
                             const CorpusItem& item) {
    Waveform wave = generate_utterance(item.factors, item.seed);
    TokenTriplet triplet = tokenize_utterance(model, teacher, wave);
    JointSequence seq;
    const Eigen::Index m = triplet.s.cols();
    seq.tokens.resize(triplet.s.rows(), 2 * m);
    seq.tokens.leftCols(m) = triplet.s;
    seq.tokens.rightCols(m) = triplet.p;
    seq.g = triplet.g;
    seq.symbols = item.factors.content;
    seq.language = item.factors.language_id;
    seq.emotion = item.factors.emotion_id;
    seq.timbre = item.factors.timbre_id;
    return seq;
}

// ---------------------------------------------------------------------------

FrameLm::FrameLm(nn::ParamStore& ps, const std::string& prefix, const FrameLmConfig& cfg_,
                 Rng& rng)
    : cfg(cfg_) {
    if (cfg.width % cfg.columns != 0)
        throw std::invalid_argument("FrameLm: width must be divisible by the column count");
    const int edim = cfg.width / cfg.columns;
    for (int c = 0; c < cfg.columns; ++c)
        tok_emb.emplace_back(ps, prefix + "/emb" + std::to_string(c), cfg.vocab, edim, rng);
    start = ps.add(prefix + "/start", nn::xavier_init(1, cfg.width, rng));
    pos = nn::PositionalEmbedding(ps, prefix + "/pos", cfg.max_positions, cfg.width, rng);
    for (int l = 0; l < cfg.layers; ++l)
        blocks.emplace_back(ps, prefix + "/blk" + std::to_string(l), cfg.width, cfg.heads, cfg.ff,
                            rng, cfg.with_cross);
    ln_f = nn::LayerNorm(ps, prefix + "/lnf", cfg.width);
    for (int c = 0; c < cfg.columns; ++c)
        heads.emplace_back(ps, prefix + "/head" + std::to_string(c), cfg.width, cfg.vocab, rng);
}

Tensor FrameLm::embed_frames(const Eigen::MatrixXi& tokens) const {
    check_tokens(tokens, cfg.columns, cfg.vocab, "FrameLm");
    Tensor out;
    for (int c = 0; c < cfg.columns; ++c) {
        std::vector<int> ids(static_cast<size_t>(tokens.rows()));
        for (Eigen::Index t = 0; t < tokens.rows(); ++t)
            ids[static_cast<size_t>(t)] = tokens(t, c);
        Tensor rows = tok_emb[static_cast<size_t>(c)].forward(ids);
        out = c == 0 ? rows : concat_cols(out, rows);
    }
    return out;
}

Tensor FrameLm::trunk(const Tensor& prefix, const Eigen::MatrixXi& targets,
                      const Tensor& memory) const {
    const Eigen::Index t = targets.rows();
    if (t == 0) throw std::invalid_argument("FrameLm: no target frames");
    Tensor rows = start;
    if (t > 1) rows = concat_rows(rows, embed_frames(targets.topRows(t - 1)));
    const Eigen::Index n_prefix = prefix.defined() ? prefix.rows() : 0;
    if (n_prefix > 0) rows = concat_rows(prefix, rows);
    if (rows.rows() > cfg.max_positions)
        throw std::invalid_argument("FrameLm: sequence exceeds max positions");
    Tensor x = pos.forward(rows);
    for (const auto& b : blocks) x = b.forward(x, memory, 0);
    return slice_rows(ln_f.forward(x), n_prefix, t);
}

Tensor FrameLmLoss::total() const {
    return add(scale(head_ce, w_head), scale(tail_ce, w_tail));
}

FrameLmLoss frame_lm_loss(const FrameLm& lm, const Tensor& prefix, const Eigen::MatrixXi& targets,
                          int split, double w_head, double w_tail, const Tensor& memory) {
    if (split <= 0 || split > lm.cfg.columns)
        throw std::invalid_argument("frame_lm_loss: bad column split");
    Tensor h = lm.trunk(prefix, targets, memory);
    const Eigen::Index t = targets.rows();
    FrameLmLoss out;
    out.w_head = w_head;
    out.w_tail = w_tail;
    Tensor head_sum, tail_sum;
    for (int c = 0; c < lm.cfg.columns; ++c) {
        Tensor lp = log_softmax_rows(lm.heads[static_cast<size_t>(c)].forward(h));
        Eigen::MatrixXi map(t, 1);
        for (Eigen::Index i = 0; i < t; ++i) map(i, 0) = i * lm.cfg.vocab + targets(i, c);
        Tensor nll = neg(sum(gather_map(lp, map, t, 1)));
        if (c < split)
            head_sum = c == 0 ? nll : add(head_sum, nll);
        else
            tail_sum = c == split ? nll : add(tail_sum, nll);
    }
    const double head_n = static_cast<double>(t) * split;
    const double tail_n = static_cast<double>(t) * (lm.cfg.columns - split);
    out.head_ce = scale(head_sum, 1.0 / head_n);
    out.tail_ce = tail_n > 0 ? scale(tail_sum, 1.0 / tail_n) : Tensor::scalar(0.0);
    return out;
}

Eigen::MatrixXi frame_lm_generate(const FrameLm& lm, const Tensor& prefix, int frames,
                                  const SamplingConfig& sampling, uint64_t seed,
                                  const Tensor& memory) {
    if (frames <= 0) throw std::invalid_argument("frame_lm_generate: no frames requested");
    Rng rng(seed);
    Eigen::MatrixXi out(frames, lm.cfg.columns);
    const Eigen::Index n_prefix = prefix.defined() ? prefix.rows() : 0;
    for (int t = 0; t < frames; ++t) {
        Tensor rows = lm.start;
        if (t > 0) rows = concat_rows(rows, lm.embed_frames(out.topRows(t)));
        if (n_prefix > 0) rows = concat_rows(prefix, rows);
        Tensor x = lm.pos.forward(rows);
        for (const auto& b : lm.blocks) x = b.forward(x, memory, 0);
        Tensor h = slice_rows(lm.ln_f.forward(x), n_prefix + t, 1);
        for (int c = 0; c < lm.cfg.columns; ++c) {
            Mat logits = lm.heads[static_cast<size_t>(c)].forward(h).value();
            out(t, c) = sample_row(logits.row(0), sampling, rng);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

TtsModel::TtsModel(const TtsConfig& cfg_, uint64_t seed) : cfg(cfg_) {
    params = std::make_shared<nn::ParamStore>();
    Rng rng(mix_seed(seed, 0x7757));
    sym_emb = nn::Embedding(*params, "tts/sym", cfg.symbol_vocab, cfg.width, rng);
    FrameLmConfig lc;
    lc.layers = cfg.layers;
    lc.width = cfg.width;
    lc.ff = cfg.ff;
    lc.heads = cfg.heads;
    lc.columns = 2 * cfg.m;
    lc.vocab = cfg.k;
    lc.max_positions = cfg.max_positions;
    lm = FrameLm(*params, "tts/lm", lc, rng);
    vocab_perm.assign(static_cast<size_t>(2 * cfg.m), std::vector<int>(cfg.k));
    for (auto& perm : vocab_perm) std::iota(perm.begin(), perm.end(), 0);
    if (cfg.shuffle_token_vocab) {
        Rng prng(mix_seed(cfg.seed, 0x5F0F));
        for (auto& perm : vocab_perm)
            for (size_t i = perm.size(); i > 1; --i)
                std::swap(perm[i - 1], perm[static_cast<size_t>(prng.uniform_int(
                                           static_cast<int>(i)))]);
    }
}

namespace {

Eigen::MatrixXi permute_tokens(const Eigen::MatrixXi& tokens,
                               const std::vector<std::vector<int>>& perm) {
    Eigen::MatrixXi out = tokens;
    for (Eigen::Index t = 0; t < out.rows(); ++t)
        for (Eigen::Index c = 0; c < out.cols(); ++c)
            out(t, c) = perm[static_cast<size_t>(c)][static_cast<size_t>(out(t, c))];
    return out;
}

}  // namespace

FrameLmLoss tts_score(const TtsModel& model, const TtsPair& pair) {
    check_symbols(pair.symbols, model.cfg.symbol_vocab, "tts");
    if (pair.symbols.empty()) throw std::invalid_argument("tts: empty symbol sequence");
    check_tokens(pair.tokens, 2 * model.cfg.m, model.cfg.k, "tts");
    if (pair.tokens.rows() != 2 * static_cast<Eigen::Index>(pair.symbols.size()))
        throw std::invalid_argument("tts: expected two token frames per symbol");
    Tensor prefix = model.sym_emb.forward(pair.symbols);
    return frame_lm_loss(model.lm, prefix, permute_tokens(pair.tokens, model.vocab_perm),
                         model.cfg.m, model.cfg.w_s, model.cfg.w_p);
}

TtsModel tts_train(const std::vector<TtsPair>& pairs, const TtsConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("tts_train: no pairs");
    TtsModel model(cfg, cfg.seed);
    nn::Adam opt = make_adam(cfg.lr);
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor loss;
        for (size_t i = 0; i < pairs.size(); ++i) {
            Tensor l = tts_score(model, pairs[i]).total();
            loss = i == 0 ? l : add(loss, l);
        }
        backward(scale(loss, 1.0 / static_cast<double>(pairs.size())));
        opt.step(*model.params);
    }
    return model;
}

Eigen::MatrixXi tts_generate(const TtsModel& model, const std::vector<int>& symbols,
                             const SamplingConfig& sampling, uint64_t seed) {
    check_symbols(symbols, model.cfg.symbol_vocab, "tts");
    if (symbols.empty()) throw std::invalid_argument("tts: empty symbol sequence");
    Tensor prefix = model.sym_emb.forward(symbols);
    return frame_lm_generate(model.lm, prefix, 2 * static_cast<int>(symbols.size()), sampling,
                             seed);
}

TokenTriplet tts_infer(const TtsModel& model, const UniCodecModel& codec_model,
                       const std::vector<int>& symbols, const Waveform& prompt,
                       const SamplingConfig& sampling, uint64_t seed) {
    Eigen::MatrixXi joint = tts_generate(model, symbols, sampling, seed);
    TokenTriplet out;
    out.g = codec_model.global.forward(Tensor(global_spec(prompt).values)).value();
    out.s = joint.leftCols(model.cfg.m);
    out.p = joint.rightCols(model.cfg.m);
    return out;
}

// ---------------------------------------------------------------------------

S2stModel::S2stModel(const S2stConfig& cfg_, uint64_t seed) : cfg(cfg_) {
    params = std::make_shared<nn::ParamStore>();
    Rng rng(mix_seed(seed, 0x5257));
    const int columns = 2 * cfg.m;
    if (cfg.width % columns != 0)
        throw std::invalid_argument("S2stModel: width must be divisible by 2M");
    const int edim = cfg.width / columns;
    for (int c = 0; c < columns; ++c)
        src_emb.emplace_back(*params, "s2st/src" + std::to_string(c), cfg.k, edim, rng);
    lang_emb = nn::Embedding(*params, "s2st/lang", kNumLanguages, cfg.width, rng);
    enc_pos = nn::PositionalEmbedding(*params, "s2st/enc_pos", cfg.max_positions, cfg.width, rng);
    for (int l = 0; l < cfg.enc_layers; ++l)
        enc_blocks.emplace_back(*params, "s2st/enc" + std::to_string(l), cfg.width, cfg.heads,
                                cfg.ff, rng);
    FrameLmConfig lc;
    lc.layers = cfg.dec_layers;
    lc.width = cfg.width;
    lc.ff = cfg.ff;
    lc.heads = cfg.heads;
    lc.columns = columns;
    lc.vocab = cfg.k;
    lc.max_positions = cfg.max_positions;
    lc.with_cross = true;
    lm = FrameLm(*params, "s2st/dec", lc, rng);
}

Tensor S2stModel::encode(const Eigen::MatrixXi& src_tokens, int l_src, int l_tgt) const {
    if (l_src < 0 || l_src >= kNumLanguages || l_tgt < 0 || l_tgt >= kNumLanguages)
        throw std::invalid_argument("s2st: missing or invalid language tag");
    check_tokens(src_tokens, 2 * cfg.m, cfg.k, "s2st");
    Tensor frames;
    for (int c = 0; c < 2 * cfg.m; ++c) {
        std::vector<int> ids(static_cast<size_t>(src_tokens.rows()));
        for (Eigen::Index t = 0; t < src_tokens.rows(); ++t)
            ids[static_cast<size_t>(t)] = src_tokens(t, c);
        Tensor rows = src_emb[static_cast<size_t>(c)].forward(ids);
        frames = c == 0 ? rows : concat_cols(frames, rows);
    }
    Tensor rows = concat_rows(lang_emb.forward({l_src, l_tgt}), frames);
    Tensor x = enc_pos.forward(rows);
    for (const auto& b : enc_blocks) x = b.forward(x);
    return x;
}

std::vector<S2stPair> plan_s2st_pairs(const UniCodecModel& model, const TeacherModel& teacher,
                                      const std::vector<const CorpusItem*>& items,
                                      uint64_t seed) {
    std::vector<S2stPair> out;
    Rng rng(mix_seed(seed, 0x5257AA));
    for (const CorpusItem* item : items) {
        S2stPair pair;
        pair.src = joint_tokenize(model, teacher, *item);
        // Target: translated content, flipped language, independently
        // sampled prosody of the same duration.
        FactorSampleConfig fc;
        fc.min_duration_s = fc.max_duration_s = item->factors.duration_s();
        fc.language_id = 1 - item->factors.language_id;
        SyntheticFactors tgt_factors = sample_factors(fc, rng);
        for (size_t i = 0; i < item->factors.content.size(); ++i)
            tgt_factors.content[i] = translate_symbol(item->factors.content[i],
                                                      item->factors.language_id,
                                                      tgt_factors.language_id);
        CorpusItem tgt_item;
        tgt_item.id = item->id + "_tgt";
        tgt_item.split = item->split;
        tgt_item.factors = tgt_factors;
        tgt_item.seed = mix_seed(item->seed, 0x7A6);
        pair.tgt = joint_tokenize(model, teacher, tgt_item);
        out.push_back(std::move(pair));
    }
    return out;
}

Tensor s2st_score(const S2stModel& model, const S2stPair& pair) {
    Tensor memory = model.encode(pair.src.tokens, pair.src.language, pair.tgt.language);
    return frame_lm_loss(model.lm, Tensor(), pair.tgt.tokens, model.cfg.m, 1.0, 1.0, memory)
        .total();
}

S2stModel s2st_train(const std::vector<S2stPair>& pairs, const S2stConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("s2st_train: no pairs");
    S2stModel model(cfg, cfg.seed);
    nn::Adam opt = make_adam(cfg.lr);
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor loss;
        for (size_t i = 0; i < pairs.size(); ++i) {
            Tensor l = s2st_score(model, pairs[i]);
            loss = i == 0 ? l : add(loss, l);
        }
        backward(scale(loss, 1.0 / static_cast<double>(pairs.size())));
        opt.step(*model.params);
    }
    return model;
}

JointSequence s2st_infer(const S2stModel& model, const JointSequence& src, int l_tgt,
                         const SamplingConfig& sampling, uint64_t seed) {
    Tensor memory = model.encode(src.tokens, src.language, l_tgt);
    JointSequence out;
    out.tokens = frame_lm_generate(model.lm, Tensor(), static_cast<int>(src.tokens.rows()),
                                   sampling, seed, memory);
    out.g = src.g;  // Ĝ_tgt = G_src
    out.language = l_tgt;
    out.emotion = src.emotion;
    out.timbre = src.timbre;
    out.symbols.reserve(src.symbols.size());
    for (int s : src.symbols) out.symbols.push_back(translate_symbol(s, src.language, l_tgt));
    return out;
}

// ---------------------------------------------------------------------------

AsrModel::AsrModel(const AsrConfig& cfg_, uint64_t seed) : cfg(cfg_) {
    params = std::make_shared<nn::ParamStore>();
    Rng rng(mix_seed(seed, 0xA52));
    if (cfg.width % cfg.columns != 0)
        throw std::invalid_argument("AsrModel: width must be divisible by the column count");
    const int edim = cfg.width / cfg.columns;
    for (int c = 0; c < cfg.columns; ++c)
        tok_emb.emplace_back(*params, "asr/tok" + std::to_string(c), cfg.vocab, edim, rng);
    FrameLmConfig lc;
    lc.layers = cfg.layers;
    lc.width = cfg.width;
    lc.ff = cfg.ff;
    lc.heads = cfg.heads;
    lc.columns = 1;
    lc.vocab = cfg.symbol_vocab;
    lc.max_positions = cfg.max_positions;
    lm = FrameLm(*params, "asr/lm", lc, rng);
}

namespace {

Tensor asr_prefix(const AsrModel& model, const Eigen::MatrixXi& tokens) {
    check_tokens(tokens, model.cfg.columns, model.cfg.vocab, "asr");
    if (tokens.rows() == 0) throw std::invalid_argument("asr: empty token sequence");
    if (tokens.rows() % model.cfg.frames_per_symbol != 0)
        throw std::invalid_argument("asr: token length not a whole number of symbols");
    Tensor out;
    for (int c = 0; c < model.cfg.columns; ++c) {
        std::vector<int> ids(static_cast<size_t>(tokens.rows()));
        for (Eigen::Index t = 0; t < tokens.rows(); ++t)
            ids[static_cast<size_t>(t)] = tokens(t, c);
        Tensor rows = model.tok_emb[static_cast<size_t>(c)].forward(ids);
        out = c == 0 ? rows : concat_cols(out, rows);
    }
    return out;
}

Eigen::MatrixXi as_column(const std::vector<int>& symbols) {
    Eigen::MatrixXi out(static_cast<Eigen::Index>(symbols.size()), 1);
    for (size_t i = 0; i < symbols.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = symbols[i];
    return out;
}

}  // namespace

Tensor asr_score(const AsrModel& model, const AsrPair& pair) {
    check_symbols(pair.symbols, model.cfg.symbol_vocab, "asr");
    if (pair.tokens.rows() !=
        static_cast<Eigen::Index>(pair.symbols.size()) * model.cfg.frames_per_symbol)
        throw std::invalid_argument("asr: token/symbol length mismatch");
    return frame_lm_loss(model.lm, asr_prefix(model, pair.tokens), as_column(pair.symbols), 1,
                         1.0, 0.0)
        .total();
}

AsrModel asr_train(const std::vector<AsrPair>& pairs, const AsrConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("asr_train: no pairs");
    AsrModel model(cfg, cfg.seed);
    nn::Adam opt = make_adam(cfg.lr);
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor loss;
        for (size_t i = 0; i < pairs.size(); ++i) {
            Tensor l = asr_score(model, pairs[i]);
            loss = i == 0 ? l : add(loss, l);
        }
        backward(scale(loss, 1.0 / static_cast<double>(pairs.size())));
        opt.step(*model.params);
    }
    return model;
}

std::vector<int> asr_infer(const AsrModel& model, const Eigen::MatrixXi& tokens) {
    Tensor prefix = asr_prefix(model, tokens);
    const int n = static_cast<int>(tokens.rows()) / model.cfg.frames_per_symbol;
    SamplingConfig greedy;
    greedy.temperature = 0.0;
    Eigen::MatrixXi out = frame_lm_generate(model.lm, prefix, n, greedy, 0);
    std::vector<int> symbols(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) symbols[static_cast<size_t>(i)] = out(i, 0);
    return symbols;
}

double symbol_error_rate(const std::vector<int>& ref, const std::vector<int>& hyp) {
    if (ref.empty() || ref.size() != hyp.size())
        throw std::invalid_argument("symbol_error_rate: sequences must be non-empty and aligned");
    double err = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) err += ref[i] != hyp[i];
    return err / static_cast<double>(ref.size());
}

TeacherUnits fit_teacher_units(const TeacherModel& teacher,
                               const std::vector<const CorpusItem*>& items, int groups,
                               int codewords, uint64_t seed) {
    if (items.empty()) throw std::invalid_argument("fit_teacher_units: no items");
    Mat stacked;
    for (const CorpusItem* item : items) {
        Waveform wave = generate_utterance(item->factors, item->seed);
        auto [s_se, a_ac] = extract_features(teacher, wave);
        const Eigen::Index base = stacked.rows();
        stacked.conservativeResize(base + s_se.values.rows(), s_se.values.cols());
        stacked.bottomRows(s_se.values.rows()) = s_se.values;
    }
    TeacherUnits units;
    units.params = std::make_shared<nn::ParamStore>();
    Rng rng(mix_seed(seed, 0x7C0));
    units.quant = GroupQuantizer(*units.params, "tunits", static_cast<int>(stacked.cols()),
                                 groups, codewords, rng);
    units.quant.init_from_features(stacked, rng);
    units.params->freeze();
    return units;
}

Eigen::MatrixXi teacher_tokenize(const TeacherModel& teacher, const TeacherUnits& units,
                                 const Waveform& wave) {
    auto [s_se, a_ac] = extract_features(teacher, wave);
    return quantize(Tensor(s_se.values), units.quant, QuantizeMode::Infer, 1.0).indices;
}

// ---------------------------------------------------------------------------

SerModel::SerModel(const SerConfig& cfg_, int feature_dim, uint64_t seed) : cfg(cfg_) {
    params = std::make_shared<nn::ParamStore>();
    Rng rng(mix_seed(seed, 0x5E2));
    head = nn::Linear(*params, "ser/head", feature_dim, cfg.label_vocab, rng);
}

Mat ser_features(const UniCodecModel& model, const JointSequence& seq, const SerConfig& cfg) {
    const int m = model.arch.groups;
    check_tokens(seq.tokens, 2 * m, model.arch.codewords, "ser");
    if (seq.tokens.rows() == 0) throw std::invalid_argument("ser: empty token sequence");
    auto pooled = [&](const GroupQuantizer& q, int col0) {
        Mat sum = Mat::Zero(1, q.dim);
        const int gdim = q.dim / q.groups;
        for (Eigen::Index t = 0; t < seq.tokens.rows(); ++t)
            for (int g = 0; g < q.groups; ++g)
                sum.block(0, g * gdim, 1, gdim) +=
                    q.codebooks[static_cast<size_t>(g)].value().row(seq.tokens(t, col0 + g));
        return Mat(sum / static_cast<double>(seq.tokens.rows()));
    };
    Mat out = pooled(model.quant_s, 0);
    if (cfg.use_residual) {
        Mat p = pooled(model.quant_p, m);
        Mat joined(1, out.cols() + p.cols());
        joined << out, p;
        out = joined;
    }
    if (cfg.use_global) {
        Mat joined(1, out.cols() + seq.g.cols());
        joined << out, seq.g;
        out = joined;
    }
    return out;
}

SerModel ser_train(const UniCodecModel& model, const std::vector<JointSequence>& train_set,
                   const SerConfig& cfg) {
    if (train_set.empty()) throw std::invalid_argument("ser_train: no items");
    std::vector<int> labels;
    labels.reserve(train_set.size());
    for (const JointSequence& seq : train_set) {
        if (seq.emotion < 0 || seq.emotion >= cfg.label_vocab)
            throw std::invalid_argument("ser_train: label out of range");
        labels.push_back(seq.emotion);
    }
    if (cfg.shuffle_labels) {
        Rng rng(mix_seed(cfg.seed, 0x5AB));
        for (size_t i = labels.size(); i > 1; --i)
            std::swap(labels[i - 1],
                      labels[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
    }
    Mat feats(static_cast<Eigen::Index>(train_set.size()), 0);
    for (size_t i = 0; i < train_set.size(); ++i) {
        Mat f = ser_features(model, train_set[i], cfg);
        if (feats.cols() == 0) feats.resize(feats.rows(), f.cols());
        feats.row(static_cast<Eigen::Index>(i)) = f;
    }
    SerModel ser(cfg, static_cast<int>(feats.cols()), cfg.seed);
    nn::Adam opt = make_adam(cfg.lr);
    Eigen::MatrixXi label_col(static_cast<Eigen::Index>(labels.size()), 1);
    for (size_t i = 0; i < labels.size(); ++i)
        label_col(static_cast<Eigen::Index>(i), 0) = labels[i];
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor lp = log_softmax_rows(ser.head.forward(Tensor(feats)));
        Eigen::MatrixXi map(label_col.rows(), 1);
        for (Eigen::Index i = 0; i < label_col.rows(); ++i)
            map(i, 0) = i * cfg.label_vocab + label_col(i, 0);
        Tensor nll = scale(neg(sum(gather_map(lp, map, label_col.rows(), 1))),
                           1.0 / static_cast<double>(label_col.rows()));
        backward(nll);
        opt.step(*ser.params);
    }
    return ser;
}

int ser_infer(const UniCodecModel& model, const SerModel& ser, const JointSequence& seq) {
    Mat logits = ser.head.forward(Tensor(ser_features(model, seq, ser.cfg))).value();
    int best = 0;
    logits.row(0).maxCoeff(&best);
    return best;
}

double ser_accuracy(const UniCodecModel& model, const SerModel& ser,
                    const std::vector<JointSequence>& test_set) {
    if (test_set.empty()) throw std::invalid_argument("ser_accuracy: no items");
    double hit = 0.0;
    for (const JointSequence& seq : test_set) hit += ser_infer(model, ser, seq) == seq.emotion;
    return hit / static_cast<double>(test_set.size());
}

}  // namespace unicodec

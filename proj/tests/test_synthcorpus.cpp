#include <doctest.h>

#include "unicodec/pitch.hpp"
#include "unicodec/synthcorpus.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace unicodec;
namespace fs = std::filesystem;

namespace {
SyntheticFactors demo_factors(Rng& rng, double dur = 2.0) {
    FactorSampleConfig fc;
    fc.min_duration_s = dur;
    fc.max_duration_s = dur;
    return sample_factors(fc, rng);
}
}  // namespace

TEST_CASE("generation is deterministic in (factors, seed)") {
    Rng rng(42);
    auto f = demo_factors(rng);
    Waveform a = generate_utterance(f, 123);
    Waveform b = generate_utterance(f, 123);
    CHECK(a.samples == b.samples);
    Waveform c = generate_utterance(f, 124);
    CHECK(a.samples != c.samples);
}

TEST_CASE("waveform invariants: length, bounds, finiteness") {
    Rng rng(43);
    auto f = demo_factors(rng, 2.4);
    Waveform w = generate_utterance(f, 9);
    CHECK(w.samples.size() == static_cast<size_t>(f.duration_s() * kSampleRate));
    for (double s : w.samples) {
        CHECK(std::isfinite(s));
        CHECK(std::abs(s) <= 1.0);
    }
}

TEST_CASE("invalid factors are rejected") {
    SyntheticFactors f;
    CHECK_THROWS(generate_utterance(f, 1));  // empty content
    Rng rng(44);
    f = demo_factors(rng);
    f.pitch_contour[0] = 30.0;  // below f_min
    CHECK_THROWS(generate_utterance(f, 1));
    f.pitch_contour[0] = 0.0;
    CHECK_NOTHROW(generate_utterance(f, 1));
}

TEST_CASE("all-unvoiced contour yields zero voiced frames under the tracker") {
    Rng rng(45);
    auto f = demo_factors(rng);
    for (auto& s : f.content) s = 2;  // unvoiced symbol
    for (auto& p : f.pitch_contour) p = 0.0;
    Waveform w = generate_utterance(f, 7);
    PitchTrack t = pitch_track(w);
    int voiced = 0;
    for (const auto& fr : t.frames) voiced += fr.voiced ? 1 : 0;
    CHECK(voiced == 0);
}

TEST_CASE("timbre change leaves the pitch track unchanged within tracker tolerance") {
    Rng rng(46);
    auto f = demo_factors(rng);
    auto g = f;
    g.timbre_id = (f.timbre_id + 3) % kTimbreVocab;
    PitchTrack ta = pitch_track(generate_utterance(f, 11));
    PitchTrack tb = pitch_track(generate_utterance(g, 11));
    CHECK(ffe(ta, tb, 0.05) < 0.05);
}

TEST_CASE("pitch round-trip: tracker matches the ground-truth contour") {
    Rng rng(47);
    double total = 0.0;
    int n = 0;
    for (int i = 0; i < 6; ++i) {
        auto f = demo_factors(rng, 2.0);
        Waveform w = generate_utterance(f, 100 + static_cast<uint64_t>(i));
        PitchTrack hyp = pitch_track(w);
        PitchTrack ref = track_from_contour(f.pitch_contour);
        total += ffe(ref, hyp);
        ++n;
    }
    CHECK(total / n < 0.05);
}

TEST_CASE("stft basics") {
    Waveform silent{std::vector<double>(8000, 0.0), 4000};
    FrameFeatures f = stft(silent);
    CHECK(f.frame_ms == 10.0);
    CHECK(f.values.rows() == (8000 - 160) / 40 + 1);
    CHECK(f.values.cols() == 81);
    CHECK(f.values.cwiseAbs().maxCoeff() < 1e-5);

    // Bin-center sine: energy concentrated at that bin. With a Hann window the
    // closed-form windowed DFT puts half the main peak in each neighbor and
    // nothing beyond (leakage-free at bin centers).
    const int sr = 4000, win = 160;
    const int k = 20;  // 500 Hz
    Waveform sine;
    sine.sample_rate = sr;
    sine.samples.resize(4000);
    for (size_t i = 0; i < sine.samples.size(); ++i)
        sine.samples[i] = std::sin(2.0 * M_PI * k * static_cast<double>(i) / win);
    FrameFeatures s = stft(sine);
    for (Eigen::Index t = 0; t < s.values.rows(); ++t) {
        Eigen::Index peak;
        s.values.row(t).maxCoeff(&peak);
        CHECK(peak == k);
        // closed form: |X[k]| = 0.25 * win for a unit sine under a Hann window
        CHECK(s.values(t, k) == doctest::Approx(0.25 * win).epsilon(1e-6));
        CHECK(s.values(t, k - 1) == doctest::Approx(0.125 * win).epsilon(1e-6));
        CHECK(s.values(t, k + 2) == doctest::Approx(0.0).epsilon(1e-6));
    }

    Waveform tiny{std::vector<double>(100, 0.0), 4000};
    CHECK_THROWS(stft(tiny));
}

TEST_CASE("corpus plan: sizes, determinism, disjoint test timbres") {
    CorpusConfig cfg;
    cfg.n_utterances = 100;
    cfg.seed = 5;
    cfg.factors.min_duration_s = 1.6;
    cfg.factors.max_duration_s = 2.0;
    cfg.disjoint_test_timbres = true;
    Corpus c = plan_corpus(cfg);
    CHECK(c.split("train").size() == 80);
    CHECK(c.split("valid").size() == 10);
    CHECK(c.split("test").size() == 10);

    std::set<int> train_timbres, test_timbres;
    for (auto* it : c.split("train")) train_timbres.insert(it->factors.timbre_id);
    for (auto* it : c.split("test")) test_timbres.insert(it->factors.timbre_id);
    for (int t : test_timbres) CHECK(train_timbres.count(t) == 0);

    Corpus c2 = plan_corpus(cfg);
    REQUIRE(c2.items.size() == c.items.size());
    for (size_t i = 0; i < c.items.size(); ++i) {
        CHECK(c.items[i].seed == c2.items[i].seed);
        CHECK(c.items[i].factors.content == c2.items[i].factors.content);
    }

    CorpusConfig bad = cfg;
    bad.train_frac = 0.9;  // fractions now sum to 1.1
    CHECK_THROWS(plan_corpus(bad));
}

TEST_CASE("corpus round-trips through the filesystem byte-identically") {
    CorpusConfig cfg;
    cfg.n_utterances = 6;
    cfg.seed = 9;
    cfg.factors.min_duration_s = 1.6;
    cfg.factors.max_duration_s = 1.6;
    fs::path dir = fs::temp_directory_path() / "uc_corpus_test";
    fs::remove_all(dir);
    Corpus c = plan_corpus(cfg);
    write_corpus(c, dir.string());

    fs::path dir2 = fs::temp_directory_path() / "uc_corpus_test2";
    fs::remove_all(dir2);
    write_corpus(plan_corpus(cfg), dir2.string());
    for (const auto& item : c.items) {
        auto p1 = dir / item.split / (item.id + ".wav");
        auto p2 = dir2 / item.split / (item.id + ".wav");
        std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }

    Corpus back = read_corpus(dir.string());
    REQUIRE(back.items.size() == c.items.size());
    for (size_t i = 0; i < c.items.size(); ++i) {
        CHECK(back.items[i].factors.content == c.items[i].factors.content);
        CHECK(back.items[i].factors.pitch_contour == c.items[i].factors.pitch_contour);
        CHECK(back.items[i].seed == c.items[i].seed);
    }
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("wav io round trip") {
    Rng rng(48);
    auto f = demo_factors(rng);
    Waveform w = generate_utterance(f, 3);
    fs::path p = fs::temp_directory_path() / "uc_io_test.wav";
    write_wav(p.string(), w);
    Waveform r = read_wav(p.string());
    CHECK(r.sample_rate == w.sample_rate);
    REQUIRE(r.samples.size() == w.samples.size());
    for (size_t i = 0; i < w.samples.size(); ++i)
        CHECK(std::abs(r.samples[i] - w.samples[i]) < 1.0 / 32000.0);
    fs::remove(p);
}

TEST_CASE("content bijection between languages is a bijection") {
    std::set<int> image;
    for (int s = 0; s < kContentVocab; ++s) {
        int t = translate_symbol(s, 0, 1);
        CHECK(translate_symbol(t, 1, 0) == s);
        image.insert(t);
    }
    CHECK(image.size() == static_cast<size_t>(kContentVocab));
}

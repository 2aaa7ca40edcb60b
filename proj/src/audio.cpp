#include "unicodec/audio.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace unicodec {

using ag::Mat;
using ag::Tensor;

int StftConfig::window_len(int sample_rate) const {
    double w = window_ms * sample_rate / 1000.0;
    int wi = static_cast<int>(std::lround(w));
    if (std::abs(w - wi) > 1e-9)
        throw std::invalid_argument("stft: window length is not an integer sample count");
    return wi;
}

int StftConfig::hop_len(int sample_rate) const {
    return static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0));
}

int StftConfig::bins(int sample_rate) const { return window_len(sample_rate) / 2 + 1; }

int stft_frames(size_t num_samples, int sample_rate, const StftConfig& cfg) {
    int win = cfg.window_len(sample_rate);
    int hop = cfg.hop_len(sample_rate);
    if (num_samples < static_cast<size_t>(win)) return 0;
    return static_cast<int>((num_samples - win) / hop) + 1;
}

namespace {
struct DftTables {
    Mat cos_m, sin_m;  // win x bins
    std::vector<double> hann;
};

DftTables make_tables(int win, int bins) {
    DftTables t;
    t.cos_m.resize(win, bins);
    t.sin_m.resize(win, bins);
    t.hann.resize(win);
    for (int n = 0; n < win; ++n) t.hann[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / win);
    for (int n = 0; n < win; ++n)
        for (int k = 0; k < bins; ++k) {
            double a = 2.0 * M_PI * n * k / win;
            t.cos_m(n, k) = std::cos(a);
            t.sin_m(n, k) = -std::sin(a);
        }
    return t;
}
}  // namespace

Tensor stft_t(const Tensor& wave, int sample_rate, const StftConfig& cfg) {
    if (wave.cols() != 1) throw std::invalid_argument("stft_t: wave must be N x 1");
    const int win = cfg.window_len(sample_rate);
    const int hop = cfg.hop_len(sample_rate);
    const int bins = cfg.bins(sample_rate);
    const int frames = stft_frames(static_cast<size_t>(wave.rows()), sample_rate, cfg);
    if (frames <= 0) throw std::invalid_argument("stft: waveform shorter than one window");
    static thread_local int cached_win = -1;
    static thread_local DftTables tables;
    if (cached_win != win) {
        tables = make_tables(win, bins);
        cached_win = win;
    }
    Eigen::MatrixXi map(frames, win);
    for (int f = 0; f < frames; ++f)
        for (int n = 0; n < win; ++n) map(f, n) = f * hop + n;
    Tensor framed = ag::gather_map(wave, map, frames, win);
    Mat hann_rows = Mat::Ones(frames, 1) *
                    Eigen::Map<const Eigen::RowVectorXd>(tables.hann.data(), win);
    Tensor windowed = ag::mul_const(framed, hann_rows);
    Tensor re = ag::matmul(windowed, Tensor(tables.cos_m));
    Tensor im = ag::matmul(windowed, Tensor(tables.sin_m));
    return ag::sqrt_(ag::add(ag::square(re), ag::square(im)), 1e-12);
}

FrameFeatures stft(const Waveform& wave, const StftConfig& cfg) {
    Tensor w(Eigen::Map<const Eigen::VectorXd>(wave.samples.data(),
                                               static_cast<Eigen::Index>(wave.samples.size())));
    FrameFeatures f;
    f.values = stft_t(w, wave.sample_rate, cfg).value();
    f.frame_ms = cfg.hop_ms;
    return f;
}

namespace {
void put_u32(std::ofstream& o, uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ofstream& o, uint16_t v) { o.write(reinterpret_cast<const char*>(&v), 2); }
uint32_t get_u32(std::ifstream& i) {
    uint32_t v = 0;
    i.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint16_t get_u16(std::ifstream& i) {
    uint16_t v = 0;
    i.read(reinterpret_cast<char*>(&v), 2);
    return v;
}
}  // namespace

void write_wav(const std::string& path, const Waveform& wave) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw std::runtime_error("write_wav: cannot open " + path);
    const uint32_t n = static_cast<uint32_t>(wave.samples.size());
    const uint32_t data_bytes = n * 2;
    o.write("RIFF", 4);
    put_u32(o, 36 + data_bytes);
    o.write("WAVE", 4);
    o.write("fmt ", 4);
    put_u32(o, 16);
    put_u16(o, 1);  // PCM
    put_u16(o, 1);  // mono
    put_u32(o, static_cast<uint32_t>(wave.sample_rate));
    put_u32(o, static_cast<uint32_t>(wave.sample_rate * 2));
    put_u16(o, 2);
    put_u16(o, 16);
    o.write("data", 4);
    put_u32(o, data_bytes);
    for (double s : wave.samples) {
        double c = std::max(-1.0, std::min(1.0, s));
        auto v = static_cast<int16_t>(std::lround(c * 32767.0));
        o.write(reinterpret_cast<const char*>(&v), 2);
    }
}

Waveform read_wav(const std::string& path) {
    std::ifstream i(path, std::ios::binary);
    if (!i) throw std::runtime_error("read_wav: cannot open " + path);
    char tag[5] = {};
    i.read(tag, 4);
    if (std::strncmp(tag, "RIFF", 4) != 0) throw std::runtime_error("read_wav: not a RIFF file");
    get_u32(i);
    i.read(tag, 4);
    if (std::strncmp(tag, "WAVE", 4) != 0) throw std::runtime_error("read_wav: not a WAVE file");
    Waveform w;
    while (i.read(tag, 4)) {
        uint32_t size = get_u32(i);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            uint16_t fmt = get_u16(i);
            uint16_t ch = get_u16(i);
            w.sample_rate = static_cast<int>(get_u32(i));
            if (fmt != 1 || ch != 1) throw std::runtime_error("read_wav: expected 16-bit mono PCM");
            i.ignore(size - 8);
        } else if (std::strncmp(tag, "data", 4) == 0) {
            size_t n = size / 2;
            w.samples.resize(n);
            for (size_t k = 0; k < n; ++k) {
                int16_t v = 0;
                i.read(reinterpret_cast<char*>(&v), 2);
                w.samples[k] = static_cast<double>(v) / 32767.0;
            }
            break;
        } else {
            i.ignore(size);
        }
    }
    if (w.sample_rate == 0 || w.samples.empty()) throw std::runtime_error("read_wav: malformed file");
    return w;
}

}  // namespace unicodec

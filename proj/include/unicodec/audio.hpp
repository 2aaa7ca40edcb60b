#pragma once

// Waveform and frame-feature types, 16-bit PCM RIFF I/O and the shared STFT
// frontend (40 ms Hann window, 10 ms hop). The STFT exists both as a plain
// function and as an autograd op chain so reconstruction losses can
// backpropagate through it; both produce identical values.

#include "unicodec/autograd.hpp"

#include <string>
#include <vector>

namespace unicodec {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 0;
    double duration_s() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

struct FrameFeatures {
    ag::Mat values;        // frames x channels
    double frame_ms = 0.0;  // one of {10, 20, 40}
};

struct StftConfig {
    double window_ms = 40.0;
    double hop_ms = 10.0;
    int window_len(int sample_rate) const;
    int hop_len(int sample_rate) const;
    int bins(int sample_rate) const;  // window/2 + 1
};

// Magnitude spectrogram; frame_ms = hop_ms. Throws if the waveform is shorter
// than one window or the window length is not an integer number of samples.
FrameFeatures stft(const Waveform& wave, const StftConfig& cfg = {});

// Differentiable version over an (N x 1) sample tensor.
ag::Tensor stft_t(const ag::Tensor& wave, int sample_rate, const StftConfig& cfg = {});

int stft_frames(size_t num_samples, int sample_rate, const StftConfig& cfg = {});

void write_wav(const std::string& path, const Waveform& wave);
Waveform read_wav(const std::string& path);

}  // namespace unicodec

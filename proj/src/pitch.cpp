#include "unicodec/pitch.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unicodec {

namespace {
// Zero-phase windowed-sinc lowpass. Isolating the fundamental region keeps
// the autocorrelation peak wide, which the parabolic refinement below needs:
// with the full harmonic stack the peak is narrower than one lag and integer
// sampling systematically favours period multiples.
std::vector<double> lowpass(const std::vector<double>& x, int sr, double cutoff_hz) {
    const int half = 32;
    std::vector<double> h(static_cast<size_t>(2 * half + 1));
    const double fc = cutoff_hz / sr;
    double sum = 0.0;
    for (int i = -half; i <= half; ++i) {
        double v = (i == 0) ? 2.0 * fc
                            : std::sin(2.0 * M_PI * fc * i) / (M_PI * i);
        v *= 0.5 + 0.5 * std::cos(M_PI * i / (half + 1.0));  // Hann taper
        h[static_cast<size_t>(i + half)] = v;
        sum += v;
    }
    for (double& v : h) v /= sum;
    std::vector<double> y(x.size(), 0.0);
    const int n = static_cast<int>(x.size());
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k) {
            int j = i + k;
            if (j >= 0 && j < n) acc += h[static_cast<size_t>(k + half)] * x[static_cast<size_t>(j)];
        }
        y[static_cast<size_t>(i)] = acc;
    }
    return y;
}
}  // namespace

PitchTrack pitch_track(const Waveform& wave, const PitchTrackerConfig& cfg) {
    const int sr = wave.sample_rate;
    const int frame_len = static_cast<int>(std::lround(cfg.frame_ms * sr / 1000.0));
    const int n_frames = static_cast<int>(wave.samples.size()) / frame_len;
    const int lag_min = std::max(2, static_cast<int>(std::floor(sr / cfg.f_max)));
    const int lag_max = static_cast<int>(std::ceil(sr / cfg.f_min));
    // Frame-aligned analysis window: no bleed across voicing boundaries.
    const int win = frame_len;

    PitchTrack track;
    track.frames.resize(static_cast<size_t>(n_frames));
    const std::vector<double> x = lowpass(wave.samples, sr, 1.2 * cfg.f_max);
    const auto& raw = wave.samples;
    for (int f = 0; f < n_frames; ++f) {
        const int start = f * frame_len;
        double energy = 0.0;
        for (int i = 0; i < win; ++i)
            energy += raw[static_cast<size_t>(start + i)] * raw[static_cast<size_t>(start + i)];
        energy /= win;
        PitchFrame& out = track.frames[static_cast<size_t>(f)];
        if (energy < cfg.energy_floor) continue;

        // Normalized autocorrelation over the candidate lag range.
        const int eff = win - lag_max - 1;
        if (eff < lag_min) continue;
        double e0 = 1e-12;
        for (int i = 0; i < eff; ++i)
            e0 += x[static_cast<size_t>(start + i)] * x[static_cast<size_t>(start + i)];
        std::vector<double> r(static_cast<size_t>(lag_max + 2), 0.0);
        for (int lag = lag_min - 1; lag <= lag_max + 1; ++lag) {
            double num = 0.0, el = 1e-12;
            for (int i = 0; i < eff; ++i) {
                num += x[static_cast<size_t>(start + i)] * x[static_cast<size_t>(start + i + lag)];
                el += x[static_cast<size_t>(start + i + lag)] * x[static_cast<size_t>(start + i + lag)];
            }
            if (lag >= 0 && lag <= lag_max + 1)
                r[static_cast<size_t>(lag)] = num / std::sqrt(e0 * el);
        }

        // Candidate peaks with parabolic refinement of both lag and height.
        // The true peak usually falls between integer lags; comparing raw
        // integer-lag values invites octave errors toward period multiples,
        // so candidates compete on interpolated heights.
        struct Cand {
            double lag, height;
        };
        std::vector<Cand> cands;
        double best = 0.0;
        for (int lag = lag_min; lag <= lag_max; ++lag) {
            double ym = r[static_cast<size_t>(lag - 1)], y0 = r[static_cast<size_t>(lag)],
                   yp = r[static_cast<size_t>(lag + 1)];
            if (y0 < ym || y0 < yp) continue;
            double lag_ref = lag, height = y0;
            double denom = ym - 2.0 * y0 + yp;
            if (std::abs(denom) > 1e-12) {
                double d = 0.5 * (ym - yp) / denom;
                d = std::clamp(d, -0.5, 0.5);
                lag_ref = lag + d;
                height = y0 - 0.25 * (ym - yp) * d;
            }
            cands.push_back({lag_ref, height});
            best = std::max(best, height);
        }
        if (best < cfg.periodicity_threshold) continue;
        for (const Cand& c : cands) {
            if (c.height >= 0.92 * best && c.height >= cfg.periodicity_threshold) {
                out.voiced = true;
                out.f0 = sr / c.lag;
                break;
            }
        }
    }
    return track;
}

namespace {
size_t common_len(const PitchTrack& a, const PitchTrack& b) {
    return std::min(a.frames.size(), b.frames.size());
}
}  // namespace

double vde(const PitchTrack& ref, const PitchTrack& hyp) {
    size_t n = common_len(ref, hyp);
    if (n == 0) return 0.0;
    size_t err = 0;
    for (size_t i = 0; i < n; ++i)
        if (ref.frames[i].voiced != hyp.frames[i].voiced) ++err;
    return static_cast<double>(err) / static_cast<double>(n);
}

double ffe(const PitchTrack& ref, const PitchTrack& hyp, double rel_threshold) {
    size_t n = common_len(ref, hyp);
    if (n == 0) return 0.0;
    size_t err = 0;
    for (size_t i = 0; i < n; ++i) {
        const auto& r = ref.frames[i];
        const auto& h = hyp.frames[i];
        if (r.voiced != h.voiced) {
            ++err;
        } else if (r.voiced && std::abs(h.f0 - r.f0) > rel_threshold * r.f0) {
            ++err;
        }
    }
    return static_cast<double>(err) / static_cast<double>(n);
}

PitchTrack track_from_contour(const std::vector<double>& contour) {
    PitchTrack t;
    t.frames.resize(contour.size());
    for (size_t i = 0; i < contour.size(); ++i) {
        t.frames[i].voiced = contour[i] > 0.0;
        t.frames[i].f0 = contour[i];
    }
    return t;
}

}  // namespace unicodec

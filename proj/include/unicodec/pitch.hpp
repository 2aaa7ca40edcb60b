#pragma once

// Autocorrelation f0 tracking on 40 ms frames plus the voicing-decision-error
// and f0-frame-error metrics computed between two tracks.

#include "unicodec/audio.hpp"

#include <vector>

namespace unicodec {

struct PitchFrame {
    bool voiced = false;
    double f0 = 0.0;  // Hz; > 0 iff voiced
};

struct PitchTrack {
    std::vector<PitchFrame> frames;  // 40 ms grid
};

struct PitchTrackerConfig {
    double frame_ms = 40.0;
    double f_min = 70.0;
    double f_max = 420.0;
    // Lowpassed voiced frames score ~0.99 here while narrowband noise tops
    // out around 0.79, so the gate sits in the gap between the two.
    double periodicity_threshold = 0.82;
    double energy_floor = 1e-5;  // mean-square floor below which a frame is unvoiced
};

PitchTrack pitch_track(const Waveform& wave, const PitchTrackerConfig& cfg = {});

// Fraction of frames with mismatched voicing decisions. Tracks of different
// lengths are truncated to the shorter one.
double vde(const PitchTrack& ref, const PitchTrack& hyp);

// Voicing mismatch or relative f0 deviation above `rel_threshold`.
double ffe(const PitchTrack& ref, const PitchTrack& hyp, double rel_threshold = 0.2);

// Ground-truth track from a known pitch contour (40 ms frames).
PitchTrack track_from_contour(const std::vector<double>& contour);

}  // namespace unicodec

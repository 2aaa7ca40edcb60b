#include "unicodec/losses.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace unicodec {

using namespace ag;

Tensor ce_loss(const ArScore& score) {
    if (!score.frame_logp.value().allFinite() ||
        (score.with_eos && !score.eos_logp.value().allFinite()))
        throw std::invalid_argument("ce_loss: non-finite log-probabilities");
    const double n = static_cast<double>(score.frame_logp.rows() * score.frame_logp.cols()) +
                     (score.with_eos ? 1.0 : 0.0);
    if (n == 0.0) throw std::invalid_argument("ce_loss: nothing to score");
    return scale(neg(score.total()), 1.0 / n);
}

Tensor semantic_distill(const Tensor& sp, const Tensor& s_se, int* zero_norm_frames) {
    if (sp.rows() != s_se.rows())
        throw std::invalid_argument("semantic_distill: frame-count mismatch");
    if (sp.rows() == 0) throw std::invalid_argument("semantic_distill: empty input");
    Tensor dots = sum_rows(mul(sp, s_se));                       // T x 1
    Tensor denom = mul(sqrt_(sum_rows(square(sp))), sqrt_(sum_rows(square(s_se))));
    // Zero-norm frames: force cos to 0 without poisoning the gradient. The
    // mask is a constant of the current values.
    Mat keep = Mat::Ones(sp.rows(), 1), pad = Mat::Zero(sp.rows(), 1);
    int zeros = 0;
    for (Eigen::Index t = 0; t < sp.rows(); ++t)
        if (denom.value()(t, 0) == 0.0) {
            keep(t, 0) = 0.0;
            pad(t, 0) = 1.0;
            ++zeros;
        }
    if (zero_norm_frames) *zero_norm_frames = zeros;
    Tensor cos = div(mul_const(dots, keep), add_const(denom, pad));
    // -log sigmoid(c) = log(1 + exp(-c))
    Tensor per_frame = log_(add_const(exp_(neg(cos)), Mat::Ones(sp.rows(), 1)));
    return mean(per_frame);
}

namespace {

// Differentiable analog of acoustic_spec: truncate the sample column to whole
// 40 ms frames, zero-pad half a window, magnitude STFT on the 20 ms grid.
Tensor acoustic_spec_t(const Tensor& wave, int sample_rate) {
    const Eigen::Index frame40 = sample_rate * 40 / 1000;
    const Eigen::Index whole = wave.rows() / frame40 * frame40;
    if (whole == 0) throw std::invalid_argument("feature_loss: waveform shorter than one frame");
    Tensor padded = concat_rows(slice_rows(wave, 0, whole), Tensor(Mat::Zero(frame40 / 2, 1)));
    StftConfig cfg;
    cfg.window_ms = 40.0;
    cfg.hop_ms = 20.0;
    return stft_t(padded, sample_rate, cfg);
}

}  // namespace

Tensor feature_loss(const Tensor& x_hat, const Waveform& x, const TeacherModel& teacher) {
    if (x_hat.cols() != 1) throw std::invalid_argument("feature_loss: expected a sample column");
    Tensor f_hat = teacher.layer_output(acoustic_spec_t(x_hat, x.sample_rate), teacher.cfg.l_top);
    Tensor f_ref = teacher.layer_output(Tensor(acoustic_spec(x).values), teacher.cfg.l_top);
    if (std::abs(static_cast<long>(f_hat.rows()) - static_cast<long>(f_ref.rows())) > 1)
        throw std::invalid_argument("feature_loss: length mismatch beyond one frame");
    const Eigen::Index rows = std::min(f_hat.rows(), f_ref.rows());
    return mean(abs_smooth(sub(slice_rows(f_hat, 0, rows), slice_rows(f_ref, 0, rows))));
}

Tensor total_loss(const Tensor& ce, const Tensor& feat, const Tensor& se, const Tensor& rate,
                  const LossWeights& w, LossReport* report) {
    if (w.lambda_feat < 0 || w.lambda_se < 0 || w.lambda_r < 0)
        throw std::invalid_argument("total_loss: negative weight");
    Tensor total = add(ce, add(scale(feat, w.lambda_feat),
                               add(scale(se, w.lambda_se), scale(rate, w.lambda_r))));
    if (report) {
        report->ce = ce.item();
        report->feat = feat.item();
        report->se = se.item();
        report->rate = rate.item();
        report->total = total.item();
    }
    return total;
}

std::string loss_csv_header() { return "step,ce,feat,se,rate,total,h_s,h_p,tau"; }

std::string loss_csv_row(int step, const LossReport& r, double h_s, double h_p, double tau) {
    std::ostringstream os;
    os.precision(12);
    os << step << ',' << r.ce << ',' << r.feat << ',' << r.se << ',' << r.rate << ',' << r.total
       << ',' << h_s << ',' << h_p << ',' << tau;
    return os.str();
}

}  // namespace unicodec

#pragma once

// Training objectives: token cross-entropy, teacher-feature L1, semantic
// distillation and the weighted total. The rate term lives with the
// quantizer (rate_loss); it is combined here.

#include <string>

#include "unicodec/fusion_decoder.hpp"
#include "unicodec/teacher.hpp"

namespace unicodec {

struct LossWeights {
    double lambda_feat = 1.0;
    double lambda_se = 2.5;
    double lambda_r = 1.0;
};

struct LossReport {
    double ce = 0.0;
    double feat = 0.0;
    double se = 0.0;
    double rate = 0.0;
    double total = 0.0;
};

// Mean negative log-probability over all scored positions (frames x groups,
// plus the terminal eos step when present). Rejects non-finite inputs.
Tensor ce_loss(const ArScore& score);

// Per frame t: -log sigmoid(cos(sp_t, s_se_t)); mean over frames. A zero-norm
// frame contributes cos = 0; the count of such frames is reported through
// `zero_norm_frames` when given.
Tensor semantic_distill(const Tensor& sp, const Tensor& s_se, int* zero_norm_frames = nullptr);

// Mean absolute difference between the teacher's top-layer features of the
// reconstruction and of the reference. `x_hat` is the soft-mixture decode
// output ((N x 1) sample column) so gradients reach the decoder logits.
// Lengths may differ by at most one teacher frame (truncated to the shorter).
Tensor feature_loss(const Tensor& x_hat, const Waveform& x, const TeacherModel& teacher);

// total = ce + lambda_feat * feat + lambda_se * se + lambda_r * rate.
// Rejects negative weights; fills `report` with the term values when given.
Tensor total_loss(const Tensor& ce, const Tensor& feat, const Tensor& se, const Tensor& rate,
                  const LossWeights& w, LossReport* report = nullptr);

// Metrics CSV plumbing shared by the trainers.
std::string loss_csv_header();
std::string loss_csv_row(int step, const LossReport& r, double h_s, double h_p, double tau);

}  // namespace unicodec

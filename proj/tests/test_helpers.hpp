#pragma once

// Shared test utilities: central finite-difference gradient checking against
// the tape, independent of any implementation path it verifies.

#include "unicodec/autograd.hpp"
#include "unicodec/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using unicodec::ag::Mat;
using unicodec::ag::Tensor;

// Max relative error between analytic and central-difference gradients of a
// scalar loss w.r.t. the given leaf tensors. `loss_fn` must rebuild the graph
// from current leaf values on every call. Checks at most `max_entries`
// coordinates per tensor (stride-sampled) to stay fast.
inline double fd_max_rel_err(const std::function<Tensor()>& loss_fn,
                             const std::vector<Tensor>& leaves, double eps = 1e-5,
                             int max_entries = 64) {
    Tensor loss = loss_fn();
    unicodec::ag::backward(loss);
    std::vector<Mat> analytic;
    for (const auto& p : leaves) {
        analytic.push_back(p.node()->grad_ready ? p.grad() : Mat::Zero(p.rows(), p.cols()));
    }
    double worst = 0.0;
    for (size_t pi = 0; pi < leaves.size(); ++pi) {
        Tensor p = leaves[pi];
        Eigen::Index n = p.rows() * p.cols();
        Eigen::Index stride = std::max<Eigen::Index>(1, n / max_entries);
        for (Eigen::Index k = 0; k < n; k += stride) {
            Eigen::Index r = k / p.cols(), c = k % p.cols();
            double orig = p.value()(r, c);
            p.value_mut()(r, c) = orig + eps;
            double lp = loss_fn().item();
            p.value_mut()(r, c) = orig - eps;
            double lm = loss_fn().item();
            p.value_mut()(r, c) = orig;
            double fd = (lp - lm) / (2.0 * eps);
            double an = analytic[pi](r, c);
            double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

inline Mat random_mat(Eigen::Index r, Eigen::Index c, unicodec::Rng& rng, double s = 1.0) {
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = s * rng.gaussian();
    return m;
}

}  // namespace testutil

#pragma once

// Multinomial logistic-regression probe used to measure how much of a factor
// a feature set exposes linearly. Deterministic given the seed.

#include <vector>

#include "unicodec/autograd.hpp"

namespace unicodec {

struct LinearProbe {
    ag::Mat w;  // dim x classes
    ag::Mat b;  // 1 x classes
    int predict(const Eigen::RowVectorXd& x) const;
};

struct ProbeConfig {
    int steps = 300;
    double lr = 0.05;
    uint64_t seed = 0;
};

LinearProbe train_probe(const ag::Mat& x, const std::vector<int>& y, int classes,
                        const ProbeConfig& cfg = {});

double probe_accuracy(const LinearProbe& probe, const ag::Mat& x, const std::vector<int>& y);

}  // namespace unicodec

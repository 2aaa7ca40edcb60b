#include "unicodec/probe.hpp"

#include <stdexcept>

#include "unicodec/modules.hpp"

namespace unicodec {

int LinearProbe::predict(const Eigen::RowVectorXd& x) const {
    Eigen::RowVectorXd scores = x * w + b;
    Eigen::Index arg = 0;
    scores.maxCoeff(&arg);
    return static_cast<int>(arg);
}

LinearProbe train_probe(const ag::Mat& x, const std::vector<int>& y, int classes,
                        const ProbeConfig& cfg) {
    if (static_cast<size_t>(x.rows()) != y.size() || y.empty())
        throw std::invalid_argument("train_probe: feature/label count mismatch");
    for (int label : y)
        if (label < 0 || label >= classes) throw std::invalid_argument("train_probe: bad label");

    Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull);
    nn::ParamStore ps;
    nn::Linear lin(ps, "probe", static_cast<int>(x.cols()), classes, rng);
    nn::Adam opt(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    ag::Tensor feats(x);
    ag::Mat onehot = ag::Mat::Zero(x.rows(), classes);
    for (Eigen::Index t = 0; t < x.rows(); ++t) onehot(t, y[static_cast<size_t>(t)]) = 1.0;
    ag::Tensor target(onehot);

    for (int step = 0; step < cfg.steps; ++step) {
        ag::Tensor logp = ag::log_softmax_rows(lin.forward(feats));
        ag::Tensor loss = ag::scale(ag::neg(ag::sum(ag::mul(logp, target))),
                                    1.0 / static_cast<double>(x.rows()));
        ag::backward(loss);
        opt.step(ps);
    }

    LinearProbe out;
    out.w = lin.w.value();
    out.b = lin.b.value();
    return out;
}

double probe_accuracy(const LinearProbe& probe, const ag::Mat& x, const std::vector<int>& y) {
    if (static_cast<size_t>(x.rows()) != y.size() || y.empty())
        throw std::invalid_argument("probe_accuracy: feature/label count mismatch");
    int hits = 0;
    for (Eigen::Index t = 0; t < x.rows(); ++t)
        if (probe.predict(x.row(t)) == y[static_cast<size_t>(t)]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(x.rows());
}

}  // namespace unicodec

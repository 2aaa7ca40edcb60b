#include "unicodec/autograd.hpp"

#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace unicodec::ag {

Tensor make_op(Mat val, std::vector<Tensor> parents,
               std::function<void(const Mat&, const Mat&)> backward) {
    Tensor out(std::move(val));
    bool needs = false;
    for (const auto& p : parents) {
        if (p.defined() && p.node()->requires_grad) needs = true;
    }
    auto n = out.node();
    n->requires_grad = needs;
    if (needs) {
        n->backward = std::move(backward);
        for (auto& p : parents) n->parents.push_back(p.node());
    }
    return out;
}

void accum_grad(const std::shared_ptr<Node>& n, const Mat& g) {
    if (!n->requires_grad) return;
    if (!n->grad_ready) {
        n->grad = g;
        n->grad_ready = true;
    } else {
        n->grad += g;
    }
}

void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw std::runtime_error("backward: loss must be scalar");
    // Iterative DFS topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::unordered_map<Node*, std::shared_ptr<Node>> keep;
    std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
    stack.push_back({loss.node(), 0});
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i == 0 && visited.count(n.get())) {
            stack.pop_back();
            continue;
        }
        if (i < n->parents.size()) {
            auto child = n->parents[i++];
            if (!visited.count(child.get()) && child->requires_grad) stack.push_back({child, 0});
        } else {
            visited.insert(n.get());
            order.push_back(n.get());
            keep[n.get()] = n;
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad_ready = false;
    Mat seed(1, 1);
    seed(0, 0) = 1.0;
    accum_grad(keep[order.back()], seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad_ready) n->backward(n->grad, n->val);
    }
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::runtime_error(std::string(op) + ": shape mismatch");
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    return make_op(a.value() + b.value(), {a, b}, [an, bn](const Mat& g, const Mat&) {
        accum_grad(an, g);
        accum_grad(bn, g);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    return make_op(a.value() - b.value(), {a, b}, [an, bn](const Mat& g, const Mat&) {
        accum_grad(an, g);
        accum_grad(bn, Mat(-g));
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    Mat av = a.value(), bv = b.value();
    return make_op(a.value().cwiseProduct(b.value()), {a, b},
                   [an, bn, av, bv](const Mat& g, const Mat&) {
                       accum_grad(an, g.cwiseProduct(bv));
                       accum_grad(bn, g.cwiseProduct(av));
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    auto an = a.node(), bn = b.node();
    Mat av = a.value(), bv = b.value();
    return make_op(a.value().cwiseQuotient(b.value()), {a, b},
                   [an, bn, av, bv](const Mat& g, const Mat&) {
                       accum_grad(an, g.cwiseQuotient(bv));
                       accum_grad(bn, Mat(-g.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv))));
                   });
}

Tensor scale(const Tensor& a, double s) {
    auto an = a.node();
    return make_op(a.value() * s, {a},
                   [an, s](const Mat& g, const Mat&) { accum_grad(an, Mat(g * s)); });
}

Tensor add_const(const Tensor& a, const Mat& c) {
    auto an = a.node();
    return make_op(a.value() + c, {a}, [an](const Mat& g, const Mat&) { accum_grad(an, g); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw std::runtime_error("matmul: inner dimension mismatch");
    auto an = a.node(), bn = b.node();
    Mat av = a.value(), bv = b.value();
    return make_op(a.value() * b.value(), {a, b}, [an, bn, av, bv](const Mat& g, const Mat&) {
        accum_grad(an, Mat(g * bv.transpose()));
        accum_grad(bn, Mat(av.transpose() * g));
    });
}

Tensor transpose(const Tensor& a) {
    auto an = a.node();
    return make_op(a.value().transpose(), {a},
                   [an](const Mat& g, const Mat&) { accum_grad(an, Mat(g.transpose())); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::runtime_error("add_rowvec: row must be 1 x cols(a)");
    auto an = a.node(), rn = row.node();
    Mat v = a.value();
    v.rowwise() += Eigen::RowVectorXd(row.value().row(0));
    return make_op(std::move(v), {a, row}, [an, rn](const Mat& g, const Mat&) {
        accum_grad(an, g);
        accum_grad(rn, Mat(g.colwise().sum()));
    });
}

Tensor mul_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::runtime_error("mul_rowvec: row must be 1 x cols(a)");
    auto an = a.node(), rn = row.node();
    Mat av = a.value(), rv = row.value();
    Mat v = av.array().rowwise() * rv.row(0).array();
    return make_op(std::move(v), {a, row}, [an, rn, av, rv](const Mat& g, const Mat&) {
        accum_grad(an, Mat(g.array().rowwise() * rv.row(0).array()));
        accum_grad(rn, Mat(g.cwiseProduct(av).colwise().sum()));
    });
}

Tensor relu(const Tensor& a) {
    auto an = a.node();
    Mat mask = (a.value().array() > 0.0).cast<double>();
    return make_op(a.value().cwiseMax(0.0), {a}, [an, mask](const Mat& g, const Mat&) {
        accum_grad(an, g.cwiseProduct(mask));
    });
}

Tensor gelu(const Tensor& a) {
    // tanh approximation of GELU
    auto an = a.node();
    Mat x = a.value();
    const double c = std::sqrt(2.0 / M_PI);
    Mat inner = (c * (x.array() + 0.044715 * x.array().cube())).matrix();
    Mat th = inner.array().tanh().matrix();
    Mat out = (0.5 * x.array() * (1.0 + th.array())).matrix();
    return make_op(out, {a}, [an, x, th, c](const Mat& g, const Mat&) {
        Eigen::ArrayXXd sech2 = 1.0 - th.array().square();
        Eigen::ArrayXXd dinner = c * (1.0 + 3.0 * 0.044715 * x.array().square());
        Eigen::ArrayXXd d = 0.5 * (1.0 + th.array()) + 0.5 * x.array() * sech2 * dinner;
        accum_grad(an, Mat((g.array() * d).matrix()));
    });
}

Tensor tanh_(const Tensor& a) {
    auto an = a.node();
    Mat out = a.value().array().tanh().matrix();
    return make_op(out, {a}, [an](const Mat& g, const Mat& v) {
        accum_grad(an, Mat((g.array() * (1.0 - v.array().square())).matrix()));
    });
}

Tensor sigmoid(const Tensor& a) {
    auto an = a.node();
    Mat out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return make_op(out, {a}, [an](const Mat& g, const Mat& v) {
        accum_grad(an, Mat((g.array() * v.array() * (1.0 - v.array())).matrix()));
    });
}

Tensor exp_(const Tensor& a) {
    auto an = a.node();
    return make_op(a.value().array().exp().matrix(), {a}, [an](const Mat& g, const Mat& v) {
        accum_grad(an, g.cwiseProduct(v));
    });
}

Tensor log_(const Tensor& a) {
    auto an = a.node();
    Mat av = a.value();
    return make_op(a.value().array().log().matrix(), {a}, [an, av](const Mat& g, const Mat&) {
        accum_grad(an, g.cwiseQuotient(av));
    });
}

Tensor sqrt_(const Tensor& a, double eps) {
    auto an = a.node();
    Mat out = (a.value().array() + eps).sqrt().matrix();
    return make_op(out, {a}, [an](const Mat& g, const Mat& v) {
        accum_grad(an, Mat((g.array() / (2.0 * v.array())).matrix()));
    });
}

Tensor square(const Tensor& a) {
    auto an = a.node();
    Mat av = a.value();
    return make_op(a.value().array().square().matrix(), {a}, [an, av](const Mat& g, const Mat&) {
        accum_grad(an, Mat(2.0 * g.cwiseProduct(av)));
    });
}

Tensor abs_smooth(const Tensor& a, double eps) {
    auto an = a.node();
    Mat av = a.value();
    Mat out = (av.array().square() + eps).sqrt().matrix();
    return make_op(out, {a}, [an, av](const Mat& g, const Mat& v) {
        accum_grad(an, Mat((g.array() * av.array() / v.array()).matrix()));
    });
}

Tensor softmax_rows(const Tensor& a) {
    auto an = a.node();
    Mat v = a.value();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        Eigen::RowVectorXd r = v.row(i);
        double m = r.maxCoeff();
        r = (r.array() - m).exp();
        v.row(i) = r / r.sum();
    }
    return make_op(std::move(v), {a}, [an](const Mat& g, const Mat& s) {
        Mat out(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double dot = g.row(i).dot(s.row(i));
            out.row(i) = (g.row(i).array() - dot) * s.row(i).array();
        }
        accum_grad(an, out);
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    auto an = a.node();
    Mat v = a.value();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        Eigen::RowVectorXd r = v.row(i);
        double m = r.maxCoeff();
        double lse = std::log((r.array() - m).exp().sum()) + m;
        v.row(i) = r.array() - lse;
    }
    return make_op(std::move(v), {a}, [an](const Mat& g, const Mat& ls) {
        Mat out(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double gs = g.row(i).sum();
            out.row(i) = g.row(i).array() - gs * ls.row(i).array().exp();
        }
        accum_grad(an, out);
    });
}

Tensor sum(const Tensor& a) {
    auto an = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    return make_op(Mat::Constant(1, 1, a.value().sum()), {a},
                   [an, r, c](const Mat& g, const Mat&) {
                       accum_grad(an, Mat(Mat::Constant(r, c, g(0, 0))));
                   });
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.rows() * a.cols()));
}

Tensor sum_rows(const Tensor& a) {
    auto an = a.node();
    Eigen::Index c = a.cols();
    return make_op(Mat(a.value().rowwise().sum()), {a}, [an, c](const Mat& g, const Mat&) {
        accum_grad(an, Mat(g * Mat::Ones(1, c)));
    });
}

Tensor sum_cols(const Tensor& a) {
    auto an = a.node();
    Eigen::Index r = a.rows();
    return make_op(Mat(a.value().colwise().sum()), {a}, [an, r](const Mat& g, const Mat&) {
        accum_grad(an, Mat(Mat::Ones(r, 1) * g));
    });
}

Tensor mean_cols(const Tensor& a) {
    return scale(sum_cols(a), 1.0 / static_cast<double>(a.rows()));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
        throw std::runtime_error("layer_norm: gain/bias must be 1 x cols(x)");
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    const Mat& xv = x.value();
    Eigen::Index T = xv.rows(), C = xv.cols();
    Mat xhat(T, C);
    Eigen::VectorXd inv_std(T);
    for (Eigen::Index i = 0; i < T; ++i) {
        double mu = xv.row(i).mean();
        double var = (xv.row(i).array() - mu).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
    }
    Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += Eigen::RowVectorXd(bias.value().row(0));
    Mat gv = gain.value();
    return make_op(std::move(out), {x, gain, bias},
                   [xn, gn, bn, xhat, inv_std, gv, C](const Mat& g, const Mat&) {
                       accum_grad(gn, Mat(g.cwiseProduct(xhat).colwise().sum()));
                       accum_grad(bn, Mat(g.colwise().sum()));
                       Mat dxhat = (g.array().rowwise() * gv.row(0).array()).matrix();
                       Mat dx(g.rows(), C);
                       const double n = static_cast<double>(C);
                       for (Eigen::Index i = 0; i < g.rows(); ++i) {
                           double s1 = dxhat.row(i).sum();
                           double s2 = dxhat.row(i).dot(xhat.row(i));
                           dx.row(i) = inv_std(i) / n *
                                       (n * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2);
                       }
                       accum_grad(xn, dx);
                   });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    auto an = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    Mat out(static_cast<Eigen::Index>(idx.size()), c);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= r) throw std::runtime_error("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
    }
    return make_op(std::move(out), {a}, [an, idx, r, c](const Mat& g, const Mat&) {
        Mat da = Mat::Zero(r, c);
        for (size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        accum_grad(an, da);
    });
}

Tensor gather_map(const Tensor& a, const Eigen::MatrixXi& map, Eigen::Index out_rows,
                  Eigen::Index out_cols) {
    if (map.rows() != out_rows || map.cols() != out_cols)
        throw std::runtime_error("gather_map: map shape mismatch");
    auto an = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    const Mat& av = a.value();
    Mat out(out_rows, out_cols);
    for (Eigen::Index i = 0; i < out_rows; ++i)
        for (Eigen::Index j = 0; j < out_cols; ++j) {
            int m = map(i, j);
            out(i, j) = m >= 0 ? av(m / c, m % c) : 0.0;
        }
    return make_op(std::move(out), {a}, [an, map, r, c](const Mat& g, const Mat&) {
        Mat da = Mat::Zero(r, c);
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                int m = map(i, j);
                if (m >= 0) da(m / c, m % c) += g(i, j);
            }
        accum_grad(an, da);
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) throw std::runtime_error("concat_cols: row mismatch");
    auto an = a.node(), bn = b.node();
    Eigen::Index ca = a.cols(), cb = b.cols();
    Mat out(a.rows(), ca + cb);
    out.leftCols(ca) = a.value();
    out.rightCols(cb) = b.value();
    return make_op(std::move(out), {a, b}, [an, bn, ca, cb](const Mat& g, const Mat&) {
        accum_grad(an, Mat(g.leftCols(ca)));
        accum_grad(bn, Mat(g.rightCols(cb)));
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::runtime_error("concat_rows: col mismatch");
    auto an = a.node(), bn = b.node();
    Eigen::Index ra = a.rows(), rb = b.rows();
    Mat out(ra + rb, a.cols());
    out.topRows(ra) = a.value();
    out.bottomRows(rb) = b.value();
    return make_op(std::move(out), {a, b}, [an, bn, ra, rb](const Mat& g, const Mat&) {
        accum_grad(an, Mat(g.topRows(ra)));
        accum_grad(bn, Mat(g.bottomRows(rb)));
    });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || start + n > a.cols()) throw std::runtime_error("slice_cols: out of range");
    auto an = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    return make_op(Mat(a.value().middleCols(start, n)), {a},
                   [an, start, n, r, c](const Mat& g, const Mat&) {
                       Mat da = Mat::Zero(r, c);
                       da.middleCols(start, n) = g;
                       accum_grad(an, da);
                   });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || start + n > a.rows()) throw std::runtime_error("slice_rows: out of range");
    auto an = a.node();
    Eigen::Index r = a.rows(), c = a.cols();
    return make_op(Mat(a.value().middleRows(start, n)), {a},
                   [an, start, n, r, c](const Mat& g, const Mat&) {
                       Mat da = Mat::Zero(r, c);
                       da.middleRows(start, n) = g;
                       accum_grad(an, da);
                   });
}

Tensor detach(const Tensor& a) { return Tensor(a.value(), false); }

Tensor mul_const(const Tensor& a, const Mat& mask) {
    auto an = a.node();
    return make_op(a.value().cwiseProduct(mask), {a}, [an, mask](const Mat& g, const Mat&) {
        accum_grad(an, g.cwiseProduct(mask));
    });
}

Tensor broadcast_row(const Tensor& row, Eigen::Index t) {
    if (row.rows() != 1) throw std::runtime_error("broadcast_row: input must be 1 x C");
    auto rn = row.node();
    Mat out = Mat::Ones(t, 1) * row.value();
    return make_op(std::move(out), {row}, [rn](const Mat& g, const Mat&) {
        accum_grad(rn, Mat(g.colwise().sum()));
    });
}

Tensor reshape(const Tensor& a, Eigen::Index r, Eigen::Index c) {
    if (a.rows() * a.cols() != r * c) throw std::runtime_error("reshape: element count mismatch");
    auto an = a.node();
    Eigen::Index ar = a.rows(), ac = a.cols();
    // Eigen is column-major; reinterpret row-major flat order explicitly.
    Mat out(r, c);
    const Mat& av = a.value();
    for (Eigen::Index i = 0; i < r * c; ++i) out(i / c, i % c) = av(i / ac, i % ac);
    return make_op(std::move(out), {a}, [an, ar, ac, c](const Mat& g, const Mat&) {
        Mat da(ar, ac);
        for (Eigen::Index i = 0; i < ar * ac; ++i) da(i / ac, i % ac) = g(i / c, i % c);
        accum_grad(an, da);
    });
}

}  // namespace unicodec::ag

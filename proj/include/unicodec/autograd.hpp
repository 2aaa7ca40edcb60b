#pragma once

// Reverse-mode automatic differentiation over Eigen double matrices.
// A dynamic tape: every op allocates a node holding the value, a backward
// closure and shared ownership of its parents. Gradients are computed by a
// topological sweep from the loss node. Everything is double precision so
// finite-difference checks are meaningful.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace unicodec::ag {

using Mat = Eigen::MatrixXd;

struct Node {
    Mat val;
    Mat grad;
    bool requires_grad = false;
    bool grad_ready = false;
    // Pulls this node's grad into its parents. Receives (grad, value).
    std::function<void(const Mat&, const Mat&)> backward;
    std::vector<std::shared_ptr<Node>> parents;
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Mat v, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->val = std::move(v);
        node_->requires_grad = requires_grad;
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        Mat m(1, 1);
        m(0, 0) = v;
        return Tensor(std::move(m), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->val; }
    Mat& value_mut() { return node_->val; }
    const Mat& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Eigen::Index rows() const { return node_->val.rows(); }
    Eigen::Index cols() const { return node_->val.cols(); }
    double item() const {
        if (rows() != 1 || cols() != 1) throw std::runtime_error("item(): tensor is not scalar");
        return node_->val(0, 0);
    }
    std::shared_ptr<Node> node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

// Builds a new tensor from parents + backward closure.
Tensor make_op(Mat val, std::vector<Tensor> parents,
               std::function<void(const Mat&, const Mat&)> backward);

// Accumulates into a parent's grad, allocating on first touch.
void accum_grad(const std::shared_ptr<Node>& n, const Mat& g);

// Backpropagate from a scalar loss. Zeroes grads of all reachable nodes first.
void backward(const Tensor& loss);

// ---- primitive ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);             // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);             // elementwise
Tensor div(const Tensor& a, const Tensor& b);             // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, const Mat& c);          // value shift, identity gradient
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor neg(const Tensor& a);

// Broadcast a 1 x C row over all rows of a (T x C).
Tensor add_rowvec(const Tensor& a, const Tensor& row);
Tensor mul_rowvec(const Tensor& a, const Tensor& row);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);              // expects strictly positive input
Tensor sqrt_(const Tensor& a, double eps = 0.0);
Tensor square(const Tensor& a);
Tensor abs_smooth(const Tensor& a, double eps = 1e-12);   // sqrt(x^2 + eps)

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor sum(const Tensor& a);                              // -> 1x1
Tensor mean(const Tensor& a);                             // -> 1x1
Tensor sum_rows(const Tensor& a);                         // T x C -> T x 1
Tensor sum_cols(const Tensor& a);                         // T x C -> 1 x C
Tensor mean_cols(const Tensor& a);                        // T x C -> 1 x C

// Row-wise layer normalization with learnable gain/bias (1 x C each).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Row gather: out.row(i) = a.row(idx[i]); backward scatter-adds.
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);

// Generic element gather with zero padding: out(i,j) = flat(a)[map(i,j)] for
// map >= 0, else 0. flat() is row-major. Covers im2col, framing and stacking.
Tensor gather_map(const Tensor& a, const Eigen::MatrixXi& map, Eigen::Index out_rows,
                  Eigen::Index out_cols);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index n);
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index n);

// Stops gradient flow; value passes through.
Tensor detach(const Tensor& a);

// Treats `mask` (same shape, 0/1) as constant; out = a .* mask.
Tensor mul_const(const Tensor& a, const Mat& mask);

// Repeats a 1 x C row T times (backward sums over rows).
Tensor broadcast_row(const Tensor& row, Eigen::Index t);

// Row-major reinterpretation to (r, c); element count must match.
Tensor reshape(const Tensor& a, Eigen::Index r, Eigen::Index c);

}  // namespace unicodec::ag

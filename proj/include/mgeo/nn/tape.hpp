#pragma once

#include <functional>
#include <vector>

#include "mgeo/nn/tensor.hpp"

namespace mgeo::nn {

// Reverse-mode autodiff over a flat tape of matrix-valued nodes. A tape is
// built for one forward pass, backward() propagates into ParameterStore grad
// buffers, then the tape is discarded (or clear()ed for reuse).
class Tape {
public:
    int constant(Mat m);
    // Leaf view of a whole parameter tensor; grads accumulate into the store.
    int param(ParameterStore& ps, const std::string& name);
    // Leaf selecting rows of a parameter table (embedding lookup).
    int gather(ParameterStore& ps, const std::string& name, std::vector<int> rows);

    int add(int a, int b);
    int add_rowvec(int a, int bias);             // bias is 1 x C, broadcast over rows
    int scale(int a, Real s);
    int matmul(int a, int b);                    // A(m,k) * B(k,n)
    int matmul_nt(int a, int b);                 // A(m,k) * B(n,k)^T
    int slice_rows(int a, int r0, int n);
    int slice_cols(int a, int c0, int n);
    int concat_rows(const std::vector<int>& parts);
    int concat_cols(const std::vector<int>& parts);
    int layer_norm(int x, int gamma, int beta, Real eps = 1e-5);
    int gelu(int x);
    // Row-wise softmax. Entries of key_mask that are 0 receive a large
    // negative additive bias first, so they carry (numerically) zero
    // probability and zero gradient. key_mask may be empty.
    int softmax_rows(int x, const std::vector<unsigned char>& key_mask = {});
    // Cross entropy -log softmax(logits)[target] for a 1 x V logits row.
    int ce_loss(int logits, int target);
    int l2_normalize_rows(int x, Real eps = 1e-12);
    // Cosine similarity of two 1 x C rows, with norm clamping.
    int cosine(int u, int v, Real eps = 1e-12);
    // Sum of KL(p_i || q_i) over rows, where p = row-softmax of the constant
    // target scores and q = row-softmax of node `scores`; entries with
    // pair_mask 0 (e.g. the diagonal) are excluded on both sides.
    int kl_softmax_rows(const Mat& target_scores, int scores, const std::vector<unsigned char>& pair_mask);
    int add_scalars(const std::vector<int>& terms);
    int mean_scalars(const std::vector<int>& terms);

    const Mat& val(int i) const { return nodes_[static_cast<size_t>(i)].val; }
    Mat& grad(int i) { return nodes_[static_cast<size_t>(i)].grad; }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. `loss` must be
    // a 1 x 1 node. Returns its value.
    Real backward(int loss);

    size_t size() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void(Tape&, int)> back;  // nullptr for constants
    };

    int push(Mat val, std::function<void(Tape&, int)> back);
    Node& node(int i) { return nodes_[static_cast<size_t>(i)]; }

    std::vector<Node> nodes_;
};

// Plain KL(p || q) over two explicit distributions; both must sum to 1
// within 1e-6 with strictly positive entries.
Real kl_divergence(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q);

}  // namespace mgeo::nn

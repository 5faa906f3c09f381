#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace dhm::ad {

// Reverse-mode tape. One Graph per forward pass; node ids are indices in
// creation (topological) order. backward() may be called several times on the
// same tape with different roots, which is how the adaptive loss weights get
// their per-term gradient norms.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int)>;

    int input(Tensor value, bool requires_grad = false);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor& value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool grad_ready(int id) const { return nodes_[static_cast<std::size_t>(id)].grad_ready; }
    bool requires_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }

    // Zeroes all gradients, seeds d(root)/d(root) = 1 and propagates.
    void backward(int root);

    int make(Tensor value, std::vector<int> parents, BackwardFn fn);
    Tensor& grad_buffer(int id);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
        bool grad_ready = false;
    };
    // deque keeps references from value()/grad() stable while ops append
    std::deque<Node> nodes_;
};

// --- elementwise / structural ops ---
int add(Graph& g, int a, int b);
int sub(Graph& g, int a, int b);
int mul(Graph& g, int a, int b);
int scale(Graph& g, int a, double c);
int add_const(Graph& g, int a, double c);
int exp_op(Graph& g, int a);
int log_op(Graph& g, int a);
int tanh_op(Graph& g, int a);
int sigmoid(Graph& g, int a);
int relu(Graph& g, int a);
int leaky_relu(Graph& g, int a, double slope);
int abs_op(Graph& g, int a);
int reshape(Graph& g, int a, std::vector<int> shape);
int slice_cols(Graph& g, int a, int c0, int c1);  // on [N, C] matrices
int concat_cols(Graph& g, int a, int b);          // [N, Ca] ++ [N, Cb]

// --- reductions ---
int sum(Graph& g, int a);      // -> [1]
int sum_abs(Graph& g, int a);  // -> [1], L1
int sum_sq(Graph& g, int a);   // -> [1]
int add_scalars(Graph& g, const std::vector<int>& terms,
                const std::vector<double>& weights);  // weighted sum of [1] nodes

// --- linear algebra / nn ---
int matmul(Graph& g, int a, int b);      // [m,k] x [k,n]
int add_row_bias(Graph& g, int a, int b);  // [m,n] + [n]
// x: [N,C,H,W], w: [OC,C,kh,kw], bias: [OC]
int conv2d(Graph& g, int x, int w, int bias, int stride, int pad);
int upsample2x(Graph& g, int x);  // nearest neighbour, [N,C,H,W] -> [N,C,2H,2W]
// L2-normalizes over the channel axis of [N,C,H,W] with eps in the root.
int channel_l2_normalize(Graph& g, int x, double eps);

}  // namespace dhm::ad

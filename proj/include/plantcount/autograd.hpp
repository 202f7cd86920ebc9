#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "plantcount/common.hpp"

namespace plantcount::ad {

// Dense row-major value container. Shapes are informal: most ops treat a
// tensor as [rows, cols]; image ops carry explicit (h, w) arguments.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(size_t(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != int64_t(data.size()))
            throw InvalidArgument("Tensor: shape does not match data length");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }
    int64_t numel() const { return int64_t(data.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }
};

// Named model parameter with gradient accumulator and Adam state.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;

    void zero_grad() { grad.data.assign(value.data.size(), 0.0); }
    void ensure_state() {
        if (grad.data.size() != value.data.size()) {
            grad = Tensor(value.shape);
            adam_m = Tensor(value.shape);
            adam_v = Tensor(value.shape);
        }
    }
};

using VarId = int32_t;
constexpr VarId kNoVar = -1;

// Reverse-mode tape. Build a computation per sample, call backward(root) once,
// then clear(). Bound parameter leaves flush their gradients into Param::grad.
class Tape {
public:
    VarId leaf(Tensor value, bool requires_grad = false);
    VarId param(Param& p);  // leaf bound to an external parameter
    VarId constant(double v) { return leaf(Tensor({1}, {v}), false); }

    const Tensor& val(VarId id) const { return nodes_[id].value; }
    Tensor& grad(VarId id) { return nodes_[id].grad; }
    bool requires_grad(VarId id) const { return nodes_[id].requires_grad; }

    // Elementwise; shapes must match.
    VarId add(VarId a, VarId b);
    VarId mul(VarId a, VarId b);
    VarId add_scaled(VarId a, VarId b, double beta);  // a + beta*b
    VarId scale(VarId a, double c);
    VarId silu(VarId a);
    VarId relu(VarId a);
    VarId abs(VarId a);

    // y[m,o] = sum_k x[m,k] * w[o,k] (+ b[o]); w is [O,K], b is [O] or kNoVar.
    VarId linear(VarId x, VarId w, VarId b);

    // Row gather; idx values must be a permutation or at least collision-free
    // is not required (backward scatter-adds).
    VarId gather_rows(VarId x, std::vector<int32_t> idx);

    VarId concat_cols(const std::vector<VarId>& xs);
    VarId slice_cols(VarId x, int col0, int ncols);

    // Per-row normalization over the feature axis.
    VarId layer_norm(VarId x, VarId gamma, VarId beta, double eps = 1e-5);

    // Per-channel normalization over rows (batch/spatial positions). Batch
    // statistics are written to *out_mean / *out_var for running-average updates.
    VarId batch_norm_train(VarId x, VarId gamma, VarId beta, double eps,
                           std::vector<double>* out_mean, std::vector<double>* out_var);
    // Normalization with fixed statistics (inference path).
    VarId batch_norm_eval(VarId x, VarId gamma, VarId beta, double eps,
                          const std::vector<double>& mean, const std::vector<double>& var);

    // Depthwise causal 1D convolution along rows: y[t,c] = b[c] + sum_k w[c,k] * x[t-K+1+k, c].
    VarId dw_conv1d_causal(VarId x, VarId w, VarId b);

    // 3x3 same-padding convolution on an h x w channels-last image ([h*w, cin]).
    // w is [cout, 3*3*cin] laid out (dy, dx, cin).
    VarId conv2d_3x3(VarId x, int h, int w, VarId weight, VarId bias);

    VarId maxpool2x2(VarId x, int h, int w);

    VarId softmax_rows(VarId x);

    // y[m,c] = sum_d weights[m,d] * feats[d][m,c].
    VarId convex_blend(const std::vector<VarId>& feats, VarId weights);

    VarId mean_rows(VarId x);              // [M,C] -> [1,C]
    VarId broadcast_rows(VarId x, int m);  // [1,C] -> [M,C]

    VarId sum_all(VarId x);                             // scalar
    VarId dot_const(VarId x, std::vector<double> w);    // scalar

    void backward(VarId root);
    void clear();
    size_t num_nodes() const { return nodes_.size(); }

    // Internal: used by op implementations in other translation units.
    VarId make_node(Tensor value, std::vector<VarId> inputs, std::function<void(Tape&)> bw);
    void set_backward(VarId id, std::function<void(Tape&)> bw);  // kept only if grads are needed
    Tensor& grad_buffer(VarId id);  // lazily allocated, zero-filled

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<VarId> inputs;
        std::function<void(Tape&)> backward;
        Param* bound = nullptr;
    };
    std::vector<Node> nodes_;

    bool any_requires(const std::vector<VarId>& ids) const;
};

} // namespace plantcount::ad

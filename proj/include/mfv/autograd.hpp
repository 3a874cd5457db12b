#pragma once

#include <array>
#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "mfv/ops.hpp"
#include "mfv/tensor.hpp"

// Reverse-mode autodiff: a dynamic tape over the fixed operator set in ops.hpp.
// Creation order is the topological order; backward walks it once in reverse.
namespace mfv::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int32_t id = -1;
    bool defined() const { return tape != nullptr && id >= 0; }
};

// Gradient per differentiable leaf; leaves the backward sweep never reached
// map to zero tensors of the leaf's shape.
struct Gradients {
    std::unordered_map<int32_t, Tensor> by_leaf;
    const Tensor& at(Var leaf) const;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    size_t size() const { return nodes_.size(); }

    // scalar_output must have numel()==1 and live on this tape
    Gradients backward(Var scalar_output);

    // implementation surface for the op wrappers
    using BackFn = std::function<void(Tape&, const Tensor& grad_out)>;
    Var emit(Tensor value, bool requires_grad, BackFn back);
    void accum(int32_t id, const Tensor& g);
    const Tensor& grad(int32_t id) const;  // defined only mid-backward

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackFn back;
        bool rg = false;
        bool is_leaf = false;
    };
    // deque: value() references stay valid while the tape grows
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

Var conv2d(Var input, Var kernel, Var bias, ops::Stride2 stride, ops::Pad2 pad);
Var conv3d(Var input, Var kernel, Var bias, ops::Stride3 stride, ops::Pad3 pad);
Var bilinear_resize(Var x, int64_t out_h, int64_t out_w);
Var avg_pool2(Var x);
Var gauss_blur5(Var x);
Var downsample2(Var x);
Var softmax_axis(Var x, int axis);
Var instance_norm(Var x, double eps);
Var prelu(Var x, Var slope);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var abs_(Var a);
Var sqrt_(Var a);
Var sum_all(Var a);
Var mean_all(Var a);
Var concat_axis1(const std::vector<Var>& parts);
Var slice_axis1(Var x, int64_t begin, int64_t count);
Var reshape(Var x, Shape new_shape);
Var stack_time(const std::array<Var, 4>& frames);
Var warp(Var frame, Var alpha, Var beta, Var omega);
Var fuse(const std::array<Var, 4>& candidates, Var visibility);

// elementwise sqrt(x^2 + eps^2)
Var charbonnier(Var x, double eps);

}  // namespace mfv::ad

namespace mfv {
// the recorded-operations graph of the engine is the tape itself
using Graph = ad::Tape;
}

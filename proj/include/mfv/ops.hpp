#pragma once

#include <array>
#include <vector>

#include "mfv/tensor.hpp"

// Raw forward/backward kernels over plain tensors. The tape in autograd.hpp
// wraps these; they are also usable directly (inference, tests, oracles).
namespace mfv::ops {

struct Stride2 {
    int h = 1, w = 1;
};
struct Pad2 {
    int h = 0, w = 0;
};
struct Stride3 {
    int t = 1, h = 1, w = 1;
};
struct Pad3 {
    int t = 0, h = 0, w = 0;
};

// -- convolution -------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Stride2 stride, Pad2 pad);

struct Conv2dGrads {
    Tensor input, kernel, bias;
};
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& kernel,
                            Stride2 stride, Pad2 pad,
                            bool need_input, bool need_kernel, bool need_bias);

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Stride3 stride, Pad3 pad);

struct Conv3dGrads {
    Tensor input, kernel, bias;
};
Conv3dGrads conv3d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& kernel,
                            Stride3 stride, Pad3 pad,
                            bool need_input, bool need_kernel, bool need_bias);

// -- resampling --------------------------------------------------------------

// Align-corners bilinear with border clamping.
Tensor bilinear_resize(const Tensor& input, int64_t out_h, int64_t out_w);
Tensor bilinear_resize_backward(const Tensor& grad_out, const Shape& input_shape);

Tensor avg_pool2(const Tensor& input);
Tensor avg_pool2_backward(const Tensor& grad_out, const Shape& input_shape);

// 5-tap binomial blur [1,4,6,4,1]/16, separable, symmetric border reflection.
Tensor gauss_blur5(const Tensor& input);
Tensor gauss_blur5_backward(const Tensor& grad_out);

// Every second pixel (top-left of each 2x2 block).
Tensor downsample2(const Tensor& input);
Tensor downsample2_backward(const Tensor& grad_out, const Shape& input_shape);

// -- normalization / activation ----------------------------------------------

Tensor softmax_axis(const Tensor& input, int axis);
Tensor softmax_axis_backward(const Tensor& grad_out, const Tensor& output, int axis);

// Per (sample, channel) slice over all remaining axes; no learned affine.
Tensor instance_norm(const Tensor& input, double eps);
Tensor instance_norm_backward(const Tensor& grad_out, const Tensor& input, double eps);

// slope has one scalar per channel (axis 1 of input).
Tensor prelu(const Tensor& input, const Tensor& slope);
struct PreluGrads {
    Tensor input, slope;
};
PreluGrads prelu_backward(const Tensor& grad_out, const Tensor& input, const Tensor& slope,
                          bool need_input, bool need_slope);

// -- elementwise / reductions ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor abs_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor clamp01(const Tensor& a);
Tensor sum_all(const Tensor& a);   // -> [1]
Tensor mean_all(const Tensor& a);  // -> [1]

// -- layout ------------------------------------------------------------------

// grow H/W on the bottom/right by symmetric reflection (pad < extent)
Tensor reflect_pad_hw(const Tensor& input, int64_t pad_h, int64_t pad_w);
Tensor crop_hw(const Tensor& input, int64_t out_h, int64_t out_w);

Tensor concat_axis1(const std::vector<Tensor>& parts);
Tensor slice_axis1(const Tensor& t, int64_t begin, int64_t count);

// four [B,C,H,W] frames -> [B,C,4,H,W]
Tensor stack_time(const std::array<Tensor, 4>& frames);
std::array<Tensor, 4> unstack_time(const Tensor& stacked);

// -- multi-flow operators (Eq. 1 / Eq. 2 of the warp-and-fuse scheme) --------

// output(x,y) = sum_k omega(k,x,y) * frame(x + alpha(k,x,y), y + beta(k,x,y)),
// bilinear sampling, coordinates clamped to the border.
Tensor warp(const Tensor& frame, const Tensor& alpha, const Tensor& beta, const Tensor& omega);

struct WarpGrads {
    Tensor frame, alpha, beta, omega;
};
WarpGrads warp_backward(const Tensor& grad_out, const Tensor& frame, const Tensor& alpha,
                        const Tensor& beta, const Tensor& omega,
                        bool need_frame, bool need_alpha, bool need_beta, bool need_omega);

// out = sum_n visibility[:,n] * candidates[n], per channel.
Tensor fuse(const std::array<Tensor, 4>& candidates, const Tensor& visibility);

struct FuseGrads {
    std::array<Tensor, 4> candidates;
    Tensor visibility;
};
FuseGrads fuse_backward(const Tensor& grad_out, const std::array<Tensor, 4>& candidates,
                        const Tensor& visibility, bool need_candidates, bool need_visibility);

}  // namespace mfv::ops

// Independent scalar reference implementations used as test oracles. These
// deliberately share no code with the library kernels: plain nested loops,
// one output element at a time.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mfv/tensor.hpp"

namespace oracle {

using mfv::Shape;
using mfv::Tensor;

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

// direct cross-correlation, one output scalar per loop nest
inline Tensor conv2d_ref(const Tensor& x, const Tensor& k, const Tensor& bias, int sh, int sw,
                         int ph, int pw) {
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t O = k.dim(0), kH = k.dim(2), kW = k.dim(3);
    int64_t oH = (H + 2 * ph - kH) / sh + 1, oW = (W + 2 * pw - kW) / sw + 1;
    Tensor out = Tensor::zeros({B, O, oH, oW}, x.dtype());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t oy = 0; oy < oH; ++oy)
                for (int64_t ox = 0; ox < oW; ++ox) {
                    double acc = bias.at(o);
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t ky = 0; ky < kH; ++ky)
                            for (int64_t kx = 0; kx < kW; ++kx) {
                                int64_t iy = oy * sh - ph + ky;
                                int64_t ix = ox * sw - pw + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at(((b * C + c) * H + iy) * W + ix) *
                                       k.at(((o * C + c) * kH + ky) * kW + kx);
                            }
                    double* dst = nullptr;
                    (void)dst;
                    if (out.dtype() == mfv::DType::f64)
                        out.mut_f64()[((b * O + o) * oH + oy) * oW + ox] = acc;
                    else
                        out.mut_f32()[((b * O + o) * oH + oy) * oW + ox] = static_cast<float>(acc);
                }
    return out;
}

inline Tensor conv3d_ref(const Tensor& x, const Tensor& k, const Tensor& bias, int st, int sh,
                         int sw, int pt, int ph, int pw) {
    int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    int64_t O = k.dim(0), kT = k.dim(2), kH = k.dim(3), kW = k.dim(4);
    int64_t oT = (T + 2 * pt - kT) / st + 1;
    int64_t oH = (H + 2 * ph - kH) / sh + 1;
    int64_t oW = (W + 2 * pw - kW) / sw + 1;
    Tensor out = Tensor::zeros({B, O, oT, oH, oW}, x.dtype());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t ot = 0; ot < oT; ++ot)
                for (int64_t oy = 0; oy < oH; ++oy)
                    for (int64_t ox = 0; ox < oW; ++ox) {
                        double acc = bias.at(o);
                        for (int64_t c = 0; c < C; ++c)
                            for (int64_t kt = 0; kt < kT; ++kt)
                                for (int64_t ky = 0; ky < kH; ++ky)
                                    for (int64_t kx = 0; kx < kW; ++kx) {
                                        int64_t it = ot * st - pt + kt;
                                        int64_t iy = oy * sh - ph + ky;
                                        int64_t ix = ox * sw - pw + kx;
                                        if (it < 0 || it >= T || iy < 0 || iy >= H || ix < 0 ||
                                            ix >= W)
                                            continue;
                                        acc += x.at((((b * C + c) * T + it) * H + iy) * W + ix) *
                                               k.at((((o * C + c) * kT + kt) * kH + ky) * kW + kx);
                                    }
                        if (out.dtype() == mfv::DType::f64)
                            out.mut_f64()[(((b * O + o) * oT + ot) * oH + oy) * oW + ox] = acc;
                        else
                            out.mut_f32()[(((b * O + o) * oT + ot) * oH + oy) * oW + ox] =
                                static_cast<float>(acc);
                    }
    return out;
}

inline double bilinear_sample_clamped(const Tensor& img, int64_t plane, double y, double x) {
    int64_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
    double cy = std::min(static_cast<double>(H - 1), std::max(0.0, y));
    double cx = std::min(static_cast<double>(W - 1), std::max(0.0, x));
    int64_t y0 = std::min<int64_t>(static_cast<int64_t>(cy), H - 1);
    int64_t x0 = std::min<int64_t>(static_cast<int64_t>(cx), W - 1);
    int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    double fy = cy - y0, fx = cx - x0;
    double v00 = img.at((plane * H + y0) * W + x0);
    double v01 = img.at((plane * H + y0) * W + x1);
    double v10 = img.at((plane * H + y1) * W + x0);
    double v11 = img.at((plane * H + y1) * W + x1);
    double top = v00 + fx * (v01 - v00);
    double bot = v10 + fx * (v11 - v10);
    return top + fy * (bot - top);
}

// align-corners coordinate mapping, one output pixel at a time
inline Tensor bilinear_resize_ref(const Tensor& x, int64_t oh, int64_t ow) {
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out = Tensor::zeros({B, C, oh, ow}, x.dtype());
    for (int64_t p = 0; p < B * C; ++p)
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t xo = 0; xo < ow; ++xo) {
                double sy = oh > 1 ? static_cast<double>(y) * (H - 1) / (oh - 1) : 0.0;
                double sx = ow > 1 ? static_cast<double>(xo) * (W - 1) / (ow - 1) : 0.0;
                double v = bilinear_sample_clamped(x, p, sy, sx);
                if (out.dtype() == mfv::DType::f64)
                    out.mut_f64()[(p * oh + y) * ow + xo] = v;
                else
                    out.mut_f32()[(p * oh + y) * ow + xo] = static_cast<float>(v);
            }
    return out;
}

inline Tensor avg_pool2_ref(const Tensor& x) {
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out = Tensor::zeros({B, C, H / 2, W / 2}, x.dtype());
    for (int64_t p = 0; p < B * C; ++p)
        for (int64_t y = 0; y < H / 2; ++y)
            for (int64_t xo = 0; xo < W / 2; ++xo) {
                double acc = (x.at((p * H + 2 * y) * W + 2 * xo) +
                              x.at((p * H + 2 * y) * W + 2 * xo + 1) +
                              x.at((p * H + 2 * y + 1) * W + 2 * xo) +
                              x.at((p * H + 2 * y + 1) * W + 2 * xo + 1)) /
                             4.0;
                if (out.dtype() == mfv::DType::f64)
                    out.mut_f64()[(p * (H / 2) + y) * (W / 2) + xo] = acc;
                else
                    out.mut_f32()[(p * (H / 2) + y) * (W / 2) + xo] = static_cast<float>(acc);
            }
    return out;
}

// the warp equation, evaluated per output pixel with clamped bilinear taps
inline Tensor warp_ref(const Tensor& frame, const Tensor& alpha, const Tensor& beta,
                       const Tensor& omega) {
    int64_t B = frame.dim(0), C = frame.dim(1), H = frame.dim(2), W = frame.dim(3);
    int64_t M = alpha.dim(1);
    Tensor out = Tensor::zeros(frame.shape(), frame.dtype());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    double acc = 0;
                    for (int64_t k = 0; k < M; ++k) {
                        int64_t fi = ((b * M + k) * H + y) * W + x;
                        double sx = x + alpha.at(fi);
                        double sy = y + beta.at(fi);
                        acc += omega.at(fi) * bilinear_sample_clamped(frame, b * C + c, sy, sx);
                    }
                    if (out.dtype() == mfv::DType::f64)
                        out.mut_f64()[((b * C + c) * H + y) * W + x] = acc;
                    else
                        out.mut_f32()[((b * C + c) * H + y) * W + x] = static_cast<float>(acc);
                }
    return out;
}

// the occlusion-weighted blend, per output pixel
inline Tensor fuse_ref(const std::array<Tensor, 4>& cands, const Tensor& vis) {
    int64_t B = cands[0].dim(0), C = cands[0].dim(1), H = cands[0].dim(2), W = cands[0].dim(3);
    Tensor out = Tensor::zeros(cands[0].shape(), cands[0].dtype());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < H * W; ++i) {
                double acc = 0;
                for (int64_t n = 0; n < 4; ++n)
                    acc += vis.at((b * 4 + n) * H * W + i) *
                           cands[static_cast<size_t>(n)].at(((b * C + c) * H * W) + i);
                if (out.dtype() == mfv::DType::f64)
                    out.mut_f64()[(b * C + c) * H * W + i] = acc;
                else
                    out.mut_f32()[(b * C + c) * H * W + i] = static_cast<float>(acc);
            }
    return out;
}

inline Tensor instance_norm_ref(const Tensor& x, double eps) {
    int64_t planes = x.dim(0) * x.dim(1);
    int64_t n = x.numel() / planes;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    for (int64_t p = 0; p < planes; ++p) {
        double mean = 0;
        for (int64_t i = 0; i < n; ++i) mean += x.at(p * n + i);
        mean /= n;
        double var = 0;
        for (int64_t i = 0; i < n; ++i) {
            double d = x.at(p * n + i) - mean;
            var += d * d;
        }
        var /= n;
        for (int64_t i = 0; i < n; ++i) {
            double v = (x.at(p * n + i) - mean) / std::sqrt(var + eps);
            if (out.dtype() == mfv::DType::f64)
                out.mut_f64()[p * n + i] = v;
            else
                out.mut_f32()[p * n + i] = static_cast<float>(v);
        }
    }
    return out;
}

// naive separable binomial blur with symmetric reflection
inline Tensor blur5_ref(const Tensor& x) {
    static const double w[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto reflect = [](int64_t i, int64_t n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    Tensor tmp = Tensor::zeros(x.shape(), mfv::DType::f64);
    for (int64_t p = 0; p < B * C; ++p)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xo = 0; xo < W; ++xo) {
                double acc = 0;
                for (int d = -2; d <= 2; ++d)
                    acc += w[d + 2] * x.at((p * H + y) * W + reflect(xo + d, W));
                tmp.mut_f64()[(p * H + y) * W + xo] = acc;
            }
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    for (int64_t p = 0; p < B * C; ++p)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t xo = 0; xo < W; ++xo) {
                double acc = 0;
                for (int d = -2; d <= 2; ++d)
                    acc += w[d + 2] * tmp.at((p * H + reflect(y + d, H)) * W + xo);
                if (out.dtype() == mfv::DType::f64)
                    out.mut_f64()[(p * H + y) * W + xo] = acc;
                else
                    out.mut_f32()[(p * H + y) * W + xo] = static_cast<float>(acc);
            }
    return out;
}

}  // namespace oracle

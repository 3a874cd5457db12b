#include <algorithm>

#include "mfv/ops.hpp"

namespace mfv::ops {

namespace {

// C[M,N] += A[M,K] * B[K,N], row-major. k ascends per output element, so the
// summation order is fixed regardless of thread count.
template <typename T>
void gemm_acc(int64_t M, int64_t K, int64_t N, const T* A, const T* B, T* C) {
    constexpr int64_t kBlock = 64;
    parallel_for(N, 512, [&](int64_t j0, int64_t j1) {
        for (int64_t k0 = 0; k0 < K; k0 += kBlock) {
            int64_t k1 = std::min(K, k0 + kBlock);
            for (int64_t i = 0; i < M; ++i) {
                const T* arow = A + i * K;
                T* crow = C + i * N;
                for (int64_t k = k0; k < k1; ++k) {
                    T av = arow[k];
                    const T* brow = B + k * N;
                    for (int64_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
                }
            }
        }
    });
}

// C[M,R] += A[M,N] * B[R,N]^T as row-by-row dot products, four accumulator
// lanes to keep the fixed summation order while exposing some ILP.
template <typename T>
void gemm_abt_acc(int64_t M, int64_t N, int64_t R, const T* A, const T* B, T* C) {
    parallel_for(M * R, 64, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            int64_t i = p / R, r = p % R;
            const T* a = A + i * N;
            const T* b = B + r * N;
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int64_t j = 0;
            for (; j + 4 <= N; j += 4) {
                s0 += a[j] * b[j];
                s1 += a[j + 1] * b[j + 1];
                s2 += a[j + 2] * b[j + 2];
                s3 += a[j + 3] * b[j + 3];
            }
            for (; j < N; ++j) s0 += a[j] * b[j];
            C[i * R + r] += ((s0 + s1) + (s2 + s3));
        }
    });
}

struct Conv2dDims {
    int64_t B, C, H, W, O, kH, kW, oH, oW;
};

Conv2dDims conv2d_dims(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                       Stride2 stride, Pad2 pad) {
    check(input.rank() == 4, "shape", "conv2d input must be [B,C,H,W], got " + shape_str(input.shape()));
    check(kernel.rank() == 4, "shape", "conv2d kernel must be [O,C,kH,kW], got " + shape_str(kernel.shape()));
    Conv2dDims d;
    d.B = input.dim(0);
    d.C = input.dim(1);
    d.H = input.dim(2);
    d.W = input.dim(3);
    d.O = kernel.dim(0);
    d.kH = kernel.dim(2);
    d.kW = kernel.dim(3);
    check(kernel.dim(1) == d.C, "shape",
          "conv2d channel mismatch: input has " + std::to_string(d.C) + " channels but kernel expects " +
              std::to_string(kernel.dim(1)) + " (kernel " + shape_str(kernel.shape()) + ", input " +
              shape_str(input.shape()) + ")");
    check(d.kH % 2 == 1 && d.kW % 2 == 1, "shape", "conv2d kernel spatial extents must be odd");
    check(stride.h >= 1 && stride.w >= 1, "shape", "conv2d stride must be positive");
    check(pad.h >= 0 && pad.w >= 0, "shape", "conv2d padding must be non-negative");
    check(d.H + 2 * pad.h >= d.kH && d.W + 2 * pad.w >= d.kW, "shape",
          "conv2d padded extent smaller than kernel");
    if (bias) {
        check(bias->rank() == 1 && bias->dim(0) == d.O, "shape",
              "conv2d bias must be [O]=" + std::to_string(d.O) + ", got " + shape_str(bias->shape()));
    }
    d.oH = (d.H + 2 * pad.h - d.kH) / stride.h + 1;
    d.oW = (d.W + 2 * pad.w - d.kW) / stride.w + 1;
    return d;
}

// cols[(c*kH+ky)*kW+kx][oy*oW+ox]; zero where the tap falls in padding.
template <typename T>
void im2col(const T* in, const Conv2dDims& d, Stride2 stride, Pad2 pad, T* cols) {
    int64_t K = d.C * d.kH * d.kW, N = d.oH * d.oW;
    parallel_for(K, 4, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            int64_t c = r / (d.kH * d.kW);
            int64_t ky = (r / d.kW) % d.kH;
            int64_t kx = r % d.kW;
            const T* plane = in + c * d.H * d.W;
            T* row = cols + r * N;
            for (int64_t oy = 0; oy < d.oH; ++oy) {
                int64_t iy = oy * stride.h - pad.h + ky;
                T* out = row + oy * d.oW;
                if (iy < 0 || iy >= d.H) {
                    std::fill(out, out + d.oW, T(0));
                    continue;
                }
                const T* src = plane + iy * d.W;
                for (int64_t ox = 0; ox < d.oW; ++ox) {
                    int64_t ix = ox * stride.w - pad.w + kx;
                    out[ox] = (ix >= 0 && ix < d.W) ? src[ix] : T(0);
                }
            }
        }
    });
}

template <typename T>
void col2im_acc(const T* cols, const Conv2dDims& d, Stride2 stride, Pad2 pad, T* in_grad) {
    int64_t N = d.oH * d.oW;
    // rows of a given channel only touch that channel's plane
    parallel_for(d.C, 1, [&](int64_t c0, int64_t c1) {
        for (int64_t c = c0; c < c1; ++c) {
            T* plane = in_grad + c * d.H * d.W;
            for (int64_t ky = 0; ky < d.kH; ++ky) {
                for (int64_t kx = 0; kx < d.kW; ++kx) {
                    const T* row = cols + ((c * d.kH + ky) * d.kW + kx) * N;
                    for (int64_t oy = 0; oy < d.oH; ++oy) {
                        int64_t iy = oy * stride.h - pad.h + ky;
                        if (iy < 0 || iy >= d.H) continue;
                        T* dst = plane + iy * d.W;
                        const T* src = row + oy * d.oW;
                        for (int64_t ox = 0; ox < d.oW; ++ox) {
                            int64_t ix = ox * stride.w - pad.w + kx;
                            if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Tensor conv2d_impl(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   Stride2 stride, Pad2 pad, const Conv2dDims& d) {
    Tensor out = Tensor::zeros({d.B, d.O, d.oH, d.oW}, input.dtype());
    int64_t K = d.C * d.kH * d.kW, N = d.oH * d.oW;
    std::vector<T> cols(static_cast<size_t>(K * N));
    const T* kmat = kernel.data<T>();
    const T* bptr = bias.data<T>();
    T* optr = out.mut_data<T>();
    for (int64_t b = 0; b < d.B; ++b) {
        im2col(input.data<T>() + b * d.C * d.H * d.W, d, stride, pad, cols.data());
        T* ob = optr + b * d.O * N;
        for (int64_t o = 0; o < d.O; ++o) std::fill(ob + o * N, ob + (o + 1) * N, bptr[o]);
        gemm_acc(d.O, K, N, kmat, cols.data(), ob);
    }
    return out;
}

struct Conv3dDims {
    int64_t B, C, T, H, W, O, kT, kH, kW, oT, oH, oW;
};

Conv3dDims conv3d_dims(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                       Stride3 stride, Pad3 pad) {
    check(input.rank() == 5, "shape", "conv3d input must be [B,C,T,H,W], got " + shape_str(input.shape()));
    check(kernel.rank() == 5, "shape", "conv3d kernel must be [O,C,kT,kH,kW], got " + shape_str(kernel.shape()));
    Conv3dDims d;
    d.B = input.dim(0);
    d.C = input.dim(1);
    d.T = input.dim(2);
    d.H = input.dim(3);
    d.W = input.dim(4);
    d.O = kernel.dim(0);
    d.kT = kernel.dim(2);
    d.kH = kernel.dim(3);
    d.kW = kernel.dim(4);
    check(kernel.dim(1) == d.C, "shape",
          "conv3d channel mismatch: input has " + std::to_string(d.C) + " channels but kernel expects " +
              std::to_string(kernel.dim(1)));
    check(d.kT % 2 == 1 && d.kH % 2 == 1 && d.kW % 2 == 1, "shape", "conv3d kernel extents must be odd");
    check(stride.t >= 1 && stride.h >= 1 && stride.w >= 1, "shape", "conv3d stride must be positive");
    check(pad.t >= 0 && pad.h >= 0 && pad.w >= 0, "shape", "conv3d padding must be non-negative");
    check(d.T + 2 * pad.t >= d.kT && d.H + 2 * pad.h >= d.kH && d.W + 2 * pad.w >= d.kW, "shape",
          "conv3d padded extent smaller than kernel");
    if (bias)
        check(bias->rank() == 1 && bias->dim(0) == d.O, "shape",
              "conv3d bias must be [O]=" + std::to_string(d.O));
    d.oT = (d.T + 2 * pad.t - d.kT) / stride.t + 1;
    d.oH = (d.H + 2 * pad.h - d.kH) / stride.h + 1;
    d.oW = (d.W + 2 * pad.w - d.kW) / stride.w + 1;
    return d;
}

template <typename T>
void vol2col(const T* in, const Conv3dDims& d, Stride3 stride, Pad3 pad, T* cols) {
    int64_t K = d.C * d.kT * d.kH * d.kW, N = d.oT * d.oH * d.oW;
    parallel_for(K, 4, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            int64_t c = r / (d.kT * d.kH * d.kW);
            int64_t kt = (r / (d.kH * d.kW)) % d.kT;
            int64_t ky = (r / d.kW) % d.kH;
            int64_t kx = r % d.kW;
            const T* vol = in + c * d.T * d.H * d.W;
            T* row = cols + r * N;
            for (int64_t ot = 0; ot < d.oT; ++ot) {
                int64_t it = ot * stride.t - pad.t + kt;
                for (int64_t oy = 0; oy < d.oH; ++oy) {
                    int64_t iy = oy * stride.h - pad.h + ky;
                    T* out = row + (ot * d.oH + oy) * d.oW;
                    if (it < 0 || it >= d.T || iy < 0 || iy >= d.H) {
                        std::fill(out, out + d.oW, T(0));
                        continue;
                    }
                    const T* src = vol + (it * d.H + iy) * d.W;
                    for (int64_t ox = 0; ox < d.oW; ++ox) {
                        int64_t ix = ox * stride.w - pad.w + kx;
                        out[ox] = (ix >= 0 && ix < d.W) ? src[ix] : T(0);
                    }
                }
            }
        }
    });
}

template <typename T>
void col2vol_acc(const T* cols, const Conv3dDims& d, Stride3 stride, Pad3 pad, T* in_grad) {
    int64_t N = d.oT * d.oH * d.oW;
    parallel_for(d.C, 1, [&](int64_t c0, int64_t c1) {
        for (int64_t c = c0; c < c1; ++c) {
            T* vol = in_grad + c * d.T * d.H * d.W;
            for (int64_t kt = 0; kt < d.kT; ++kt)
                for (int64_t ky = 0; ky < d.kH; ++ky)
                    for (int64_t kx = 0; kx < d.kW; ++kx) {
                        const T* row = cols + (((c * d.kT + kt) * d.kH + ky) * d.kW + kx) * N;
                        for (int64_t ot = 0; ot < d.oT; ++ot) {
                            int64_t it = ot * stride.t - pad.t + kt;
                            if (it < 0 || it >= d.T) continue;
                            for (int64_t oy = 0; oy < d.oH; ++oy) {
                                int64_t iy = oy * stride.h - pad.h + ky;
                                if (iy < 0 || iy >= d.H) continue;
                                T* dst = vol + (it * d.H + iy) * d.W;
                                const T* src = row + (ot * d.oH + oy) * d.oW;
                                for (int64_t ox = 0; ox < d.oW; ++ox) {
                                    int64_t ix = ox * stride.w - pad.w + kx;
                                    if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                                }
                            }
                        }
                    }
        }
    });
}

template <typename T>
void transpose(int64_t rows, int64_t cols_n, const T* a, T* at) {
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols_n; ++j) at[j * rows + i] = a[i * cols_n + j];
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Stride2 stride, Pad2 pad) {
    check(input.dtype() == kernel.dtype() && input.dtype() == bias.dtype(), "dtype",
          "conv2d operands must share dtype");
    Conv2dDims d = conv2d_dims(input, kernel, &bias, stride, pad);
    if (input.dtype() == DType::f32) return conv2d_impl<float>(input, kernel, bias, stride, pad, d);
    return conv2d_impl<double>(input, kernel, bias, stride, pad, d);
}

template <typename T>
static Conv2dGrads conv2d_backward_impl(const Tensor& grad_out, const Tensor& input,
                                        const Tensor& kernel, Stride2 stride, Pad2 pad,
                                        bool need_input, bool need_kernel, bool need_bias,
                                        const Conv2dDims& d) {
    Conv2dGrads g;
    int64_t K = d.C * d.kH * d.kW, N = d.oH * d.oW;
    const T* gout = grad_out.data<T>();

    if (need_bias) {
        g.bias = Tensor::zeros({d.O}, input.dtype());
        T* gb = g.bias.mut_data<T>();
        for (int64_t b = 0; b < d.B; ++b)
            for (int64_t o = 0; o < d.O; ++o) {
                const T* src = gout + (b * d.O + o) * N;
                T s = 0;
                for (int64_t j = 0; j < N; ++j) s += src[j];
                gb[o] += s;
            }
    }
    std::vector<T> cols;
    if (need_kernel || need_input) cols.resize(static_cast<size_t>(K * N));

    if (need_kernel) {
        g.kernel = Tensor::zeros(kernel.shape(), input.dtype());
        T* gk = g.kernel.mut_data<T>();
        for (int64_t b = 0; b < d.B; ++b) {
            im2col(input.data<T>() + b * d.C * d.H * d.W, d, stride, pad, cols.data());
            gemm_abt_acc(d.O, N, K, gout + b * d.O * N, cols.data(), gk);
        }
    }
    if (need_input) {
        g.input = Tensor::zeros(input.shape(), input.dtype());
        std::vector<T> kt(static_cast<size_t>(K * d.O));
        transpose(d.O, K, kernel.data<T>(), kt.data());
        T* gi = g.input.mut_data<T>();
        for (int64_t b = 0; b < d.B; ++b) {
            std::fill(cols.begin(), cols.end(), T(0));
            gemm_acc(K, d.O, N, kt.data(), gout + b * d.O * N, cols.data());
            col2im_acc(cols.data(), d, stride, pad, gi + b * d.C * d.H * d.W);
        }
    }
    return g;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& kernel,
                            Stride2 stride, Pad2 pad,
                            bool need_input, bool need_kernel, bool need_bias) {
    Conv2dDims d = conv2d_dims(input, kernel, nullptr, stride, pad);
    check(grad_out.shape() == Shape({d.B, d.O, d.oH, d.oW}), "shape", "conv2d_backward grad shape mismatch");
    if (input.dtype() == DType::f32)
        return conv2d_backward_impl<float>(grad_out, input, kernel, stride, pad, need_input,
                                           need_kernel, need_bias, d);
    return conv2d_backward_impl<double>(grad_out, input, kernel, stride, pad, need_input,
                                        need_kernel, need_bias, d);
}

template <typename T>
static Tensor conv3d_impl(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                          Stride3 stride, Pad3 pad, const Conv3dDims& d) {
    Tensor out = Tensor::zeros({d.B, d.O, d.oT, d.oH, d.oW}, input.dtype());
    int64_t K = d.C * d.kT * d.kH * d.kW, N = d.oT * d.oH * d.oW;
    std::vector<T> cols(static_cast<size_t>(K * N));
    const T* kmat = kernel.data<T>();
    const T* bptr = bias.data<T>();
    T* optr = out.mut_data<T>();
    for (int64_t b = 0; b < d.B; ++b) {
        vol2col(input.data<T>() + b * d.C * d.T * d.H * d.W, d, stride, pad, cols.data());
        T* ob = optr + b * d.O * N;
        for (int64_t o = 0; o < d.O; ++o) std::fill(ob + o * N, ob + (o + 1) * N, bptr[o]);
        gemm_acc(d.O, K, N, kmat, cols.data(), ob);
    }
    return out;
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Stride3 stride, Pad3 pad) {
    check(input.dtype() == kernel.dtype() && input.dtype() == bias.dtype(), "dtype",
          "conv3d operands must share dtype");
    Conv3dDims d = conv3d_dims(input, kernel, &bias, stride, pad);
    if (input.dtype() == DType::f32) return conv3d_impl<float>(input, kernel, bias, stride, pad, d);
    return conv3d_impl<double>(input, kernel, bias, stride, pad, d);
}

template <typename T>
static Conv3dGrads conv3d_backward_impl(const Tensor& grad_out, const Tensor& input,
                                        const Tensor& kernel, Stride3 stride, Pad3 pad,
                                        bool need_input, bool need_kernel, bool need_bias,
                                        const Conv3dDims& d) {
    Conv3dGrads g;
    int64_t K = d.C * d.kT * d.kH * d.kW, N = d.oT * d.oH * d.oW;
    const T* gout = grad_out.data<T>();

    if (need_bias) {
        g.bias = Tensor::zeros({d.O}, input.dtype());
        T* gb = g.bias.mut_data<T>();
        for (int64_t b = 0; b < d.B; ++b)
            for (int64_t o = 0; o < d.O; ++o) {
                const T* src = gout + (b * d.O + o) * N;
                T s = 0;
                for (int64_t j = 0; j < N; ++j) s += src[j];
                gb[o] += s;
            }
    }
    std::vector<T> cols;
    if (need_kernel || need_input) cols.resize(static_cast<size_t>(K * N));

    if (need_kernel) {
        g.kernel = Tensor::zeros(kernel.shape(), input.dtype());
        T* gk = g.kernel.mut_data<T>();
        for (int64_t b = 0; b < d.B; ++b) {
            vol2col(input.data<T>() + b * d.C * d.T * d.H * d.W, d, stride, pad, cols.data());
            gemm_abt_acc(d.O, N, K, gout + b * d.O * N, cols.data(), gk);
        }
    }
    if (need_input) {
        g.input = Tensor::zeros(input.shape(), input.dtype());
        std::vector<T> kt(static_cast<size_t>(K * d.O));
        transpose(d.O, K, kernel.data<T>(), kt.data());
        T* gi = g.input.mut_data<T>();
        for (int64_t b = 0; b < d.B; ++b) {
            std::fill(cols.begin(), cols.end(), T(0));
            gemm_acc(K, d.O, N, kt.data(), gout + b * d.O * N, cols.data());
            col2vol_acc(cols.data(), d, stride, pad, gi + b * d.C * d.T * d.H * d.W);
        }
    }
    return g;
}

Conv3dGrads conv3d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& kernel,
                            Stride3 stride, Pad3 pad,
                            bool need_input, bool need_kernel, bool need_bias) {
    Conv3dDims d = conv3d_dims(input, kernel, nullptr, stride, pad);
    check(grad_out.shape() == Shape({d.B, d.O, d.oT, d.oH, d.oW}), "shape",
          "conv3d_backward grad shape mismatch");
    if (input.dtype() == DType::f32)
        return conv3d_backward_impl<float>(grad_out, input, kernel, stride, pad, need_input,
                                           need_kernel, need_bias, d);
    return conv3d_backward_impl<double>(grad_out, input, kernel, stride, pad, need_input,
                                        need_kernel, need_bias, d);
}

}  // namespace mfv::ops

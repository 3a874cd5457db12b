#include <algorithm>
#include <cmath>

#include "mfv/ops.hpp"

namespace mfv::ops {

namespace {

template <typename F>
void dispatch(DType dt, F&& f) {
    if (dt == DType::f32)
        f(float{});
    else
        f(double{});
}

int64_t reflect_index(int64_t i, int64_t n) {
    // symmetric reflection (-1 -> 0, n -> n-1); loops for tiny extents
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

void check_4d(const Tensor& t, const char* op) {
    check(t.rank() == 4, "shape", std::string(op) + " expects [B,C,H,W], got " + shape_str(t.shape()));
}

}  // namespace

// -- bilinear resize ----------------------------------------------------------

template <typename T>
static Tensor bilinear_resize_impl(const Tensor& input, int64_t oh, int64_t ow) {
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor out = Tensor::zeros({B, C, oh, ow}, input.dtype());
    // align-corners source coordinates per output row/column
    std::vector<int64_t> y0(oh), y1(oh), x0(ow), x1(ow);
    std::vector<T> fy(oh), fx(ow);
    for (int64_t y = 0; y < oh; ++y) {
        double s = oh > 1 ? static_cast<double>(y) * (H - 1) / (oh - 1) : 0.0;
        int64_t i = std::min<int64_t>(static_cast<int64_t>(s), H - 1);
        y0[y] = i;
        y1[y] = std::min(i + 1, H - 1);
        fy[y] = static_cast<T>(s - static_cast<double>(i));
    }
    for (int64_t x = 0; x < ow; ++x) {
        double s = ow > 1 ? static_cast<double>(x) * (W - 1) / (ow - 1) : 0.0;
        int64_t i = std::min<int64_t>(static_cast<int64_t>(s), W - 1);
        x0[x] = i;
        x1[x] = std::min(i + 1, W - 1);
        fx[x] = static_cast<T>(s - static_cast<double>(i));
    }
    const T* in = input.data<T>();
    T* o = out.mut_data<T>();
    parallel_for(B * C, 1, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            const T* plane = in + p * H * W;
            T* op = o + p * oh * ow;
            for (int64_t y = 0; y < oh; ++y) {
                const T* r0 = plane + y0[y] * W;
                const T* r1 = plane + y1[y] * W;
                T gy = fy[y];
                for (int64_t x = 0; x < ow; ++x) {
                    T a = r0[x0[x]] + fx[x] * (r0[x1[x]] - r0[x0[x]]);
                    T b = r1[x0[x]] + fx[x] * (r1[x1[x]] - r1[x0[x]]);
                    op[y * ow + x] = a + gy * (b - a);
                }
            }
        }
    });
    return out;
}

Tensor bilinear_resize(const Tensor& input, int64_t out_h, int64_t out_w) {
    check_4d(input, "bilinear_resize");
    check(out_h >= 1 && out_w >= 1, "shape", "bilinear_resize output extents must be >= 1");
    if (input.dtype() == DType::f32) return bilinear_resize_impl<float>(input, out_h, out_w);
    return bilinear_resize_impl<double>(input, out_h, out_w);
}

template <typename T>
static Tensor bilinear_resize_backward_impl(const Tensor& grad_out, const Shape& in_shape) {
    int64_t B = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
    int64_t oh = grad_out.dim(2), ow = grad_out.dim(3);
    Tensor gin = Tensor::zeros(in_shape, grad_out.dtype());
    std::vector<int64_t> y0(oh), y1(oh), x0(ow), x1(ow);
    std::vector<T> fy(oh), fx(ow);
    for (int64_t y = 0; y < oh; ++y) {
        double s = oh > 1 ? static_cast<double>(y) * (H - 1) / (oh - 1) : 0.0;
        int64_t i = std::min<int64_t>(static_cast<int64_t>(s), H - 1);
        y0[y] = i;
        y1[y] = std::min(i + 1, H - 1);
        fy[y] = static_cast<T>(s - static_cast<double>(i));
    }
    for (int64_t x = 0; x < ow; ++x) {
        double s = ow > 1 ? static_cast<double>(x) * (W - 1) / (ow - 1) : 0.0;
        int64_t i = std::min<int64_t>(static_cast<int64_t>(s), W - 1);
        x0[x] = i;
        x1[x] = std::min(i + 1, W - 1);
        fx[x] = static_cast<T>(s - static_cast<double>(i));
    }
    const T* g = grad_out.data<T>();
    T* gi = gin.mut_data<T>();
    parallel_for(B * C, 1, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            const T* gp = g + p * oh * ow;
            T* plane = gi + p * H * W;
            for (int64_t y = 0; y < oh; ++y) {
                T gy = fy[y];
                for (int64_t x = 0; x < ow; ++x) {
                    T gv = gp[y * ow + x];
                    T gx = fx[x];
                    plane[y0[y] * W + x0[x]] += (1 - gy) * (1 - gx) * gv;
                    plane[y0[y] * W + x1[x]] += (1 - gy) * gx * gv;
                    plane[y1[y] * W + x0[x]] += gy * (1 - gx) * gv;
                    plane[y1[y] * W + x1[x]] += gy * gx * gv;
                }
            }
        }
    });
    return gin;
}

Tensor bilinear_resize_backward(const Tensor& grad_out, const Shape& input_shape) {
    check_4d(grad_out, "bilinear_resize_backward");
    if (grad_out.dtype() == DType::f32) return bilinear_resize_backward_impl<float>(grad_out, input_shape);
    return bilinear_resize_backward_impl<double>(grad_out, input_shape);
}

// -- avg_pool2 ----------------------------------------------------------------

Tensor avg_pool2(const Tensor& input) {
    check_4d(input, "avg_pool2");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(H % 2 == 0 && W % 2 == 0, "shape",
          "avg_pool2 requires even spatial extents, got " + shape_str(input.shape()));
    Tensor out = Tensor::zeros({B, C, H / 2, W / 2}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.mut_data<T>();
        int64_t oh = H / 2, ow = W / 2;
        parallel_for(B * C, 1, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* plane = in + p * H * W;
                T* op = o + p * oh * ow;
                for (int64_t y = 0; y < oh; ++y)
                    for (int64_t x = 0; x < ow; ++x) {
                        const T* q = plane + 2 * y * W + 2 * x;
                        op[y * ow + x] = (q[0] + q[1] + q[W] + q[W + 1]) * T(0.25);
                    }
            }
        });
    });
    return out;
}

Tensor avg_pool2_backward(const Tensor& grad_out, const Shape& input_shape) {
    Tensor gin = Tensor::zeros(input_shape, grad_out.dtype());
    int64_t H = input_shape[2], W = input_shape[3];
    int64_t oh = H / 2, ow = W / 2, planes = input_shape[0] * input_shape[1];
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad_out.data<T>();
        T* gi = gin.mut_data<T>();
        parallel_for(planes, 1, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* gp = g + p * oh * ow;
                T* plane = gi + p * H * W;
                for (int64_t y = 0; y < oh; ++y)
                    for (int64_t x = 0; x < ow; ++x) {
                        T v = gp[y * ow + x] * T(0.25);
                        T* q = plane + 2 * y * W + 2 * x;
                        q[0] += v;
                        q[1] += v;
                        q[W] += v;
                        q[W + 1] += v;
                    }
            }
        });
    });
    return gin;
}

// -- 5-tap binomial blur -------------------------------------------------------

namespace {

// adjoint=false: out[i] = sum_d w[d] in[reflect(i+d-2)]
// adjoint=true : out[reflect(i+d-2)] += w[d] in[i]  (transpose of the above)
template <typename T>
void blur5_line(const T* in, T* out, int64_t n, int64_t stride, bool adjoint) {
    static const double w[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    if (!adjoint) {
        for (int64_t i = 0; i < n; ++i) {
            T acc = 0;
            for (int d = 0; d < 5; ++d)
                acc += static_cast<T>(w[d]) * in[reflect_index(i + d - 2, n) * stride];
            out[i * stride] = acc;
        }
    } else {
        for (int64_t i = 0; i < n; ++i) {
            T v = in[i * stride];
            for (int d = 0; d < 5; ++d)
                out[reflect_index(i + d - 2, n) * stride] += static_cast<T>(w[d]) * v;
        }
    }
}

template <typename T>
Tensor blur5_impl(const Tensor& input, bool adjoint) {
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor tmp = Tensor::zeros(input.shape(), input.dtype());
    Tensor out = Tensor::zeros(input.shape(), input.dtype());
    const T* in = input.data<T>();
    T* t = tmp.mut_data<T>();
    T* o = out.mut_data<T>();
    // forward: rows then columns; adjoint: transposed order (columns then rows)
    parallel_for(B * C, 1, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            const T* plane = in + p * H * W;
            T* tp = t + p * H * W;
            T* op = o + p * H * W;
            if (!adjoint) {
                for (int64_t y = 0; y < H; ++y) blur5_line(plane + y * W, tp + y * W, W, 1, false);
                for (int64_t x = 0; x < W; ++x) blur5_line(tp + x, op + x, H, W, false);
            } else {
                for (int64_t x = 0; x < W; ++x) blur5_line(plane + x, tp + x, H, W, true);
                for (int64_t y = 0; y < H; ++y) blur5_line(tp + y * W, op + y * W, W, 1, true);
            }
        }
    });
    return out;
}

}  // namespace

Tensor gauss_blur5(const Tensor& input) {
    check_4d(input, "gauss_blur5");
    if (input.dtype() == DType::f32) return blur5_impl<float>(input, false);
    return blur5_impl<double>(input, false);
}

Tensor gauss_blur5_backward(const Tensor& grad_out) {
    check_4d(grad_out, "gauss_blur5_backward");
    if (grad_out.dtype() == DType::f32) return blur5_impl<float>(grad_out, true);
    return blur5_impl<double>(grad_out, true);
}

// -- downsample2 ---------------------------------------------------------------

Tensor downsample2(const Tensor& input) {
    check_4d(input, "downsample2");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(H % 2 == 0 && W % 2 == 0, "shape", "downsample2 requires even extents");
    Tensor out = Tensor::zeros({B, C, H / 2, W / 2}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.mut_data<T>();
        int64_t oh = H / 2, ow = W / 2;
        for (int64_t p = 0; p < B * C; ++p)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x)
                    o[(p * oh + y) * ow + x] = in[(p * H + 2 * y) * W + 2 * x];
    });
    return out;
}

Tensor downsample2_backward(const Tensor& grad_out, const Shape& input_shape) {
    Tensor gin = Tensor::zeros(input_shape, grad_out.dtype());
    int64_t H = input_shape[2], W = input_shape[3];
    int64_t oh = H / 2, ow = W / 2, planes = input_shape[0] * input_shape[1];
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad_out.data<T>();
        T* gi = gin.mut_data<T>();
        for (int64_t p = 0; p < planes; ++p)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x)
                    gi[(p * H + 2 * y) * W + 2 * x] = g[(p * oh + y) * ow + x];
    });
    return gin;
}

// -- softmax -------------------------------------------------------------------

Tensor softmax_axis(const Tensor& input, int axis) {
    check(axis >= 0 && axis < input.rank(), "shape",
          "softmax axis " + std::to_string(axis) + " out of range for rank " + std::to_string(input.rank()));
    int64_t alen = input.dim(axis);
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < input.rank(); ++i) inner *= input.dim(i);
    for (int i = 0; i < axis; ++i) outer *= input.dim(i);
    Tensor out = Tensor::zeros(input.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.mut_data<T>();
        parallel_for(outer * inner, 1024, [&](int64_t s0, int64_t s1) {
            for (int64_t s = s0; s < s1; ++s) {
                int64_t ou = s / inner, ii = s % inner;
                const T* x = in + ou * alen * inner + ii;
                T* y = o + ou * alen * inner + ii;
                T mx = x[0];
                for (int64_t a = 1; a < alen; ++a) mx = std::max(mx, x[a * inner]);
                T sum = 0;
                for (int64_t a = 0; a < alen; ++a) {
                    T e = std::exp(x[a * inner] - mx);
                    y[a * inner] = e;
                    sum += e;
                }
                T inv = T(1) / sum;
                for (int64_t a = 0; a < alen; ++a) y[a * inner] *= inv;
            }
        });
    });
    return out;
}

Tensor softmax_axis_backward(const Tensor& grad_out, const Tensor& output, int axis) {
    int64_t alen = output.dim(axis);
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < output.rank(); ++i) inner *= output.dim(i);
    for (int i = 0; i < axis; ++i) outer *= output.dim(i);
    Tensor gin = Tensor::zeros(output.shape(), output.dtype());
    dispatch(output.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad_out.data<T>();
        const T* y = output.data<T>();
        T* gi = gin.mut_data<T>();
        parallel_for(outer * inner, 1024, [&](int64_t s0, int64_t s1) {
            for (int64_t s = s0; s < s1; ++s) {
                int64_t ou = s / inner, ii = s % inner;
                int64_t base = ou * alen * inner + ii;
                T dot = 0;
                for (int64_t a = 0; a < alen; ++a) dot += g[base + a * inner] * y[base + a * inner];
                for (int64_t a = 0; a < alen; ++a)
                    gi[base + a * inner] = y[base + a * inner] * (g[base + a * inner] - dot);
            }
        });
    });
    return gin;
}

// -- instance norm ---------------------------------------------------------------

namespace {

void inorm_extents(const Tensor& t, int64_t& planes, int64_t& n) {
    check(t.rank() >= 3, "shape", "instance_norm expects rank >= 3, got " + shape_str(t.shape()));
    planes = t.dim(0) * t.dim(1);
    n = 1;
    for (int i = 2; i < t.rank(); ++i) n *= t.dim(i);
    check(n >= 2, "shape", "instance_norm needs at least 2 elements per slice");
}

}  // namespace

Tensor instance_norm(const Tensor& input, double eps) {
    int64_t planes, n;
    inorm_extents(input, planes, n);
    Tensor out = Tensor::zeros(input.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.mut_data<T>();
        parallel_for(planes, 1, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* x = in + p * n;
                T* y = o + p * n;
                T mean = 0;
                for (int64_t i = 0; i < n; ++i) mean += x[i];
                mean /= static_cast<T>(n);
                T var = 0;
                for (int64_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
                var /= static_cast<T>(n);
                T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                for (int64_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv;
            }
        });
    });
    return out;
}

Tensor instance_norm_backward(const Tensor& grad_out, const Tensor& input, double eps) {
    int64_t planes, n;
    inorm_extents(input, planes, n);
    Tensor gin = Tensor::zeros(input.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad_out.data<T>();
        const T* in = input.data<T>();
        T* gi = gin.mut_data<T>();
        parallel_for(planes, 1, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                const T* x = in + p * n;
                const T* gp = g + p * n;
                T* gx = gi + p * n;
                T mean = 0;
                for (int64_t i = 0; i < n; ++i) mean += x[i];
                mean /= static_cast<T>(n);
                T var = 0;
                for (int64_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
                var /= static_cast<T>(n);
                T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                T gmean = 0, gdot = 0;
                for (int64_t i = 0; i < n; ++i) {
                    gmean += gp[i];
                    gdot += gp[i] * (x[i] - mean) * inv;
                }
                gmean /= static_cast<T>(n);
                gdot /= static_cast<T>(n);
                for (int64_t i = 0; i < n; ++i) {
                    T xh = (x[i] - mean) * inv;
                    gx[i] = inv * (gp[i] - gmean - xh * gdot);
                }
            }
        });
    });
    return gin;
}

// -- prelu -----------------------------------------------------------------------

Tensor prelu(const Tensor& input, const Tensor& slope) {
    check(input.rank() >= 2, "shape", "prelu expects rank >= 2");
    int64_t C = input.dim(1);
    check(slope.rank() == 1 && slope.dim(0) == C, "shape",
          "prelu slope must be [C]=" + std::to_string(C) + ", got " + shape_str(slope.shape()));
    int64_t B = input.dim(0), inner = input.numel() / (B * C);
    Tensor out = Tensor::zeros(input.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        const T* a = slope.data<T>();
        T* o = out.mut_data<T>();
        parallel_for(B * C, 4, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                T s = a[p % C];
                const T* x = in + p * inner;
                T* y = o + p * inner;
                for (int64_t i = 0; i < inner; ++i) y[i] = x[i] >= 0 ? x[i] : s * x[i];
            }
        });
    });
    return out;
}

PreluGrads prelu_backward(const Tensor& grad_out, const Tensor& input, const Tensor& slope,
                          bool need_input, bool need_slope) {
    int64_t B = input.dim(0), C = input.dim(1), inner = input.numel() / (B * C);
    PreluGrads g;
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* go = grad_out.data<T>();
        const T* in = input.data<T>();
        const T* a = slope.data<T>();
        if (need_input) {
            g.input = Tensor::zeros(input.shape(), input.dtype());
            T* gi = g.input.mut_data<T>();
            parallel_for(B * C, 4, [&](int64_t p0, int64_t p1) {
                for (int64_t p = p0; p < p1; ++p) {
                    T s = a[p % C];
                    for (int64_t i = p * inner; i < (p + 1) * inner; ++i)
                        gi[i] = in[i] >= 0 ? go[i] : s * go[i];
                }
            });
        }
        if (need_slope) {
            g.slope = Tensor::zeros(slope.shape(), input.dtype());
            T* gs = g.slope.mut_data<T>();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    T acc = 0;
                    int64_t base = (b * C + c) * inner;
                    for (int64_t i = 0; i < inner; ++i)
                        if (in[base + i] < 0) acc += go[base + i] * in[base + i];
                    gs[c] += acc;
                }
        }
    });
    return g;
}

// -- elementwise / reductions ------------------------------------------------

namespace {

template <typename T, typename F>
void ew2(const Tensor& a, const Tensor& b, Tensor& out, F f) {
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.mut_data<T>();
    int64_t n = a.numel();
    parallel_for(n, 1 << 16, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) po[i] = f(pa[i], pb[i]);
    });
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    check(a.same_shape(b), "shape",
          std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    check(a.dtype() == b.dtype(), "dtype", std::string(op) + " dtype mismatch");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        ew2<T>(a, b, out, [](T x, T y) { return x + y; });
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        ew2<T>(a, b, out, [](T x, T y) { return x - y; });
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        ew2<T>(a, b, out, [](T x, T y) { return x * y; });
    });
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.mut_data<T>();
        T sv = static_cast<T>(s);
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + sv;
    });
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.mut_data<T>();
        T sv = static_cast<T>(s);
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * sv;
    });
    return out;
}

Tensor abs_(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.mut_data<T>();
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::abs(pa[i]);
    });
    return out;
}

Tensor sqrt_(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.mut_data<T>();
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::sqrt(pa[i]);
    });
    return out;
}

Tensor clamp01(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.mut_data<T>();
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::min(T(1), std::max(T(0), pa[i]));
    });
    return out;
}

Tensor sum_all(const Tensor& a) {
    Tensor out = Tensor::zeros({1}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T s = 0;
        for (int64_t i = 0; i < a.numel(); ++i) s += pa[i];
        out.mut_data<T>()[0] = s;
    });
    return out;
}

Tensor mean_all(const Tensor& a) {
    Tensor s = sum_all(a);
    return mul_scalar(s, 1.0 / static_cast<double>(a.numel()));
}

// -- layout ------------------------------------------------------------------

Tensor reflect_pad_hw(const Tensor& input, int64_t pad_h, int64_t pad_w) {
    check_4d(input, "reflect_pad_hw");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(pad_h >= 0 && pad_w >= 0 && pad_h < H && pad_w < W, "shape",
          "reflect padding must be non-negative and smaller than the extent");
    Tensor out = Tensor::zeros({B, C, H + pad_h, W + pad_w}, input.dtype());
    int64_t oh = H + pad_h, ow = W + pad_w;
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.mut_data<T>();
        for (int64_t p = 0; p < B * C; ++p)
            for (int64_t y = 0; y < oh; ++y) {
                int64_t sy = y < H ? y : 2 * H - 1 - y;
                for (int64_t x = 0; x < ow; ++x) {
                    int64_t sx = x < W ? x : 2 * W - 1 - x;
                    o[(p * oh + y) * ow + x] = in[(p * H + sy) * W + sx];
                }
            }
    });
    return out;
}

Tensor crop_hw(const Tensor& input, int64_t out_h, int64_t out_w) {
    check_4d(input, "crop_hw");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(out_h >= 1 && out_w >= 1 && out_h <= H && out_w <= W, "shape", "crop larger than input");
    Tensor out = Tensor::zeros({B, C, out_h, out_w}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.mut_data<T>();
        for (int64_t p = 0; p < B * C; ++p)
            for (int64_t y = 0; y < out_h; ++y)
                std::copy(in + (p * H + y) * W, in + (p * H + y) * W + out_w,
                          o + (p * out_h + y) * out_w);
    });
    return out;
}

Tensor concat_axis1(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "shape", "concat of zero tensors");
    const Tensor& first = parts[0];
    check(first.rank() >= 2, "shape", "concat_axis1 expects rank >= 2");
    int64_t B = first.dim(0);
    int64_t inner = first.numel() / (B * first.dim(1));
    int64_t total_c = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& p = parts[pi];
        check(p.rank() == first.rank() && p.dim(0) == B, "shape", "concat_axis1 batch mismatch");
        check(p.dtype() == first.dtype(), "dtype",
              "concat_axis1 dtype mismatch: part " + std::to_string(pi) + " is " +
                  dtype_name(p.dtype()) + " but part 0 is " + dtype_name(first.dtype()));
        check(p.numel() / (B * p.dim(1)) == inner, "shape",
              "concat_axis1 trailing extents mismatch: " + shape_str(p.shape()) + " vs " +
                  shape_str(first.shape()));
        total_c += p.dim(1);
    }
    Shape out_shape = first.shape();
    out_shape[1] = total_c;
    Tensor out = Tensor::zeros(out_shape, first.dtype());
    dispatch(first.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* po = out.mut_data<T>();
        int64_t coff = 0;
        for (const Tensor& p : parts) {
            const T* pp = p.data<T>();
            int64_t c = p.dim(1);
            for (int64_t b = 0; b < B; ++b)
                std::copy(pp + b * c * inner, pp + (b + 1) * c * inner,
                          po + (b * total_c + coff) * inner);
            coff += c;
        }
    });
    return out;
}

Tensor slice_axis1(const Tensor& t, int64_t begin, int64_t count) {
    check(t.rank() >= 2, "shape", "slice_axis1 expects rank >= 2");
    int64_t B = t.dim(0), C = t.dim(1);
    check(begin >= 0 && count >= 1 && begin + count <= C, "shape", "slice_axis1 out of range");
    int64_t inner = t.numel() / (B * C);
    Shape out_shape = t.shape();
    out_shape[1] = count;
    Tensor out = Tensor::zeros(out_shape, t.dtype());
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pt = t.data<T>();
        T* po = out.mut_data<T>();
        for (int64_t b = 0; b < B; ++b)
            std::copy(pt + (b * C + begin) * inner, pt + (b * C + begin + count) * inner,
                      po + b * count * inner);
    });
    return out;
}

Tensor stack_time(const std::array<Tensor, 4>& frames) {
    const Tensor& f0 = frames[0];
    check_4d(f0, "stack_time");
    for (const Tensor& f : frames) {
        check(f.same_shape(f0), "shape", "stack_time frames must share shape");
        check(f.dtype() == f0.dtype(), "dtype", "stack_time dtype mismatch");
    }
    int64_t B = f0.dim(0), C = f0.dim(1), H = f0.dim(2), W = f0.dim(3);
    Tensor out = Tensor::zeros({B, C, 4, H, W}, f0.dtype());
    dispatch(f0.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* po = out.mut_data<T>();
        for (int64_t n = 0; n < 4; ++n) {
            const T* pf = frames[static_cast<size_t>(n)].data<T>();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c)
                    std::copy(pf + (b * C + c) * H * W, pf + (b * C + c + 1) * H * W,
                              po + ((b * C + c) * 4 + n) * H * W);
        }
    });
    return out;
}

std::array<Tensor, 4> unstack_time(const Tensor& stacked) {
    check(stacked.rank() == 5 && stacked.dim(2) == 4, "shape",
          "unstack_time expects [B,C,4,H,W], got " + shape_str(stacked.shape()));
    int64_t B = stacked.dim(0), C = stacked.dim(1), H = stacked.dim(3), W = stacked.dim(4);
    std::array<Tensor, 4> out;
    for (int64_t n = 0; n < 4; ++n) out[static_cast<size_t>(n)] = Tensor::zeros({B, C, H, W}, stacked.dtype());
    dispatch(stacked.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* ps = stacked.data<T>();
        for (int64_t n = 0; n < 4; ++n) {
            T* po = out[static_cast<size_t>(n)].mut_data<T>();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c)
                    std::copy(ps + ((b * C + c) * 4 + n) * H * W, ps + ((b * C + c) * 4 + n + 1) * H * W,
                              po + (b * C + c) * H * W);
        }
    });
    return out;
}

// -- warp / fuse ---------------------------------------------------------------

namespace {

void check_flow_shapes(const Tensor& frame, const Tensor& alpha, const Tensor& beta,
                       const Tensor& omega) {
    check_4d(frame, "warp");
    check_4d(alpha, "warp");
    check(alpha.same_shape(beta) && alpha.same_shape(omega), "shape",
          "warp flow components must share shape");
    check(alpha.dim(0) == frame.dim(0) && alpha.dim(2) == frame.dim(2) && alpha.dim(3) == frame.dim(3),
          "shape",
          "warp flow extents " + shape_str(alpha.shape()) + " do not match frame " +
              shape_str(frame.shape()));
    check(frame.dtype() == alpha.dtype() && frame.dtype() == beta.dtype() &&
              frame.dtype() == omega.dtype(),
          "dtype", "warp operands must share dtype");
}

template <typename T>
struct TapCoeffs {
    int64_t x0, x1, y0, y1;
    T fx, fy;
    bool in_x, in_y;  // raw coordinate strictly inside (clamp inactive)
};

template <typename T>
TapCoeffs<T> tap_at(T sx, T sy, int64_t H, int64_t W) {
    TapCoeffs<T> t;
    t.in_x = sx >= 0 && sx <= static_cast<T>(W - 1);
    t.in_y = sy >= 0 && sy <= static_cast<T>(H - 1);
    T cx = std::min(static_cast<T>(W - 1), std::max(T(0), sx));
    T cy = std::min(static_cast<T>(H - 1), std::max(T(0), sy));
    t.x0 = std::min<int64_t>(static_cast<int64_t>(cx), W - 1);
    t.y0 = std::min<int64_t>(static_cast<int64_t>(cy), H - 1);
    t.x1 = std::min(t.x0 + 1, W - 1);
    t.y1 = std::min(t.y0 + 1, H - 1);
    t.fx = cx - static_cast<T>(t.x0);
    t.fy = cy - static_cast<T>(t.y0);
    return t;
}

template <typename T>
Tensor warp_impl(const Tensor& frame, const Tensor& alpha, const Tensor& beta, const Tensor& omega) {
    int64_t B = frame.dim(0), C = frame.dim(1), H = frame.dim(2), W = frame.dim(3);
    int64_t M = alpha.dim(1);
    Tensor out = Tensor::zeros(frame.shape(), frame.dtype());
    const T* fr = frame.data<T>();
    const T* pa = alpha.data<T>();
    const T* pb = beta.data<T>();
    const T* pw = omega.data<T>();
    T* po = out.mut_data<T>();
    parallel_for(B * H, 8, [&](int64_t r0, int64_t r1) {
        std::vector<T> acc(static_cast<size_t>(C));
        for (int64_t r = r0; r < r1; ++r) {
            int64_t b = r / H, y = r % H;
            for (int64_t x = 0; x < W; ++x) {
                std::fill(acc.begin(), acc.end(), T(0));
                for (int64_t k = 0; k < M; ++k) {
                    int64_t fi = ((b * M + k) * H + y) * W + x;
                    T sx = static_cast<T>(x) + pa[fi];
                    T sy = static_cast<T>(y) + pb[fi];
                    T w = pw[fi];
                    TapCoeffs<T> t = tap_at(sx, sy, H, W);
                    for (int64_t c = 0; c < C; ++c) {
                        const T* plane = fr + (b * C + c) * H * W;
                        T v00 = plane[t.y0 * W + t.x0];
                        T v01 = plane[t.y0 * W + t.x1];
                        T v10 = plane[t.y1 * W + t.x0];
                        T v11 = plane[t.y1 * W + t.x1];
                        T top = v00 + t.fx * (v01 - v00);
                        T bot = v10 + t.fx * (v11 - v10);
                        acc[static_cast<size_t>(c)] += w * (top + t.fy * (bot - top));
                    }
                }
                for (int64_t c = 0; c < C; ++c) po[((b * C + c) * H + y) * W + x] = acc[static_cast<size_t>(c)];
            }
        }
    });
    return out;
}

template <typename T>
WarpGrads warp_backward_impl(const Tensor& grad_out, const Tensor& frame, const Tensor& alpha,
                             const Tensor& beta, const Tensor& omega,
                             bool need_frame, bool need_alpha, bool need_beta, bool need_omega) {
    int64_t B = frame.dim(0), C = frame.dim(1), H = frame.dim(2), W = frame.dim(3);
    int64_t M = alpha.dim(1);
    WarpGrads g;
    const T* go = grad_out.data<T>();
    const T* fr = frame.data<T>();
    const T* pa = alpha.data<T>();
    const T* pb = beta.data<T>();
    const T* pw = omega.data<T>();

    if (need_alpha) g.alpha = Tensor::zeros(alpha.shape(), alpha.dtype());
    if (need_beta) g.beta = Tensor::zeros(beta.shape(), beta.dtype());
    if (need_omega) g.omega = Tensor::zeros(omega.shape(), omega.dtype());

    if (need_alpha || need_beta || need_omega) {
        T* ga = need_alpha ? g.alpha.mut_data<T>() : nullptr;
        T* gb = need_beta ? g.beta.mut_data<T>() : nullptr;
        T* gw = need_omega ? g.omega.mut_data<T>() : nullptr;
        parallel_for(B * H, 8, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
                int64_t b = r / H, y = r % H;
                for (int64_t x = 0; x < W; ++x) {
                    for (int64_t k = 0; k < M; ++k) {
                        int64_t fi = ((b * M + k) * H + y) * W + x;
                        T sx = static_cast<T>(x) + pa[fi];
                        T sy = static_cast<T>(y) + pb[fi];
                        T w = pw[fi];
                        TapCoeffs<T> t = tap_at(sx, sy, H, W);
                        T da = 0, db = 0, dw = 0;
                        for (int64_t c = 0; c < C; ++c) {
                            const T* plane = fr + (b * C + c) * H * W;
                            T v00 = plane[t.y0 * W + t.x0];
                            T v01 = plane[t.y0 * W + t.x1];
                            T v10 = plane[t.y1 * W + t.x0];
                            T v11 = plane[t.y1 * W + t.x1];
                            T gc = go[((b * C + c) * H + y) * W + x];
                            T top = v00 + t.fx * (v01 - v00);
                            T bot = v10 + t.fx * (v11 - v10);
                            dw += gc * (top + t.fy * (bot - top));
                            T dx = (1 - t.fy) * (v01 - v00) + t.fy * (v11 - v10);
                            T dy = (1 - t.fx) * (v10 - v00) + t.fx * (v11 - v01);
                            da += gc * w * dx;
                            db += gc * w * dy;
                        }
                        if (ga) ga[fi] = t.in_x ? da : T(0);
                        if (gb) gb[fi] = t.in_y ? db : T(0);
                        if (gw) gw[fi] = dw;
                    }
                }
            }
        });
    }

    if (need_frame) {
        g.frame = Tensor::zeros(frame.shape(), frame.dtype());
        T* gf = g.frame.mut_data<T>();
        // scatter; parallel over (b,c) planes so writes never collide
        parallel_for(B * C, 1, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                int64_t b = p / C;
                T* plane = gf + p * H * W;
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x = 0; x < W; ++x) {
                        T gc = go[(p * H + y) * W + x];
                        for (int64_t k = 0; k < M; ++k) {
                            int64_t fi = ((b * M + k) * H + y) * W + x;
                            T sx = static_cast<T>(x) + pa[fi];
                            T sy = static_cast<T>(y) + pb[fi];
                            T w = pw[fi];
                            TapCoeffs<T> t = tap_at(sx, sy, H, W);
                            T gv = gc * w;
                            plane[t.y0 * W + t.x0] += gv * (1 - t.fy) * (1 - t.fx);
                            plane[t.y0 * W + t.x1] += gv * (1 - t.fy) * t.fx;
                            plane[t.y1 * W + t.x0] += gv * t.fy * (1 - t.fx);
                            plane[t.y1 * W + t.x1] += gv * t.fy * t.fx;
                        }
                    }
            }
        });
    }
    return g;
}

}  // namespace

Tensor warp(const Tensor& frame, const Tensor& alpha, const Tensor& beta, const Tensor& omega) {
    check_flow_shapes(frame, alpha, beta, omega);
    if (frame.dtype() == DType::f32) return warp_impl<float>(frame, alpha, beta, omega);
    return warp_impl<double>(frame, alpha, beta, omega);
}

WarpGrads warp_backward(const Tensor& grad_out, const Tensor& frame, const Tensor& alpha,
                        const Tensor& beta, const Tensor& omega,
                        bool need_frame, bool need_alpha, bool need_beta, bool need_omega) {
    check_flow_shapes(frame, alpha, beta, omega);
    check(grad_out.same_shape(frame), "shape", "warp_backward grad shape mismatch");
    if (frame.dtype() == DType::f32)
        return warp_backward_impl<float>(grad_out, frame, alpha, beta, omega, need_frame,
                                         need_alpha, need_beta, need_omega);
    return warp_backward_impl<double>(grad_out, frame, alpha, beta, omega, need_frame,
                                      need_alpha, need_beta, need_omega);
}

namespace {

void check_fuse_shapes(const std::array<Tensor, 4>& cands, const Tensor& vis) {
    check_4d(cands[0], "fuse");
    for (const Tensor& c : cands) {
        check(c.same_shape(cands[0]), "shape", "fuse candidates must share shape");
        check(c.dtype() == cands[0].dtype(), "dtype", "fuse dtype mismatch");
    }
    check(vis.rank() == 4 && vis.dim(1) == 4, "shape",
          "fuse visibility must be [B,4,H,W], got " + shape_str(vis.shape()));
    check(vis.dim(0) == cands[0].dim(0) && vis.dim(2) == cands[0].dim(2) &&
              vis.dim(3) == cands[0].dim(3),
          "shape", "fuse visibility extents do not match candidates");
    check(vis.dtype() == cands[0].dtype(), "dtype", "fuse dtype mismatch");
}

}  // namespace

Tensor fuse(const std::array<Tensor, 4>& candidates, const Tensor& visibility) {
    check_fuse_shapes(candidates, visibility);
    const Tensor& c0 = candidates[0];
    int64_t B = c0.dim(0), C = c0.dim(1), H = c0.dim(2), W = c0.dim(3);
    Tensor out = Tensor::zeros(c0.shape(), c0.dtype());
    dispatch(c0.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* po = out.mut_data<T>();
        const T* pv = visibility.data<T>();
        std::array<const T*, 4> pc;
        for (size_t n = 0; n < 4; ++n) pc[n] = candidates[n].data<T>();
        int64_t HW = H * W;
        parallel_for(B * C, 2, [&](int64_t p0, int64_t p1) {
            for (int64_t p = p0; p < p1; ++p) {
                int64_t b = p / C;
                T* o = po + p * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    T acc = 0;
                    for (int64_t n = 0; n < 4; ++n)
                        acc += pv[(b * 4 + n) * HW + i] * pc[static_cast<size_t>(n)][p * HW + i];
                    o[i] = acc;
                }
            }
        });
    });
    return out;
}

FuseGrads fuse_backward(const Tensor& grad_out, const std::array<Tensor, 4>& candidates,
                        const Tensor& visibility, bool need_candidates, bool need_visibility) {
    check_fuse_shapes(candidates, visibility);
    const Tensor& c0 = candidates[0];
    int64_t B = c0.dim(0), C = c0.dim(1), H = c0.dim(2), W = c0.dim(3);
    int64_t HW = H * W;
    FuseGrads g;
    dispatch(c0.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* go = grad_out.data<T>();
        const T* pv = visibility.data<T>();
        if (need_candidates) {
            for (size_t n = 0; n < 4; ++n) {
                g.candidates[n] = Tensor::zeros(c0.shape(), c0.dtype());
                T* gc = g.candidates[n].mut_data<T>();
                for (int64_t p = 0; p < B * C; ++p) {
                    int64_t b = p / C;
                    for (int64_t i = 0; i < HW; ++i)
                        gc[p * HW + i] = go[p * HW + i] * pv[(b * 4 + static_cast<int64_t>(n)) * HW + i];
                }
            }
        }
        if (need_visibility) {
            g.visibility = Tensor::zeros(visibility.shape(), visibility.dtype());
            T* gv = g.visibility.mut_data<T>();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t n = 0; n < 4; ++n) {
                    T* dst = gv + (b * 4 + n) * HW;
                    const T* pc = candidates[static_cast<size_t>(n)].data<T>();
                    for (int64_t c = 0; c < C; ++c) {
                        const T* gp = go + ((b * C + c)) * HW;
                        const T* cp = pc + (b * C + c) * HW;
                        for (int64_t i = 0; i < HW; ++i) dst[i] += gp[i] * cp[i];
                    }
                }
        }
    });
    return g;
}

}  // namespace mfv::ops

#include "mfv/autograd.hpp"

#include <algorithm>

namespace mfv::ad {

namespace {

Tape& tape_of(Var v) {
    check(v.defined(), "graph", "use of an undefined tape variable");
    return *v.tape;
}

void same_tape(Var a, Var b) {
    check(a.tape == b.tape, "graph", "operands recorded on different tapes");
}

}  // namespace

const Tensor& Gradients::at(Var leaf) const {
    auto it = by_leaf.find(leaf.id);
    check(it != by_leaf.end(), "graph", "no gradient recorded for this leaf");
    return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.rg = requires_grad;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::emit(Tensor value, bool requires_grad, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.rg = requires_grad;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
    check(v.tape == this && v.id >= 0 && v.id < static_cast<int32_t>(nodes_.size()), "graph",
          "variable does not belong to this tape");
    return nodes_[static_cast<size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const {
    return nodes_[static_cast<size_t>(v.id)].rg;
}

void Tape::accum(int32_t id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.rg) return;
    if (!n.grad.defined())
        n.grad = g;
    else
        n.grad = ops::add(n.grad, g);
}

const Tensor& Tape::grad(int32_t id) const {
    return nodes_[static_cast<size_t>(id)].grad;
}

Gradients Tape::backward(Var scalar_output) {
    check(scalar_output.tape == this, "graph", "output does not belong to this tape");
    check(!backward_done_, "graph", "backward already ran on this tape");
    const Tensor& out = value(scalar_output);
    check(out.numel() == 1, "shape",
          "backward requires a scalar output, got " + shape_str(out.shape()));
    backward_done_ = true;

    nodes_[static_cast<size_t>(scalar_output.id)].grad = Tensor::full({1}, 1.0, out.dtype());
    for (int32_t id = scalar_output.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad.defined() || !n.back) continue;
        n.back(*this, n.grad);
        n.back = nullptr;
    }

    Gradients g;
    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (!n.is_leaf || !n.rg) continue;
        g.by_leaf[static_cast<int32_t>(i)] =
            n.grad.defined() ? n.grad : Tensor::zeros(n.value.shape(), n.value.dtype());
    }
    return g;
}

// ---------------------------------------------------------------------------

Var conv2d(Var input, Var kernel, Var bias, ops::Stride2 stride, ops::Pad2 pad) {
    same_tape(input, kernel);
    same_tape(input, bias);
    Tape& t = tape_of(input);
    Tensor out = ops::conv2d(t.value(input), t.value(kernel), t.value(bias), stride, pad);
    bool rg = t.requires_grad(input) || t.requires_grad(kernel) || t.requires_grad(bias);
    int32_t xi = input.id, ki = kernel.id, bi = bias.id;
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        bool ni = tp.requires_grad(Var{&tp, xi});
        bool nk = tp.requires_grad(Var{&tp, ki});
        bool nb = tp.requires_grad(Var{&tp, bi});
        auto grads = ops::conv2d_backward(g, tp.value(Var{&tp, xi}), tp.value(Var{&tp, ki}),
                                          stride, pad, ni, nk, nb);
        if (ni) tp.accum(xi, grads.input);
        if (nk) tp.accum(ki, grads.kernel);
        if (nb) tp.accum(bi, grads.bias);
    });
}

Var conv3d(Var input, Var kernel, Var bias, ops::Stride3 stride, ops::Pad3 pad) {
    same_tape(input, kernel);
    same_tape(input, bias);
    Tape& t = tape_of(input);
    Tensor out = ops::conv3d(t.value(input), t.value(kernel), t.value(bias), stride, pad);
    bool rg = t.requires_grad(input) || t.requires_grad(kernel) || t.requires_grad(bias);
    int32_t xi = input.id, ki = kernel.id, bi = bias.id;
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        bool ni = tp.requires_grad(Var{&tp, xi});
        bool nk = tp.requires_grad(Var{&tp, ki});
        bool nb = tp.requires_grad(Var{&tp, bi});
        auto grads = ops::conv3d_backward(g, tp.value(Var{&tp, xi}), tp.value(Var{&tp, ki}),
                                          stride, pad, ni, nk, nb);
        if (ni) tp.accum(xi, grads.input);
        if (nk) tp.accum(ki, grads.kernel);
        if (nb) tp.accum(bi, grads.bias);
    });
}

Var bilinear_resize(Var x, int64_t out_h, int64_t out_w) {
    Tape& t = tape_of(x);
    Tensor out = ops::bilinear_resize(t.value(x), out_h, out_w);
    int32_t xi = x.id;
    Shape in_shape = t.value(x).shape();
    return t.emit(std::move(out), t.requires_grad(x), [=](Tape& tp, const Tensor& g) {
        tp.accum(xi, ops::bilinear_resize_backward(g, in_shape));
    });
}

Var avg_pool2(Var x) {
    Tape& t = tape_of(x);
    Tensor out = ops::avg_pool2(t.value(x));
    int32_t xi = x.id;
    Shape in_shape = t.value(x).shape();
    return t.emit(std::move(out), t.requires_grad(x), [=](Tape& tp, const Tensor& g) {
        tp.accum(xi, ops::avg_pool2_backward(g, in_shape));
    });
}

Var gauss_blur5(Var x) {
    Tape& t = tape_of(x);
    Tensor out = ops::gauss_blur5(t.value(x));
    int32_t xi = x.id;
    return t.emit(std::move(out), t.requires_grad(x), [=](Tape& tp, const Tensor& g) {
        tp.accum(xi, ops::gauss_blur5_backward(g));
    });
}

Var downsample2(Var x) {
    Tape& t = tape_of(x);
    Tensor out = ops::downsample2(t.value(x));
    int32_t xi = x.id;
    Shape in_shape = t.value(x).shape();
    return t.emit(std::move(out), t.requires_grad(x), [=](Tape& tp, const Tensor& g) {
        tp.accum(xi, ops::downsample2_backward(g, in_shape));
    });
}

Var softmax_axis(Var x, int axis) {
    Tape& t = tape_of(x);
    Tensor y = ops::softmax_axis(t.value(x), axis);
    int32_t xi = x.id;
    Tensor ycap = y;  // output value, needed by the backward formula
    return t.emit(std::move(y), t.requires_grad(x), [=](Tape& tp, const Tensor& g) {
        tp.accum(xi, ops::softmax_axis_backward(g, ycap, axis));
    });
}

Var instance_norm(Var x, double eps) {
    Tape& t = tape_of(x);
    Tensor out = ops::instance_norm(t.value(x), eps);
    int32_t xi = x.id;
    return t.emit(std::move(out), t.requires_grad(x), [=](Tape& tp, const Tensor& g) {
        tp.accum(xi, ops::instance_norm_backward(g, tp.value(Var{&tp, xi}), eps));
    });
}

Var prelu(Var x, Var slope) {
    same_tape(x, slope);
    Tape& t = tape_of(x);
    Tensor out = ops::prelu(t.value(x), t.value(slope));
    bool rg = t.requires_grad(x) || t.requires_grad(slope);
    int32_t xi = x.id, si = slope.id;
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        bool ni = tp.requires_grad(Var{&tp, xi});
        bool ns = tp.requires_grad(Var{&tp, si});
        auto grads = ops::prelu_backward(g, tp.value(Var{&tp, xi}), tp.value(Var{&tp, si}), ni, ns);
        if (ni) tp.accum(xi, grads.input);
        if (ns) tp.accum(si, grads.slope);
    });
}

Var add(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    Tensor out = ops::add(t.value(a), t.value(b));
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    int32_t ai = a.id, bi = b.id;
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        tp.accum(ai, g);
        tp.accum(bi, g);
    });
}

Var sub(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    Tensor out = ops::sub(t.value(a), t.value(b));
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    int32_t ai = a.id, bi = b.id;
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        tp.accum(ai, g);
        if (tp.requires_grad(Var{&tp, bi})) tp.accum(bi, ops::mul_scalar(g, -1.0));
    });
}

Var mul(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    Tensor out = ops::mul(t.value(a), t.value(b));
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    int32_t ai = a.id, bi = b.id;
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(Var{&tp, ai})) tp.accum(ai, ops::mul(g, tp.value(Var{&tp, bi})));
        if (tp.requires_grad(Var{&tp, bi})) tp.accum(bi, ops::mul(g, tp.value(Var{&tp, ai})));
    });
}

Var add_scalar(Var a, double s) {
    Tape& t = tape_of(a);
    int32_t ai = a.id;
    return t.emit(ops::add_scalar(t.value(a), s), t.requires_grad(a),
                  [=](Tape& tp, const Tensor& g) { tp.accum(ai, g); });
}

Var mul_scalar(Var a, double s) {
    Tape& t = tape_of(a);
    int32_t ai = a.id;
    return t.emit(ops::mul_scalar(t.value(a), s), t.requires_grad(a),
                  [=](Tape& tp, const Tensor& g) { tp.accum(ai, ops::mul_scalar(g, s)); });
}

namespace {

// g * sign(x), zero where x == 0
Tensor sign_mul(const Tensor& g, const Tensor& x) {
    Tensor out = Tensor::zeros(g.shape(), g.dtype());
    if (g.dtype() == DType::f32) {
        const float* pg = g.f32();
        const float* px = x.f32();
        float* po = out.mut_f32();
        for (int64_t i = 0; i < g.numel(); ++i)
            po[i] = px[i] > 0 ? pg[i] : (px[i] < 0 ? -pg[i] : 0.0f);
    } else {
        const double* pg = g.f64();
        const double* px = x.f64();
        double* po = out.mut_f64();
        for (int64_t i = 0; i < g.numel(); ++i)
            po[i] = px[i] > 0 ? pg[i] : (px[i] < 0 ? -pg[i] : 0.0);
    }
    return out;
}

// g * 0.5 / y  (y = sqrt(x) output)
Tensor half_div(const Tensor& g, const Tensor& y) {
    Tensor out = Tensor::zeros(g.shape(), g.dtype());
    if (g.dtype() == DType::f32) {
        const float* pg = g.f32();
        const float* py = y.f32();
        float* po = out.mut_f32();
        for (int64_t i = 0; i < g.numel(); ++i) po[i] = 0.5f * pg[i] / py[i];
    } else {
        const double* pg = g.f64();
        const double* py = y.f64();
        double* po = out.mut_f64();
        for (int64_t i = 0; i < g.numel(); ++i) po[i] = 0.5 * pg[i] / py[i];
    }
    return out;
}

}  // namespace

Var abs_(Var a) {
    Tape& t = tape_of(a);
    int32_t ai = a.id;
    return t.emit(ops::abs_(t.value(a)), t.requires_grad(a), [=](Tape& tp, const Tensor& g) {
        tp.accum(ai, sign_mul(g, tp.value(Var{&tp, ai})));
    });
}

Var sqrt_(Var a) {
    Tape& t = tape_of(a);
    Tensor y = ops::sqrt_(t.value(a));
    int32_t ai = a.id;
    Tensor ycap = y;
    return t.emit(std::move(y), t.requires_grad(a), [=](Tape& tp, const Tensor& g) {
        tp.accum(ai, half_div(g, ycap));
    });
}

Var sum_all(Var a) {
    Tape& t = tape_of(a);
    int32_t ai = a.id;
    Shape in_shape = t.value(a).shape();
    return t.emit(ops::sum_all(t.value(a)), t.requires_grad(a), [=](Tape& tp, const Tensor& g) {
        tp.accum(ai, Tensor::full(in_shape, g.scalar(), g.dtype()));
    });
}

Var mean_all(Var a) {
    Tape& t = tape_of(a);
    int32_t ai = a.id;
    Shape in_shape = t.value(a).shape();
    double inv = 1.0 / static_cast<double>(t.value(a).numel());
    return t.emit(ops::mean_all(t.value(a)), t.requires_grad(a), [=](Tape& tp, const Tensor& g) {
        tp.accum(ai, Tensor::full(in_shape, g.scalar() * inv, g.dtype()));
    });
}

Var concat_axis1(const std::vector<Var>& parts) {
    check(!parts.empty(), "graph", "concat of zero vars");
    Tape& t = tape_of(parts[0]);
    std::vector<Tensor> vals;
    std::vector<int32_t> ids;
    std::vector<int64_t> widths;
    bool rg = false;
    for (Var p : parts) {
        same_tape(parts[0], p);
        vals.push_back(t.value(p));
        ids.push_back(p.id);
        widths.push_back(t.value(p).dim(1));
        rg = rg || t.requires_grad(p);
    }
    Tensor out = ops::concat_axis1(vals);
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        int64_t off = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (tp.requires_grad(Var{&tp, ids[i]}))
                tp.accum(ids[i], ops::slice_axis1(g, off, widths[i]));
            off += widths[i];
        }
    });
}

namespace {

// place g into a zero tensor of in_shape at channel offset `begin`
Tensor unslice_axis1(const Tensor& g, const Shape& in_shape, int64_t begin) {
    Tensor out = Tensor::zeros(in_shape, g.dtype());
    int64_t B = in_shape[0], C = in_shape[1], count = g.dim(1);
    int64_t inner = out.numel() / (B * C);
    if (g.dtype() == DType::f32) {
        const float* pg = g.f32();
        float* po = out.mut_f32();
        for (int64_t b = 0; b < B; ++b)
            std::copy(pg + b * count * inner, pg + (b + 1) * count * inner,
                      po + (b * C + begin) * inner);
    } else {
        const double* pg = g.f64();
        double* po = out.mut_f64();
        for (int64_t b = 0; b < B; ++b)
            std::copy(pg + b * count * inner, pg + (b + 1) * count * inner,
                      po + (b * C + begin) * inner);
    }
    return out;
}

}  // namespace

Var slice_axis1(Var x, int64_t begin, int64_t count) {
    Tape& t = tape_of(x);
    int32_t xi = x.id;
    Shape in_shape = t.value(x).shape();
    return t.emit(ops::slice_axis1(t.value(x), begin, count), t.requires_grad(x),
                  [=](Tape& tp, const Tensor& g) { tp.accum(xi, unslice_axis1(g, in_shape, begin)); });
}

Var reshape(Var x, Shape new_shape) {
    Tape& t = tape_of(x);
    int32_t xi = x.id;
    Shape in_shape = t.value(x).shape();
    return t.emit(t.value(x).reshape(new_shape), t.requires_grad(x),
                  [=](Tape& tp, const Tensor& g) { tp.accum(xi, g.reshape(in_shape)); });
}

Var stack_time(const std::array<Var, 4>& frames) {
    Tape& t = tape_of(frames[0]);
    std::array<Tensor, 4> vals;
    std::array<int32_t, 4> ids;
    bool rg = false;
    for (size_t n = 0; n < 4; ++n) {
        same_tape(frames[0], frames[n]);
        vals[n] = t.value(frames[n]);
        ids[n] = frames[n].id;
        rg = rg || t.requires_grad(frames[n]);
    }
    return t.emit(ops::stack_time(vals), rg, [=](Tape& tp, const Tensor& g) {
        std::array<Tensor, 4> gs = ops::unstack_time(g);
        for (size_t n = 0; n < 4; ++n)
            if (tp.requires_grad(Var{&tp, ids[n]})) tp.accum(ids[n], gs[n]);
    });
}

Var warp(Var frame, Var alpha, Var beta, Var omega) {
    same_tape(frame, alpha);
    same_tape(frame, beta);
    same_tape(frame, omega);
    Tape& t = tape_of(frame);
    Tensor out = ops::warp(t.value(frame), t.value(alpha), t.value(beta), t.value(omega));
    bool rg = t.requires_grad(frame) || t.requires_grad(alpha) || t.requires_grad(beta) ||
              t.requires_grad(omega);
    int32_t fi = frame.id, ai = alpha.id, bi = beta.id, wi = omega.id;
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        bool nf = tp.requires_grad(Var{&tp, fi});
        bool na = tp.requires_grad(Var{&tp, ai});
        bool nb = tp.requires_grad(Var{&tp, bi});
        bool nw = tp.requires_grad(Var{&tp, wi});
        auto grads = ops::warp_backward(g, tp.value(Var{&tp, fi}), tp.value(Var{&tp, ai}),
                                        tp.value(Var{&tp, bi}), tp.value(Var{&tp, wi}), nf, na, nb, nw);
        if (nf) tp.accum(fi, grads.frame);
        if (na) tp.accum(ai, grads.alpha);
        if (nb) tp.accum(bi, grads.beta);
        if (nw) tp.accum(wi, grads.omega);
    });
}

Var fuse(const std::array<Var, 4>& candidates, Var visibility) {
    Tape& t = tape_of(candidates[0]);
    same_tape(candidates[0], visibility);
    std::array<Tensor, 4> vals;
    std::array<int32_t, 4> ids;
    bool rg = t.requires_grad(visibility);
    for (size_t n = 0; n < 4; ++n) {
        same_tape(candidates[0], candidates[n]);
        vals[n] = t.value(candidates[n]);
        ids[n] = candidates[n].id;
        rg = rg || t.requires_grad(candidates[n]);
    }
    int32_t vi = visibility.id;
    Tensor out = ops::fuse(vals, t.value(visibility));
    return t.emit(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
        bool nc = false;
        for (size_t n = 0; n < 4; ++n) nc = nc || tp.requires_grad(Var{&tp, ids[n]});
        bool nv = tp.requires_grad(Var{&tp, vi});
        std::array<Tensor, 4> cvals;
        for (size_t n = 0; n < 4; ++n) cvals[n] = tp.value(Var{&tp, ids[n]});
        auto grads = ops::fuse_backward(g, cvals, tp.value(Var{&tp, vi}), nc, nv);
        if (nc)
            for (size_t n = 0; n < 4; ++n)
                if (tp.requires_grad(Var{&tp, ids[n]})) tp.accum(ids[n], grads.candidates[n]);
        if (nv) tp.accum(vi, grads.visibility);
    });
}

Var charbonnier(Var x, double eps) {
    Var sq = mul(x, x);
    return sqrt_(add_scalar(sq, eps * eps));
}

}  // namespace mfv::ad

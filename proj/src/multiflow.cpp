#include "mfv/multiflow.hpp"

namespace mfv::mf {

Tensor warp(const Tensor& frame, const MultiFlow& flow) {
    return ops::warp(frame, flow.alpha, flow.beta, flow.omega);
}

Tensor fuse(const std::array<Tensor, 4>& candidates, const VisibilitySet& visibility) {
    return ops::fuse(candidates, visibility.v);
}

namespace {

void check_head_shapes(const Shape& a, const Shape& b, const Shape& w, const Shape& v) {
    check(a.size() == 4 && a == b && a == w, "shape",
          "normalize_heads: alpha/beta/omega logits must share a [B,4M,H,W] shape");
    check(a[1] % 4 == 0, "shape", "normalize_heads: packed channel count must be 4*M");
    check(v.size() == 4 && v[1] == 4 && v[0] == a[0] && v[2] == a[2] && v[3] == a[3], "shape",
          "normalize_heads: visibility logits must be [B,4,H,W]");
}

}  // namespace

LevelFlows normalize_heads(const Tensor& raw_alpha, const Tensor& raw_beta,
                           const Tensor& omega_logits, const Tensor& visibility_logits, int level) {
    check_head_shapes(raw_alpha.shape(), raw_beta.shape(), omega_logits.shape(),
                      visibility_logits.shape());
    int64_t m = raw_alpha.dim(1) / 4;
    LevelFlows out;
    out.level = level;
    for (int64_t n = 0; n < 4; ++n) {
        MultiFlow& f = out.flows[static_cast<size_t>(n)];
        f.alpha = ops::slice_axis1(raw_alpha, n * m, m);
        f.beta = ops::slice_axis1(raw_beta, n * m, m);
        f.omega = ops::softmax_axis(ops::slice_axis1(omega_logits, n * m, m), 1);
    }
    out.visibility.v = ops::softmax_axis(visibility_logits, 1);
    return out;
}

LevelFlowsVar normalize_heads(ad::Var raw_alpha, ad::Var raw_beta, ad::Var omega_logits,
                              ad::Var visibility_logits, int level) {
    ad::Tape& t = *raw_alpha.tape;
    check_head_shapes(t.value(raw_alpha).shape(), t.value(raw_beta).shape(),
                      t.value(omega_logits).shape(), t.value(visibility_logits).shape());
    int64_t m = t.value(raw_alpha).dim(1) / 4;
    LevelFlowsVar out;
    out.level = level;
    for (int64_t n = 0; n < 4; ++n) {
        MultiFlowVar& f = out.flows[static_cast<size_t>(n)];
        f.alpha = ad::slice_axis1(raw_alpha, n * m, m);
        f.beta = ad::slice_axis1(raw_beta, n * m, m);
        f.omega = ad::softmax_axis(ad::slice_axis1(omega_logits, n * m, m), 1);
    }
    out.visibility = ad::softmax_axis(visibility_logits, 1);
    return out;
}

LevelFlows upsample_level_flows(const LevelFlows& flows) {
    LevelFlows out;
    out.level = flows.level - 1;
    for (size_t n = 0; n < 4; ++n) {
        const MultiFlow& f = flows.flows[n];
        int64_t h2 = f.alpha.dim(2) * 2, w2 = f.alpha.dim(3) * 2;
        out.flows[n].alpha = ops::mul_scalar(ops::bilinear_resize(f.alpha, h2, w2), 2.0);
        out.flows[n].beta = ops::mul_scalar(ops::bilinear_resize(f.beta, h2, w2), 2.0);
        out.flows[n].omega = ops::bilinear_resize(f.omega, h2, w2);
    }
    int64_t h2 = flows.visibility.v.dim(2) * 2, w2 = flows.visibility.v.dim(3) * 2;
    out.visibility.v = ops::bilinear_resize(flows.visibility.v, h2, w2);
    return out;
}

LevelFlowsVar upsample_level_flows(const LevelFlowsVar& flows, ad::Tape& tape) {
    LevelFlowsVar out;
    out.level = flows.level - 1;
    for (size_t n = 0; n < 4; ++n) {
        const MultiFlowVar& f = flows.flows[n];
        int64_t h2 = tape.value(f.alpha).dim(2) * 2, w2 = tape.value(f.alpha).dim(3) * 2;
        out.flows[n].alpha = ad::mul_scalar(ad::bilinear_resize(f.alpha, h2, w2), 2.0);
        out.flows[n].beta = ad::mul_scalar(ad::bilinear_resize(f.beta, h2, w2), 2.0);
        out.flows[n].omega = ad::bilinear_resize(f.omega, h2, w2);
    }
    int64_t h2 = tape.value(flows.visibility).dim(2) * 2;
    int64_t w2 = tape.value(flows.visibility).dim(3) * 2;
    out.visibility = ad::bilinear_resize(flows.visibility, h2, w2);
    return out;
}

LevelFlowsVar zero_level_flows(ad::Tape& tape, int64_t batch, int64_t m, int64_t h, int64_t w,
                               int level, DType dt) {
    LevelFlowsVar out;
    out.level = level;
    Tensor zero = Tensor::zeros({batch, m, h, w}, dt);
    Tensor uniform_w = Tensor::full({batch, m, h, w}, 1.0 / static_cast<double>(m), dt);
    for (size_t n = 0; n < 4; ++n) {
        out.flows[n].alpha = tape.leaf(zero, false);
        out.flows[n].beta = tape.leaf(zero, false);
        out.flows[n].omega = tape.leaf(uniform_w, false);
    }
    out.visibility = tape.leaf(Tensor::full({batch, 4, h, w}, 0.25, dt), false);
    return out;
}

LevelFlows materialize(const LevelFlowsVar& vars, const ad::Tape& tape) {
    LevelFlows out;
    out.level = vars.level;
    for (size_t n = 0; n < 4; ++n) {
        out.flows[n].alpha = tape.value(vars.flows[n].alpha);
        out.flows[n].beta = tape.value(vars.flows[n].beta);
        out.flows[n].omega = tape.value(vars.flows[n].omega);
    }
    out.visibility.v = tape.value(vars.visibility);
    return out;
}

namespace {

void check_convex_sums(const Tensor& t, double tol, const char* what) {
    // t: [B,K,H,W], sums over axis 1 must be 1 and entries in [0,1]
    int64_t B = t.dim(0), K = t.dim(1), HW = t.dim(2) * t.dim(3);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < HW; ++i) {
            double s = 0;
            for (int64_t k = 0; k < K; ++k) {
                double v = t.at((b * K + k) * HW + i);
                check(v >= -tol && v <= 1 + tol, "invariant",
                      std::string(what) + " weight outside [0,1]");
                s += v;
            }
            check(std::abs(s - 1.0) <= tol, "invariant",
                  std::string(what) + " weights do not sum to 1 (got " + std::to_string(s) + ")");
        }
}

}  // namespace

void validate(const MultiFlow& f, double tol) {
    check(f.alpha.same_shape(f.beta) && f.alpha.same_shape(f.omega), "invariant",
          "multi-flow components must share shape");
    check_convex_sums(f.omega, tol, "omega");
}

void validate(const LevelFlows& f, double tol) {
    for (const MultiFlow& mfl : f.flows) validate(mfl, tol);
    check_convex_sums(f.visibility.v, tol, "visibility");
}

}  // namespace mfv::mf

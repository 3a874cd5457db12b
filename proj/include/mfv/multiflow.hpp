#pragma once

#include <array>

#include "mfv/autograd.hpp"
#include "mfv/tensor.hpp"

namespace mfv::mf {

// Per-pixel flow bundle towards one input frame: M offset vectors and an
// M-sized convex weighting kernel.
struct MultiFlow {
    Tensor alpha;  // [B,M,H,W] horizontal offsets, pixels
    Tensor beta;   // [B,M,H,W] vertical offsets, pixels
    Tensor omega;  // [B,M,H,W] kernel weights, sum to 1 over M
};

// Four per-pixel visibility maps blending the warped candidates; sums to 1
// over the frame axis.
struct VisibilitySet {
    Tensor v;  // [B,4,H,W]
};

struct LevelFlows {
    std::array<MultiFlow, 4> flows;  // one per input frame
    VisibilitySet visibility;
    int level = 0;
};

struct MultiFlowVar {
    ad::Var alpha, beta, omega;
};

struct LevelFlowsVar {
    std::array<MultiFlowVar, 4> flows;
    ad::Var visibility;
    int level = 0;
};

Tensor warp(const Tensor& frame, const MultiFlow& flow);
Tensor fuse(const std::array<Tensor, 4>& candidates, const VisibilitySet& visibility);

// omega <- softmax over the M axis, visibility <- softmax over the frame axis,
// alpha/beta pass through. Packed inputs: [B,4M,H,W] for alpha/beta/omega
// logits, [B,4,H,W] for visibility logits.
LevelFlows normalize_heads(const Tensor& raw_alpha, const Tensor& raw_beta,
                           const Tensor& omega_logits, const Tensor& visibility_logits, int level);
LevelFlowsVar normalize_heads(ad::Var raw_alpha, ad::Var raw_beta, ad::Var omega_logits,
                              ad::Var visibility_logits, int level);

// alpha/beta bilinearly upsampled x2 and doubled (pixel offsets scale with
// resolution); omega and visibility upsampled without rescaling; level - 1.
LevelFlows upsample_level_flows(const LevelFlows& flows);
LevelFlowsVar upsample_level_flows(const LevelFlowsVar& flows, ad::Tape& tape);

// zero offsets, uniform omega, uniform visibility
LevelFlowsVar zero_level_flows(ad::Tape& tape, int64_t batch, int64_t m, int64_t h, int64_t w,
                               int level, DType dt = DType::f32);

LevelFlows materialize(const LevelFlowsVar& vars, const ad::Tape& tape);

// invariant checks (omega/visibility convex and summing to 1 per pixel)
void validate(const MultiFlow& f, double tol = 1e-5);
void validate(const LevelFlows& f, double tol = 1e-5);

}  // namespace mfv::mf

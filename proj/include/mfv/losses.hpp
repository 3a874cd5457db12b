#pragma once

#include <vector>

#include "mfv/autograd.hpp"
#include "mfv/tensor.hpp"

namespace mfv {

inline constexpr double kCharbonnierEps = 0.001;
inline constexpr int kLapLossLevels = 5;

// Band-pass pyramid: band s (1-based) lives at H/2^(s-1); the final low-pass
// residual at H/2^levels. Reconstruction telescopes back to the source.
struct LaplacianPyramid {
    std::vector<Tensor> bands;
    Tensor residual;
};

LaplacianPyramid laplacian_pyramid(const Tensor& image, int levels);
Tensor laplacian_reconstruct(const LaplacianPyramid& pyr);

struct LossReport {
    double lap = 0;
    double charb = 0;
    double total = 0;
    double lambda = 0;
};

// sum_{s=1..5} 2^(s-1) * mean|L^s(output) - L^s(target)|
ad::Var loss_lap(ad::Var output, ad::Var target);

// sum_{l=1..L0} 2^l * mean(sqrt((fused_l - target_l)^2 + eps^2)), fused/targets
// ordered l = 1..L0; the empty list contributes 0.
ad::Var loss_charb(const std::vector<ad::Var>& fused, const std::vector<ad::Var>& targets);

ad::Var loss_total(ad::Var output, ad::Var target, const std::vector<ad::Var>& fused,
                   const std::vector<ad::Var>& targets, double lambda, LossReport* report = nullptr);

// value-only conveniences (build a private tape)
double loss_lap_value(const Tensor& output, const Tensor& target);
double loss_charb_value(const std::vector<Tensor>& fused, const std::vector<Tensor>& targets);
LossReport loss_total_value(const Tensor& output, const Tensor& target,
                            const std::vector<Tensor>& fused, const std::vector<Tensor>& targets,
                            double lambda);

}  // namespace mfv

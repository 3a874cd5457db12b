#pragma once

#include "mfv/tensor.hpp"

namespace mfv {

inline constexpr double kPsnrCapDb = 100.0;

// 10*log10(peak^2 / MSE); identical images return the 100 dB cap.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean SSIM over channels and 11x11 Gaussian windows (sigma 1.5),
// C1=(0.01*peak)^2, C2=(0.03*peak)^2. Requires H, W >= 11.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

}  // namespace mfv

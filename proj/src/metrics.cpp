#include "mfv/metrics.hpp"

#include <array>
#include <cmath>

namespace mfv {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    check(a.same_shape(b), "size-mismatch",
          "psnr shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double mse = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a.at(i) - b.at(i);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin * kWin> gaussian_window() {
    std::array<double, kWin * kWin> w{};
    const double sigma = 1.5;
    double sum = 0;
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
            double dy = y - (kWin - 1) / 2.0, dx = x - (kWin - 1) / 2.0;
            w[static_cast<size_t>(y * kWin + x)] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            sum += w[static_cast<size_t>(y * kWin + x)];
        }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
    check(a.same_shape(b), "size-mismatch",
          "ssim shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    check(a.rank() == 4, "shape", "ssim expects [B,C,H,W]");
    int64_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    check(H >= kWin && W >= kWin, "size-mismatch",
          "ssim needs images of at least " + std::to_string(kWin) + "x" + std::to_string(kWin));

    static const std::array<double, kWin * kWin> win = gaussian_window();
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double total = 0;
    int64_t count = 0;
    for (int64_t p = 0; p < B * C; ++p) {
        for (int64_t y = 0; y + kWin <= H; ++y) {
            for (int64_t x = 0; x + kWin <= W; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int wy = 0; wy < kWin; ++wy)
                    for (int wx = 0; wx < kWin; ++wx) {
                        double wgt = win[static_cast<size_t>(wy * kWin + wx)];
                        double va = a.at((p * H + y + wy) * W + x + wx);
                        double vb = b.at((p * H + y + wy) * W + x + wx);
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                double var_a = saa - ma * ma;
                double var_b = sbb - mb * mb;
                double cov = sab - ma * mb;
                double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                total += s;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace mfv

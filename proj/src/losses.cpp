#include "mfv/losses.hpp"

namespace mfv {

namespace {

void check_pyramid_divisibility(const Tensor& image, int levels) {
    check(image.rank() == 4, "shape", "laplacian pyramid expects [B,C,H,W]");
    int64_t div = int64_t(1) << levels;
    check(image.dim(2) % div == 0 && image.dim(3) % div == 0, "shape",
          "laplacian pyramid with " + std::to_string(levels) + " levels requires extents divisible by " +
              std::to_string(div) + ", got " + shape_str(image.shape()));
}

}  // namespace

LaplacianPyramid laplacian_pyramid(const Tensor& image, int levels) {
    check(levels >= 1, "shape", "laplacian pyramid needs at least one level");
    check_pyramid_divisibility(image, levels);
    LaplacianPyramid pyr;
    Tensor cur = image;
    for (int s = 0; s < levels; ++s) {
        Tensor down = ops::downsample2(ops::gauss_blur5(cur));
        Tensor up = ops::bilinear_resize(down, cur.dim(2), cur.dim(3));
        pyr.bands.push_back(ops::sub(cur, up));
        cur = down;
    }
    pyr.residual = cur;
    return pyr;
}

Tensor laplacian_reconstruct(const LaplacianPyramid& pyr) {
    Tensor cur = pyr.residual;
    for (size_t s = pyr.bands.size(); s-- > 0;) {
        const Tensor& band = pyr.bands[s];
        cur = ops::add(band, ops::bilinear_resize(cur, band.dim(2), band.dim(3)));
    }
    return cur;
}

ad::Var loss_lap(ad::Var output, ad::Var target) {
    ad::Tape& t = *output.tape;
    const Tensor& ov = t.value(output);
    check(ov.same_shape(t.value(target)), "shape",
          "loss_lap shape mismatch: " + shape_str(ov.shape()) + " vs " +
              shape_str(t.value(target).shape()));
    check_pyramid_divisibility(ov, kLapLossLevels);

    ad::Var a = output, b = target;
    ad::Var total;
    for (int s = 1; s <= kLapLossLevels; ++s) {
        int64_t h = t.value(a).dim(2), w = t.value(a).dim(3);
        ad::Var a_down = ad::downsample2(ad::gauss_blur5(a));
        ad::Var b_down = ad::downsample2(ad::gauss_blur5(b));
        ad::Var band_a = ad::sub(a, ad::bilinear_resize(a_down, h, w));
        ad::Var band_b = ad::sub(b, ad::bilinear_resize(b_down, h, w));
        ad::Var term = ad::mean_all(ad::abs_(ad::sub(band_a, band_b)));
        term = ad::mul_scalar(term, static_cast<double>(int64_t(1) << (s - 1)));
        total = total.defined() ? ad::add(total, term) : term;
        a = a_down;
        b = b_down;
    }
    return total;
}

ad::Var loss_charb(const std::vector<ad::Var>& fused, const std::vector<ad::Var>& targets) {
    check(fused.size() == targets.size(), "shape",
          "loss_charb level count mismatch: " + std::to_string(fused.size()) + " fused vs " +
              std::to_string(targets.size()) + " targets");
    ad::Var total;
    for (size_t i = 0; i < fused.size(); ++i) {
        ad::Tape& t = *fused[i].tape;
        check(t.value(fused[i]).same_shape(t.value(targets[i])), "shape",
              "loss_charb level " + std::to_string(i + 1) + " shape mismatch");
        int level = static_cast<int>(i) + 1;
        ad::Var diff = ad::sub(fused[i], targets[i]);
        ad::Var term = ad::mean_all(ad::charbonnier(diff, kCharbonnierEps));
        term = ad::mul_scalar(term, static_cast<double>(int64_t(1) << level));
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

ad::Var loss_total(ad::Var output, ad::Var target, const std::vector<ad::Var>& fused,
                   const std::vector<ad::Var>& targets, double lambda, LossReport* report) {
    ad::Tape& t = *output.tape;
    ad::Var lap = loss_lap(output, target);
    ad::Var total = lap;
    double charb_value = 0;
    if (!fused.empty()) {
        ad::Var charb = loss_charb(fused, targets);
        charb_value = t.value(charb).scalar();
        total = ad::add(lap, ad::mul_scalar(charb, lambda));
    }
    if (report) {
        report->lap = t.value(lap).scalar();
        report->charb = charb_value;
        report->total = t.value(total).scalar();
        report->lambda = lambda;
    }
    return total;
}

double loss_lap_value(const Tensor& output, const Tensor& target) {
    ad::Tape tape;
    return tape.value(loss_lap(tape.leaf(output, false), tape.leaf(target, false))).scalar();
}

double loss_charb_value(const std::vector<Tensor>& fused, const std::vector<Tensor>& targets) {
    if (fused.empty() && targets.empty()) return 0.0;
    ad::Tape tape;
    std::vector<ad::Var> f, g;
    for (const Tensor& t : fused) f.push_back(tape.leaf(t, false));
    for (const Tensor& t : targets) g.push_back(tape.leaf(t, false));
    return tape.value(loss_charb(f, g)).scalar();
}

LossReport loss_total_value(const Tensor& output, const Tensor& target,
                            const std::vector<Tensor>& fused, const std::vector<Tensor>& targets,
                            double lambda) {
    ad::Tape tape;
    std::vector<ad::Var> f, g;
    for (const Tensor& t : fused) f.push_back(tape.leaf(t, false));
    for (const Tensor& t : targets) g.push_back(tape.leaf(t, false));
    LossReport report;
    loss_total(tape.leaf(output, false), tape.leaf(target, false), f, g, lambda, &report);
    return report;
}

}  // namespace mfv

#include "mfv/gradcheck.hpp"

#include <cmath>

#include "mfv/losses.hpp"

namespace mfv {

namespace {

// deterministic weighting so a non-scalar output reduces to a scalar that is
// sensitive to every coordinate
Tensor reduce_weights(const Shape& shape) {
    Rng rng(0x5eedf00dULL + static_cast<uint64_t>(shape_numel(shape)));
    return random_uniform(shape, 0.25, 1.0, rng, DType::f64);
}

double eval_scalar(const CheckedOp& op, const std::vector<Tensor>& inputs, bool with_grad,
                   std::vector<Tensor>* grads_out) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, with_grad));
    ad::Var out = op(tape, leaves);
    ad::Var scalar;
    if (tape.value(out).numel() == 1) {
        scalar = out;
    } else {
        ad::Var w = tape.leaf(reduce_weights(tape.value(out).shape()), false);
        scalar = ad::sum_all(ad::mul(out, w));
    }
    double value = tape.value(scalar).scalar();
    if (with_grad) {
        ad::Gradients g = tape.backward(scalar);
        grads_out->clear();
        for (ad::Var leaf : leaves) grads_out->push_back(g.at(leaf));
    }
    return value;
}

}  // namespace

double finite_diff_check(const CheckedOp& op, const std::vector<Tensor>& inputs, double step) {
    for (const Tensor& t : inputs)
        check(t.dtype() == DType::f64, "dtype", "finite_diff_check requires float64 inputs");

    std::vector<Tensor> analytic;
    eval_scalar(op, inputs, true, &analytic);

    double max_rel = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (int64_t j = 0; j < inputs[i].numel(); ++j) {
            std::vector<Tensor> plus = inputs;
            std::vector<Tensor> minus = inputs;
            plus[i] = inputs[i].clone();
            minus[i] = inputs[i].clone();
            plus[i].mut_f64()[j] += step;
            minus[i].mut_f64()[j] -= step;
            double numeric =
                (eval_scalar(op, plus, false, nullptr) - eval_scalar(op, minus, false, nullptr)) /
                (2 * step);
            double a = analytic[i].f64()[j];
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

namespace {

// offsets whose fractional part stays in [0.1, 0.4] away from the bilinear
// cell boundaries, where the sampled value is not differentiable
Tensor safe_offsets(const Shape& shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape, DType::f64);
    double* p = t.mut_f64();
    for (int64_t i = 0; i < t.numel(); ++i) {
        double whole = static_cast<double>(rng.uniform_int(-1, 1));
        double frac = rng.uniform(0.1, 0.4);
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        p[i] = whole + sign * frac;
    }
    return t;
}

double conv2d_trial(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_uniform({1, 2, 5, 6}, -1, 1, rng, DType::f64);
    Tensor k = random_uniform({3, 2, 3, 3}, -0.5, 0.5, rng, DType::f64);
    Tensor b = random_uniform({3}, -0.2, 0.2, rng, DType::f64);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) {
            return ad::conv2d(in[0], in[1], in[2], {1, 1}, {1, 1});
        },
        {x, k, b}, 1e-4);
}

double conv3d_trial(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_uniform({1, 1, 3, 4, 4}, -1, 1, rng, DType::f64);
    Tensor k = random_uniform({2, 1, 3, 3, 3}, -0.5, 0.5, rng, DType::f64);
    Tensor b = random_uniform({2}, -0.2, 0.2, rng, DType::f64);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) {
            return ad::conv3d(in[0], in[1], in[2], {1, 1, 1}, {1, 1, 1});
        },
        {x, k, b}, 1e-4);
}

double bilinear_resize_trial(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_uniform({1, 2, 5, 4}, -1, 1, rng, DType::f64);
    int64_t oh = rng.uniform_int(3, 9), ow = rng.uniform_int(3, 9);
    return finite_diff_check(
        [=](ad::Tape&, const std::vector<ad::Var>& in) {
            return ad::bilinear_resize(in[0], oh, ow);
        },
        {x}, 1e-4);
}

double avg_pool2_trial(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_uniform({1, 2, 4, 6}, -1, 1, rng, DType::f64);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) { return ad::avg_pool2(in[0]); }, {x}, 1e-4);
}

double softmax_trial(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_uniform({2, 5, 3}, -2, 2, rng, DType::f64);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) { return ad::softmax_axis(in[0], 1); }, {x},
        1e-4);
}

double instance_norm_trial(uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_uniform({1, 2, 4, 4}, -1, 1, rng, DType::f64);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) {
            return ad::instance_norm(in[0], 1e-5);
        },
        {x}, 1e-4);
}

double prelu_trial(uint64_t seed) {
    Rng rng(seed);
    // keep |x| >= 0.05 so no coordinate sits on the activation kink
    Tensor x = Tensor::zeros({1, 3, 4, 4}, DType::f64);
    double* p = x.mut_f64();
    for (int64_t i = 0; i < x.numel(); ++i) {
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        p[i] = sign * rng.uniform(0.05, 1.0);
    }
    Tensor slope = random_uniform({3}, 0.1, 0.4, rng, DType::f64);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) { return ad::prelu(in[0], in[1]); },
        {x, slope}, 1e-4);
}

double warp_trial(uint64_t seed) {
    Rng rng(seed);
    Tensor frame = random_uniform({1, 2, 6, 6}, 0, 1, rng, DType::f64);
    Tensor alpha = safe_offsets({1, 3, 6, 6}, rng);
    Tensor beta = safe_offsets({1, 3, 6, 6}, rng);
    Tensor omega = random_uniform({1, 3, 6, 6}, 0.1, 1.0, rng, DType::f64);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) {
            return ad::warp(in[0], in[1], in[2], in[3]);
        },
        {frame, alpha, beta, omega}, 1e-3);
}

double fuse_trial(uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> inputs;
    for (int n = 0; n < 4; ++n) inputs.push_back(random_uniform({1, 2, 4, 4}, 0, 1, rng, DType::f64));
    inputs.push_back(random_uniform({1, 4, 4, 4}, 0, 1, rng, DType::f64));
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) {
            return ad::fuse({in[0], in[1], in[2], in[3]}, in[4]);
        },
        inputs, 1e-4);
}

constexpr double kLapStep = 4e-5;

// The band loss uses |.|, which kinks where a band difference crosses zero,
// and some input coordinates have near-cancelling gradients that central
// differences cannot resolve above the float64 noise floor. Both are
// properties of the drawn instance, not of the gradient code, so the trial
// resamples until the pair is well posed: every band-difference coordinate
// clear of the kink by 8*step, every gradient coordinate above 3e-5.
double loss_lap_trial(uint64_t seed) {
    for (int attempt = 0; attempt < 800; ++attempt) {
        Rng rng(seed + static_cast<uint64_t>(attempt) * 1000003ULL);
        Tensor a = random_uniform({1, 1, 32, 32}, 0, 1, rng, DType::f64);
        Tensor b = random_uniform({1, 1, 32, 32}, 0, 1, rng, DType::f64);

        LaplacianPyramid pa = laplacian_pyramid(a, kLapLossLevels);
        LaplacianPyramid pb = laplacian_pyramid(b, kLapLossLevels);
        double min_band = 1e30;
        for (int s = 0; s < kLapLossLevels; ++s) {
            Tensor diff = ops::sub(pa.bands[static_cast<size_t>(s)], pb.bands[static_cast<size_t>(s)]);
            for (int64_t i = 0; i < diff.numel(); ++i)
                min_band = std::min(min_band, std::abs(diff.at(i)));
        }
        if (min_band < 8 * kLapStep) continue;

        ad::Tape tape;
        ad::Var va = tape.leaf(a, true);
        ad::Var vb = tape.leaf(b, true);
        ad::Gradients g = tape.backward(loss_lap(va, vb));
        double min_grad = 1e30;
        for (int64_t i = 0; i < a.numel(); ++i) {
            min_grad = std::min(min_grad, std::abs(g.at(va).at(i)));
            min_grad = std::min(min_grad, std::abs(g.at(vb).at(i)));
        }
        if (min_grad < 3e-5) continue;

        return finite_diff_check(
            [](ad::Tape&, const std::vector<ad::Var>& in) { return loss_lap(in[0], in[1]); },
            {a, b}, kLapStep);
    }
    fail("gradcheck", "could not draw a well-posed pair for the pyramid loss");
}

double loss_charb_trial(uint64_t seed) {
    Rng rng(seed);
    // keep |fused - target| >= 0.05: the Charbonnier's curvature spikes near
    // zero difference and dominates the central-difference truncation there
    auto offset_from = [&](const Tensor& src) {
        Tensor t = src.clone();
        double* p = t.mut_f64();
        for (int64_t i = 0; i < t.numel(); ++i) {
            double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            p[i] += sign * rng.uniform(0.05, 0.3);
        }
        return t;
    };
    Tensor f1 = random_uniform({1, 1, 8, 8}, 0, 1, rng, DType::f64);
    Tensor t1 = offset_from(f1);
    Tensor f2 = random_uniform({1, 1, 4, 4}, 0, 1, rng, DType::f64);
    Tensor t2 = offset_from(f2);
    return finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) {
            return loss_charb({in[0], in[2]}, {in[1], in[3]});
        },
        {f1, t1, f2, t2}, 1e-4);
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_suite() {
    static const std::vector<GradCheckCase> suite = {
        {"conv2d", 1e-6, 1e-4, conv2d_trial},
        {"conv3d", 1e-6, 1e-4, conv3d_trial},
        {"bilinear_resize", 1e-6, 1e-4, bilinear_resize_trial},
        {"avg_pool2", 1e-6, 1e-4, avg_pool2_trial},
        {"softmax", 1e-6, 1e-4, softmax_trial},
        {"instance_norm", 1e-6, 1e-4, instance_norm_trial},
        {"prelu", 1e-6, 1e-4, prelu_trial},
        {"warp", 1e-4, 1e-3, warp_trial},
        {"fuse", 1e-4, 1e-4, fuse_trial},
        {"loss_lap", 1e-6, kLapStep, loss_lap_trial},
        {"loss_charb", 1e-6, 1e-4, loss_charb_trial},
    };
    return suite;
}

GradCheckReport run_gradcheck(const GradCheckCase& c, int trials, uint64_t seed) {
    GradCheckReport r;
    r.name = c.name;
    r.tolerance = c.tolerance;
    for (int i = 0; i < trials; ++i)
        r.max_error = std::max(r.max_error, c.trial(derive_seed(seed, 7, static_cast<uint64_t>(i))));
    r.passed = r.max_error < c.tolerance;
    return r;
}

}  // namespace mfv

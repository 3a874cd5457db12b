#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfv/ops.hpp"
#include "oracles.hpp"

using namespace mfv;

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor::zeros({}), Error);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), Error);
    CHECK_THROWS_AS(Tensor::from_f32({2, 2}, {1, 2, 3}), Error);

    Tensor t = Tensor::from_f32({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.reshape({3, 2}).at(4) == 5.0);
    CHECK_THROWS_AS(t.reshape({4, 2}), Error);
    CHECK(t.all_finite());
}

TEST_CASE("conv2d all-ones 3x3: centre counts 9 overlapped ones, corners 4") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor y = ops::conv2d(x, k, b, {1, 1}, {1, 1});
    CHECK(y.shape() == Shape({1, 1, 3, 3}));
    CHECK(y.at(4) == doctest::Approx(9.0));
    CHECK(y.at(0) == doctest::Approx(4.0));
    CHECK(y.at(2) == doctest::Approx(4.0));
    CHECK(y.at(8) == doctest::Approx(4.0));
    CHECK(y.at(1) == doctest::Approx(6.0));  // edge
}

TEST_CASE("conv2d delta kernel is the identity") {
    Rng rng(7);
    Tensor x = random_uniform({1, 1, 5, 6}, -1, 1, rng);
    Tensor k = Tensor::zeros({1, 1, 3, 3});
    k.mut_f32()[4] = 1.0f;
    Tensor y = ops::conv2d(x, k, Tensor::zeros({1}), {1, 1}, {1, 1});
    CHECK(oracle::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d matches the per-pixel loop oracle to 1e-12 in float64") {
    Rng rng(11);
    Tensor x = random_uniform({1, 2, 5, 5}, -1, 1, rng, DType::f64);
    Tensor k = random_uniform({3, 2, 3, 3}, -1, 1, rng, DType::f64);
    Tensor b = random_uniform({3}, -1, 1, rng, DType::f64);
    for (auto [sh, sw, ph, pw] : {std::array<int, 4>{1, 1, 1, 1}, {2, 1, 1, 2}, {1, 2, 0, 1}}) {
        if (5 + 2 * ph < 3 || 5 + 2 * pw < 3) continue;
        Tensor y = ops::conv2d(x, k, b, {sh, sw}, {ph, pw});
        Tensor ref = oracle::conv2d_ref(x, k, b, sh, sw, ph, pw);
        CHECK(y.shape() == ref.shape());
        CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
    }
}

TEST_CASE("conv2d rejects channel mismatch with a descriptive error") {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    Tensor k = Tensor::zeros({2, 2, 3, 3});
    try {
        ops::conv2d(x, k, Tensor::zeros({2}), {1, 1}, {1, 1});
        FAIL("expected a shape error");
    } catch (const Error& e) {
        CHECK(e.code() == "shape");
        CHECK(std::string(e.what()).find("channel") != std::string::npos);
    }
}

TEST_CASE("conv3d all-ones interior value is 27") {
    Tensor x = Tensor::full({1, 1, 4, 4, 4}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3, 3}, 1.0);
    Tensor y = ops::conv3d(x, k, Tensor::zeros({1}), {1, 1, 1}, {1, 1, 1});
    CHECK(y.shape() == Shape({1, 1, 4, 4, 4}));
    // interior: (t,y,x) = (1,1,1)
    CHECK(y.at(((0 * 4 + 1) * 4 + 1) * 4 + 1) == doctest::Approx(27.0));
}

TEST_CASE("conv3d temporal shape: T=4, kT=3, padT=1, stride 1 keeps T'=4") {
    Tensor x = Tensor::zeros({1, 1, 4, 6, 6});
    Tensor k = Tensor::zeros({2, 1, 3, 3, 3});
    Tensor y = ops::conv3d(x, k, Tensor::zeros({2}), {1, 1, 1}, {1, 1, 1});
    CHECK(y.shape() == Shape({1, 2, 4, 6, 6}));
}

TEST_CASE("conv3d matches the quintuple-loop oracle to 1e-12 in float64") {
    Rng rng(13);
    Tensor x = random_uniform({1, 1, 4, 4, 4}, -1, 1, rng, DType::f64);
    Tensor k = random_uniform({2, 1, 3, 3, 3}, -1, 1, rng, DType::f64);
    Tensor b = random_uniform({2}, -1, 1, rng, DType::f64);
    Tensor y = ops::conv3d(x, k, b, {1, 2, 1}, {1, 1, 0});
    Tensor ref = oracle::conv3d_ref(x, k, b, 1, 2, 1, 1, 1, 0);
    CHECK(y.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("bilinear_resize keeps constants and linear ramps") {
    Tensor c = Tensor::full({1, 1, 4, 4}, 0.37);
    Tensor up = ops::bilinear_resize(c, 8, 8);
    for (int64_t i = 0; i < up.numel(); ++i) CHECK(up.at(i) == doctest::Approx(0.37));

    // horizontal ramp I(x) = x stays linear under align-corners resize
    Tensor ramp = Tensor::zeros({1, 1, 3, 4});
    for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 4; ++x) ramp.mut_f32()[y * 4 + x] = static_cast<float>(x);
    Tensor r2 = ops::bilinear_resize(ramp, 3, 7);
    for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 7; ++x)
            CHECK(r2.at(y * 7 + x) == doctest::Approx(x * 3.0 / 6.0).epsilon(1e-6));
}

TEST_CASE("bilinear_resize downsize matches the coordinate-mapping oracle") {
    Rng rng(17);
    Tensor x = random_uniform({1, 1, 4, 4}, 0, 1, rng, DType::f64);
    Tensor y = ops::bilinear_resize(x, 3, 3);
    Tensor ref = oracle::bilinear_resize_ref(x, 3, 3);
    CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("avg_pool2 block mean and oracle") {
    Tensor x = Tensor::from_f32({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(ops::avg_pool2(x).at(0) == doctest::Approx(2.5));

    Tensor c = Tensor::full({1, 2, 6, 6}, 0.25);
    Tensor pooled = ops::avg_pool2(c);
    CHECK(pooled.shape() == Shape({1, 2, 3, 3}));
    for (int64_t i = 0; i < pooled.numel(); ++i) CHECK(pooled.at(i) == doctest::Approx(0.25));

    Rng rng(19);
    Tensor r = random_uniform({1, 3, 8, 8}, -1, 1, rng, DType::f64);
    CHECK(oracle::max_abs_diff(ops::avg_pool2(r), oracle::avg_pool2_ref(r)) == 0.0);

    CHECK_THROWS_AS(ops::avg_pool2(Tensor::zeros({1, 1, 5, 4})), Error);
}

TEST_CASE("softmax_axis: uniform on zero logits, ln2 case, sums to one") {
    Tensor z = Tensor::zeros({1, 5, 2, 2});
    Tensor s = ops::softmax_axis(z, 1);
    for (int64_t i = 0; i < s.numel(); ++i) CHECK(s.at(i) == doctest::Approx(0.2));

    Tensor two = Tensor::from_f32({1, 2}, {0.0f, static_cast<float>(std::log(2.0))});
    Tensor s2 = ops::softmax_axis(two, 1);
    CHECK(s2.at(0) == doctest::Approx(1.0 / 3).epsilon(1e-6));
    CHECK(s2.at(1) == doctest::Approx(2.0 / 3).epsilon(1e-6));

    Rng rng(23);
    Tensor x = random_uniform({2, 7, 3, 5}, -30, 30, rng);
    Tensor y = ops::softmax_axis(x, 1);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 15; ++i) {
            double sum = 0;
            for (int64_t a = 0; a < 7; ++a) sum += y.at((b * 7 + a) * 15 + i);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("concat/slice/stack round trips") {
    Rng rng(29);
    Tensor a = random_uniform({2, 3, 4, 4}, -1, 1, rng);
    Tensor b = random_uniform({2, 5, 4, 4}, -1, 1, rng);
    Tensor cat = ops::concat_axis1({a, b});
    CHECK(cat.shape() == Shape({2, 8, 4, 4}));
    CHECK(oracle::max_abs_diff(ops::slice_axis1(cat, 0, 3), a) == 0.0);
    CHECK(oracle::max_abs_diff(ops::slice_axis1(cat, 3, 5), b) == 0.0);

    std::array<Tensor, 4> frames;
    for (auto& f : frames) f = random_uniform({1, 3, 2, 2}, -1, 1, rng);
    Tensor st = ops::stack_time(frames);
    CHECK(st.shape() == Shape({1, 3, 4, 2, 2}));
    auto back = ops::unstack_time(st);
    for (size_t n = 0; n < 4; ++n) CHECK(oracle::max_abs_diff(back[n], frames[n]) == 0.0);
}

TEST_CASE("reflect_pad_hw mirrors the bottom/right border") {
    Tensor x = Tensor::from_f32({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor p = ops::reflect_pad_hw(x, 1, 2);
    CHECK(p.shape() == Shape({1, 1, 3, 5}));
    // row 0: 1 2 3 | 3 2
    CHECK(p.at(3) == 3.0);
    CHECK(p.at(4) == 2.0);
    // padded row mirrors row 1: 4 5 6 6 5
    CHECK(p.at(10) == 4.0);
    CHECK(p.at(13) == 6.0);
    CHECK(oracle::max_abs_diff(ops::crop_hw(p, 2, 3), x) == 0.0);
}

TEST_CASE("operations are deterministic across repeated runs") {
    Rng rng(31);
    Tensor x = random_uniform({2, 3, 16, 16}, -1, 1, rng);
    Tensor k = random_uniform({4, 3, 3, 3}, -1, 1, rng);
    Tensor b = random_uniform({4}, -1, 1, rng);
    Tensor y1 = ops::conv2d(x, k, b, {1, 1}, {1, 1});
    Tensor y2 = ops::conv2d(x, k, b, {1, 1}, {1, 1});
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.f32()[i] == y2.f32()[i]);

    Tensor w1 = ops::gauss_blur5(x);
    Tensor w2 = ops::gauss_blur5(x);
    for (int64_t i = 0; i < w1.numel(); ++i) CHECK(w1.f32()[i] == w2.f32()[i]);
}

TEST_CASE("gauss_blur5 matches the naive reflected blur") {
    Rng rng(37);
    Tensor x = random_uniform({1, 2, 7, 5}, -1, 1, rng, DType::f64);
    CHECK(oracle::max_abs_diff(ops::gauss_blur5(x), oracle::blur5_ref(x)) < 1e-12);
    // tiny extents exercise repeated reflection
    Tensor t = random_uniform({1, 1, 1, 2}, -1, 1, rng, DType::f64);
    CHECK(oracle::max_abs_diff(ops::gauss_blur5(t), oracle::blur5_ref(t)) < 1e-12);
}

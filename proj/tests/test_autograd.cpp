#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfv/gradcheck.hpp"
#include "oracles.hpp"

using namespace mfv;

TEST_CASE("backward of sum of squares gives 2x") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::from_f64({3}, {1, 2, 3}), true);
    ad::Var loss = ad::sum_all(ad::mul(x, x));
    ad::Gradients g = tape.backward(loss);
    const Tensor& gx = g.at(x);
    CHECK(gx.at(0) == doctest::Approx(2.0));
    CHECK(gx.at(1) == doctest::Approx(4.0));
    CHECK(gx.at(2) == doctest::Approx(6.0));
}

TEST_CASE("chain rule through scaling: d/dx sum((2x)^2) = 8x") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::from_f64({1}, {1.0}), true);
    ad::Var y = ad::mul_scalar(x, 2.0);
    ad::Var loss = ad::sum_all(ad::mul(y, y));
    ad::Gradients g = tape.backward(loss);
    CHECK(g.at(x).at(0) == doctest::Approx(8.0));
}

TEST_CASE("gradients of a multiply-used leaf accumulate") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::from_f64({1}, {3.0}), true);
    ad::Var y = ad::add(ad::mul(x, x), ad::mul_scalar(x, 5.0));  // x^2 + 5x
    ad::Gradients g = tape.backward(ad::sum_all(y));
    CHECK(g.at(x).at(0) == doctest::Approx(2 * 3.0 + 5.0));
}

TEST_CASE("leaves the sweep never reaches get zero gradients") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::from_f64({2}, {1.0, 2.0}), true);
    ad::Var unused = tape.leaf(Tensor::from_f64({3}, {1, 1, 1}), true);
    ad::Gradients g = tape.backward(ad::sum_all(x));
    CHECK(g.at(unused).shape() == Shape({3}));
    for (int64_t i = 0; i < 3; ++i) CHECK(g.at(unused).at(i) == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::from_f64({2}, {1.0, 2.0}), true);
    CHECK_THROWS_AS(tape.backward(ad::mul(x, x)), Error);
}

TEST_CASE("conv2d analytic gradient matches central differences (sum of squares loss)") {
    Rng rng(41);
    Tensor x = random_uniform({1, 1, 5, 5}, -1, 1, rng, DType::f64);
    Tensor k = random_uniform({2, 1, 3, 3}, -1, 1, rng, DType::f64);
    Tensor b = random_uniform({2}, -0.5, 0.5, rng, DType::f64);
    double err = finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) {
            ad::Var y = ad::conv2d(in[0], in[1], in[2], {1, 1}, {1, 1});
            return ad::sum_all(ad::mul(y, y));
        },
        {x, k, b}, 1e-4);
    CHECK(err < 1e-6);
}

TEST_CASE("finite_diff_check on a quadratic form is clean to 1e-8") {
    Rng rng(43);
    Tensor x = random_uniform({6}, -1, 1, rng, DType::f64);
    double err = finite_diff_check(
        [](ad::Tape&, const std::vector<ad::Var>& in) { return ad::sum_all(ad::mul(in[0], in[0])); },
        {x}, 1e-4);
    CHECK(err < 1e-8);
}

TEST_CASE("every registered operator passes its gradient tolerance (smoke: 3 trials)") {
    for (const GradCheckCase& c : gradcheck_suite()) {
        GradCheckReport r = run_gradcheck(c, 3, 1234);
        INFO(r.name, " err=", r.max_error, " tol=", r.tolerance);
        CHECK(r.passed);
    }
}

TEST_CASE("elementwise and reduction backward pieces") {
    // abs
    {
        ad::Tape tape;
        ad::Var x = tape.leaf(Tensor::from_f64({3}, {-2.0, 0.0, 3.0}), true);
        ad::Gradients g = tape.backward(ad::sum_all(ad::abs_(x)));
        CHECK(g.at(x).at(0) == -1.0);
        CHECK(g.at(x).at(1) == 0.0);
        CHECK(g.at(x).at(2) == 1.0);
    }
    // sqrt via charbonnier at x=0 has slope 0
    {
        ad::Tape tape;
        ad::Var x = tape.leaf(Tensor::from_f64({1}, {0.0}), true);
        ad::Var y = ad::charbonnier(x, 0.001);
        CHECK(tape.value(y).at(0) == doctest::Approx(0.001));
        ad::Gradients g = tape.backward(ad::sum_all(y));
        CHECK(g.at(x).at(0) == doctest::Approx(0.0));
    }
    // mean_all
    {
        ad::Tape tape;
        ad::Var x = tape.leaf(Tensor::from_f64({4}, {1, 2, 3, 4}), true);
        ad::Gradients g = tape.backward(ad::mean_all(x));
        for (int64_t i = 0; i < 4; ++i) CHECK(g.at(x).at(i) == doctest::Approx(0.25));
    }
    // concat + slice routing
    {
        ad::Tape tape;
        ad::Var a = tape.leaf(Tensor::full({1, 2, 2, 2}, 1.0, DType::f64), true);
        ad::Var b = tape.leaf(Tensor::full({1, 3, 2, 2}, 1.0, DType::f64), true);
        ad::Var cat = ad::concat_axis1({a, b});
        ad::Var kept = ad::slice_axis1(cat, 1, 2);  // channel 1 of a, channel 0 of b
        ad::Gradients g = tape.backward(ad::sum_all(kept));
        CHECK(g.at(a).at(0) == 0.0);
        CHECK(g.at(a).at(4) == 1.0);
        CHECK(g.at(b).at(0) == 1.0);
        CHECK(g.at(b).at(4) == 0.0);
    }
}

#include <doctest.h>

#include "testutil.hpp"
#include "wsss/autodiff.hpp"
#include "wsss/errors.hpp"

using namespace wsss;
namespace adf = wsss::ad;

namespace {

// weighted sum with a fixed random cotangent so asymmetric gradients show up
double weighted(const Tensor& t, const Tensor& weights) {
    double s = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) s += t[i] * weights[i];
    return s;
}

// checks d(sum(op(x) .* r))/dx against central differences
void check_unary(const std::function<adf::Var(const adf::Var&)>& op, const Tensor& x0, uint64_t seed,
                 double tol = 1e-6) {
    adf::Var x = adf::Var::input(x0, true);
    adf::Var y = op(x);
    Rng rng(seed);
    Tensor r = rand_uniform(rng, y.value().shape(), -1.0, 1.0);
    adf::Var loss = adf::sum(adf::mul(y, adf::Var::constant(r)));
    adf::backward(loss);

    Tensor fd = test::finite_diff([&](const Tensor& xt) { return weighted(op(adf::Var::input(xt)).value(), r); }, x0);
    CHECK(test::max_rel_err(x.grad(), fd) < tol);
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(7);
    Tensor x = rand_uniform(rng, {2, 3, 4, 4}, -1.0, 1.0);
    check_unary([](const adf::Var& v) { return adf::leaky_relu(v, 0.01); }, x, 100);
    check_unary([](const adf::Var& v) { return adf::sigmoid(v); }, x, 101);
    check_unary([](const adf::Var& v) { return adf::scale_add(v, -2.5, 0.75); }, x, 102);
    check_unary([](const adf::Var& v) { return adf::softmax_channels(v); }, x, 103);
    check_unary([](const adf::Var& v) { return adf::reshape(v, {2, 3, 16}); }, x, 104);

    Tensor pos = rand_uniform(rng, {3, 5}, 0.2, 2.0);
    check_unary([](const adf::Var& v) { return adf::log(v); }, pos, 105);
    check_unary([](const adf::Var& v) { return adf::clamp_min(v, 0.5); }, pos, 106);

    Tensor a = rand_uniform(rng, {4, 6}, -1.0, 1.0);
    Tensor b = rand_uniform(rng, {4, 6}, -1.0, 1.0);
    adf::Var va = adf::Var::input(a, true);
    adf::Var vb = adf::Var::input(b, true);
    adf::Var prod = adf::mul(adf::add(va, vb), adf::sub(va, vb));  // a^2 - b^2
    adf::backward(adf::sum(prod));
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(va.grad()[i] == doctest::Approx(2.0 * a[i]).epsilon(1e-9));
        CHECK(vb.grad()[i] == doctest::Approx(-2.0 * b[i]).epsilon(1e-9));
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(9);
    Tensor x0 = rand_uniform(rng, {2, 3, 6, 5}, -1.0, 1.0);
    Tensor w0 = rand_uniform(rng, {4, 3, 3, 3}, -0.5, 0.5);
    Tensor b0 = rand_uniform(rng, {4}, -0.2, 0.2);
    Tensor r = rand_uniform(rng, {2, 4, 6, 5}, -1.0, 1.0);

    adf::Var x = adf::Var::input(x0, true);
    adf::Var w = adf::Var::input(w0, true);
    adf::Var b = adf::Var::input(b0, true);
    adf::Var y = adf::conv2d(x, w, b, 1, 1);
    adf::backward(adf::sum(adf::mul(y, adf::Var::constant(r))));

    auto eval = [&](const Tensor& xt, const Tensor& wt, const Tensor& bt) {
        return weighted(
            adf::conv2d(adf::Var::input(xt), adf::Var::input(wt), adf::Var::input(bt), 1, 1).value(), r);
    };
    // finite-difference cancellation noise dominates here, so the bar is 1e-4
    CHECK(test::max_rel_err(x.grad(), test::finite_diff([&](const Tensor& t) { return eval(t, w0, b0); }, x0)) < 1e-4);
    CHECK(test::max_rel_err(w.grad(), test::finite_diff([&](const Tensor& t) { return eval(x0, t, b0); }, w0)) < 1e-4);
    CHECK(test::max_rel_err(b.grad(), test::finite_diff([&](const Tensor& t) { return eval(x0, w0, t); }, b0)) < 1e-4);
}

TEST_CASE("strided conv, pooling, upsampling, pooling backward") {
    Rng rng(13);
    Tensor x0 = rand_uniform(rng, {1, 2, 8, 8}, -1.0, 1.0);
    Tensor w0 = rand_uniform(rng, {3, 2, 3, 3}, -0.5, 0.5);
    Tensor b0 = rand_uniform(rng, {3}, -0.2, 0.2);
    Tensor r = rand_uniform(rng, {1, 3, 4, 4}, -1.0, 1.0);
    adf::Var x = adf::Var::input(x0, true);
    adf::Var y = adf::conv2d(x, adf::Var::constant(w0), adf::Var::constant(b0), 2, 1);
    adf::backward(adf::sum(adf::mul(y, adf::Var::constant(r))));
    Tensor fd = test::finite_diff(
        [&](const Tensor& t) {
            return weighted(adf::conv2d(adf::Var::input(t), adf::Var::constant(w0), adf::Var::constant(b0), 2, 1).value(),
                            r);
        },
        x0);
    CHECK(test::max_rel_err(x.grad(), fd) < 1e-6);

    check_unary([](const adf::Var& v) { return adf::maxpool2d(v, 2, 2, 0); }, x0, 200);
    check_unary([](const adf::Var& v) { return adf::upsample_nearest2(v); }, x0, 201);
    check_unary([](const adf::Var& v) { return adf::global_avg_pool(v); }, x0, 202);
    check_unary([](const adf::Var& v) { return adf::select_class(adf::reshape(v, {1, 2, 1, 8, 8}), 1); }, x0, 203);
}

TEST_CASE("linear and concat gradients") {
    Rng rng(17);
    Tensor x0 = rand_uniform(rng, {3, 7}, -1.0, 1.0);
    Tensor w0 = rand_uniform(rng, {4, 7}, -0.5, 0.5);
    Tensor b0 = rand_uniform(rng, {4}, -0.2, 0.2);
    Tensor r = rand_uniform(rng, {3, 4}, -1.0, 1.0);
    adf::Var x = adf::Var::input(x0, true);
    adf::Var w = adf::Var::input(w0, true);
    adf::Var b = adf::Var::input(b0, true);
    adf::backward(adf::sum(adf::mul(adf::linear(x, w, b), adf::Var::constant(r))));
    auto eval = [&](const Tensor& xt, const Tensor& wt, const Tensor& bt) {
        return weighted(adf::linear(adf::Var::input(xt), adf::Var::input(wt), adf::Var::input(bt)).value(), r);
    };
    CHECK(test::max_rel_err(x.grad(), test::finite_diff([&](const Tensor& t) { return eval(t, w0, b0); }, x0)) < 1e-6);
    CHECK(test::max_rel_err(w.grad(), test::finite_diff([&](const Tensor& t) { return eval(x0, t, b0); }, w0)) < 1e-6);
    CHECK(test::max_rel_err(b.grad(), test::finite_diff([&](const Tensor& t) { return eval(x0, w0, t); }, b0)) < 1e-6);

    Tensor a0 = rand_uniform(rng, {2, 2, 3, 3}, -1.0, 1.0);
    Tensor c0 = rand_uniform(rng, {2, 4, 3, 3}, -1.0, 1.0);
    Tensor rc = rand_uniform(rng, {2, 6, 3, 3}, -1.0, 1.0);
    adf::Var va = adf::Var::input(a0, true);
    adf::Var vc = adf::Var::input(c0, true);
    adf::backward(adf::sum(adf::mul(adf::concat_channels(va, vc), adf::Var::constant(rc))));
    auto evalc = [&](const Tensor& at, const Tensor& ct) {
        return weighted(adf::concat_channels(adf::Var::input(at), adf::Var::input(ct)).value(), rc);
    };
    CHECK(test::max_rel_err(va.grad(), test::finite_diff([&](const Tensor& t) { return evalc(t, c0); }, a0)) < 1e-6);
    CHECK(test::max_rel_err(vc.grad(), test::finite_diff([&](const Tensor& t) { return evalc(a0, t); }, c0)) < 1e-6);
}

TEST_CASE("batchnorm gradients, training and eval modes") {
    Rng rng(19);
    const int c = 3;
    Tensor x0 = rand_uniform(rng, {2, c, 4, 4}, -1.0, 1.0);
    Tensor g0 = rand_uniform(rng, {c}, 0.5, 1.5);
    Tensor be0 = rand_uniform(rng, {c}, -0.3, 0.3);
    Tensor r = rand_uniform(rng, {2, c, 4, 4}, -1.0, 1.0);

    for (bool training : {true, false}) {
        Tensor rm = rand_uniform(rng, {c}, -0.1, 0.1);
        Tensor rv = rand_uniform(rng, {c}, 0.5, 1.5);
        adf::Var x = adf::Var::input(x0, true);
        adf::Var gam = adf::Var::input(g0, true);
        adf::Var bet = adf::Var::input(be0, true);
        Tensor rm1 = rm, rv1 = rv;
        adf::Var y = adf::batchnorm2d(x, gam, bet, rm1, rv1, training, 0.1, 1e-5);
        adf::backward(adf::sum(adf::mul(y, adf::Var::constant(r))));

        auto eval = [&](const Tensor& xt, const Tensor& gt, const Tensor& bt) {
            Tensor rmc = rm, rvc = rv;  // forward mutates running stats; use fresh copies
            return weighted(adf::batchnorm2d(adf::Var::input(xt), adf::Var::input(gt), adf::Var::input(bt), rmc, rvc,
                                             training, 0.1, 1e-5)
                                .value(),
                            r);
        };
        CHECK(test::max_rel_err(x.grad(), test::finite_diff([&](const Tensor& t) { return eval(t, g0, be0); }, x0)) <
              1e-5);
        CHECK(test::max_rel_err(gam.grad(), test::finite_diff([&](const Tensor& t) { return eval(x0, t, be0); }, g0)) <
              1e-6);
        CHECK(test::max_rel_err(bet.grad(), test::finite_diff([&](const Tensor& t) { return eval(x0, g0, t); }, be0)) <
              1e-6);
    }
}

TEST_CASE("decomposition op gradients match finite differences") {
    Rng rng(29);
    const int b = 2, k = 3, h = 4, w = 4;
    Tensor m0 = test::random_mask_stack(rng, b, k, h, w);
    Tensor x0 = rand_uniform(rng, {b, k, 3, h, w}, -1.0, 1.0);

    for (int which = 0; which < 2; ++which) {
        auto op = [&](const adf::Var& mv, const adf::Var& xv) {
            return which == 0 ? adf::recompose(mv, xv) : adf::component_images(mv, xv);
        };
        adf::Var m = adf::Var::input(m0, true);
        adf::Var x = adf::Var::input(x0, true);
        adf::Var y = op(m, x);
        Rng rr(500 + which);
        Tensor r = rand_uniform(rr, y.value().shape(), -1.0, 1.0);
        adf::backward(adf::sum(adf::mul(y, adf::Var::constant(r))));
        CHECK(test::max_rel_err(m.grad(), test::finite_diff(
                                              [&](const Tensor& t) {
                                                  return weighted(op(adf::Var::input(t), adf::Var::input(x0)).value(), r);
                                              },
                                              m0)) < 1e-6);
        CHECK(test::max_rel_err(x.grad(), test::finite_diff(
                                              [&](const Tensor& t) {
                                                  return weighted(op(adf::Var::input(m0), adf::Var::input(t)).value(), r);
                                              },
                                              x0)) < 1e-6);
    }

    check_unary([](const adf::Var& v) { return adf::average_mask_score(v); }, m0, 300);
}

TEST_CASE("gradients accumulate through shared subgraphs and skip frozen branches") {
    Tensor x0({2, 2}, {1.0, 2.0, 3.0, 4.0});
    adf::Var x = adf::Var::input(x0, true);
    adf::Var frozen = adf::Var::input(Tensor({2, 2}, 0.5), false);
    adf::Var y = adf::add(adf::mul(x, x), adf::mul(x, frozen));  // x^2 + 0.5x
    adf::backward(adf::sum(y));
    for (int64_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x0[i] + 0.5));
    CHECK_FALSE(frozen.grad().defined());

    // diamond: same node consumed twice
    adf::Var z = adf::Var::input(Tensor({1}, 3.0), true);
    adf::Var q = adf::mul(z, z);
    adf::backward(adf::add(q, q));
    CHECK(z.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    adf::Var x = adf::Var::input(Tensor({2, 2}, 1.0), true);
    CHECK_THROWS_AS(adf::backward(adf::mul(x, x)), ValueError);
}

}  // TEST_SUITE

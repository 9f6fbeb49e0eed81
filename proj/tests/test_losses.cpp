#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "wsss/errors.hpp"
#include "wsss/losses.hpp"

using namespace wsss;
namespace adf = wsss::ad;

namespace {

constexpr double kEps = 1e-7;

// feeds back a fixed probability tensor per forward call, in call order
struct ScriptedClassifier : losses::ClassifierModel {
    std::vector<Tensor> outputs;
    int fg = 1;
    size_t next = 0;
    adf::Var forward(const adf::Var&) override { return adf::Var::constant(outputs.at(next++)); }
    int num_outputs() const override { return fg; }
    void rewind() { next = 0; }
};

// differentiable stub: frozen random linear probe + sigmoid
struct LinearStubClassifier : losses::ClassifierModel {
    adf::Var w, b;
    int fg, feat;
    LinearStubClassifier(int fg_, int c, int h, int wd, uint64_t seed) : fg(fg_), feat(c * h * wd) {
        Rng rng(seed);
        w = adf::Var::constant(rand_uniform(rng, {fg, feat}, -0.4, 0.4));
        b = adf::Var::constant(rand_uniform(rng, {fg}, -0.1, 0.1));
    }
    adf::Var forward(const adf::Var& img) override {
        const int bsz = img.value().dim(0);
        return adf::sigmoid(adf::linear(adf::reshape(img, {bsz, feat}), w, b));
    }
    int num_outputs() const override { return fg; }
};

// independent scalar expansion of the guidance loss from probability tables
double oracle_cls(const std::vector<Tensor>& probs, const Tensor& y, double eps) {
    const int b = y.dim(0), kk = y.dim(1), fg = kk - 1;
    double total = 0.0;
    for (int ki = 0; ki < kk; ++ki) {
        for (int bi = 0; bi < b; ++bi) {
            if (ki < fg && y.at({bi, ki}) == 1.0)
                total -= std::log(std::max(probs[ki].at({bi, ki}), eps));
            for (int j = 0; j < fg; ++j)
                if (j != ki) total -= std::log(std::max(1.0 - probs[ki].at({bi, j}), eps));
        }
    }
    return total / (kk * b);
}

core::TagLabelBatch tags(std::vector<double> v, int b, int k) {
    return core::TagLabelBatch::checked(Tensor({b, k}, std::move(v)), core::LabelMode::Indicator);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("reconstruction loss hand values") {
    Rng rng(61);
    Tensor img = rand_uniform(rng, {2, 3, 4, 4}, 0.0, 1.0);
    adf::Var vimg = adf::Var::constant(img);
    CHECK(losses::loss_recon(vimg, vimg).value()[0] == 0.0);

    Tensor off = img;
    for (int64_t i = 0; i < off.size(); ++i) off[i] += 1.0;
    CHECK(losses::loss_recon(adf::Var::constant(off), vimg).value()[0] == doctest::Approx(1.0).epsilon(1e-12));

    // 1x1 image, residuals 0.1 / 0.2 / 0.3 over the three channels
    Tensor a({1, 3, 1, 1}, {0.4, 0.5, 0.6});
    Tensor b({1, 3, 1, 1}, {0.3, 0.3, 0.3});
    CHECK(losses::loss_recon(adf::Var::constant(a), adf::Var::constant(b)).value()[0] ==
          doctest::Approx(0.14 / 3.0).epsilon(1e-9));

    CHECK(losses::loss_recon(adf::Var::constant(Tensor({2, 3, 4, 4}, 0.0)), vimg).value()[0] > 0.0);
    CHECK_THROWS_AS(static_cast<void>(losses::loss_recon(adf::Var::constant(Tensor({1, 3, 2, 3}, 0.0)),
                                                         adf::Var::constant(Tensor({1, 3, 2, 2}, 0.0)))),
                    DimensionError);
}

TEST_CASE("mask loss hand values and edge cases") {
    auto run = [](std::vector<double> yhat, std::vector<double> y, int b, int k) {
        return losses::loss_mask(adf::Var::constant(Tensor({b, k}, std::move(yhat))), tags(std::move(y), b, k), kEps)
            .value()[0];
    };
    CHECK(run({0.5, 0.5}, {1.0, 1.0}, 1, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(run({1.0, 1.0}, {1.0, 1.0}, 1, 2) == 0.0);  // 0*log(eps) terms vanish exactly
    CHECK(run({0.0, 1.0}, {0.0, 1.0}, 1, 2) == 0.0);
    CHECK(std::isfinite(run({0.0, 0.0}, {1.0, 1.0}, 1, 2)));  // clamp keeps logs finite

    CHECK_THROWS_AS(static_cast<void>(losses::loss_mask(adf::Var::constant(Tensor({1, 3}, 0.5)),
                                                        tags({1.0, 1.0}, 1, 2), kEps)),
                    DimensionError);
}

TEST_CASE("mask loss is invariant to pixel permutations") {
    Rng rng(67);
    Tensor m = test::random_mask_stack(rng, 1, 3, 4, 4);
    Tensor perm = m;
    // reverse pixel order within each class plane
    const int64_t hw = 16;
    for (int ki = 0; ki < 3; ++ki)
        for (int64_t p = 0; p < hw; ++p) perm[ki * hw + p] = m[ki * hw + (hw - 1 - p)];
    auto y = tags({1.0, 0.0, 1.0}, 1, 3);
    const double a =
        losses::loss_mask(adf::average_mask_score(adf::Var::constant(m)), y, kEps).value()[0];
    const double b =
        losses::loss_mask(adf::average_mask_score(adf::Var::constant(perm)), y, kEps).value()[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("mask loss supports soft-area labels") {
    auto y = core::TagLabelBatch::checked(Tensor({1, 2}, {0.3, 0.7}), core::LabelMode::SoftArea);
    const double got = losses::loss_mask(adf::Var::constant(Tensor({1, 2}, {0.3, 0.7})), y, kEps).value()[0];
    const double want = -0.5 * (0.3 * std::log(0.3) + 0.7 * std::log(0.7) + 0.7 * std::log(0.7) + 0.3 * std::log(0.3));
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("guidance loss: K=2 worked example") {
    Rng rng(71);
    const int b = 1, k = 2, h = 4, w = 4;
    Tensor m = test::random_mask_stack(rng, b, k, h, w);
    Tensor x = rand_uniform(rng, {b, k, 3, h, w}, -1.0, 1.0);
    ScriptedClassifier g;
    g.fg = 1;
    g.outputs = {Tensor({1, 1}, 0.9), Tensor({1, 1}, 0.1)};  // g1(I1)=0.9, g1(I2)=0.1
    const double got =
        losses::loss_cls(adf::Var::constant(m), adf::Var::constant(x), tags({1.0, 1.0}, 1, 2), g, kEps).value()[0];
    CHECK(got == doctest::Approx(0.105361).epsilon(1e-4));
    CHECK(got == doctest::Approx(0.5 * (-std::log(0.9) - std::log(0.9))).epsilon(1e-12));
}

TEST_CASE("guidance loss: ideal separation is (near) zero") {
    Rng rng(73);
    const int b = 2, k = 3, h = 4, w = 4;
    Tensor m = test::random_mask_stack(rng, b, k, h, w);
    Tensor x = rand_uniform(rng, {b, k, 3, h, w}, -1.0, 1.0);
    ScriptedClassifier g;
    g.fg = 2;
    // component ki: own class scores 1, all others 0
    for (int ki = 0; ki < k; ++ki) {
        Tensor p({b, 2}, 0.0);
        if (ki < 2)
            for (int bi = 0; bi < b; ++bi) p.at({bi, ki}) = 1.0;
        g.outputs.push_back(p);
    }
    const double got =
        losses::loss_cls(adf::Var::constant(m), adf::Var::constant(x), tags({1.0, 1.0, 1.0, 1.0, 1.0, 1.0}, 2, 3), g,
                         kEps)
            .value()[0];
    CHECK(std::abs(got) < 1e-6 * k);
}

TEST_CASE("guidance loss matches the scalar expansion oracle, K=3 with an absent class") {
    Rng rng(79);
    const int b = 2, k = 3, h = 4, w = 4;
    Tensor m = test::random_mask_stack(rng, b, k, h, w);
    Tensor x = rand_uniform(rng, {b, k, 3, h, w}, -1.0, 1.0);
    auto y = tags({1.0, 0.0, 1.0, 1.0, 0.0, 1.0}, 2, 3);

    ScriptedClassifier g;
    g.fg = 2;
    for (int ki = 0; ki < k; ++ki) g.outputs.push_back(rand_uniform(rng, {b, 2}, 0.05, 0.95));
    const double got =
        losses::loss_cls(adf::Var::constant(m), adf::Var::constant(x), y, g, kEps).value()[0];
    CHECK(got == doctest::Approx(oracle_cls(g.outputs, y.y, kEps)).epsilon(1e-12));
}

TEST_CASE("guidance loss rejects a mis-sized classifier") {
    Rng rng(83);
    Tensor m = test::random_mask_stack(rng, 1, 3, 4, 4);
    Tensor x = rand_uniform(rng, {1, 3, 3, 4, 4}, -1.0, 1.0);
    ScriptedClassifier g;
    g.fg = 3;  // should be K-1 = 2
    CHECK_THROWS_AS(
        static_cast<void>(losses::loss_cls(adf::Var::constant(m), adf::Var::constant(x),
                                           tags({1.0, 0.0, 1.0}, 1, 3), g, kEps)),
        ConfigError);
}

TEST_CASE("classifier pretraining loss hand values") {
    auto run = [](std::vector<double> z, std::vector<double> y, int b, int k) {
        return losses::loss_classifier(adf::Var::constant(Tensor({b, k - 1}, std::move(z))), tags(std::move(y), b, k),
                                       kEps)
            .value()[0];
    };
    CHECK(run({1.0}, {1.0, 1.0}, 1, 2) == 0.0);
    CHECK(run({0.5}, {1.0, 1.0}, 1, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(run({0.8, 0.3}, {1.0, 0.0, 1.0}, 1, 3) == doctest::Approx(0.579818).epsilon(1e-5));
    CHECK(run({0.8, 0.3}, {1.0, 0.0, 1.0}, 1, 3) ==
          doctest::Approx(-std::log(0.8) - std::log(0.7)).epsilon(1e-12));
    CHECK_THROWS_AS(static_cast<void>(losses::loss_classifier(adf::Var::constant(Tensor({1, 3}, 0.5)),
                                                              tags({1.0, 1.0}, 1, 2), kEps)),
                    DimensionError);
}

TEST_CASE("total loss: weights off reduces to reconstruction, report identity holds") {
    Rng rng(89);
    const int b = 2, k = 2, h = 4, w = 4;
    Tensor m = test::random_mask_stack(rng, b, k, h, w);
    Tensor x = rand_uniform(rng, {b, k, 3, h, w}, -1.0, 1.0);
    Tensor img = rand_uniform(rng, {b, 3, h, w}, 0.0, 1.0);
    auto y = tags({1.0, 1.0, 0.0, 1.0}, 2, 2);
    LinearStubClassifier g(1, 3, h, w, 91);

    core::LossWeights w0;
    w0.lambda_m = 0.0;
    w0.lambda_c = 0.0;
    auto t0 = losses::loss_total(adf::Var::constant(m), adf::Var::constant(x), adf::Var::constant(img), y, g, w0);
    CHECK(t0.report.total == t0.report.recon);

    core::LossWeights w1;  // defaults: lambda_m = lambda_c = 1e-3
    auto t1 = losses::loss_total(adf::Var::constant(m), adf::Var::constant(x), adf::Var::constant(img), y, g, w1);
    const double sum = t1.report.recon + 1e-3 * t1.report.mask + 1e-3 * t1.report.cls;
    CHECK(t1.report.total == doctest::Approx(sum).epsilon(1e-9));

    Rng wr(93);
    for (int trial = 0; trial < 5; ++trial) {
        core::LossWeights wt;
        wt.lambda_m = wr.uniform(0.0, 2.0);
        wt.lambda_c = wr.uniform(0.0, 2.0);
        auto tt = losses::loss_total(adf::Var::constant(m), adf::Var::constant(x), adf::Var::constant(img), y, g, wt);
        CHECK(tt.report.total ==
              doctest::Approx(tt.report.recon + wt.lambda_m * tt.report.mask + wt.lambda_c * tt.report.cls)
                  .epsilon(1e-9));
    }
}

TEST_CASE("total loss at a constructed fixed point is tiny") {
    // one-hot half/half mask, image-lets that reproduce the image, perfect stub
    const int b = 1, k = 2, h = 4, w = 4;
    Rng rng(97);
    Tensor img = rand_uniform(rng, {b, 3, h, w}, 0.0, 1.0);
    Tensor m({b, k, h, w}, 0.0);
    for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi) {
            const int cls = wi < w / 2 ? 0 : 1;
            m.at({0, cls, hi, wi}) = 1.0;
        }
    Tensor x({b, k, 3, h, w});
    for (int ki = 0; ki < k; ++ki)
        for (int ci = 0; ci < 3; ++ci)
            for (int hi = 0; hi < h; ++hi)
                for (int wi = 0; wi < w; ++wi) x.at({0, ki, ci, hi, wi}) = img.at({0, ci, hi, wi});
    ScriptedClassifier g;
    g.fg = 1;
    g.outputs = {Tensor({1, 1}, 1.0), Tensor({1, 1}, 0.0)};

    core::LossWeights wt;
    wt.lambda_m = 1e-4;
    wt.lambda_c = 1e-4;
    auto t = losses::loss_total(adf::Var::constant(m), adf::Var::constant(x), adf::Var::constant(img),
                                tags({1.0, 1.0}, 1, 2), g, wt);
    CHECK(t.report.recon == 0.0);
    CHECK(t.report.cls == 0.0);
    CHECK(t.report.total <= 1e-4);
}

TEST_CASE("gradients of every loss match finite differences (through mask logits)") {
    for (int k : {2, 3}) {
        Rng rng(100 + k);
        const int b = 2, h = 4, w = 4;
        Tensor logits = rand_uniform(rng, {b, k, h, w}, -1.0, 1.0);
        Tensor x0 = rand_uniform(rng, {b, k, 3, h, w}, -1.0, 1.0);
        Tensor img = rand_uniform(rng, {b, 3, h, w}, 0.0, 1.0);
        std::vector<double> yv;
        for (int bi = 0; bi < b; ++bi)
            for (int ki = 0; ki < k; ++ki) yv.push_back(ki == k - 1 ? 1.0 : (ki + bi) % 2 == 0 ? 1.0 : 0.0);
        auto y = tags(yv, b, k);
        LinearStubClassifier g(k - 1, 3, h, w, 200 + k);
        core::LossWeights wt;  // paper defaults

        auto total_of = [&](const Tensor& lg, const Tensor& xx) {
            adf::Var mask = adf::softmax_channels(adf::Var::input(lg));
            return losses::loss_total(mask, adf::Var::input(xx), adf::Var::constant(img), y, g, wt)
                .report.total;
        };

        adf::Var vlogits = adf::Var::input(logits, true);
        adf::Var vx = adf::Var::input(x0, true);
        auto t = losses::loss_total(adf::softmax_channels(vlogits), vx, adf::Var::constant(img), y, g, wt);
        adf::backward(t.total);

        Tensor fd_logits =
            test::finite_diff([&](const Tensor& lg) { return total_of(lg, x0); }, logits);
        Tensor fd_x = test::finite_diff([&](const Tensor& xx) { return total_of(logits, xx); }, x0);
        CHECK(test::max_rel_err(vlogits.grad(), fd_logits) < 1e-4);
        CHECK(test::max_rel_err(vx.grad(), fd_x) < 1e-4);

        // loss_recon gradient with respect to the raw reconstruction
        Tensor rec0 = rand_uniform(rng, {b, 3, h, w}, 0.0, 1.0);
        adf::Var vrec = adf::Var::input(rec0, true);
        adf::backward(losses::loss_recon(vrec, adf::Var::constant(img)));
        Tensor fd_rec = test::finite_diff(
            [&](const Tensor& rc) { return losses::loss_recon(adf::Var::input(rc), adf::Var::constant(img)).value()[0]; },
            rec0);
        CHECK(test::max_rel_err(vrec.grad(), fd_rec) < 1e-4);

        // loss_classifier gradient with respect to pre-sigmoid scores
        Tensor zlog = rand_uniform(rng, {b, k - 1}, -1.5, 1.5);
        adf::Var vz = adf::Var::input(zlog, true);
        adf::backward(losses::loss_classifier(adf::sigmoid(vz), y, kEps));
        Tensor fd_z = test::finite_diff(
            [&](const Tensor& zz) {
                return losses::loss_classifier(adf::sigmoid(adf::Var::input(zz)), y, kEps).value()[0];
            },
            zlog);
        CHECK(test::max_rel_err(vz.grad(), fd_z) < 1e-4);
    }
}

TEST_CASE("no gradient reaches a frozen stub classifier") {
    Rng rng(111);
    const int b = 1, k = 2, h = 4, w = 4;
    Tensor m = test::random_mask_stack(rng, b, k, h, w);
    Tensor x = rand_uniform(rng, {b, k, 3, h, w}, -1.0, 1.0);
    LinearStubClassifier g(1, 3, h, w, 113);
    adf::Var vm = adf::Var::input(m, true);
    adf::Var vx = adf::Var::input(x, true);
    adf::Var loss = losses::loss_cls(vm, vx, tags({1.0, 1.0}, 1, 2), g, kEps);
    adf::backward(loss);
    CHECK(vm.grad().defined());
    CHECK(vx.grad().defined());
    CHECK_FALSE(g.w.grad().defined());
    CHECK_FALSE(g.b.grad().defined());
}

}  // TEST_SUITE

#include <doctest.h>

#include <filesystem>

#include "testutil.hpp"
#include "wsss/errors.hpp"
#include "wsss/models.hpp"

using namespace wsss;
namespace md = wsss::models;

TEST_SUITE("models") {

TEST_CASE("published architecture: per-layer and total parameter counts") {
    md::ModelSpec spec = md::paper_segmenter_spec(2);

    const long long enc_expected[] = {38720, 221440, 885248, 3539968, 4719616};
    REQUIRE(spec.encoder.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(spec.encoder[i].declared_params == enc_expected[i]);
    CHECK(spec.encoder_total() == 9404992);

    const long long dec_expected[] = {9438208, 2359808, 590080, 147584, 36928, 3462};
    REQUIRE(spec.decoder_x.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(spec.decoder_x[i].declared_params == dec_expected[i]);
    CHECK(spec.decoder_x_total() == 12576070);

    // mask decoder differs only in the head: 2 channels instead of 6
    CHECK(spec.decoder_mask.back().declared_params == 1154);
    CHECK(spec.decoder_mask_total() == 12573762);

    // skip concatenation widths implied by the counts
    const int stage_inputs[] = {1536, 768, 384, 192};
    const int stage_out[] = {512, 256, 128, 64};
    for (int i = 0; i < 4; ++i) {
        const long long second_conv = md::conv_param_count(stage_out[i], stage_out[i], 3);
        const long long first_conv = spec.decoder_x[i].declared_params - second_conv;
        CHECK(first_conv == md::conv_param_count(stage_inputs[i], stage_out[i], 3));
    }

    // constructed model matches the declaration tensor-for-tensor
    md::Segmenter seg(spec, 1);
    md::ParamTable table = seg.param_table();
    CHECK(table.section_total("encoder", false) == 9404992);
    CHECK(table.section_total("decoder_x", false) == 12576070);
    CHECK(table.section_total("decoder_mask", false) == 12573762);
    for (const auto& row : table.rows) CHECK(row.actual == row.declared);
}

TEST_CASE("declared parameter mismatches are rejected at construction") {
    md::ModelSpec spec = md::desk_segmenter_spec(2);
    spec.encoder[1].declared_params += 1;
    CHECK_THROWS_WITH_AS(md::Segmenter(spec, 0), doctest::Contains("encoder stage 2"), ConstructionError);

    md::ModelSpec spec2 = md::desk_segmenter_spec(2);
    spec2.decoder_mask[0].declared_params -= 10;
    CHECK_THROWS_WITH_AS(md::Segmenter(spec2, 0), doctest::Contains("declared"), ConstructionError);

    md::ModelSpec spec3 = md::desk_segmenter_spec(2);
    spec3.skip_wiring = {3, 2, 1, 5};  // out of range
    CHECK_THROWS_AS(md::Segmenter(spec3, 0), ConstructionError);
}

TEST_CASE("desk-scale forward contract: shapes, simplex, determinism") {
    md::Segmenter seg(md::desk_segmenter_spec(2, 64), 7);
    Rng rng(7);
    core::ImageBatch img = core::ImageBatch::checked(rand_uniform(rng, {2, 3, 64, 64}, 0.0, 1.0));
    auto [mask, decomp] = seg.forward_pair(img);
    CHECK(mask.value().shape() == std::vector<int>{2, 2, 64, 64});
    CHECK(decomp.value().shape() == std::vector<int>{2, 2, 3, 64, 64});
    CHECK_NOTHROW(core::MaskStack::checked(mask.value()));
    CHECK_NOTHROW(core::Decomposition::checked(decomp.value()));

    auto [mask2, decomp2] = seg.forward_pair(img);
    CHECK(test::max_abs_diff(mask.value(), mask2.value()) == 0.0);
    CHECK(test::max_abs_diff(decomp.value(), decomp2.value()) == 0.0);

    // any spatial size divisible by 16 works
    core::ImageBatch img2 = core::ImageBatch::checked(rand_uniform(rng, {1, 3, 96, 80}, 0.0, 1.0));
    auto [mask3, decomp3] = seg.forward_pair(img2);
    CHECK(mask3.value().shape() == std::vector<int>{1, 2, 96, 80});
    CHECK(decomp3.value().shape() == std::vector<int>{1, 2, 3, 96, 80});

    CHECK_THROWS_AS(seg.forward_pair(core::ImageBatch{Tensor({1, 3, 50, 50}, 0.5)}), DimensionError);
}

TEST_CASE("encoder weights are shared storage between the two heads") {
    md::Segmenter seg(md::desk_segmenter_spec(2, 64), 3);
    Rng rng(5);
    core::ImageBatch img = core::ImageBatch::checked(rand_uniform(rng, {1, 3, 64, 64}, 0.0, 1.0));
    auto [mask_before, decomp_before] = seg.forward_pair(img);

    // poke one encoder weight through the shared handle; both heads move
    ad::Var w = seg.encoder_first_weight();
    w.value()[0] += 0.35;
    auto [mask_after, decomp_after] = seg.forward_pair(img);
    CHECK(test::max_abs_diff(mask_before.value(), mask_after.value()) > 0.0);
    CHECK(test::max_abs_diff(decomp_before.value(), decomp_after.value()) > 0.0);

    // exactly one storage: parameters() lists each encoder tensor once
    auto params = seg.parameters();
    int enc_params = 0;
    for (auto& [name, v] : seg.named_parameters())
        if (name.rfind("encoder", 0) == 0) ++enc_params;
    CHECK(enc_params == 18);  // 4 blocks * 2 convs * 2 tensors + bottleneck * 2
}

TEST_CASE("classifier: output range, head size, frozen checksum") {
    md::ResNetClassifier g(3, 8, 11);
    CHECK(g.num_outputs() == 2);
    Rng rng(11);
    Tensor img = rand_uniform(rng, {2, 3, 64, 64}, 0.0, 1.0);
    g.set_training(false);
    ad::Var out = g.forward(ad::Var::constant(img));
    CHECK(out.value().shape() == std::vector<int>{2, 2});
    for (int64_t i = 0; i < out.value().size(); ++i) {
        CHECK(out.value()[i] > 0.0);
        CHECK(out.value()[i] < 1.0);
    }

    const uint64_t before = g.checksum();
    g.set_frozen(true);
    ad::Var loss = ad::sum(g.forward(ad::Var::input(img, true)));
    ad::backward(loss);
    CHECK(g.checksum() == before);
    for (ad::Var& p : g.parameters()) CHECK_FALSE(p.grad().defined());

    CHECK_THROWS_AS(md::build_classifier(2, /*pretrained=*/true, 8, 0), ResourceError);
}

TEST_CASE("gradients flow correctly through the frozen classifier into its input") {
    // directional-derivative check through the full residual network in
    // eval mode: this is the exact path the guidance loss trains through
    md::ResNetClassifier g(2, 4, 13);
    g.set_frozen(true);
    g.set_training(false);
    Rng rng(13);
    Tensor x0 = rand_uniform(rng, {1, 3, 32, 32}, 0.1, 0.9);

    auto loss_of = [&](const Tensor& x) {
        ad::Var z = g.forward(ad::Var::constant(x));
        return -std::log(std::max(z.value()[0], 1e-12));
    };
    ad::Var vx = ad::Var::input(x0, true);
    ad::Var z = g.forward(vx);
    ad::backward(ad::scale_add(ad::log(ad::clamp_min(z, 1e-12)), -1.0, 0.0));
    REQUIRE(vx.grad().defined());

    for (uint64_t dseed : {101ull, 102ull, 103ull}) {
        Rng dr(dseed);
        Tensor dir = rand_uniform(dr, x0.shape(), -1.0, 1.0);
        double analytic = 0.0;
        for (int64_t i = 0; i < dir.size(); ++i) analytic += vx.grad()[i] * dir[i];
        const double h = 1e-5;
        Tensor xp = x0, xm = x0;
        for (int64_t i = 0; i < dir.size(); ++i) {
            xp[i] += h * dir[i];
            xm[i] -= h * dir[i];
        }
        const double fd = (loss_of(xp) - loss_of(xm)) / (2.0 * h);
        CHECK(std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)}) < 1e-4);
    }
}

TEST_CASE("segmenter checkpoint round-trip preserves weights and spec") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "wsss_test_ckpt").string();
    fs::remove_all(dir);

    md::Segmenter seg(md::desk_segmenter_spec(3, 64), 17);
    md::save_segmenter(seg, dir);
    md::Segmenter loaded = md::load_segmenter(dir, 0);
    CHECK(loaded.checksum() == seg.checksum());
    CHECK(md::describe_spec_diff(loaded.spec(), seg.spec()).empty());

    md::ResNetClassifier g(3, 8, 19);
    md::save_classifier(g, dir);
    md::ResNetClassifier g2 = md::load_classifier(dir);
    CHECK(g2.checksum() == g.checksum());

    CHECK_FALSE(md::describe_spec_diff(md::desk_segmenter_spec(2, 64), md::desk_segmenter_spec(3, 64)).empty());
    fs::remove_all(dir);
}

}  // TEST_SUITE

#include <catch2/catch_amalgamated.hpp>

#include "diffir/cpen.hpp"
#include "test_util.hpp"

using namespace diffir;

namespace {

CpenConfig toy_cpen(int c_prime = 8) {
    CpenConfig c;
    c.c_prime = c_prime;
    c.unshuffle_factor = 4;
    c.stem_width = 6;
    c.width = 12;
    c.stage_blocks = {1, 1};
    c.head_hidden = 16;
    return c;
}

}  // namespace

TEST_CASE("pixel_unshuffle shape arithmetic and errors") {
    Rng rng(1);
    auto img = ag::constant(rng.uniform_tensor({8, 8, 3}, 0.0, 1.0));
    auto u = ag::pixel_unshuffle(img, 2);
    CHECK(u->value.shape == std::vector<int64_t>{4, 4, 12});
    CHECK_THROWS_AS(ag::pixel_unshuffle(ag::constant(Tensor({6, 7, 3})), 2), std::invalid_argument);
}

TEST_CASE("cpen output length is 4*c_prime regardless of input size") {
    Rng rng(2);
    auto cfg = toy_cpen(64);
    Cpen net;
    net.init(rng, cfg, cfg.in_channels_s2(Task::deblur));
    for (int64_t size : {32, 64, 96}) {
        auto z = net.forward(ag::constant(rng.uniform_tensor({size, size, 3}, 0.0, 1.0)));
        CHECK(z->value.shape == std::vector<int64_t>{256});
    }
}

TEST_CASE("cpen_s1 contract: concat + unshuffle + stack + pooled head") {
    Rng rng(3);
    auto cfg = toy_cpen(8);
    Cpen s1;
    s1.init(rng, cfg, cfg.in_channels_s1(Task::deblur));

    Tensor gt = rng.uniform_tensor({32, 32, 3}, 0.0, 1.0);
    Tensor lq = rng.uniform_tensor({32, 32, 3}, 0.0, 1.0);
    auto z = cpen_s1_forward(s1, gt, lq);
    CHECK(z.timestep == 0);
    CHECK(z.values.size() == 32);
    for (double v : z.values) CHECK(std::isfinite(v));

    // deterministic
    auto z2 = cpen_s1_forward(s1, gt, lq);
    CHECK(z.values == z2.values);

    // shape mismatch between the two images
    Tensor small = rng.uniform_tensor({16, 16, 3}, 0.0, 1.0);
    CHECK_THROWS_AS(cpen_s1_forward(s1, gt, small), std::invalid_argument);
}

TEST_CASE("zero input with zero biases gives the zero vector") {
    Rng rng(4);
    auto cfg = toy_cpen(8);
    Cpen net;
    net.init(rng, cfg, cfg.in_channels_s2(Task::deblur));
    auto z = net.forward(ag::constant(Tensor::zeros({32, 32, 3})));
    for (double v : z->value.data) CHECK(v == 0.0);
}

TEST_CASE("S1 and S2 share every layer shape except the first convolution") {
    Rng rng(5);
    auto cfg = toy_cpen(8);
    Cpen s1, s2;
    s1.init(rng, cfg, cfg.in_channels_s1(Task::inpainting));
    s2.init(rng, cfg, cfg.in_channels_s2(Task::inpainting));
    CHECK(cfg.in_channels_s1(Task::inpainting) == 2 * cfg.in_channels_s2(Task::inpainting));

    nn::ParamMap p1, p2;
    s1.reg(p1, "cpen");
    s2.reg(p2, "cpen");
    REQUIRE(p1.entries.size() == p2.entries.size());
    for (size_t i = 0; i < p1.entries.size(); ++i) {
        CHECK(p1.entries[i].first == p2.entries[i].first);
        if (p1.entries[i].first == "cpen.stem.w") {
            CHECK(p1.entries[i].second->value.dim(3) == 2 * p2.entries[i].second->value.dim(3));
        } else {
            CHECK(p1.entries[i].second->value.shape == p2.entries[i].second->value.shape);
        }
    }
}

TEST_CASE("cpen gradients match finite differences") {
    Rng rng(6);
    CpenConfig cfg = toy_cpen(4);
    cfg.stem_width = 4;
    cfg.width = 6;
    cfg.stage_blocks = {1};
    cfg.head_hidden = 8;
    Cpen net;
    net.init(rng, cfg, cfg.in_channels_s2(Task::deblur));
    nn::ParamMap pm;
    net.reg(pm, "cpen");

    Tensor lq = rng.uniform_tensor({8, 8, 3}, 0.0, 1.0);
    Tensor target = rng.uniform_tensor({16}, -0.5, 0.5);

    std::vector<ag::Var> params;
    for (const auto& [n, v] : pm.entries) params.push_back(v);
    testutil::GradCheck gc;
    gc.tol = 1e-5;
    gc.max_coords = 4;
    bool ok = gc.run([&] { return ag::mse_mean(net.forward(ag::constant(lq)), ag::constant(target)); }, params);
    INFO("max rel err " << gc.max_rel_err << " over " << gc.checked << " coords");
    CHECK(ok);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "gazeatt/san.hpp"

using namespace gazeatt;

namespace {

ImageVolume make_volume(int channels, Shape3 shape, float fill) {
    ImageVolume v;
    v.channels = channels;
    v.shape = shape;
    v.data.assign(channels * shape_voxels(shape), fill);
    return v;
}

ImageVolume random_volume(int channels, Shape3 shape, std::uint64_t seed) {
    ImageVolume v = make_volume(channels, shape, 0.0f);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto& x : v.data) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("downsample_input: constant volume stays constant at quarter shape") {
    ImageVolume v = make_volume(2, {8, 8, 8}, 0.625f);
    ImageVolume d = downsample_input(v, 4);
    CHECK(d.shape == Shape3{2, 2, 2});
    CHECK(d.channels == 2);
    for (float x : d.data) CHECK(x == doctest::Approx(0.625f));
}

TEST_CASE("downsample_input: 2D leaves the depth axis untouched") {
    ImageVolume v = make_volume(1, {1, 64, 64}, 1.0f);
    ImageVolume d = downsample_input(v, 4);
    CHECK(d.shape == Shape3{1, 16, 16});
}

TEST_CASE("downsample_input: average is exact") {
    ImageVolume v = make_volume(1, {1, 2, 2}, 0.0f);
    v.data = {1.0f, 2.0f, 3.0f, 6.0f};
    ImageVolume d = downsample_input(v, 2);
    CHECK(d.shape == Shape3{1, 1, 1});
    CHECK(d.data[0] == doctest::Approx(3.0f));
}

TEST_CASE("downsample_input rejects non-divisible shapes") {
    CHECK_THROWS(downsample_input(make_volume(1, {6, 8, 8}, 0.0f), 4));
}

TEST_CASE("san_forward shape contract, 3D") {
    SanConfig cfg;
    cfg.in_channels = 4;
    std::mt19937_64 rng(1);
    ParamStore params;
    san_init(cfg, params, rng);
    // original 64^3 -> ids 16^3 -> M1 8^3, M2/G 4^3 (= 64/16)
    ag::Var ids = volume_to_var(random_volume(4, {16, 16, 16}, 2));
    SanOutput out = san_forward(ids, cfg, params);
    CHECK(out.m1->shape == std::vector<int>({cfg.c1, 8, 8, 8}));
    CHECK(out.m2->shape == std::vector<int>({cfg.c2, 4, 4, 4}));
    CHECK(out.gaze->shape == std::vector<int>({1, 4, 4, 4}));
    for (double g : out.gaze->val) {
        CHECK(g > 0.0);
        CHECK(g < 1.0);
    }
}

TEST_CASE("san_forward shape contract, 2D") {
    SanConfig cfg;
    cfg.in_channels = 1;
    cfg.spatial_rank = 2;
    std::mt19937_64 rng(3);
    ParamStore params;
    san_init(cfg, params, rng);
    // original 1x64x64 -> ids 1x16x16 -> G 1x1x4x4
    ag::Var ids = volume_to_var(random_volume(1, {1, 16, 16}, 4));
    SanOutput out = san_forward(ids, cfg, params);
    CHECK(out.gaze->shape == std::vector<int>({1, 1, 4, 4}));
    CHECK(out.m2->shape == std::vector<int>({cfg.c2, 1, 4, 4}));
}

TEST_CASE("san_forward with zero weights emits G = 0.5 everywhere") {
    SanConfig cfg;
    cfg.in_channels = 2;
    std::mt19937_64 rng(5);
    ParamStore params;
    san_init(cfg, params, rng);
    for (const auto& [name, var] : params.entries())
        std::fill(var->val.begin(), var->val.end(), 0.0);
    ag::Var ids = volume_to_var(random_volume(2, {8, 8, 8}, 6));
    SanOutput out = san_forward(ids, cfg, params);
    for (double g : out.gaze->val) CHECK(g == doctest::Approx(0.5));
}

TEST_CASE("san parameter names are stable and counted") {
    SanConfig cfg;
    std::mt19937_64 rng(7);
    ParamStore params;
    san_init(cfg, params, rng);
    CHECK(params.contains("san.g1.conv1.w"));
    CHECK(params.contains("san.g2.conv2.w"));
    CHECK(params.contains("san.gaze_head.w"));
    CHECK(params.parameter_count("san.") > 0);
    CHECK(params.parameter_count("san.") == params.parameter_count(""));
}

TEST_CASE("san_forward is deterministic for a fixed seed") {
    SanConfig cfg;
    ImageVolume v = random_volume(4, {16, 16, 16}, 8);
    std::vector<double> first;
    for (int run = 0; run < 2; ++run) {
        std::mt19937_64 rng(99);
        ParamStore params;
        san_init(cfg, params, rng);
        SanOutput out = san_forward(volume_to_var(v), cfg, params);
        if (run == 0)
            first = out.gaze->val;
        else
            CHECK(first == out.gaze->val);
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "gazeatt/synthetic.hpp"

using namespace gazeatt;
namespace fs = std::filesystem;

TEST_CASE("phantom is a pure function of its seed") {
    PhantomConfig cfg;
    cfg.seed = 321;
    DatasetRecord a = generate_phantom(cfg);
    DatasetRecord b = generate_phantom(cfg);
    CHECK(a.volume.data == b.volume.data);
    CHECK(a.mask->data == b.mask->data);
    cfg.seed = 322;
    CHECK(generate_phantom(cfg).volume.data != a.volume.data);
}

TEST_CASE("mask regions nest like ET c TC c WT") {
    for (std::uint64_t seed : {1ull, 17ull, 300ull}) {
        PhantomConfig cfg;
        cfg.seed = seed;
        DatasetRecord rec = generate_phantom(cfg);
        const auto& m = *rec.mask;
        const std::size_t plane = m.voxels();
        REQUIRE(m.regions == 3);
        for (std::size_t p = 0; p < plane; ++p) {
            // region order is WT(0), TC(1), ET(2): inner regions imply outer
            CHECK(m.data[2 * plane + p] <= m.data[plane + p]);
            CHECK(m.data[plane + p] <= m.data[p]);
        }
    }
}

TEST_CASE("tumor fraction stays in the small-lesion band over 50 seeds") {
    for (int s = 1; s <= 50; ++s) {
        PhantomConfig cfg;
        cfg.seed = s;
        DatasetRecord rec = generate_phantom(cfg);
        double wt = 0;
        for (std::size_t p = 0; p < rec.mask->voxels(); ++p) wt += rec.mask->data[p];
        const double frac = wt / rec.mask->voxels();
        CHECK(frac >= 0.005);
        CHECK(frac <= 0.10);
    }
}

TEST_CASE("expert and non-expert gaze are separable by dilated-mask hit rate") {
    double expert_sum = 0, nonexpert_sum = 0;
    const int seeds = 20;
    for (int s = 1; s <= seeds; ++s) {
        PhantomConfig pc;
        pc.seed = 100 + s;
        DatasetRecord rec = generate_phantom(pc);
        GazeSimConfig gc;
        gc.seed = s;
        expert_sum += gaze_hit_rate(rec, simulate_gaze(rec, gc), 3);
        gc.expertise = GazeSimConfig::Expertise::non_expert;
        nonexpert_sum += gaze_hit_rate(rec, simulate_gaze(rec, gc), 3);
    }
    CHECK(expert_sum / seeds >= 0.80);
    CHECK(nonexpert_sum / seeds <= 0.40);
}

TEST_CASE("zero requested fixations give an empty sequence") {
    PhantomConfig pc;
    pc.seed = 9;
    DatasetRecord rec = generate_phantom(pc);
    GazeSimConfig gc;
    gc.fixations_min = 0;
    gc.fixations_max = 0;
    CHECK(simulate_gaze(rec, gc).samples.empty());
}

TEST_CASE("gaze timestamps are strictly increasing and span the duration") {
    PhantomConfig pc;
    pc.seed = 10;
    DatasetRecord rec = generate_phantom(pc);
    GazeSimConfig gc;
    gc.seed = 4;
    FixationSequence seq = simulate_gaze(rec, gc);
    REQUIRE(!seq.samples.empty());
    for (std::size_t i = 1; i < seq.samples.size(); ++i)
        CHECK(seq.samples[i].t > seq.samples[i - 1].t);
    CHECK(seq.samples.back().t <= gc.duration_ms);
}

TEST_CASE("2D single-channel phantoms carry 5 binary labels") {
    PhantomConfig cfg;
    cfg.shape = {1, 64, 64};
    cfg.channels = 1;
    cfg.num_regions = 1;
    cfg.seed = 12;
    DatasetRecord rec = generate_phantom(cfg);
    REQUIRE(rec.labels);
    CHECK(rec.labels->size() == 5);
    for (float l : *rec.labels) CHECK((l == 0.0f || l == 1.0f));
}

TEST_CASE("build_dataset writes records, manifest, and is seed-deterministic") {
    const fs::path dir = fs::temp_directory_path() / "gazeatt_bench_a";
    const fs::path dir2 = fs::temp_directory_path() / "gazeatt_bench_b";
    fs::remove_all(dir);
    fs::remove_all(dir2);
    DatasetBuildConfig cfg;
    cfg.n = 10;
    cfg.phantom.seed = 55;
    const std::string m1 = build_dataset(cfg, dir.string());
    const std::string m2 = build_dataset(cfg, dir2.string());
    for (int i = 0; i < 10; ++i) {
        char base[32];
        std::snprintf(base, sizeof base, "rec_%04d", i);
        CHECK(fs::exists(dir / (std::string(base) + "_vol.raw")));
        CHECK(fs::exists(dir / (std::string(base) + "_mask.raw")));
        CHECK(fs::exists(dir / (std::string(base) + "_fix.csv")));
    }
    auto slurp = [](const std::string& p) {
        std::ifstream in(p);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(m1) == slurp(m2));
    CHECK(slurp(m1).find("content_hash") != std::string::npos);
}

TEST_CASE("gaze flags cover half the train split at ratio 0.5") {
    const fs::path dir = fs::temp_directory_path() / "gazeatt_bench_ratio";
    fs::remove_all(dir);
    DatasetBuildConfig cfg;
    cfg.n = 14;  // 0.7 * 14 -> 10 train records
    cfg.gaze_ratio = 0.5;
    cfg.phantom.seed = 77;
    const std::string manifest = build_dataset(cfg, dir.string());
    std::ifstream in(manifest);
    const std::string text(std::istreambuf_iterator<char>(in), {});
    int train = 0, flagged = 0;
    std::size_t pos = 0;
    // count records by scanning the manifest entries
    while ((pos = text.find("\"split\": \"train\"", pos)) != std::string::npos) {
        ++train;
        ++pos;
    }
    pos = 0;
    while ((pos = text.find("\"has_gaze\": true", pos)) != std::string::npos) {
        ++flagged;
        ++pos;
    }
    CHECK(train == 10);
    CHECK(flagged == 5);
}

TEST_CASE("impossible geometry is rejected") {
    PhantomConfig cfg;
    cfg.shape = {8, 8, 8};
    cfg.blob_radius_min = 6.0;
    cfg.blob_radius_max = 8.0;
    CHECK_THROWS(generate_phantom(cfg));
}

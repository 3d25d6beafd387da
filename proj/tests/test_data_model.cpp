#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <fstream>
#include <random>

#include "gazeatt/data_model.hpp"

using namespace gazeatt;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "gazeatt_dm_tests";
        fs::create_directories(d);
        return d;
    }();
    return (dir / name).string();
}

ImageVolume random_volume(int channels, Shape3 shape, std::uint64_t seed) {
    ImageVolume v;
    v.channels = channels;
    v.shape = shape;
    v.data.resize(channels * shape_voxels(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(-2.0f, 2.0f);
    for (auto& x : v.data) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("volume zero payload size") {
    ImageVolume v;
    v.channels = 1;
    v.shape = {2, 2, 2};
    v.data.assign(8, 0.0f);
    const std::string p = tmp_path("zeros");
    write_volume(v, p);
    CHECK(fs::file_size(p + ".raw") == 32);  // 8 voxels * 4 bytes
}

TEST_CASE("volume round trip is bitwise") {
    ImageVolume v = random_volume(4, {8, 8, 8}, 99);
    const std::string p = tmp_path("rt");
    write_volume(v, p);
    CHECK(fs::file_size(p + ".raw") == 4 * 8 * 8 * 8 * 4);
    ImageVolume r = read_volume(p);
    CHECK(r.channels == v.channels);
    CHECK(r.shape == v.shape);
    REQUIRE(r.data.size() == v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        REQUIRE(std::memcmp(&r.data[i], &v.data[i], sizeof(float)) == 0);
    }
}

TEST_CASE("truncated payload rejected") {
    ImageVolume v = random_volume(1, {2, 2, 2}, 7);
    const std::string p = tmp_path("trunc");
    write_volume(v, p);
    fs::resize_file(p + ".raw", 20);
    CHECK_THROWS(read_volume(p));
}

TEST_CASE("payload one byte too long rejected") {
    ImageVolume v = random_volume(1, {2, 2, 2}, 8);
    const std::string p = tmp_path("long");
    write_volume(v, p);
    std::ofstream(p + ".raw", std::ios::binary | std::ios::app) << 'x';  // 33 bytes
    CHECK_THROWS(read_volume(p));
}

TEST_CASE("non-finite data refused on write") {
    ImageVolume v = random_volume(1, {2, 2, 2}, 9);
    v.data[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS(write_volume(v, tmp_path("nan")));
}

TEST_CASE("mask and gaze map round trips") {
    SegmentationMask m;
    m.regions = 3;
    m.shape = {4, 4, 4};
    m.data.assign(3 * 64, 0.0f);
    m.data[5] = 1.0f;
    m.data[64 + 5] = 1.0f;
    const std::string pm = tmp_path("mask");
    write_mask(m, pm);
    SegmentationMask rm = read_mask(pm);
    CHECK(rm.regions == 3);
    CHECK(rm.data == m.data);

    GazeMap g;
    g.shape = {2, 4, 4};
    g.data.assign(32, 0.25f);
    g.data[0] = 1.0f;
    const std::string pg = tmp_path("gaze");
    write_gaze_map(g, pg);
    GazeMap rg = read_gaze_map(pg);
    CHECK(rg.shape == g.shape);
    CHECK(rg.data == g.data);
}

TEST_CASE("fixations: header-only file gives empty sequence") {
    const std::string p = tmp_path("fix_empty.csv");
    std::ofstream(p) << "t,x,y,z,duration\n";
    CHECK(read_fixations(p).samples.empty());
}

TEST_CASE("fixations: two rows kept in order") {
    const std::string p = tmp_path("fix_two.csv");
    std::ofstream(p) << "t,x,y,z,duration\n0,1,2,3,50\n100,4,5,6,60\n";
    FixationSequence f = read_fixations(p);
    REQUIRE(f.samples.size() == 2);
    CHECK(f.samples[0].t == 0);
    CHECK(f.samples[1].t == 100);
    CHECK(f.samples[1].x == 4);
    CHECK(f.samples[1].duration == 60);
}

TEST_CASE("fixations: non-monotonic t names row 2") {
    const std::string p = tmp_path("fix_mono.csv");
    std::ofstream(p) << "t,x,y,z,duration\n100,1,1,1,10\n50,2,2,2,10\n";
    CHECK_THROWS_WITH_AS(read_fixations(p), doctest::Contains("row 2"),
                         std::invalid_argument);
}

TEST_CASE("fixations: out-of-bounds coordinate names its row") {
    const std::string p = tmp_path("fix_oob.csv");
    std::ofstream(p) << "t,x,y,z,duration\n0,1,1,1,10\n10,99,1,1,10\n";
    CHECK_THROWS_WITH_AS(read_fixations(p, Shape3{8, 8, 8}),
                         doctest::Contains("row 2"), std::invalid_argument);
}

TEST_CASE("fixations: malformed row rejected") {
    const std::string p = tmp_path("fix_bad.csv");
    std::ofstream(p) << "t,x,y,z,duration\n0,1,not_a_number,1,10\n";
    CHECK_THROWS(read_fixations(p));
}

TEST_CASE("fixations: write/read round trip") {
    FixationSequence f;
    for (int i = 0; i < 5; ++i) {
        GazeSample s;
        s.t = 100.0 * i;
        s.x = i + 0.5;
        s.y = 2 * i;
        s.z = 1;
        s.duration = 80;
        f.samples.push_back(s);
    }
    const std::string p = tmp_path("fix_rt.csv");
    write_fixations(f, p);
    FixationSequence r = read_fixations(p);
    REQUIRE(r.samples.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(r.samples[i].t == doctest::Approx(f.samples[i].t));
        CHECK(r.samples[i].x == doctest::Approx(f.samples[i].x));
    }
}

TEST_CASE("validate rejects inconsistent sizes") {
    ImageVolume v;
    v.channels = 2;
    v.shape = {2, 2, 2};
    v.data.assign(15, 0.0f);  // should be 16
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "bev/gradcheck.hpp"
#include "bev/sensors.hpp"

using namespace bev;

namespace {

RadarPoint make_point(double x, double y, double z, float quality, float vx = 0.0f,
                      float vy = 0.0f) {
    RadarPoint p;
    p.position = Eigen::Vector3d(x, y, z);
    p.channels[radar_channel::kVx] = vx;
    p.channels[radar_channel::kVy] = vy;
    p.channels[radar_channel::kRcs] = 1.0f;
    p.channels[radar_channel::kQuality] = quality;
    return p;
}

std::vector<RadarSweep> three_sweeps(const Pose& p0, const Pose& p1, const Pose& p2) {
    std::vector<RadarSweep> sweeps(3);
    sweeps[0] = {{make_point(1, 0, 5, 0.9f)}, 10.0, p0};
    sweeps[1] = {{make_point(2, 0, 6, 0.8f)}, 9.9, p1};
    sweeps[2] = {{make_point(3, 0, 7, 0.7f)}, 9.8, p2};
    return sweeps;
}

}  // namespace

TEST_CASE("aggregate_sweeps") {
    SUBCASE("single sweep is the target unchanged") {
        auto sweeps = three_sweeps(Pose(), Pose(), Pose());
        auto pts = aggregate_sweeps(sweeps, sweeps[0], 1);
        REQUIRE(pts.size() == 1);
        CHECK(pts[0].position == sweeps[0].points[0].position);
        CHECK(pts[0].channels[radar_channel::kTOffset] == 0.0f);
        CHECK(pts[0].quality() == 0.9f);
    }
    SUBCASE("identity ego motion gives a plain union with time offsets") {
        auto sweeps = three_sweeps(Pose(), Pose(), Pose());
        auto pts = aggregate_sweeps(sweeps, sweeps[0], 3);
        REQUIRE(pts.size() == 3);
        CHECK(pts[0].channels[radar_channel::kTOffset] == doctest::Approx(0.0));
        CHECK(pts[1].channels[radar_channel::kTOffset] == doctest::Approx(-0.1));
        CHECK(pts[2].channels[radar_channel::kTOffset] == doctest::Approx(-0.2));
        CHECK(pts[2].position == Eigen::Vector3d(3, 0, 7));
    }
    SUBCASE("forward ego motion shifts older points backward") {
        // ego advanced +1 m in Z between each sweep
        Pose at_t(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 2));
        Pose at_t1(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 1));
        Pose at_t2(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, 0, 0));
        auto sweeps = three_sweeps(at_t, at_t1, at_t2);
        auto pts = aggregate_sweeps(sweeps, sweeps[0], 2);
        REQUIRE(pts.size() == 2);
        CHECK(pts[1].position.z() == doctest::Approx(6.0 - 1.0));
        CHECK(pts[1].position.x() == doctest::Approx(2.0));
    }
    SUBCASE("asking for more sweeps than available uses all of them") {
        auto sweeps = three_sweeps(Pose(), Pose(), Pose());
        CHECK(aggregate_sweeps(sweeps, sweeps[0], 10).size() == 3);
    }
    SUBCASE("velocity channels rotate with the frame change") {
        RadarSweep target{{}, 10.0, Pose::yaw(M_PI / 2)};
        RadarSweep older{{make_point(0, 0, 5, 0.5f, 0.0f, 1.0f)}, 9.9, Pose()};
        auto pts = aggregate_sweeps({target, older}, target, 2);
        REQUIRE(pts.size() == 1);
        // a +Z world velocity seen from a frame yawed 90° becomes -X-ish
        CHECK(pts[0].channels[radar_channel::kVx] == doctest::Approx(-1.0).epsilon(1e-6));
        CHECK(pts[0].channels[radar_channel::kVy] == doctest::Approx(0.0).epsilon(1e-6));
    }
}

TEST_CASE("filter_outliers") {
    std::vector<RadarPoint> pts = {make_point(0, 0, 1, 0.2f), make_point(0, 0, 2, 0.8f),
                                   make_point(0, 0, 3, 1.0f)};
    CHECK(filter_outliers(pts, 0.0).size() == 3);  // filtering off
    CHECK(filter_outliers(pts, 1.0).size() == 1);
    auto mid = filter_outliers({make_point(0, 0, 1, 0.2f), make_point(0, 0, 2, 0.8f)}, 0.5);
    REQUIRE(mid.size() == 1);
    CHECK(mid[0].quality() == 0.8f);
    CHECK_THROWS_AS(filter_outliers(pts, 1.5), std::invalid_argument);
}

TEST_CASE("rasterize_radar") {
    VoxelGrid grid(8, 4, 8, 8, 2, 8);  // 1 m cells

    SUBCASE("single centered point hits the central cell") {
        auto raster = rasterize_radar({make_point(0.01, 0, 0.01, 0.9f)}, grid, true);
        CHECK(raster.shape() == std::vector<int>{15, 8, 8});
        int nonzero_cells = 0;
        for (int z = 0; z < 8; ++z)
            for (int x = 0; x < 8; ++x)
                if (raster.data()[radar_channel::kQuality * 64 + z * 8 + x] != 0.0f) {
                    ++nonzero_cells;
                    CHECK(z == 4);
                    CHECK(x == 4);
                }
        CHECK(nonzero_cells == 1);
    }
    SUBCASE("out-of-span point leaves the raster empty") {
        auto raster = rasterize_radar({make_point(10.0, 0, 0, 0.9f)}, grid, true);
        for (long long i = 0; i < raster.numel(); ++i) CHECK(raster.data()[i] == 0.0f);
    }
    SUBCASE("highest quality wins a cell collision") {
        auto a = make_point(0.2, 0, 0.2, 0.9f);
        a.channels[radar_channel::kRcs] = 42.0f;
        auto b = make_point(0.3, 0, 0.3, 0.1f);
        b.channels[radar_channel::kRcs] = 7.0f;
        for (bool swap : {false, true}) {
            std::vector<RadarPoint> pts = swap ? std::vector<RadarPoint>{b, a}
                                               : std::vector<RadarPoint>{a, b};
            auto raster = rasterize_radar(pts, grid, true);
            CHECK(raster.data()[radar_channel::kRcs * 64 + 4 * 8 + 4] == 42.0f);
        }
    }
    SUBCASE("occupancy mode writes a plain 1") {
        auto raster = rasterize_radar({make_point(0.2, 0, 0.2, 0.9f)}, grid, false);
        CHECK(raster.shape() == std::vector<int>{1, 8, 8});
        CHECK(raster.data()[4 * 8 + 4] == 1.0f);
    }
}

TEST_CASE("rasterize_radar is permutation invariant for distinct qualities") {
    Rng rng(3);
    VoxelGrid grid(16, 4, 16, 8, 2, 8);
    std::vector<RadarPoint> pts;
    for (int i = 0; i < 40; ++i) {
        auto p = make_point(rng.uniform(-9, 9), rng.uniform(-1, 1), rng.uniform(-9, 9),
                            static_cast<float>(0.01 * i + 0.1), static_cast<float>(i), 0.0f);
        pts.push_back(p);
    }
    auto base = rasterize_radar(pts, grid, true);
    for (int trial = 0; trial < 5; ++trial) {
        // deterministic shuffle
        for (size_t i = pts.size(); i > 1; --i)
            std::swap(pts[i - 1], pts[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        auto shuffled = rasterize_radar(pts, grid, true);
        for (long long i = 0; i < base.numel(); ++i)
            CHECK(shuffled.data()[i] == base.data()[i]);
    }
}

TEST_CASE("occupancy channel of a full-return raster matches occupancy mode") {
    // all qualities > 0, so cell-has-point <=> quality channel > 0
    Rng rng(5);
    VoxelGrid grid(16, 4, 16, 16, 2, 16);
    std::vector<RadarPoint> pts;
    for (int i = 0; i < 60; ++i)
        pts.push_back(make_point(rng.uniform(-10, 10), 0, rng.uniform(-10, 10),
                                 static_cast<float>(rng.uniform(0.05, 1.0))));
    auto full = rasterize_radar(pts, grid, true);
    auto occ = rasterize_radar(pts, grid, false);
    const long long cells = grid.num_bev_cells();
    for (long long i = 0; i < cells; ++i) {
        const bool has = full.data()[radar_channel::kQuality * cells + i] > 0.0f;
        CHECK(has == (occ.data()[i] == 1.0f));
    }
}

TEST_CASE("aggregate once then rasterize equals rasterizing the target") {
    auto sweeps = three_sweeps(Pose(), Pose(), Pose());
    VoxelGrid grid(16, 4, 16, 16, 2, 16);
    auto direct = rasterize_radar(sweeps[0].points, grid, true);
    auto via = rasterize_radar(aggregate_sweeps(sweeps, sweeps[0], 1), grid, true);
    for (long long i = 0; i < direct.numel(); ++i) CHECK(direct.data()[i] == via.data()[i]);
}

TEST_CASE("voxelize_lidar") {
    VoxelGrid grid(8, 4, 8, 8, 2, 8);
    SUBCASE("empty cloud gives a zero grid") {
        Tensor<float> none;
        auto occ = voxelize_lidar(none, grid);
        CHECK(occ.shape() == std::vector<int>{2, 8, 8});
        for (long long i = 0; i < occ.numel(); ++i) CHECK(occ.data()[i] == 0.0f);
    }
    SUBCASE("one point sets exactly one cell; duplicates stay binary") {
        Tensor<float> pts({2, 3}, {0.2f, -0.5f, 0.2f, 0.2f, -0.5f, 0.2f});
        auto occ = voxelize_lidar(pts, grid);
        float total = 0.0f;
        for (long long i = 0; i < occ.numel(); ++i) total += occ.data()[i];
        CHECK(total == 1.0f);
        // y=-0.5 falls in the lower Y cell (cell 0 spans [-2, 0))
        CHECK(occ.data()[0 * 64 + 4 * 8 + 4] == 1.0f);
    }
    SUBCASE("out-of-span points are dropped") {
        Tensor<float> pts({1, 3}, {0.0f, 3.5f, 0.0f});
        auto occ = voxelize_lidar(pts, grid);
        for (long long i = 0; i < occ.numel(); ++i) CHECK(occ.data()[i] == 0.0f);
    }
}

TEST_CASE("radar tensor round trip") {
    Rng rng(7);
    std::vector<RadarPoint> pts;
    for (int i = 0; i < 10; ++i) {
        auto p = make_point(rng.uniform(-5, 5), rng.uniform(-1, 1), rng.uniform(-5, 5),
                            static_cast<float>(rng.uniform(0, 1)));
        for (int c = 0; c < kRadarChannels; ++c)
            p.channels[static_cast<size_t>(c)] = static_cast<float>(rng.uniform(-2, 2));
        pts.push_back(p);
    }
    auto t = radar_to_tensor(pts);
    CHECK(t.shape() == std::vector<int>{10, 18});
    auto back = radar_from_tensor(t);
    for (size_t i = 0; i < pts.size(); ++i) {
        CHECK(back[i].position.x() == doctest::Approx(pts[i].position.x()).epsilon(1e-7));
        CHECK(back[i].channels == pts[i].channels);
    }
}

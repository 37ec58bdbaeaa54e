#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "bev/geometry.hpp"
#include "bev/tensor.hpp"

// Radar and LiDAR ingestion: sweep aggregation, outlier filtering, and BEV
// rasterization.

namespace bev {

/// 15 non-position channels per radar return; serialized field order is
/// x, y, z, vx, vy, rcs, quality, t_offset, aux0..aux9.
inline constexpr int kRadarChannels = 15;

namespace radar_channel {
inline constexpr int kVx = 0;       // ground-plane X velocity, ego-compensated
inline constexpr int kVy = 1;       // ground-plane Z velocity, ego-compensated
inline constexpr int kRcs = 2;      // reflectivity
inline constexpr int kQuality = 3;  // [0, 1] confidence
inline constexpr int kTOffset = 4;  // seconds relative to the sample timestamp
inline constexpr int kAux0 = 5;     // 10 auxiliary meta fields follow
}  // namespace radar_channel

struct RadarPoint {
    Eigen::Vector3d position;  // meters, sweep ego frame
    std::array<float, kRadarChannels> channels{};

    float quality() const { return channels[radar_channel::kQuality]; }
};

struct RadarSweep {
    std::vector<RadarPoint> points;
    double timestamp = 0.0;
    Pose ego_pose;  // world-from-ego at timestamp
};

/// Union of the newest `n_sweeps` point sets, positions (and velocity
/// channels) re-expressed in the target sweep's ego frame; the t_offset
/// channel becomes sweep.timestamp − target.timestamp. Asking for more
/// sweeps than available uses all of them.
inline std::vector<RadarPoint> aggregate_sweeps(const std::vector<RadarSweep>& sweeps,
                                                const RadarSweep& target, int n_sweeps) {
    BEV_CHECK(n_sweeps >= 1, "aggregate_sweeps: n_sweeps must be >= 1");
    const int take = std::min<int>(n_sweeps, static_cast<int>(sweeps.size()));
    std::vector<RadarPoint> out;
    for (int k = 0; k < take; ++k) {
        const RadarSweep& sweep = sweeps[static_cast<size_t>(k)];
        if (k > 0)
            BEV_CHECK(sweep.timestamp < sweeps[static_cast<size_t>(k - 1)].timestamp,
                      "aggregate_sweeps: sweeps must be sorted newest-first");
        const Pose rel = target.ego_pose.inverse().compose(sweep.ego_pose);
        const float dt = static_cast<float>(sweep.timestamp - target.timestamp);
        for (const RadarPoint& p : sweep.points) {
            RadarPoint q = p;
            q.position = rel.apply(p.position);
            const Eigen::Vector3d v = rel.rotate(Eigen::Vector3d(
                p.channels[radar_channel::kVx], 0.0, p.channels[radar_channel::kVy]));
            q.channels[radar_channel::kVx] = static_cast<float>(v.x());
            q.channels[radar_channel::kVy] = static_cast<float>(v.z());
            q.channels[radar_channel::kTOffset] = dt;
            out.push_back(q);
        }
    }
    return out;
}

/// Re-expresses points (positions and velocity channels) under `rel`, which
/// maps the points' current frame into the target frame.
inline std::vector<RadarPoint> transform_points(std::vector<RadarPoint> points, const Pose& rel) {
    for (RadarPoint& p : points) {
        p.position = rel.apply(p.position);
        const Eigen::Vector3d v = rel.rotate(
            Eigen::Vector3d(p.channels[radar_channel::kVx], 0.0, p.channels[radar_channel::kVy]));
        p.channels[radar_channel::kVx] = static_cast<float>(v.x());
        p.channels[radar_channel::kVy] = static_cast<float>(v.z());
    }
    return points;
}

/// Keeps points with quality >= threshold; threshold 0 disables filtering.
inline std::vector<RadarPoint> filter_outliers(const std::vector<RadarPoint>& points,
                                               double threshold) {
    BEV_CHECK(threshold >= 0.0 && threshold <= 1.0, "filter_outliers: threshold must be in [0,1]");
    std::vector<RadarPoint> out;
    out.reserve(points.size());
    for (const RadarPoint& p : points)
        if (p.quality() >= static_cast<float>(threshold)) out.push_back(p);
    return out;
}

/// Rasterizes radar points (already in the grid reference frame) to the BEV
/// lattice: each in-bounds point writes its 15 channels — or a single
/// occupancy 1 when use_channels is false — to the nearest (Z, X) cell. When
/// several points land in one cell the highest-quality point wins, which
/// makes the result order-free for distinct qualities.
template <class S = float>
Tensor<S> rasterize_radar(const std::vector<RadarPoint>& points, const VoxelGrid& grid,
                          bool use_channels) {
    const int r = use_channels ? kRadarChannels : 1;
    const long long cells = grid.num_bev_cells();
    Tensor<S> out({r, grid.res_z, grid.res_x});
    std::vector<float> best(static_cast<size_t>(cells), -1.0f);
    S* po = out.data();
    for (const RadarPoint& p : points) {
        const long long cell = grid.bev_cell_of(p.position);
        if (cell < 0) continue;
        if (p.quality() <= best[static_cast<size_t>(cell)]) continue;
        best[static_cast<size_t>(cell)] = p.quality();
        if (use_channels) {
            for (int c = 0; c < kRadarChannels; ++c)
                po[c * cells + cell] = static_cast<S>(p.channels[static_cast<size_t>(c)]);
        } else {
            po[cell] = S(1);
        }
    }
    return out;
}

/// Binary occupancy grid shaped Y×Z×X: a cell is 1 iff at least one point
/// falls inside it. Points are in the grid reference frame.
template <class S = float>
Tensor<S> voxelize_lidar(const Tensor<S>& points, const VoxelGrid& grid) {
    BEV_CHECK(!points.defined() || (points.ndim() == 2 && points.dim(1) == 3),
              "voxelize_lidar: points must be N×3");
    Tensor<S> out({grid.res_y, grid.res_z, grid.res_x});
    if (!points.defined()) return out;
    S* po = out.data();
    const S* pp = points.data();
    for (int i = 0; i < points.dim(0); ++i) {
        const Eigen::Vector3d p(static_cast<double>(pp[3 * i]),
                                static_cast<double>(pp[3 * i + 1]),
                                static_cast<double>(pp[3 * i + 2]));
        const int xi = static_cast<int>(std::floor((p.x() / grid.span_x + 0.5) * grid.res_x));
        const int yi = static_cast<int>(std::floor((p.y() / grid.span_y + 0.5) * grid.res_y));
        const int zi = static_cast<int>(std::floor((p.z() / grid.span_z + 0.5) * grid.res_z));
        if (xi < 0 || xi >= grid.res_x || yi < 0 || yi >= grid.res_y || zi < 0 ||
            zi >= grid.res_z)
            continue;
        po[(static_cast<long long>(yi) * grid.res_z + zi) * grid.res_x + xi] = S(1);
    }
    return out;
}

/// Points → N×18 tensor in the serialized field order (empty input is not
/// representable as a blob; callers skip the file and record a zero count).
inline Tensor<float> radar_to_tensor(const std::vector<RadarPoint>& points) {
    BEV_CHECK(!points.empty(), "radar_to_tensor: empty point list");
    Tensor<float> out({static_cast<int>(points.size()), 3 + kRadarChannels});
    float* p = out.data();
    for (const RadarPoint& pt : points) {
        *p++ = static_cast<float>(pt.position.x());
        *p++ = static_cast<float>(pt.position.y());
        *p++ = static_cast<float>(pt.position.z());
        for (float c : pt.channels) *p++ = c;
    }
    return out;
}

inline std::vector<RadarPoint> radar_from_tensor(const Tensor<float>& t) {
    BEV_CHECK(t.ndim() == 2 && t.dim(1) == 3 + kRadarChannels,
              "radar_from_tensor: expected N×18, got ", shape_str(t.shape()));
    std::vector<RadarPoint> out(static_cast<size_t>(t.dim(0)));
    const float* p = t.data();
    for (RadarPoint& pt : out) {
        pt.position = Eigen::Vector3d(p[0], p[1], p[2]);
        for (int c = 0; c < kRadarChannels; ++c) pt.channels[static_cast<size_t>(c)] = p[3 + c];
        p += 3 + kRadarChannels;
    }
    return out;
}

}  // namespace bev

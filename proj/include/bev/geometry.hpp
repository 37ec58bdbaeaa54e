#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>

#include "bev/tensor.hpp"

// Pinhole cameras, rigid poses and the metric voxel grid. Axis convention
// throughout: X left-right, Y up-down (gravity is +Y, pointing down),
// Z forward-back — a camera-style right-handed frame. All geometry runs in
// double; tensor outputs are cast to the caller's scalar.

namespace bev {

/// Points closer than this to the image plane count as "behind" the camera;
/// keeps the projective division away from z = 0.
inline constexpr double kFrustumZMin = 0.1;

struct Intrinsics {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    int width = 1, height = 1;

    Intrinsics() = default;
    Intrinsics(double fx_, double fy_, double cx_, double cy_, int w, int h)
        : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {
        BEV_CHECK(fx > 0.0 && fy > 0.0, "intrinsics: focal lengths must be positive");
        BEV_CHECK(w >= 1 && h >= 1, "intrinsics: image extents must be >= 1");
    }
};

/// Rigid transform, world-from-sensor semantics. Rotation is validated to be
/// orthonormal with determinant +1 within 1e-6.
class Pose {
public:
    Pose() : rot_(Eigen::Matrix3d::Identity()), trans_(Eigen::Vector3d::Zero()) {}

    Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
        : rot_(rotation), trans_(translation) {
        const double ortho = (rot_.transpose() * rot_ - Eigen::Matrix3d::Identity())
                                 .cwiseAbs()
                                 .maxCoeff();
        BEV_CHECK(ortho <= 1e-6, "pose: rotation is not orthonormal (err ", ortho, ")");
        BEV_CHECK(std::abs(rot_.determinant() - 1.0) <= 1e-6,
                  "pose: rotation determinant is not +1");
    }

    /// Rotation about the gravity axis (+Y, pointing down); maps +Z toward +X
    /// for positive angles.
    static Pose yaw(double angle, const Eigen::Vector3d& translation = Eigen::Vector3d::Zero()) {
        const double c = std::cos(angle), s = std::sin(angle);
        Eigen::Matrix3d r;
        r << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
        return Pose(r, translation);
    }

    static Pose from_matrix(const std::array<double, 16>& m) {
        Eigen::Matrix3d r;
        r << m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10];
        BEV_CHECK(m[12] == 0.0 && m[13] == 0.0 && m[14] == 0.0 && m[15] == 1.0,
                  "pose: last matrix row must be [0 0 0 1]");
        return Pose(r, Eigen::Vector3d(m[3], m[7], m[11]));
    }

    std::array<double, 16> to_matrix() const {
        return {rot_(0, 0), rot_(0, 1), rot_(0, 2), trans_(0),
                rot_(1, 0), rot_(1, 1), rot_(1, 2), trans_(1),
                rot_(2, 0), rot_(2, 1), rot_(2, 2), trans_(2),
                0.0,        0.0,        0.0,        1.0};
    }

    const Eigen::Matrix3d& rotation() const { return rot_; }
    const Eigen::Vector3d& translation() const { return trans_; }

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rot_ * p + trans_; }
    Eigen::Vector3d apply_inverse(const Eigen::Vector3d& p) const {
        return rot_.transpose() * (p - trans_);
    }
    /// Rotate a direction (no translation), e.g. velocities.
    Eigen::Vector3d rotate(const Eigen::Vector3d& v) const { return rot_ * v; }
    Eigen::Vector3d rotate_inverse(const Eigen::Vector3d& v) const {
        return rot_.transpose() * v;
    }

    Pose compose(const Pose& other) const {
        return Pose(rot_ * other.rot_, rot_ * other.trans_ + trans_);
    }
    Pose inverse() const { return Pose(rot_.transpose(), -(rot_.transpose() * trans_)); }

    /// Heading about the gravity axis, in radians.
    double yaw_angle() const {
        const Eigen::Vector3d fwd = rot_.col(2);
        return std::atan2(fwd.x(), fwd.z());
    }

private:
    Eigen::Matrix3d rot_;
    Eigen::Vector3d trans_;
};

/// Keeps the translation and the heading (yaw about gravity), zeroing pitch
/// and roll so the grid's ground plane stays horizontal.
inline Pose yaw_align(const Pose& pose) {
    const Eigen::Vector3d fwd = pose.rotation().col(2);
    const double norm = std::hypot(fwd.x(), fwd.z());
    BEV_CHECK(norm > 1e-6, "yaw_align: degenerate heading (sensor looks along gravity)");
    return Pose::yaw(std::atan2(fwd.x(), fwd.z()), pose.translation());
}

/// Metric 3D volume: span in meters, discretization in cells, and the pose
/// anchoring it in the world. Cell ordering is Z-major, then Y, then X.
struct VoxelGrid {
    double span_x = 100.0, span_y = 10.0, span_z = 100.0;
    int res_x = 200, res_y = 8, res_z = 200;
    Pose reference;

    VoxelGrid() = default;
    VoxelGrid(double sx, double sy, double sz, int rx, int ry, int rz, Pose ref = Pose())
        : span_x(sx), span_y(sy), span_z(sz), res_x(rx), res_y(ry), res_z(rz),
          reference(std::move(ref)) {
        BEV_CHECK(sx > 0 && sy > 0 && sz > 0, "voxel grid: spans must be positive");
        BEV_CHECK(rx >= 1 && ry >= 1 && rz >= 1, "voxel grid: resolutions must be >= 1");
    }

    double cell_x() const { return span_x / res_x; }
    double cell_y() const { return span_y / res_y; }
    double cell_z() const { return span_z / res_z; }
    long long num_cells() const { return static_cast<long long>(res_z) * res_y * res_x; }
    long long num_bev_cells() const { return static_cast<long long>(res_z) * res_x; }

    /// Reference-frame coordinate of the center of cell (zi, yi, xi).
    Eigen::Vector3d cell_center(int zi, int yi, int xi) const {
        return {((xi + 0.5) / res_x - 0.5) * span_x, ((yi + 0.5) / res_y - 0.5) * span_y,
                ((zi + 0.5) / res_z - 0.5) * span_z};
    }

    /// Flat cell index of a reference-frame point, or -1 if out of bounds.
    long long cell_of(const Eigen::Vector3d& p) const {
        const int xi = static_cast<int>(std::floor((p.x() / span_x + 0.5) * res_x));
        const int yi = static_cast<int>(std::floor((p.y() / span_y + 0.5) * res_y));
        const int zi = static_cast<int>(std::floor((p.z() / span_z + 0.5) * res_z));
        if (xi < 0 || xi >= res_x || yi < 0 || yi >= res_y || zi < 0 || zi >= res_z) return -1;
        return (static_cast<long long>(zi) * res_y + yi) * res_x + xi;
    }

    /// Flat BEV (Z, X) cell index of a reference-frame point, ignoring Y, or
    /// -1 if out of bounds. Used by the BEV rasterizers.
    long long bev_cell_of(const Eigen::Vector3d& p) const {
        const int xi = static_cast<int>(std::floor((p.x() / span_x + 0.5) * res_x));
        const int zi = static_cast<int>(std::floor((p.z() / span_z + 0.5) * res_z));
        if (xi < 0 || xi >= res_x || zi < 0 || zi >= res_z) return -1;
        return static_cast<long long>(zi) * res_x + xi;
    }
};

/// World-frame centers of all cells, (res_z·res_y·res_x)×3, Z-major then Y
/// then X.
template <class S = double>
Tensor<S> voxel_centers(const VoxelGrid& grid) {
    Tensor<S> out({static_cast<int>(grid.num_cells()), 3});
    S* p = out.data();
    for (int zi = 0; zi < grid.res_z; ++zi)
        for (int yi = 0; yi < grid.res_y; ++yi)
            for (int xi = 0; xi < grid.res_x; ++xi) {
                const Eigen::Vector3d w = grid.reference.apply(grid.cell_center(zi, yi, xi));
                *p++ = static_cast<S>(w.x());
                *p++ = static_cast<S>(w.y());
                *p++ = static_cast<S>(w.z());
            }
    return out;
}

template <class S>
struct Projection {
    Tensor<S> pixels;             // N×2, (u, v); undefined where !in_front
    Tensor<S> depth;              // N, camera-frame z
    std::vector<uint8_t> in_front;  // N, z > kFrustumZMin
};

/// Projects world points through a pinhole camera. Pixels of points at or
/// behind the near plane are written as -1e9 and must be masked by callers.
template <class S>
Projection<S> project(const Intrinsics& intr, const Pose& world_from_cam,
                      const Tensor<S>& points) {
    BEV_CHECK(points.defined() && points.ndim() == 2 && points.dim(1) == 3,
              "project: points must be N×3");
    const int n = points.dim(0);
    Projection<S> out;
    out.pixels = Tensor<S>({n, 2});
    out.depth = Tensor<S>({n});
    out.in_front.assign(static_cast<size_t>(n), 0);
    const Eigen::Matrix3d rt = world_from_cam.rotation().transpose();
    const Eigen::Vector3d t = world_from_cam.translation();
    const S* pp = points.data();
    S* px = out.pixels.data();
    S* pd = out.depth.data();
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d w(static_cast<double>(pp[3 * i]), static_cast<double>(pp[3 * i + 1]),
                                static_cast<double>(pp[3 * i + 2]));
        const Eigen::Vector3d c = rt * (w - t);
        pd[i] = static_cast<S>(c.z());
        if (c.z() > kFrustumZMin) {
            out.in_front[static_cast<size_t>(i)] = 1;
            px[2 * i] = static_cast<S>(intr.fx * c.x() / c.z() + intr.cx);
            px[2 * i + 1] = static_cast<S>(intr.fy * c.y() / c.z() + intr.cy);
        } else {
            px[2 * i] = static_cast<S>(-1e9);
            px[2 * i + 1] = static_cast<S>(-1e9);
        }
    }
    return out;
}

/// Inverse of project for a single pixel at a given camera-frame depth.
inline Eigen::Vector3d unproject(const Intrinsics& intr, const Pose& world_from_cam, double u,
                                 double v, double depth) {
    const Eigen::Vector3d cam((u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth,
                              depth);
    return world_from_cam.apply(cam);
}

/// Intrinsics after resizing by `scale` and cropping at pixel offset
/// (dx, dy); the crop extents become the new image size.
inline Intrinsics adjust_intrinsics(const Intrinsics& intr, double scale, double dx, double dy,
                                    int crop_w, int crop_h) {
    BEV_CHECK(scale > 0.0, "adjust_intrinsics: scale must be positive");
    return Intrinsics(scale * intr.fx, scale * intr.fy, scale * intr.cx - dx,
                      scale * intr.cy - dy, crop_w, crop_h);
}

inline Intrinsics adjust_intrinsics(const Intrinsics& intr, double scale, double dx, double dy) {
    return adjust_intrinsics(intr, scale, dx, dy,
                             static_cast<int>(std::lround(scale * intr.width - dx)),
                             static_cast<int>(std::lround(scale * intr.height - dy)));
}

}  // namespace bev

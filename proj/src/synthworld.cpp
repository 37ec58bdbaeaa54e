#include "bev/synthworld.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bev/blob.hpp"

namespace bev {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// scene generation

constexpr double kEgoClearance = 4.0;

std::array<Eigen::Vector3d, 4> footprint_corners(const BoxAnnotation& b) {
    const Eigen::Vector3d heading(std::sin(b.yaw), 0.0, std::cos(b.yaw));
    const Eigen::Vector3d lateral(std::cos(b.yaw), 0.0, -std::sin(b.yaw));
    const Eigen::Vector3d c(b.cx, 0.0, b.cz);
    const Eigen::Vector3d dl = 0.5 * b.length * heading;
    const Eigen::Vector3d dw = 0.5 * b.width * lateral;
    return {c + dl + dw, c + dl - dw, c - dl - dw, c - dl + dw};
}

// separating-axis test for two ground-plane rectangles
bool footprints_overlap(const BoxAnnotation& a, const BoxAnnotation& b) {
    const auto ca = footprint_corners(a);
    const auto cb = footprint_corners(b);
    const std::array<Eigen::Vector2d, 4> axes = {
        Eigen::Vector2d(std::sin(a.yaw), std::cos(a.yaw)),
        Eigen::Vector2d(std::cos(a.yaw), -std::sin(a.yaw)),
        Eigen::Vector2d(std::sin(b.yaw), std::cos(b.yaw)),
        Eigen::Vector2d(std::cos(b.yaw), -std::sin(b.yaw))};
    for (const Eigen::Vector2d& axis : axes) {
        double amin = 1e30, amax = -1e30, bmin = 1e30, bmax = -1e30;
        for (const auto& p : ca) {
            const double v = axis.x() * p.x() + axis.y() * p.z();
            amin = std::min(amin, v);
            amax = std::max(amax, v);
        }
        for (const auto& p : cb) {
            const double v = axis.x() * p.x() + axis.y() * p.z();
            bmin = std::min(bmin, v);
            bmax = std::max(bmax, v);
        }
        if (amax < bmin || bmax < amin) return false;
    }
    return true;
}

std::vector<Camera> build_rig(const SynthConfig& cfg) {
    // paper layout: front, front-left, front-right, back-left, back, back-right
    const double yaws[6] = {0.0, -M_PI / 3, M_PI / 3, -2 * M_PI / 3, M_PI, 2 * M_PI / 3};
    const double fx = cfg.image_w / 1.4;  // ~70 degree horizontal field of view
    const Intrinsics intr(fx, fx, cfg.image_w / 2.0, cfg.image_h / 2.0, cfg.image_w,
                          cfg.image_h);
    std::vector<Camera> rig;
    for (double y : yaws)
        rig.push_back({intr, Pose::yaw(y, Eigen::Vector3d(0.8 * std::sin(y), -1.6,
                                                          0.8 * std::cos(y)))});
    return rig;
}

}  // namespace

Scene generate_scene(Rng& rng, const SynthConfig& config) {
    config.validate();
    Scene scene;
    scene.rig = build_rig(config);

    const double speed = rng.uniform(3.0, 9.0);
    const double yaw_rate = rng.uniform(-0.15, 0.15);
    Eigen::Vector3d pos(0, 0, 0);
    double yaw = 0.0;
    scene.ego_trajectory[0] = Pose();
    for (int k = 1; k < 3; ++k) {
        yaw -= yaw_rate * kSweepInterval;
        pos -= speed * kSweepInterval * Eigen::Vector3d(std::sin(yaw), 0.0, std::cos(yaw));
        scene.ego_trajectory[static_cast<size_t>(k)] = Pose::yaw(yaw, pos);
    }

    const int target = rng.uniform_int(config.boxes_min, config.boxes_max);
    int budget = 100 * std::max(target, 1);
    while (static_cast<int>(scene.boxes.size()) < target && budget > 0) {
        --budget;
        BoxAnnotation b;
        b.cx = rng.uniform(-config.placement_radius, config.placement_radius);
        b.cz = rng.uniform(-config.placement_radius, config.placement_radius);
        if (std::hypot(b.cx, b.cz) < kEgoClearance) continue;
        b.length = rng.uniform(3.5, 6.0);
        b.width = rng.uniform(1.6, 2.2);
        b.height = rng.uniform(1.4, 2.2);
        b.yaw = rng.uniform(-M_PI, M_PI);
        const double v = rng.uniform() < 0.5 ? 0.0 : rng.uniform(1.0, 12.0);
        b.vx = v * std::sin(b.yaw);
        b.vz = v * std::cos(b.yaw);
        b.color = rng.uniform_int(0, 7);
        bool clash = false;
        for (const BoxAnnotation& other : scene.boxes)
            if (footprints_overlap(b, other)) {
                clash = true;
                break;
            }
        if (!clash) scene.boxes.push_back(b);
    }
    if (static_cast<int>(scene.boxes.size()) < target)
        std::cerr << "synthworld: rejection budget exhausted, placed " << scene.boxes.size()
                  << " of " << target << " boxes\n";
    scene.box_visible.assign(scene.boxes.size(), 0);
    return scene;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

const float kPalette[8][3] = {{0.75f, 0.15f, 0.15f}, {0.20f, 0.30f, 0.80f},
                              {0.90f, 0.90f, 0.92f}, {0.12f, 0.12f, 0.14f},
                              {0.65f, 0.67f, 0.70f}, {0.15f, 0.55f, 0.25f},
                              {0.85f, 0.75f, 0.20f}, {0.80f, 0.45f, 0.15f}};

uint64_t cell_hash(int64_t x, int64_t z) {
    uint64_t h = static_cast<uint64_t>(x) * 0x9e3779b97f4a7c15ull ^
                 static_cast<uint64_t>(z) * 0xbf58476d1ce4e5b9ull;
    h ^= h >> 31;
    h *= 0x94d049bb133111ebull;
    return h ^ (h >> 29);
}

struct FrameBuffer {
    int h, w;
    std::vector<float> color;  // 3×H×W
    std::vector<double> depth;
    std::vector<int> ids;

    FrameBuffer(int h_, int w_)
        : h(h_), w(w_), color(static_cast<size_t>(3) * h_ * w_, 0.0f),
          depth(static_cast<size_t>(h_) * w_, 1e30), ids(static_cast<size_t>(h_) * w_, -1) {}
};

// clip a camera-space polygon against z = kFrustumZMin
std::vector<Eigen::Vector3d> clip_near(const std::vector<Eigen::Vector3d>& poly) {
    std::vector<Eigen::Vector3d> out;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d& a = poly[i];
        const Eigen::Vector3d& b = poly[(i + 1) % n];
        const bool ain = a.z() > kFrustumZMin, bin = b.z() > kFrustumZMin;
        if (ain) out.push_back(a);
        if (ain != bin) {
            const double t = (kFrustumZMin - a.z()) / (b.z() - a.z());
            out.push_back(a + t * (b - a));
        }
    }
    return out;
}

void rasterize_face(FrameBuffer& fb, const Intrinsics& intr, const Pose& cam_pose,
                    const std::array<Eigen::Vector3d, 4>& world_quad, const float rgb[3],
                    int id) {
    std::vector<Eigen::Vector3d> cam_poly;
    for (const auto& p : world_quad) cam_poly.push_back(cam_pose.apply_inverse(p));
    cam_poly = clip_near(cam_poly);
    if (cam_poly.size() < 3) return;

    std::vector<Eigen::Vector3d> screen;  // (u, v, 1/z)
    for (const auto& p : cam_poly)
        screen.emplace_back(intr.fx * p.x() / p.z() + intr.cx,
                            intr.fy * p.y() / p.z() + intr.cy, 1.0 / p.z());

    const long long plane = static_cast<long long>(fb.h) * fb.w;
    for (size_t t = 1; t + 1 < screen.size(); ++t) {
        const Eigen::Vector3d& a = screen[0];
        const Eigen::Vector3d& b = screen[t];
        const Eigen::Vector3d& c = screen[t + 1];
        const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
        if (std::abs(area) < 1e-12) continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
        const int x1 = std::min(fb.w - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
        const int y1 = std::min(fb.h - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
        for (int py = y0; py <= y1; ++py) {
            for (int px = x0; px <= x1; ++px) {
                const double w0 = ((b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px)) / area;
                const double w1 = ((c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px)) / area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                const double inv_z = w0 * a.z() + w1 * b.z() + w2 * c.z();
                if (inv_z <= 0) continue;
                const double z = 1.0 / inv_z;
                const long long i = static_cast<long long>(py) * fb.w + px;
                if (z >= fb.depth[static_cast<size_t>(i)]) continue;
                fb.depth[static_cast<size_t>(i)] = z;
                fb.ids[static_cast<size_t>(i)] = id;
                for (int ch = 0; ch < 3; ++ch)
                    fb.color[static_cast<size_t>(ch * plane + i)] = rgb[ch];
            }
        }
    }
}

void shade_background(FrameBuffer& fb, const Intrinsics& intr, const Pose& cam_pose) {
    const Eigen::Matrix3d rot = cam_pose.rotation();
    const Eigen::Vector3d origin = cam_pose.translation();
    const long long plane = static_cast<long long>(fb.h) * fb.w;
    for (int py = 0; py < fb.h; ++py) {
        for (int px = 0; px < fb.w; ++px) {
            const long long i = static_cast<long long>(py) * fb.w + px;
            if (fb.depth[static_cast<size_t>(i)] < 1e29) continue;
            const Eigen::Vector3d dir =
                rot * Eigen::Vector3d((px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, 1.0);
            float r, g, b;
            if (dir.y() > 1e-6) {
                // ground plane y = 0 (camera sits above it, +Y is down)
                const double t = -origin.y() / dir.y();
                const Eigen::Vector3d hit = origin + t * dir;
                const int64_t gx = static_cast<int64_t>(std::floor(hit.x() / 2.0));
                const int64_t gz = static_cast<int64_t>(std::floor(hit.z() / 2.0));
                const float checker = ((gx + gz) & 1) ? 0.05f : 0.0f;
                const float noise =
                    static_cast<float>(cell_hash(gx, gz) & 0xff) / 255.0f * 0.06f;
                const float fade = static_cast<float>(std::min(1.0, 25.0 / (t + 5.0)));
                r = (0.30f + checker + noise) * fade + 0.42f * (1 - fade);
                g = (0.31f + checker + noise) * fade + 0.45f * (1 - fade);
                b = (0.32f + checker + noise) * fade + 0.50f * (1 - fade);
            } else {
                const float k = static_cast<float>(std::min(1.0, -dir.normalized().y() * 1.8));
                r = 0.55f - 0.15f * k;
                g = 0.65f - 0.10f * k;
                b = 0.80f - 0.05f * k;
            }
            fb.color[static_cast<size_t>(i)] = r;
            fb.color[static_cast<size_t>(plane + i)] = g;
            fb.color[static_cast<size_t>(2 * plane + i)] = b;
        }
    }
}

}  // namespace

RenderOutput render_cameras(const Scene& scene, const SynthConfig& config) {
    const Eigen::Vector3d light = Eigen::Vector3d(0.3, 0.85, 0.25).normalized();
    RenderOutput out;
    for (const Camera& cam : scene.rig) {
        FrameBuffer fb(config.image_h, config.image_w);
        for (size_t bi = 0; bi < scene.boxes.size(); ++bi) {
            const BoxAnnotation& box = scene.boxes[bi];
            const auto ground = footprint_corners(box);
            std::array<Eigen::Vector3d, 4> top = ground;
            for (auto& p : top) p.y() = -box.height;
            const float* base = kPalette[box.color & 7];
            // four side faces + the roof
            for (int f = 0; f < 5; ++f) {
                std::array<Eigen::Vector3d, 4> quad;
                Eigen::Vector3d normal;
                if (f < 4) {
                    const int j = (f + 1) % 4;
                    quad = {ground[static_cast<size_t>(f)], ground[static_cast<size_t>(j)],
                            top[static_cast<size_t>(j)], top[static_cast<size_t>(f)]};
                    Eigen::Vector3d mid =
                        0.5 * (ground[static_cast<size_t>(f)] + ground[static_cast<size_t>(j)]);
                    normal = (mid - Eigen::Vector3d(box.cx, 0, box.cz));
                    normal.y() = 0;
                    normal.normalize();
                } else {
                    quad = top;
                    normal = Eigen::Vector3d(0, -1, 0);
                }
                const float lit =
                    0.45f + 0.55f * std::max(0.0f, static_cast<float>(normal.dot(-light)));
                float rgb[3] = {base[0] * lit, base[1] * lit, base[2] * lit};
                rasterize_face(fb, cam.intr, cam.pose, quad, rgb, static_cast<int>(bi));
            }
        }
        shade_background(fb, cam.intr, cam.pose);
        Tensor<float> img({3, config.image_h, config.image_w}, std::move(fb.color));
        out.images.push_back(std::move(img));
        out.ids.push_back(std::move(fb.ids));
    }
    return out;
}

// ---------------------------------------------------------------------------
// radar and lidar

namespace {

BoxAnnotation box_at_time(const BoxAnnotation& b, double dt) {
    BoxAnnotation out = b;
    out.cx += b.vx * dt;
    out.cz += b.vz * dt;
    return out;
}

void fill_aux(RadarPoint& p) {
    // sensor pre-process stand-ins, all derived from the return itself
    const double range_xz = std::hypot(p.position.x(), p.position.z());
    const double azimuth = std::atan2(p.position.x(), p.position.z());
    const double range = p.position.norm();
    p.channels[radar_channel::kAux0] =
        static_cast<float>(std::floor((azimuth + M_PI) / (M_PI / 3.0)));  // sector id
    p.channels[radar_channel::kAux0 + 1] = static_cast<float>(azimuth);
    p.channels[radar_channel::kAux0 + 2] = static_cast<float>(range);
    p.channels[radar_channel::kAux0 + 3] = static_cast<float>(
        100.0 * p.channels[radar_channel::kRcs] / std::max(range * range, 1.0));  // snr proxy
    p.channels[radar_channel::kAux0 + 4] =
        static_cast<float>(std::atan2(-p.position.y(), std::max(range_xz, 1e-6)));  // elevation
}

}  // namespace

std::vector<RadarSweep> simulate_radar(const Scene& scene, const SynthConfig& config, Rng& rng) {
    config.validate();
    std::vector<RadarSweep> sweeps(3);
    for (int k = 0; k < 3; ++k) {
        RadarSweep& sweep = sweeps[static_cast<size_t>(k)];
        sweep.timestamp = -kSweepInterval * k;
        sweep.ego_pose = scene.ego_trajectory[static_cast<size_t>(k)];
        const Eigen::Vector3d ego = sweep.ego_pose.translation();

        for (const BoxAnnotation& base_box : scene.boxes) {
            const BoxAnnotation box = box_at_time(base_box, sweep.timestamp);
            const auto corners = footprint_corners(box);
            // faces whose outward normal points toward the ego
            std::vector<int> facing;
            for (int f = 0; f < 4; ++f) {
                const int j = (f + 1) % 4;
                const Eigen::Vector3d mid =
                    0.5 * (corners[static_cast<size_t>(f)] + corners[static_cast<size_t>(j)]);
                Eigen::Vector3d n = mid - Eigen::Vector3d(box.cx, 0, box.cz);
                n.y() = 0;
                if (n.dot(ego - mid) > 0) facing.push_back(f);
            }
            if (facing.empty()) continue;
            const int n_pts = rng.uniform_int(config.radar_points_min, config.radar_points_max);
            for (int i = 0; i < n_pts; ++i) {
                if (rng.uniform() < config.dropout_rate) {
                    continue;  // missed return
                }
                const int f = facing[static_cast<size_t>(rng.uniform_int(
                    0, static_cast<int>(facing.size()) - 1))];
                const int j = (f + 1) % 4;
                const double u = rng.uniform(0.05, 0.95);
                Eigen::Vector3d p = corners[static_cast<size_t>(f)] +
                                    u * (corners[static_cast<size_t>(j)] - corners[static_cast<size_t>(f)]);
                p.y() = -rng.uniform(0.3, std::min(1.0, box.height - 0.2));
                RadarPoint pt;
                pt.position = Eigen::Vector3d(p.x() + rng.normal(0.0, config.radar_noise),
                                              p.y() + rng.normal(0.0, 0.5 * config.radar_noise),
                                              p.z() + rng.normal(0.0, config.radar_noise));
                // express in the sweep's own ego frame
                pt.position = sweep.ego_pose.apply_inverse(pt.position);
                const Eigen::Vector3d vel =
                    sweep.ego_pose.rotate_inverse(Eigen::Vector3d(box.vx, 0, box.vz));
                pt.channels[radar_channel::kVx] = static_cast<float>(vel.x());
                pt.channels[radar_channel::kVy] = static_cast<float>(vel.z());
                pt.channels[radar_channel::kRcs] = static_cast<float>(
                    std::max(0.1, box.length * box.width * 0.8 + rng.normal(0.0, 1.0)));
                const double range = (p - ego).norm();
                const double vis = std::max(0.0, 1.0 - range / 55.0);
                pt.channels[radar_channel::kQuality] = static_cast<float>(
                    std::clamp(0.3 + 0.7 * vis + rng.normal(0.0, 0.05), 0.3, 1.0));
                pt.channels[radar_channel::kTOffset] = 0.0f;
                fill_aux(pt);
                sweep.points.push_back(pt);

                // multipath-style ghost injection
                if (rng.uniform() < config.ghost_rate / (1.0 - config.ghost_rate)) {
                    RadarPoint ghost;
                    Eigen::Vector3d gp;
                    const double span = std::min(1.2 * config.placement_radius, 45.0);
                    if (rng.uniform() < 0.5) {
                        gp = p * rng.uniform(1.2, 1.8);  // reflected beyond the target
                    } else {
                        gp = Eigen::Vector3d(rng.uniform(-span, span), 0.0,
                                             rng.uniform(-span, span));
                    }
                    gp.y() = -rng.uniform(0.2, 1.2);
                    ghost.position = sweep.ego_pose.apply_inverse(gp);
                    ghost.channels[radar_channel::kVx] = static_cast<float>(rng.normal(0.0, 3.0));
                    ghost.channels[radar_channel::kVy] = static_cast<float>(rng.normal(0.0, 3.0));
                    ghost.channels[radar_channel::kRcs] =
                        static_cast<float>(std::max(0.1, rng.normal(2.0, 1.5)));
                    ghost.channels[radar_channel::kQuality] =
                        static_cast<float>(rng.uniform(0.0, 0.295));
                    ghost.channels[radar_channel::kTOffset] = 0.0f;
                    fill_aux(ghost);
                    sweep.points.push_back(ghost);
                }
            }
        }
    }
    return sweeps;
}

Tensor<float> simulate_lidar(const Scene& scene, const SynthConfig& config, Rng& rng) {
    std::vector<float> pts;
    const Eigen::Vector3d ego(0, 0, 0);
    for (const BoxAnnotation& box : scene.boxes) {
        const auto corners = footprint_corners(box);
        std::vector<int> facing;
        for (int f = 0; f < 4; ++f) {
            const int j = (f + 1) % 4;
            const Eigen::Vector3d mid =
                0.5 * (corners[static_cast<size_t>(f)] + corners[static_cast<size_t>(j)]);
            Eigen::Vector3d n = mid - Eigen::Vector3d(box.cx, 0, box.cz);
            n.y() = 0;
            if (n.dot(ego - mid) > 0) facing.push_back(f);
        }
        for (int i = 0; i < config.lidar_points_per_box; ++i) {
            Eigen::Vector3d p;
            if (!facing.empty() && rng.uniform() < 0.7) {
                const int f = facing[static_cast<size_t>(rng.uniform_int(
                    0, static_cast<int>(facing.size()) - 1))];
                const int j = (f + 1) % 4;
                const double u = rng.uniform(0.0, 1.0);
                p = corners[static_cast<size_t>(f)] +
                    u * (corners[static_cast<size_t>(j)] - corners[static_cast<size_t>(f)]);
                p.y() = -rng.uniform(0.0, box.height);
            } else {
                // roof return
                const double a = rng.uniform(-0.5, 0.5), b = rng.uniform(-0.5, 0.5);
                const Eigen::Vector3d heading(std::sin(box.yaw), 0, std::cos(box.yaw));
                const Eigen::Vector3d lateral(std::cos(box.yaw), 0, -std::sin(box.yaw));
                p = Eigen::Vector3d(box.cx, 0, box.cz) + a * box.length * heading +
                    b * box.width * lateral;
                p.y() = -box.height;
            }
            pts.push_back(static_cast<float>(p.x() + rng.normal(0.0, 0.02)));
            pts.push_back(static_cast<float>(p.y() + rng.normal(0.0, 0.02)));
            pts.push_back(static_cast<float>(p.z() + rng.normal(0.0, 0.02)));
        }
    }
    if (pts.empty()) return Tensor<float>();
    const int n = static_cast<int>(pts.size() / 3);
    return Tensor<float>({n, 3}, std::move(pts));
}

Tensor<float> rasterize_gt(const Scene& scene, const VoxelGrid& grid) {
    const Pose rel = grid.reference.inverse();  // boxes live in the world frame
    std::vector<BoxAnnotation> boxes;
    for (const BoxAnnotation& b : scene.boxes) boxes.push_back(reexpress_box(b, rel));
    return make_targets<float>(boxes, grid).seg;
}

// ---------------------------------------------------------------------------
// dataset io

SceneBundle build_scene_bundle(const SynthConfig& config, int scene_index) {
    Rng scene_rng = Rng(config.seed).fork(0x5ce0e9a5 + static_cast<uint64_t>(scene_index));
    Rng radar_rng = scene_rng.fork(1);
    Rng lidar_rng = scene_rng.fork(2);

    SceneBundle bundle;
    bundle.scene = generate_scene(scene_rng, config);
    RenderOutput render = render_cameras(bundle.scene, config);
    bundle.images = std::move(render.images);
    for (size_t b = 0; b < bundle.scene.boxes.size(); ++b) {
        bool seen = false;
        for (const auto& ids : render.ids)
            for (int id : ids)
                if (id == static_cast<int>(b)) {
                    seen = true;
                    break;
                }
        bundle.scene.box_visible[b] = seen ? 1 : 0;
    }
    bundle.sweeps = simulate_radar(bundle.scene, config, radar_rng);
    bundle.lidar = simulate_lidar(bundle.scene, config, lidar_rng);
    const Pose front_ref = yaw_align(bundle.scene.rig[0].pose);
    bundle.gt = rasterize_gt(bundle.scene, config.grid.with_reference(front_ref));
    return bundle;
}

namespace {

json pose_to_json(const Pose& p) {
    json j = json::array();
    for (double v : p.to_matrix()) j.push_back(v);
    return j;
}

Pose pose_from_json(const json& j) {
    BEV_CHECK(j.is_array() && j.size() == 16, "dataset: pose must be a 16-entry matrix");
    std::array<double, 16> m{};
    for (int i = 0; i < 16; ++i) m[static_cast<size_t>(i)] = j[static_cast<size_t>(i)].get<double>();
    return Pose::from_matrix(m);
}

json grid_to_json(const GridSpec& g) {
    return {{"span", {g.span_x, g.span_y, g.span_z}}, {"res", {g.res_x, g.res_y, g.res_z}}};
}

GridSpec grid_from_json(const json& j) {
    GridSpec g;
    g.span_x = j.at("span").at(0).get<double>();
    g.span_y = j.at("span").at(1).get<double>();
    g.span_z = j.at("span").at(2).get<double>();
    g.res_x = j.at("res").at(0).get<int>();
    g.res_y = j.at("res").at(1).get<int>();
    g.res_z = j.at("res").at(2).get<int>();
    return g;
}

json config_to_json(const SynthConfig& c) {
    return {{"n_scenes", c.n_scenes},
            {"boxes_min", c.boxes_min},
            {"boxes_max", c.boxes_max},
            {"image_h", c.image_h},
            {"image_w", c.image_w},
            {"radar_points_min", c.radar_points_min},
            {"radar_points_max", c.radar_points_max},
            {"radar_noise", c.radar_noise},
            {"ghost_rate", c.ghost_rate},
            {"dropout_rate", c.dropout_rate},
            {"placement_radius", c.placement_radius},
            {"lidar_points_per_box", c.lidar_points_per_box},
            {"seed", c.seed},
            {"grid", grid_to_json(c.grid)}};
}

SynthConfig config_from_json(const json& j) {
    SynthConfig c;
    c.n_scenes = j.value("n_scenes", c.n_scenes);
    c.boxes_min = j.value("boxes_min", c.boxes_min);
    c.boxes_max = j.value("boxes_max", c.boxes_max);
    c.image_h = j.value("image_h", c.image_h);
    c.image_w = j.value("image_w", c.image_w);
    c.radar_points_min = j.value("radar_points_min", c.radar_points_min);
    c.radar_points_max = j.value("radar_points_max", c.radar_points_max);
    c.radar_noise = j.value("radar_noise", c.radar_noise);
    c.ghost_rate = j.value("ghost_rate", c.ghost_rate);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.placement_radius = j.value("placement_radius", c.placement_radius);
    c.lidar_points_per_box = j.value("lidar_points_per_box", c.lidar_points_per_box);
    c.seed = j.value("seed", c.seed);
    if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    BEV_CHECK(f.good(), "dataset: cannot write ", path.string());
    f << text;
}

json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    BEV_CHECK(f.good(), "dataset: cannot open ", path.string());
    json j = json::parse(f, nullptr, false);
    BEV_CHECK(!j.is_discarded(), "dataset: malformed JSON in ", path.string());
    return j;
}

fs::path scene_dir(const fs::path& root, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05d", index);
    return root / buf;
}

void write_scene(const fs::path& dir, const SceneBundle& bundle) {
    fs::create_directories(dir);
    json cams = json::array();
    for (const Camera& cam : bundle.scene.rig)
        cams.push_back({{"fx", cam.intr.fx},
                        {"fy", cam.intr.fy},
                        {"cx", cam.intr.cx},
                        {"cy", cam.intr.cy},
                        {"width", cam.intr.width},
                        {"height", cam.intr.height},
                        {"pose", pose_to_json(cam.pose)}});
    json ego = json::array();
    for (const Pose& p : bundle.scene.ego_trajectory) ego.push_back(pose_to_json(p));
    write_text(dir / "cams.json", json({{"cameras", cams}, {"ego_trajectory", ego}}).dump(1));

    for (size_t i = 0; i < bundle.images.size(); ++i)
        write_blob((dir / ("img_" + std::to_string(i) + ".bevt")).string(), bundle.images[i]);

    for (size_t k = 0; k < bundle.sweeps.size(); ++k) {
        const RadarSweep& sweep = bundle.sweeps[k];
        json meta = {{"timestamp", sweep.timestamp},
                     {"ego_pose", pose_to_json(sweep.ego_pose)},
                     {"count", sweep.points.size()}};
        write_text(dir / ("radar_" + std::to_string(k) + ".json"), meta.dump(1));
        if (!sweep.points.empty())
            write_blob((dir / ("radar_" + std::to_string(k) + ".bevt")).string(),
                       radar_to_tensor(sweep.points));
    }
    if (bundle.lidar.defined()) write_blob((dir / "lidar.bevt").string(), bundle.lidar);

    json boxes = json::array();
    for (size_t b = 0; b < bundle.scene.boxes.size(); ++b) {
        const BoxAnnotation& box = bundle.scene.boxes[b];
        boxes.push_back({{"cx", box.cx},
                         {"cz", box.cz},
                         {"length", box.length},
                         {"width", box.width},
                         {"height", box.height},
                         {"yaw", box.yaw},
                         {"vx", box.vx},
                         {"vz", box.vz},
                         {"color", box.color},
                         {"visible", bundle.scene.box_visible[b] != 0}});
    }
    write_text(dir / "boxes.json", json({{"boxes", boxes}}).dump(1));
    write_blob((dir / "gt.bevt").string(), bundle.gt);
}

SceneBundle read_scene(const fs::path& dir, const SynthConfig& config) {
    SceneBundle bundle;
    const json cams = read_json_file(dir / "cams.json");
    for (const json& c : cams.at("cameras")) {
        Camera cam;
        cam.intr = Intrinsics(c.at("fx").get<double>(), c.at("fy").get<double>(),
                              c.at("cx").get<double>(), c.at("cy").get<double>(),
                              c.at("width").get<int>(), c.at("height").get<int>());
        cam.pose = pose_from_json(c.at("pose"));
        bundle.scene.rig.push_back(cam);
    }
    const json& ego = cams.at("ego_trajectory");
    BEV_CHECK(ego.size() == 3, "dataset: expected 3 ego poses in ", (dir / "cams.json").string());
    for (int k = 0; k < 3; ++k)
        bundle.scene.ego_trajectory[static_cast<size_t>(k)] = pose_from_json(ego[static_cast<size_t>(k)]);

    for (size_t i = 0; i < bundle.scene.rig.size(); ++i)
        bundle.images.push_back(
            read_blob<float>((dir / ("img_" + std::to_string(i) + ".bevt")).string()));

    for (int k = 0; k < 3; ++k) {
        const json meta = read_json_file(dir / ("radar_" + std::to_string(k) + ".json"));
        RadarSweep sweep;
        sweep.timestamp = meta.at("timestamp").get<double>();
        sweep.ego_pose = pose_from_json(meta.at("ego_pose"));
        if (meta.at("count").get<int>() > 0) {
            sweep.points = radar_from_tensor(
                read_blob<float>((dir / ("radar_" + std::to_string(k) + ".bevt")).string()));
            BEV_CHECK(static_cast<int>(sweep.points.size()) == meta.at("count").get<int>(),
                      "dataset: radar count mismatch in ", dir.string());
        }
        bundle.sweeps.push_back(std::move(sweep));
    }
    if (fs::exists(dir / "lidar.bevt"))
        bundle.lidar = read_blob<float>((dir / "lidar.bevt").string());

    const json boxes = read_json_file(dir / "boxes.json");
    for (const json& b : boxes.at("boxes")) {
        BoxAnnotation box;
        box.cx = b.at("cx").get<double>();
        box.cz = b.at("cz").get<double>();
        box.length = b.at("length").get<double>();
        box.width = b.at("width").get<double>();
        box.height = b.at("height").get<double>();
        box.yaw = b.at("yaw").get<double>();
        box.vx = b.at("vx").get<double>();
        box.vz = b.at("vz").get<double>();
        box.color = b.at("color").get<int>();
        bundle.scene.boxes.push_back(box);
        bundle.scene.box_visible.push_back(b.at("visible").get<bool>() ? 1 : 0);
    }
    bundle.gt = read_blob<float>((dir / "gt.bevt").string());
    (void)config;
    return bundle;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root);
    json manifest = {{"version", 1},
                     {"n_scenes", dataset.scenes.size()},
                     {"config", config_to_json(dataset.config)}};
    write_text(root / "manifest.json", manifest.dump(1));
    for (size_t i = 0; i < dataset.scenes.size(); ++i)
        write_scene(scene_dir(root, static_cast<int>(i)), dataset.scenes[i]);
}

void write_dataset(const SynthConfig& config, const std::string& dir) {
    config.validate();
    Dataset dataset;
    dataset.config = config;
    dataset.scenes.resize(static_cast<size_t>(config.n_scenes));
    parallel_for(config.n_scenes, [&](long long i) {
        dataset.scenes[static_cast<size_t>(i)] = build_scene_bundle(config, static_cast<int>(i));
    });
    write_dataset(dataset, dir);
}

Dataset read_dataset(const std::string& dir) {
    const fs::path root(dir);
    const json manifest = read_json_file(root / "manifest.json");
    BEV_CHECK(manifest.value("version", -1) == 1, "dataset: manifest version is not 1 in ",
              (root / "manifest.json").string());
    Dataset dataset;
    dataset.config = config_from_json(manifest.at("config"));
    const int n = manifest.at("n_scenes").get<int>();
    dataset.scenes.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        dataset.scenes[static_cast<size_t>(i)] = read_scene(scene_dir(root, i), dataset.config);
    return dataset;
}

Sample Dataset::to_sample(int index) const {
    BEV_CHECK(index >= 0 && index < size(), "dataset: sample index ", index, " out of range");
    const SceneBundle& bundle = scenes[static_cast<size_t>(index)];
    Sample s;
    s.images = bundle.images;
    s.cams = bundle.scene.rig;
    s.sweeps = bundle.sweeps;
    s.lidar = bundle.lidar;
    s.reference_index = 0;
    s.reference = yaw_align(bundle.scene.rig[0].pose);
    const Pose rel = s.reference.inverse();
    for (const BoxAnnotation& b : bundle.scene.boxes) s.boxes.push_back(reexpress_box(b, rel));
    return s;
}

std::string synth_config_to_json(const SynthConfig& config) { return config_to_json(config).dump(1); }

SynthConfig synth_config_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    BEV_CHECK(!j.is_discarded(), "synth config: malformed JSON");
    return config_from_json(j);
}

}  // namespace bev

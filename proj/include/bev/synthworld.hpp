#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bev/augment.hpp"
#include "bev/heads.hpp"
#include "bev/sensors.hpp"

// Deterministic synthetic data: vehicle boxes on a textured ground plane, a
// six-camera rig, flat-shaded renders, simulated radar and LiDAR, and the
// on-disk dataset format. Everything is a pure function of (config, seed).

namespace bev {

struct GridSpec {
    double span_x = 64.0, span_y = 4.0, span_z = 64.0;  // meters
    int res_x = 64, res_y = 2, res_z = 64;              // cells

    VoxelGrid with_reference(const Pose& ref) const {
        return VoxelGrid(span_x, span_y, span_z, res_x, res_y, res_z, ref);
    }
};

struct SynthConfig {
    int n_scenes = 64;
    int boxes_min = 4, boxes_max = 10;
    int image_h = 64, image_w = 112;
    int radar_points_min = 2, radar_points_max = 6;  // per vehicle per sweep
    double radar_noise = 0.3;                        // position sigma, meters
    double ghost_rate = 0.1;                         // expected outlier fraction
    double dropout_rate = 0.0;                       // per-return miss probability
    double placement_radius = 30.0;                  // box centers within ±this, meters
    int lidar_points_per_box = 60;
    uint64_t seed = 0;
    GridSpec grid;

    void validate() const {
        BEV_CHECK(n_scenes >= 1, "synth config: n_scenes must be >= 1");
        BEV_CHECK(boxes_min >= 0 && boxes_max >= boxes_min, "synth config: bad box range");
        BEV_CHECK(image_h % 4 == 0 && image_w % 4 == 0,
                  "synth config: image extents must be divisible by 4");
        BEV_CHECK(radar_points_min >= 0 && radar_points_max >= radar_points_min,
                  "synth config: bad radar point range");
        BEV_CHECK(radar_noise >= 0, "synth config: negative radar noise");
        BEV_CHECK(ghost_rate >= 0 && ghost_rate < 1, "synth config: ghost rate must be in [0,1)");
        BEV_CHECK(dropout_rate >= 0 && dropout_rate <= 1,
                  "synth config: dropout rate must be in [0,1]");
        BEV_CHECK(placement_radius > 5.0 && placement_radius <= 45.0,
                  "synth config: placement radius must be in (5, 45] m");
    }
};

/// Time step between the three ego-trajectory poses (t, t−Δ, t−2Δ).
inline constexpr double kSweepInterval = 0.1;

/// One world snapshot. Boxes are in the world frame, which coincides with
/// the ego frame at the sample time t; the ego origin is the ground point
/// under the vehicle.
struct Scene {
    std::vector<BoxAnnotation> boxes;
    std::array<Pose, 3> ego_trajectory;  // world-from-ego at t, t−Δ, t−2Δ
    std::vector<Camera> rig;             // 6 cameras: F, FL, FR, BL, B, BR
    std::vector<uint8_t> box_visible;    // per box: shows up in >= 1 render
};

/// Rejection-samples non-overlapping vehicle boxes around a forward-moving
/// ego. Exhausting the rejection budget yields fewer boxes (noted on
/// stderr), never an error.
Scene generate_scene(Rng& rng, const SynthConfig& config);

struct RenderOutput {
    std::vector<Tensor<float>> images;    // per camera, 3×H×W in [0, 1]
    std::vector<std::vector<int>> ids;    // per camera, H·W box ids, -1 = background
};

/// Depth-tested flat-shaded rasterization of box faces over a textured
/// ground plane and sky. Deterministic.
RenderOutput render_cameras(const Scene& scene, const SynthConfig& config);

/// Three radar sweeps (t, t−Δ, t−2Δ): sparse noisy returns on visible
/// vehicle faces plus multipath-style ghost points with quality < 0.3. Real
/// returns carry quality in [0.3, 1], so outlier filtering at 0.3 removes
/// exactly the ghosts in the noiseless configuration.
std::vector<RadarSweep> simulate_radar(const Scene& scene, const SynthConfig& config, Rng& rng);

/// Dense single-sweep object returns at time t, world frame, N×3; undefined
/// tensor when the scene is empty.
Tensor<float> simulate_lidar(const Scene& scene, const SynthConfig& config, Rng& rng);

/// BEV vehicle mask on the given grid; exactly make_targets(...).seg with the
/// boxes re-expressed in the grid's reference frame.
Tensor<float> rasterize_gt(const Scene& scene, const VoxelGrid& grid);

/// Everything the dataset stores for one scene.
struct SceneBundle {
    Scene scene;
    std::vector<Tensor<float>> images;
    std::vector<RadarSweep> sweeps;
    Tensor<float> lidar;  // undefined when empty
    Tensor<float> gt;     // front-reference grid
};

/// Fully deterministic scene -> sensors pipeline for one scene index.
SceneBundle build_scene_bundle(const SynthConfig& config, int scene_index);

struct Dataset {
    SynthConfig config;
    std::vector<SceneBundle> scenes;

    int size() const { return static_cast<int>(scenes.size()); }

    /// Front camera as reference: the evaluation-time view of a scene.
    Sample to_sample(int index) const;
};

/// Generates and writes a dataset: manifest.json plus one directory per
/// scene (cams.json, img_i.bevt, radar_k.bevt/.json, lidar.bevt, boxes.json,
/// gt.bevt). Scene builds run in parallel; output is byte-deterministic.
void write_dataset(const SynthConfig& config, const std::string& dir);

void write_dataset(const Dataset& dataset, const std::string& dir);

/// Loads a dataset directory; malformed manifests or blobs are rejected with
/// the offending path in the diagnostic.
Dataset read_dataset(const std::string& dir);

std::string synth_config_to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const std::string& text);

}  // namespace bev

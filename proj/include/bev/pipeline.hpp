#pragma once

#include <string>
#include <vector>

#include "bev/gradcheck.hpp"
#include "bev/model.hpp"
#include "bev/synthworld.hpp"

// Training with gradient accumulation, IOU evaluation with distance bins,
// the ablation runner, lifting benchmarks and the gradient-check suite.

namespace bev {

enum class LrSchedule { kConstant, kOneCycle };
enum class Modality { kCamera, kCameraRadar, kCameraLidar };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct TrainConfig {
    LiftConfig lift;
    int res_h = 64, res_w = 112;   // network input resolution
    int effective_batch = 8;
    int micro_batch = 1;
    int steps = 1500;
    double lr = 5e-4;
    LrSchedule schedule = LrSchedule::kOneCycle;
    double weight_decay = 0.01;
    Modality modality = Modality::kCamera;
    bool radar_use_channels = true;
    double radar_filter_threshold = 0.0;  // 0 = filtering off
    int radar_sweeps = 3;
    bool aug_resize_crop = true;
    bool aug_rand_ref = true;
    bool aug_cam_dropout = false;
    double aug_scale_lo = 0.8, aug_scale_hi = 1.2;
    int channels = 32;
    int featurizer_width = 16;
    int featurizer_depth = 1;
    double pos_weight = 1.0;
    LossReduction loss_reduction = LossReduction::kMean;
    GridSpec grid;
    uint64_t seed = 0;
    bool deterministic = true;
    std::vector<double> eval_bins = {0, 10, 20, 30, 40, 50};
    std::string data;      // training dataset directory (ablate reads it here)
    std::string val_data;  // validation dataset directory

    void validate() const;
    ModelConfig model_config() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Per-parameter AdamW state, aligned with ParamStore iteration order.
template <class S>
struct OptState {
    std::vector<std::vector<S>> m, v;
    int t = 0;
};

struct StepStats {
    double total = 0, seg = 0, center = 0, offset = 0;
    double s_seg = 0, s_center = 0, s_offset = 0;
};

/// One optimizer update: accumulates mean gradients over effective_batch
/// samples in micro_batch chunks (chunks may run on worker threads; the
/// summation order is fixed by chunk index) and applies AdamW. Non-finite
/// losses raise with the offending step index.
template <class S>
StepStats update_step(const TrainConfig& cfg, const Dataset& data, ParamStore<S>& params,
                      OptState<S>& opt, int step);

struct TrainResult {
    ParamStore<float> params;
    std::string metrics_csv;
};

TrainResult train(const TrainConfig& cfg, const Dataset& data);

/// Intersection/union accumulator; IOU = |pred ∧ gt| / |pred ∨ gt|.
struct IouCounts {
    long long inter = 0, uni = 0;
    void add(bool pred, bool gt) {
        inter += pred && gt;
        uni += pred || gt;
    }
    double iou() const { return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0; }
};

struct EvalBin {
    double lo = 0, hi = 0;
    long long inter = 0, uni = 0, gt_cells = 0;
    bool has_gt() const { return gt_cells > 0; }
    double iou() const { return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0; }
};

struct EvalReport {
    double iou = 0.0;
    long long inter = 0, uni = 0;
    std::vector<EvalBin> bins;
    int n_samples = 0;
    std::string config_echo;

    std::string to_csv() const;
};

/// Global IOU (accumulated over the set, not per-sample averaged) at a 0.5
/// probability threshold, plus IOU per radial distance bin from the grid
/// origin. Bins without ground truth are flagged, not averaged in.
EvalReport evaluate(const TrainConfig& cfg, const ParamStore<float>& params, const Dataset& data,
                    const std::vector<double>& bin_edges);

void save_checkpoint(const std::string& dir, const ParamStore<float>& params,
                     const TrainConfig& cfg);
std::pair<ParamStore<float>, TrainConfig> load_checkpoint(const std::string& dir);

/// Trains and evaluates one model per (axis value, seed), everything else
/// held equal; returns CSV text (also the rows of failed runs). The batch
/// axis holds the total-sample budget constant by rescaling the step count.
std::string ablate(const std::string& axis, const std::vector<std::string>& values,
                   const TrainConfig& base, int n_seeds, const std::string& out_dir);

/// Median and p90 forward latency of each lifting strategy at matched
/// shapes; returns CSV text.
std::string bench(const std::vector<std::string>& strategies,
                  const std::vector<std::string>& grid_sizes, int repeats);

/// Runs every finite-difference oracle in 64-bit at the stated tolerances;
/// per-op random instances plus a full micro-pipeline composite.
std::vector<GradCheckResult> gradcheck_suite();

std::string gradcheck_report(const std::vector<GradCheckResult>& results);

}  // namespace bev

#include "bev/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "bev/blob.hpp"

namespace bev {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// TrainConfig

std::string to_string(Modality m) {
    switch (m) {
        case Modality::kCamera: return "camera";
        case Modality::kCameraRadar: return "camera+radar";
        case Modality::kCameraLidar: return "camera+lidar";
    }
    return "?";
}

Modality modality_from_string(const std::string& s) {
    if (s == "camera") return Modality::kCamera;
    if (s == "camera+radar") return Modality::kCameraRadar;
    if (s == "camera+lidar") return Modality::kCameraLidar;
    raise("unknown modality '", s, "'");
}

void TrainConfig::validate() const {
    lift.validate();
    BEV_CHECK(res_h % 4 == 0 && res_w % 4 == 0, "config: resolution must be divisible by 4");
    BEV_CHECK(effective_batch >= 1 && micro_batch >= 1, "config: batch sizes must be positive");
    BEV_CHECK(effective_batch % micro_batch == 0,
              "config: effective_batch must be divisible by micro_batch");
    BEV_CHECK(steps >= 0, "config: negative step count");
    BEV_CHECK(lr >= 0 && weight_decay >= 0, "config: negative lr or weight decay");
    BEV_CHECK(radar_filter_threshold >= 0 && radar_filter_threshold <= 1,
              "config: radar filter threshold must be in [0,1]");
    BEV_CHECK(radar_sweeps >= 1, "config: radar_sweeps must be >= 1");
    BEV_CHECK(aug_scale_lo > 0 && aug_scale_lo <= aug_scale_hi, "config: bad augment scale range");
    BEV_CHECK(channels >= 1 && featurizer_width >= 1 && featurizer_depth >= 0,
              "config: bad featurizer sizes");
    BEV_CHECK(grid.res_z % 4 == 0 && grid.res_x % 4 == 0,
              "config: grid res_z/res_x must be divisible by 4 for the BEV net");
    BEV_CHECK(eval_bins.size() >= 2, "config: need at least one distance bin");
    for (size_t i = 1; i < eval_bins.size(); ++i)
        BEV_CHECK(eval_bins[i] > eval_bins[i - 1], "config: eval bins must increase");
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.channels = channels;
    m.featurizer_width = featurizer_width;
    m.featurizer_depth = featurizer_depth;
    m.lift = lift;
    switch (modality) {
        case Modality::kCamera: m.raster_channels = 0; break;
        case Modality::kCameraRadar: m.raster_channels = radar_use_channels ? kRadarChannels : 1; break;
        case Modality::kCameraLidar: m.raster_channels = grid.res_y; break;
    }
    return m;
}

std::string TrainConfig::to_json() const {
    json j;
    j["strategy"] = bev::to_string(lift.strategy);
    j["depth_bins"] = lift.depth_bins;
    j["depth_min"] = lift.depth_min;
    j["depth_max"] = lift.depth_max;
    j["points_per_voxel"] = lift.points_per_voxel;
    j["pyramid_levels"] = lift.pyramid_levels;
    j["resolution"] = {res_h, res_w};
    j["effective_batch"] = effective_batch;
    j["micro_batch"] = micro_batch;
    j["steps"] = steps;
    j["lr"] = lr;
    j["schedule"] = schedule == LrSchedule::kConstant ? "constant" : "one_cycle";
    j["weight_decay"] = weight_decay;
    j["modality"] = bev::to_string(modality);
    j["radar_use_channels"] = radar_use_channels;
    j["radar_filter_threshold"] = radar_filter_threshold;
    j["radar_sweeps"] = radar_sweeps;
    j["aug_resize_crop"] = aug_resize_crop;
    j["aug_rand_ref"] = aug_rand_ref;
    j["aug_cam_dropout"] = aug_cam_dropout;
    j["aug_scale_range"] = {aug_scale_lo, aug_scale_hi};
    j["channels"] = channels;
    j["featurizer_width"] = featurizer_width;
    j["featurizer_depth"] = featurizer_depth;
    j["pos_weight"] = pos_weight;
    j["loss_reduction"] = loss_reduction == LossReduction::kMean ? "mean" : "sum";
    j["grid"] = {{"span", {grid.span_x, grid.span_y, grid.span_z}},
                 {"res", {grid.res_x, grid.res_y, grid.res_z}}};
    j["seed"] = seed;
    j["deterministic"] = deterministic;
    j["eval_bins"] = eval_bins;
    if (!data.empty()) j["data"] = data;
    if (!val_data.empty()) j["val_data"] = val_data;
    return j.dump(1);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    BEV_CHECK(!j.is_discarded(), "config: malformed JSON");
    TrainConfig c;
    if (j.contains("strategy")) c.lift.strategy = lift_strategy_from_string(j.at("strategy"));
    c.lift.depth_bins = j.value("depth_bins", c.lift.depth_bins);
    c.lift.depth_min = j.value("depth_min", c.lift.depth_min);
    c.lift.depth_max = j.value("depth_max", c.lift.depth_max);
    c.lift.points_per_voxel = j.value("points_per_voxel", c.lift.points_per_voxel);
    c.lift.pyramid_levels = j.value("pyramid_levels", c.lift.pyramid_levels);
    if (j.contains("resolution")) {
        c.res_h = j.at("resolution").at(0).get<int>();
        c.res_w = j.at("resolution").at(1).get<int>();
    }
    c.effective_batch = j.value("effective_batch", c.effective_batch);
    c.micro_batch = j.value("micro_batch", c.micro_batch);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    if (j.contains("schedule")) {
        const std::string s = j.at("schedule").get<std::string>();
        BEV_CHECK(s == "constant" || s == "one_cycle", "config: unknown schedule '", s, "'");
        c.schedule = s == "constant" ? LrSchedule::kConstant : LrSchedule::kOneCycle;
    }
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("modality")) c.modality = modality_from_string(j.at("modality"));
    c.radar_use_channels = j.value("radar_use_channels", c.radar_use_channels);
    c.radar_filter_threshold = j.value("radar_filter_threshold", c.radar_filter_threshold);
    c.radar_sweeps = j.value("radar_sweeps", c.radar_sweeps);
    c.aug_resize_crop = j.value("aug_resize_crop", c.aug_resize_crop);
    c.aug_rand_ref = j.value("aug_rand_ref", c.aug_rand_ref);
    c.aug_cam_dropout = j.value("aug_cam_dropout", c.aug_cam_dropout);
    if (j.contains("aug_scale_range")) {
        c.aug_scale_lo = j.at("aug_scale_range").at(0).get<double>();
        c.aug_scale_hi = j.at("aug_scale_range").at(1).get<double>();
    }
    c.channels = j.value("channels", c.channels);
    c.featurizer_width = j.value("featurizer_width", c.featurizer_width);
    c.featurizer_depth = j.value("featurizer_depth", c.featurizer_depth);
    c.pos_weight = j.value("pos_weight", c.pos_weight);
    if (j.contains("loss_reduction")) {
        const std::string s = j.at("loss_reduction").get<std::string>();
        BEV_CHECK(s == "mean" || s == "sum", "config: unknown loss reduction '", s, "'");
        c.loss_reduction = s == "mean" ? LossReduction::kMean : LossReduction::kSum;
    }
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        c.grid.span_x = g.at("span").at(0).get<double>();
        c.grid.span_y = g.at("span").at(1).get<double>();
        c.grid.span_z = g.at("span").at(2).get<double>();
        c.grid.res_x = g.at("res").at(0).get<int>();
        c.grid.res_y = g.at("res").at(1).get<int>();
        c.grid.res_z = g.at("res").at(2).get<int>();
    }
    c.seed = j.value("seed", c.seed);
    c.deterministic = j.value("deterministic", c.deterministic);
    if (j.contains("eval_bins")) c.eval_bins = j.at("eval_bins").get<std::vector<double>>();
    c.data = j.value("data", c.data);
    c.val_data = j.value("val_data", c.val_data);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// sample preparation shared by train and evaluate

namespace {

template <class S>
Tensor<S> cast_tensor(const Tensor<float>& t) {
    Tensor<S> out(t.shape());
    for (long long i = 0; i < t.numel(); ++i) out.data()[i] = static_cast<S>(t.data()[i]);
    return out;
}

template <>
Tensor<float> cast_tensor<float>(const Tensor<float>& t) {
    return t;
}

template <class S>
struct PreparedSample {
    ModelInputs<S> inputs;
    TargetMaps<S> targets;
};

template <class S>
PreparedSample<S> prepare_sample(const Sample& sample, const TrainConfig& cfg) {
    PreparedSample<S> out;
    const VoxelGrid grid = cfg.grid.with_reference(sample.reference);
    for (const Tensor<float>& img : sample.images) out.inputs.images.push_back(cast_tensor<S>(img));
    out.inputs.cams = sample.cams;
    out.inputs.grid = grid;

    if (cfg.modality == Modality::kCameraRadar) {
        BEV_CHECK(!sample.sweeps.empty(), "prepare_sample: modality needs radar sweeps");
        auto points = aggregate_sweeps(sample.sweeps, sample.sweeps[0], cfg.radar_sweeps);
        points = filter_outliers(points, cfg.radar_filter_threshold);
        const Pose rel = grid.reference.inverse().compose(sample.sweeps[0].ego_pose);
        points = transform_points(std::move(points), rel);
        out.inputs.sensor_raster = rasterize_radar<S>(points, grid, cfg.radar_use_channels);
    } else if (cfg.modality == Modality::kCameraLidar) {
        Tensor<S> cloud;
        if (sample.lidar.defined()) {
            cloud = Tensor<S>(sample.lidar.shape());
            const Pose rel = grid.reference.inverse();  // lidar points are world frame
            for (int i = 0; i < sample.lidar.dim(0); ++i) {
                const Eigen::Vector3d p = rel.apply(Eigen::Vector3d(
                    sample.lidar.data()[3 * i], sample.lidar.data()[3 * i + 1],
                    sample.lidar.data()[3 * i + 2]));
                cloud.data()[3 * i] = static_cast<S>(p.x());
                cloud.data()[3 * i + 1] = static_cast<S>(p.y());
                cloud.data()[3 * i + 2] = static_cast<S>(p.z());
            }
        }
        out.inputs.sensor_raster = voxelize_lidar<S>(cloud, grid);
    }
    out.targets = make_targets<S>(sample.boxes, grid);
    return out;
}

Sample augmented_sample(const Dataset& data, const TrainConfig& cfg, int sample_index,
                        uint64_t aug_stream) {
    Sample s = data.to_sample(sample_index);
    s = resize_sample(std::move(s), cfg.res_h, cfg.res_w);
    Rng rng = Rng(cfg.seed).fork(0xau).fork(aug_stream);
    if (cfg.aug_resize_crop)
        s = random_resize_crop(std::move(s), rng, {cfg.aug_scale_lo, cfg.aug_scale_hi});
    if (cfg.aug_rand_ref) s = randomize_reference(std::move(s), rng);
    if (cfg.aug_cam_dropout) s = camera_dropout(std::move(s), rng, true);
    return s;
}

double lr_at(const TrainConfig& cfg, int step) {
    if (cfg.schedule == LrSchedule::kConstant || cfg.steps <= 1) return cfg.lr;
    const int warm = std::max(1, cfg.steps * 3 / 10);
    if (step < warm) return cfg.lr * static_cast<double>(step + 1) / warm;
    const double u = static_cast<double>(step - warm) / std::max(1, cfg.steps - warm);
    return cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(M_PI * u)));
}

}  // namespace

// ---------------------------------------------------------------------------
// one optimizer update

template <class S>
StepStats update_step(const TrainConfig& cfg, const Dataset& data, ParamStore<S>& params,
                      OptState<S>& opt, int step) {
    const ModelConfig mcfg = cfg.model_config();
    const int chunks = cfg.effective_batch / cfg.micro_batch;
    const int effective = cfg.effective_batch;

    // per-position sample picks and augmentation streams are fixed before
    // chunking, so every (micro, effective) factorization sees the same data
    Rng pick = Rng(cfg.seed).fork(0xbu).fork(static_cast<uint64_t>(step));
    std::vector<int> sample_idx(static_cast<size_t>(effective));
    for (int g = 0; g < effective; ++g) sample_idx[static_cast<size_t>(g)] = pick.uniform_int(0, data.size() - 1);

    struct ChunkOut {
        std::vector<std::vector<S>> grads;
        StepStats stats;
        double loss_value = 0.0;
    };
    std::vector<ChunkOut> outs(static_cast<size_t>(chunks));
    parallel_for(chunks, [&](long long c) {
        Tape<S> tape;
        ParamStore<S> bound = params.bind(tape);
        Tensor<S> chunk_loss;
        ChunkOut& out = outs[static_cast<size_t>(c)];
        for (int i = 0; i < cfg.micro_batch; ++i) {
            const int g = static_cast<int>(c) * cfg.micro_batch + i;
            const uint64_t stream =
                static_cast<uint64_t>(step) * static_cast<uint64_t>(effective) + g;
            Sample s = augmented_sample(data, cfg, sample_idx[static_cast<size_t>(g)], stream);
            PreparedSample<S> prep = prepare_sample<S>(s, cfg);
            HeadOutputs<S> pred = model_forward(prep.inputs, bound, mcfg);
            LossParts<S> lp =
                total_loss(pred, prep.targets, bound.get("loss.s_seg"), bound.get("loss.s_center"),
                           bound.get("loss.s_offset"), static_cast<S>(cfg.pos_weight),
                           cfg.loss_reduction);
            out.stats.total += static_cast<double>(lp.total.value());
            out.stats.seg += static_cast<double>(lp.seg);
            out.stats.center += static_cast<double>(lp.center);
            out.stats.offset += static_cast<double>(lp.offset);
            chunk_loss = i == 0 ? lp.total : add(chunk_loss, lp.total);
        }
        if (cfg.micro_batch > 1)
            chunk_loss = mul(chunk_loss, S(1) / static_cast<S>(cfg.micro_batch));
        out.loss_value = static_cast<double>(chunk_loss.value());
        tape.backward(chunk_loss);
        out.grads.reserve(params.size());
        for (const auto& [name, t] : bound) out.grads.push_back(tape.grad(t));
    });

    for (const ChunkOut& out : outs)
        if (!std::isfinite(out.loss_value))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

    // fixed-order accumulation: sum of micro-batch mean-gradients × micro/effective
    const S chunk_weight = static_cast<S>(cfg.micro_batch) / static_cast<S>(effective);
    std::vector<std::vector<S>> grads;
    grads.reserve(params.size());
    {
        size_t j = 0;
        for (const auto& [name, t] : params) {
            std::vector<S> acc(static_cast<size_t>(t.numel()), S(0));
            for (const ChunkOut& out : outs)
                for (size_t i = 0; i < acc.size(); ++i) acc[i] += out.grads[j][i] * chunk_weight;
            grads.push_back(std::move(acc));
            ++j;
        }
    }

    // AdamW
    if (opt.m.empty()) {
        for (const auto& [name, t] : params) {
            opt.m.emplace_back(static_cast<size_t>(t.numel()), S(0));
            opt.v.emplace_back(static_cast<size_t>(t.numel()), S(0));
        }
    }
    opt.t += 1;
    const double lr = lr_at(cfg, step);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, opt.t);
    const double bc2 = 1.0 - std::pow(b2, opt.t);
    {
        size_t j = 0;
        for (auto& [name, t] : params) {
            S* p = t.data();
            const std::vector<S>& g = grads[j];
            std::vector<S>& m = opt.m[j];
            std::vector<S>& v = opt.v[j];
            for (size_t i = 0; i < g.size(); ++i) {
                m[i] = static_cast<S>(b1 * m[i] + (1.0 - b1) * g[i]);
                v[i] = static_cast<S>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] = static_cast<S>(p[i] - lr * (mhat / (std::sqrt(vhat) + eps) +
                                                   cfg.weight_decay * p[i]));
            }
            ++j;
        }
    }

    StepStats stats;
    for (const ChunkOut& out : outs) {
        stats.total += out.stats.total;
        stats.seg += out.stats.seg;
        stats.center += out.stats.center;
        stats.offset += out.stats.offset;
    }
    stats.total /= effective;
    stats.seg /= effective;
    stats.center /= effective;
    stats.offset /= effective;
    stats.s_seg = static_cast<double>(params.get("loss.s_seg").value());
    stats.s_center = static_cast<double>(params.get("loss.s_center").value());
    stats.s_offset = static_cast<double>(params.get("loss.s_offset").value());
    return stats;
}

template StepStats update_step<float>(const TrainConfig&, const Dataset&, ParamStore<float>&,
                                      OptState<float>&, int);
template StepStats update_step<double>(const TrainConfig&, const Dataset&, ParamStore<double>&,
                                       OptState<double>&, int);

// ---------------------------------------------------------------------------
// training loop

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    BEV_CHECK(data.size() > 0, "train: empty dataset");
    const ModelConfig mcfg = cfg.model_config();
    const VoxelGrid arithmetic_grid = cfg.grid.with_reference(Pose());
    TrainResult result{init_model_params<float>(mcfg, arithmetic_grid, cfg.seed), {}};
    OptState<float> opt;

    std::string csv = "step,loss_total,loss_seg,loss_center,loss_offset,s_seg,s_center,s_offset\n";
    char row[256];
    for (int step = 0; step < cfg.steps; ++step) {
        StepStats st = update_step(cfg, data, result.params, opt, step);
        std::snprintf(row, sizeof(row), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", step, st.total,
                      st.seg, st.center, st.offset, st.s_seg, st.s_center, st.s_offset);
        csv += row;
    }
    result.metrics_csv = std::move(csv);
    return result;
}

// ---------------------------------------------------------------------------
// evaluation

EvalReport evaluate(const TrainConfig& cfg, const ParamStore<float>& params, const Dataset& data,
                    const std::vector<double>& bin_edges) {
    cfg.validate();
    BEV_CHECK(data.size() > 0, "evaluate: empty dataset");
    BEV_CHECK(bin_edges.size() >= 2, "evaluate: need at least one bin");
    const ModelConfig mcfg = cfg.model_config();

    // radial bin of each BEV cell, from the grid origin in the ground plane
    const VoxelGrid grid = cfg.grid.with_reference(Pose());
    const long long cells = grid.num_bev_cells();
    std::vector<int> cell_bin(static_cast<size_t>(cells), -1);
    for (int zi = 0; zi < grid.res_z; ++zi)
        for (int xi = 0; xi < grid.res_x; ++xi) {
            const Eigen::Vector3d c = grid.cell_center(zi, 0, xi);
            const double d = std::hypot(c.x(), c.z());
            for (size_t b = 0; b + 1 < bin_edges.size(); ++b)
                if (d >= bin_edges[b] && d < bin_edges[b + 1]) {
                    cell_bin[static_cast<size_t>(zi) * grid.res_x + xi] = static_cast<int>(b);
                    break;
                }
        }

    const int n_bins = static_cast<int>(bin_edges.size()) - 1;
    struct Counts {
        long long inter = 0, uni = 0;
        std::vector<long long> bin_inter, bin_uni, bin_gt;
    };
    std::vector<Counts> partial(static_cast<size_t>(data.size()));
    parallel_for(data.size(), [&](long long i) {
        Counts& ct = partial[static_cast<size_t>(i)];
        ct.bin_inter.assign(static_cast<size_t>(n_bins), 0);
        ct.bin_uni.assign(static_cast<size_t>(n_bins), 0);
        ct.bin_gt.assign(static_cast<size_t>(n_bins), 0);
        Sample s = resize_sample(data.to_sample(static_cast<int>(i)), cfg.res_h, cfg.res_w);
        PreparedSample<float> prep = prepare_sample<float>(s, cfg);
        HeadOutputs<float> pred = model_forward(prep.inputs, params, mcfg);
        for (long long j = 0; j < cells; ++j) {
            const bool p = pred.seg_logits.data()[j] > 0.0f;  // sigmoid > 0.5
            const bool g = prep.targets.seg.data()[j] > 0.5f;
            const int b = cell_bin[static_cast<size_t>(j)];
            if (p && g) {
                ++ct.inter;
                if (b >= 0) ++ct.bin_inter[static_cast<size_t>(b)];
            }
            if (p || g) {
                ++ct.uni;
                if (b >= 0) ++ct.bin_uni[static_cast<size_t>(b)];
            }
            if (g && b >= 0) ++ct.bin_gt[static_cast<size_t>(b)];
        }
    });

    EvalReport report;
    report.n_samples = data.size();
    report.bins.resize(static_cast<size_t>(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        report.bins[static_cast<size_t>(b)].lo = bin_edges[static_cast<size_t>(b)];
        report.bins[static_cast<size_t>(b)].hi = bin_edges[static_cast<size_t>(b) + 1];
    }
    for (const Counts& ct : partial) {
        report.inter += ct.inter;
        report.uni += ct.uni;
        for (int b = 0; b < n_bins; ++b) {
            report.bins[static_cast<size_t>(b)].inter += ct.bin_inter[static_cast<size_t>(b)];
            report.bins[static_cast<size_t>(b)].uni += ct.bin_uni[static_cast<size_t>(b)];
            report.bins[static_cast<size_t>(b)].gt_cells += ct.bin_gt[static_cast<size_t>(b)];
        }
    }
    report.iou = report.uni > 0 ? static_cast<double>(report.inter) / static_cast<double>(report.uni)
                                : 1.0;
    report.config_echo = cfg.to_json();
    return report;
}

std::string EvalReport::to_csv() const {
    std::string header = "iou";
    std::string row;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", iou);
    row = buf;
    for (const EvalBin& b : bins) {
        std::snprintf(buf, sizeof(buf), ",iou_%g_%g", b.lo, b.hi);
        header += buf;
        if (b.has_gt())
            std::snprintf(buf, sizeof(buf), ",%.9g", b.iou());
        else
            std::snprintf(buf, sizeof(buf), ",nan");
        row += buf;
    }
    return header + "\n" + row + "\n";
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

std::string blob_name(const std::string& param_name) {
    std::string s = param_name;
    for (char& c : s)
        if (c == '.') c = '_';
    return s + ".bevt";
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamStore<float>& params,
                     const TrainConfig& cfg) {
    fs::create_directories(dir);
    json names;
    for (const auto& [name, t] : params) {
        const std::string file = blob_name(name);
        names[name] = file;
        write_blob((fs::path(dir) / file).string(), t);
    }
    json manifest = {{"version", 1}, {"params", names}, {"config", json::parse(cfg.to_json())}};
    std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
    BEV_CHECK(f.good(), "checkpoint: cannot write manifest in ", dir);
    f << manifest.dump(1);
}

std::pair<ParamStore<float>, TrainConfig> load_checkpoint(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    BEV_CHECK(f.good(), "checkpoint: cannot open manifest in ", dir);
    json manifest = json::parse(f, nullptr, false);
    BEV_CHECK(!manifest.is_discarded(), "checkpoint: malformed manifest in ", dir);
    BEV_CHECK(manifest.value("version", -1) == 1, "checkpoint: unsupported version in ", dir);
    TrainConfig cfg = TrainConfig::from_json(manifest.at("config").dump());

    // the parameter set must match what the config would build
    ParamStore<float> expected =
        init_model_params<float>(cfg.model_config(), cfg.grid.with_reference(Pose()), cfg.seed);
    ParamStore<float> params;
    const json& names = manifest.at("params");
    for (const auto& [name, t] : expected) {
        BEV_CHECK(names.contains(name), "checkpoint: parameter '", name, "' missing in ", dir);
        Tensor<float> loaded =
            read_blob<float>((fs::path(dir) / names.at(name).get<std::string>()).string());
        BEV_CHECK(loaded.shape() == t.shape(), "checkpoint: parameter '", name,
                  "' has shape ", shape_str(loaded.shape()), ", expected ", shape_str(t.shape()));
        params.add(name, std::move(loaded));
    }
    return {std::move(params), std::move(cfg)};
}

// ---------------------------------------------------------------------------
// ablation runner

namespace {

TrainConfig apply_axis(const TrainConfig& base, const std::string& axis,
                       const std::string& value) {
    TrainConfig cfg = base;
    if (axis == "lifting") {
        cfg.lift.strategy = lift_strategy_from_string(value);
    } else if (axis == "resolution") {
        const size_t x = value.find('x');
        BEV_CHECK(x != std::string::npos, "ablate: resolution value must look like HxW");
        cfg.res_h = std::stoi(value.substr(0, x));
        cfg.res_w = std::stoi(value.substr(x + 1));
    } else if (axis == "batch") {
        const int batch = std::stoi(value);
        BEV_CHECK(batch >= 1, "ablate: batch must be positive");
        // hold the total sample budget fixed
        const long long budget = static_cast<long long>(base.steps) * base.effective_batch;
        cfg.effective_batch = batch;
        cfg.steps = static_cast<int>(budget / batch);
        cfg.micro_batch = batch % base.micro_batch == 0 ? base.micro_batch : 1;
    } else if (axis == "modality") {
        cfg.modality = modality_from_string(value);
    } else if (axis == "radar_channels") {
        BEV_CHECK(value == "full" || value == "occupancy",
                  "ablate: radar_channels value must be full|occupancy");
        cfg.radar_use_channels = value == "full";
    } else if (axis == "radar_filter") {
        cfg.radar_filter_threshold = std::stod(value);
    } else if (axis == "radar_sweeps") {
        cfg.radar_sweeps = std::stoi(value);
    } else if (axis == "aug") {
        cfg.aug_resize_crop = value.find("crop") != std::string::npos;
        cfg.aug_rand_ref = value.find("ref") != std::string::npos;
        cfg.aug_cam_dropout = value.find("drop") != std::string::npos;
        BEV_CHECK(value == "none" || cfg.aug_resize_crop || cfg.aug_rand_ref || cfg.aug_cam_dropout,
                  "ablate: aug value must be none or tokens from crop+ref+drop");
    } else if (axis == "featurizer") {
        cfg.featurizer_width = std::stoi(value);
    } else {
        raise("ablate: unknown axis '", axis, "'");
    }
    cfg.validate();
    return cfg;
}

}  // namespace

std::string ablate(const std::string& axis, const std::vector<std::string>& values,
                   const TrainConfig& base, int n_seeds, const std::string& out_dir) {
    BEV_CHECK(!values.empty(), "ablate: no axis values");
    BEV_CHECK(n_seeds >= 1, "ablate: need at least one seed");
    BEV_CHECK(!base.data.empty() && !base.val_data.empty(),
              "ablate: config must carry data and val_data directories");
    for (const std::string& v : values) (void)apply_axis(base, axis, v);  // validate up front

    const Dataset train_data = read_dataset(base.data);
    const Dataset val_data = read_dataset(base.val_data);
    fs::create_directories(out_dir);

    std::string csv = "axis,value,seed,iou";
    for (size_t b = 0; b + 1 < base.eval_bins.size(); ++b) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), ",iou_%g_%g", base.eval_bins[b], base.eval_bins[b + 1]);
        csv += buf;
    }
    csv += ",wall_time_s,status\n";

    for (const std::string& value : values) {
        for (int k = 0; k < n_seeds; ++k) {
            TrainConfig cfg = apply_axis(base, axis, value);
            cfg.seed = base.seed + static_cast<uint64_t>(k);
            const auto t0 = std::chrono::steady_clock::now();
            std::string row = axis + "," + value + "," + std::to_string(k);
            try {
                TrainResult res = train(cfg, train_data);
                EvalReport report = evaluate(cfg, res.params, val_data, cfg.eval_bins);
                const fs::path run_dir =
                    fs::path(out_dir) / ("run_" + axis + "_" + value + "_s" + std::to_string(k));
                fs::create_directories(run_dir);
                std::ofstream(run_dir / "metrics.csv") << res.metrics_csv;
                std::ofstream(run_dir / "eval.csv") << report.to_csv();
                std::ofstream(run_dir / "config.json") << cfg.to_json();
                char buf[64];
                std::snprintf(buf, sizeof(buf), ",%.9g", report.iou);
                row += buf;
                for (const EvalBin& b : report.bins) {
                    if (b.has_gt())
                        std::snprintf(buf, sizeof(buf), ",%.9g", b.iou());
                    else
                        std::snprintf(buf, sizeof(buf), ",nan");
                    row += buf;
                }
                const double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                std::snprintf(buf, sizeof(buf), ",%.3f,ok", secs);
                row += buf;
            } catch (const std::exception& e) {
                const double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                char buf[64];
                row += ",nan";
                for (size_t b = 0; b + 1 < base.eval_bins.size(); ++b) row += ",nan";
                std::snprintf(buf, sizeof(buf), ",%.3f,failed", secs);
                row += buf;
                std::cerr << "ablate: run " << axis << "=" << value << " seed " << k
                          << " failed: " << e.what() << "\n";
            }
            csv += row + "\n";
        }
    }
    std::ofstream(fs::path(out_dir) / "ablate.csv") << csv;
    return csv;
}

// ---------------------------------------------------------------------------
// lifting benchmarks

std::string bench(const std::vector<std::string>& strategies,
                  const std::vector<std::string>& grid_sizes, int repeats) {
    BEV_CHECK(repeats >= 1, "bench: repeats must be >= 1");
    std::string csv = "strategy,res_z,res_y,res_x,median_ms,p90_ms,lifts_per_s\n";
    Rng rng(42);

    // matched shapes: a 6-camera rig with 16x28 feature maps, C = 32
    const int c = 32, fh = 16, fw = 28;
    std::vector<Camera> cams;
    {
        const double yaws[6] = {0.0, -M_PI / 3, M_PI / 3, -2 * M_PI / 3, M_PI, 2 * M_PI / 3};
        const Intrinsics intr(80.0, 80.0, 56.0, 32.0, 112, 64);
        for (double y : yaws)
            cams.push_back({intr, Pose::yaw(y, Eigen::Vector3d(0.8 * std::sin(y), -1.6,
                                                               0.8 * std::cos(y)))});
    }
    std::vector<Tensor<float>> features;
    std::vector<Tensor<float>> depth_logits;
    for (int i = 0; i < 6; ++i) {
        features.push_back(random_tensor<float>({c, fh, fw}, rng));
        depth_logits.push_back(random_tensor<float>({64, fh, fw}, rng));
    }
    std::vector<std::vector<Tensor<float>>> pyramids;
    for (int i = 0; i < 6; ++i) {
        std::vector<Tensor<float>> pyr = {features[static_cast<size_t>(i)]};
        pyr.push_back(random_tensor<float>({c, (fh + 1) / 2, (fw + 1) / 2}, rng));
        pyr.push_back(random_tensor<float>({c, (fh + 3) / 4, (fw + 3) / 4}, rng));
        pyramids.push_back(std::move(pyr));
    }

    for (const std::string& size : grid_sizes) {
        int rz, ry, rx;
        BEV_CHECK(std::sscanf(size.c_str(), "%dx%dx%d", &rz, &ry, &rx) == 3,
                  "bench: grid size must look like ZxYxX, got '", size, "'");
        VoxelGrid grid(64.0, 4.0, 64.0, rx, ry, rz,
                       Pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, -1.6, 0)));
        const int m = static_cast<int>(grid.num_cells());

        for (const std::string& name : strategies) {
            const LiftStrategy strategy = lift_strategy_from_string(name);
            LiftConfig lc;
            lc.strategy = strategy;
            DeformParams<float> dp{random_tensor<float>({m, lc.points_per_voxel, 2}, rng, -2, 2),
                                   random_tensor<float>({m, lc.points_per_voxel}, rng)};
            auto run_once = [&]() {
                switch (strategy) {
                    case LiftStrategy::kSample:
                        return reduce_cameras(sample_lift(features, cams, grid, 4)).numel();
                    case LiftStrategy::kSplatUniform:
                        return splat_lift(features, {}, cams, grid, lc, 4).volume.numel();
                    case LiftStrategy::kSplatDepth:
                        return splat_lift(features, depth_logits, cams, grid, lc, 4).volume.numel();
                    case LiftStrategy::kDeform: {
                        LiftConfig one = lc;
                        one.pyramid_levels = 1;
                        return reduce_cameras(deform_lift(pyramids, cams, grid, dp, one, 4)).numel();
                    }
                    case LiftStrategy::kDeformMultiscale:
                        return reduce_cameras(deform_lift(pyramids, cams, grid, dp, lc, 4)).numel();
                }
                return 0LL;
            };
            run_once();  // warmup
            std::vector<double> ms;
            for (int r = 0; r < repeats; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                run_once();
                ms.push_back(
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count());
            }
            std::sort(ms.begin(), ms.end());
            const double median = ms[ms.size() / 2];
            const double p90 = ms[std::min(ms.size() - 1, static_cast<size_t>(
                                                              std::ceil(0.9 * ms.size()) - 1))];
            char row[160];
            std::snprintf(row, sizeof(row), "%s,%d,%d,%d,%.4f,%.4f,%.2f\n", name.c_str(), rz, ry,
                          rx, median, p90, 1000.0 / median);
            csv += row;
        }
    }
    return csv;
}

std::string gradcheck_report(const std::vector<GradCheckResult>& results) {
    std::string out;
    char row[160];
    for (const GradCheckResult& r : results) {
        std::snprintf(row, sizeof(row), "%-28s %s  max rel err %.3e  (tol %.1e)\n", r.name.c_str(),
                      r.pass ? "PASS" : "FAIL", r.max_rel_err, r.tol);
        out += row;
    }
    return out;
}

}  // namespace bev

#include "bev/pipeline.hpp"

// The gradient-check suite behind `gradcheck`: every differentiable
// operation against central finite differences, in 64-bit, plus full
// micro-pipeline composites for each lifting strategy.

namespace bev {

namespace {

using In = std::vector<Tensor<double>>;

void keep_off_kink(Tensor<double>& t) {
    for (long long i = 0; i < t.numel(); ++i)
        if (std::abs(t.data()[i]) < 1e-3) t.data()[i] += 0.01;
}

struct MicroWorld {
    ModelConfig mcfg;
    VoxelGrid grid;
    std::vector<Camera> cams;
    std::vector<Tensor<double>> images;
    Tensor<double> raster;
    TargetMaps<double> targets;
    ParamStore<double> params;
    std::vector<std::string> names;
    std::vector<Tensor<double>> values;
};

// grid 8x2x8, two cameras, 8x16 images; radar raster in the fusion slot
MicroWorld micro_world(LiftStrategy strategy, Rng& rng) {
    MicroWorld w;
    w.mcfg.channels = 6;
    w.mcfg.featurizer_width = 3;
    w.mcfg.featurizer_depth = 1;
    w.mcfg.raster_channels = kRadarChannels;
    w.mcfg.lift.strategy = strategy;
    w.mcfg.lift.depth_bins = 4;
    w.mcfg.lift.depth_min = 1.0;
    w.mcfg.lift.depth_max = 10.0;
    w.mcfg.lift.points_per_voxel = 2;
    w.mcfg.lift.pyramid_levels = strategy == LiftStrategy::kDeformMultiscale ? 2 : 1;

    w.grid = VoxelGrid(12, 4, 12, 8, 2, 8,
                       Pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, -1.5, 0)));
    const Intrinsics intr(10.0, 10.0, 7.5, 3.5, 16, 8);
    w.cams = {{intr, Pose::yaw(0.0, Eigen::Vector3d(0, -1.5, 0))},
              {intr, Pose::yaw(M_PI, Eigen::Vector3d(0, -1.5, 0))}};
    w.images = {random_tensor<double>({3, 8, 16}, rng, 0.0, 1.0),
                random_tensor<double>({3, 8, 16}, rng, 0.0, 1.0)};
    w.raster = random_tensor<double>({kRadarChannels, 8, 8}, rng);

    BoxAnnotation a, b;
    a.cz = 3.0;
    a.cx = 1.0;
    a.yaw = 0.4;
    b.cz = -3.5;
    b.cx = -1.5;
    b.yaw = -1.2;
    w.targets = make_targets<double>({a, b}, w.grid);

    w.params = init_model_params<double>(w.mcfg, w.grid, 99);
    for (const auto& [name, t] : w.params) {
        w.names.push_back(name);
        w.values.push_back(t);
    }
    return w;
}

GradCheckResult pipeline_composite(const std::string& label, LiftStrategy strategy, Rng& rng) {
    MicroWorld w = micro_world(strategy, rng);
    auto fn = [&w](Tape<double>& tp, const In& in) {
        (void)tp;
        ParamStore<double> p;
        for (size_t i = 0; i < w.names.size(); ++i) p.add(w.names[i], in[i]);
        ModelInputs<double> inputs{w.images, w.cams, w.raster, w.grid};
        HeadOutputs<double> pred = model_forward(inputs, p, w.mcfg);
        return total_loss(pred, w.targets, p.get("loss.s_seg"), p.get("loss.s_center"),
                          p.get("loss.s_offset"), 1.3)
            .total;
    };
    GradCheckResult res = check_gradients(label, fn, w.values, 1e-3);
    return res;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite() {
    std::vector<GradCheckResult> results;
    Rng rng(20240);

    auto run = [&results, &rng](const std::string& name, double tol, int instances,
                                auto make_inputs, GradFn fn) {
        GradCheckResult agg;
        agg.name = name;
        agg.tol = tol;
        for (int t = 0; t < instances; ++t) {
            GradCheckResult one = check_gradients(name, fn, make_inputs(rng), tol);
            agg.max_rel_err = std::max(agg.max_rel_err, one.max_rel_err);
            agg.pass = agg.pass && one.pass;
        }
        results.push_back(agg);
    };

    run("conv2d", 1e-4, 20,
        [](Rng& r) {
            return In{random_tensor<double>({2, 5, 5}, r), random_tensor<double>({3, 2, 3, 3}, r),
                      random_tensor<double>({3}, r)};
        },
        [](Tape<double>&, const In& in) { return mean(conv2d(in[0], in[1], in[2], 1, 1)); });

    run("bilinear_image", 1e-4, 20,
        [](Rng& r) {
            Tensor<double> coords({5, 2});
            for (int i = 0; i < 5; ++i) {
                coords.data()[2 * i] = r.uniform(0.2, 5.7);
                coords.data()[2 * i + 1] = r.uniform(0.2, 3.7);
            }
            return In{random_tensor<double>({3, 4, 6}, r), coords};
        },
        [](Tape<double>&, const In& in) {
            Tape<double> unused;
            (void)unused;
            // image gradient only: coords stay constant
            auto res = bilinear_sample(in[0], in[1]);
            return mean(res.values);
        });

    run("bilinear_coords", 1e-4, 20,
        [](Rng& r) {
            Tensor<double> coords({5, 2});
            for (int i = 0; i < 5; ++i) {
                // interior, away from the integer lattice
                coords.data()[2 * i] = 0.3 + 0.45 * r.uniform() + r.uniform_int(0, 4);
                coords.data()[2 * i + 1] = 0.3 + 0.45 * r.uniform() + r.uniform_int(0, 2);
            }
            return In{coords, random_tensor<double>({3, 4, 6}, r)};
        },
        [](Tape<double>&, const In& in) {
            auto res = bilinear_sample(in[1], in[0]);
            return mean(res.values);
        });

    run("scatter_add", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({12, 3}, r)}; },
        [](Tape<double>&, const In& in) {
            std::vector<long long> idx(12);
            for (int i = 0; i < 12; ++i) idx[static_cast<size_t>(i)] = (i * 7) % 5 - 1;
            Tensor<double> weights({6});
            for (int i = 0; i < 6; ++i) weights.data()[i] = 0.3 + 0.2 * i;
            return mean(scale_rows(scatter_add(in[0], idx, 6), weights));
        });

    run("add", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 4}, r), random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(add(in[0], in[1]), in[0])); });
    run("sub", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 4}, r), random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(sub(in[0], in[1]), in[1])); });
    run("mul", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 4}, r), random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(in[0], in[1])); });
    run("exp", 1e-4, 20, [](Rng& r) { return In{random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(bev::exp(in[0])); });
    run("relu", 1e-4, 20,
        [](Rng& r) {
            Tensor<double> t = random_tensor<double>({3, 4}, r);
            keep_off_kink(t);
            return In{t};
        },
        [](Tape<double>&, const In& in) { return mean(mul(relu(in[0]), in[0])); });
    run("sigmoid", 1e-4, 20, [](Rng& r) { return In{random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(sigmoid(in[0])); });
    run("softmax", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 4}, r), random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(softmax(in[0], 1), in[1])); });
    run("mean", 1e-4, 20, [](Rng& r) { return In{random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(in[0], in[0])); });
    run("sum", 1e-4, 20, [](Rng& r) { return In{random_tensor<double>({3, 4}, r)}; },
        [](Tape<double>&, const In& in) { return sum(mul(in[0], in[0])); });
    run("concat", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 4}, r), random_tensor<double>({3, 2}, r)}; },
        [](Tape<double>&, const In& in) {
            Tensor<double> joined = concat<double>({in[0], in[1]}, 1);
            return mean(mul(joined, joined));
        });
    run("reshape", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 4}, r), random_tensor<double>({6, 2}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(reshape(in[0], {6, 2}), in[1])); });
    run("permute", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({2, 3, 4}, r), random_tensor<double>({4, 2, 3}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(permute(in[0], {2, 0, 1}), in[1])); });
    run("slice", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 5}, r), random_tensor<double>({3, 2}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(slice(in[0], 1, 2, 2), in[1])); });
    run("repeat_rows", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({3, 4}, r), random_tensor<double>({9, 4}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(repeat_rows(in[0], 3), in[1])); });
    run("scale_rows", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({5, 3}, r), random_tensor<double>({5}, r)}; },
        [](Tape<double>&, const In& in) { return mean(scale_rows(in[0], in[1])); });
    run("upsample2x", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({2, 3, 4}, r), random_tensor<double>({2, 6, 8}, r)}; },
        [](Tape<double>&, const In& in) { return mean(mul(upsample2x(in[0]), in[1])); });

    run("bce_with_logits", 1e-4, 20,
        [](Rng& r) { return In{random_tensor<double>({4, 5}, r, -3, 3)}; },
        [](Tape<double>& tp, const In& in) {
            (void)tp;
            Tensor<double> labels({4, 5});
            for (long long i = 0; i < 20; ++i) labels.data()[i] = (i * 13) % 3 == 0 ? 1.0 : 0.0;
            return bce_with_logits(in[0], labels, 1.7);
        });
    run("l1_masked", 1e-4, 20,
        [](Rng& r) {
            In in{random_tensor<double>({4, 5}, r), random_tensor<double>({4, 5}, r)};
            return in;
        },
        [](Tape<double>&, const In& in) {
            Tensor<double> mask({4, 5});
            for (long long i = 0; i < 20; ++i) mask.data()[i] = (i * 7) % 2 ? 1.0 : 0.0;
            return l1_masked(in[0], in[1], mask);
        });

    {
        // total_loss w.r.t. the learnable log-variances
        Rng lrng = rng.fork(7);
        VoxelGrid grid(16, 4, 16, 8, 2, 8);
        BoxAnnotation box;
        box.cz = 2.0;
        auto targets = make_targets<double>({box}, grid);
        HeadOutputs<double> preds;
        preds.seg_logits = random_tensor<double>({1, 8, 8}, lrng);
        preds.centerness = random_tensor<double>({1, 8, 8}, lrng, 0.05, 0.95);
        preds.offset = random_tensor<double>({2, 8, 8}, lrng);
        run("total_loss_logvars", 1e-4, 20,
            [](Rng& r) {
                return In{Tensor<double>::scalar(r.uniform(-1, 1)),
                          Tensor<double>::scalar(r.uniform(-1, 1)),
                          Tensor<double>::scalar(r.uniform(-1, 1))};
            },
            [&preds, &targets](Tape<double>&, const In& in) {
                return total_loss(preds, targets, in[0], in[1], in[2], 1.1).total;
            });
    }

    {
        // deformable lift w.r.t. offsets and kernel logits
        Intrinsics intr(20.0, 20.0, 7.5, 3.5, 16, 8);
        std::vector<Camera> cams = {{intr, Pose::yaw(0.0, Eigen::Vector3d(0, -1.5, 0))}};
        VoxelGrid grid(6, 2, 6, 3, 1, 3,
                       Pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0, -1.5, 0)));
        const int m = static_cast<int>(grid.num_cells());
        LiftConfig lc;
        lc.strategy = LiftStrategy::kDeform;
        lc.points_per_voxel = 2;
        run("deform_offsets_logits", 1e-3, 10,
            [m](Rng& r) {
                return In{random_tensor<double>({2, 4, 6}, r),
                          random_tensor<double>({m, 2, 2}, r, -0.35, 0.35),
                          random_tensor<double>({m, 2}, r)};
            },
            [cams, grid, lc](Tape<double>&, const In& in) {
                DeformParams<double> dp{in[1], in[2]};
                auto out = deform_lift<double>({{in[0]}}, cams, grid, dp, lc, 4);
                return mean(out.volumes[0]);
            });
    }

    results.push_back(pipeline_composite("pipeline_sample", LiftStrategy::kSample, rng));
    results.push_back(pipeline_composite("pipeline_splat_depth", LiftStrategy::kSplatDepth, rng));
    results.push_back(pipeline_composite("pipeline_deform", LiftStrategy::kDeform, rng));
    return results;
}

}  // namespace bev

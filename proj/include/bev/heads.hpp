#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bev/lifting.hpp"
#include "bev/ops.hpp"

// Everything after lifting: vertical compression, fusion with sensor
// rasters, the BEV network, the three task heads, target generation and the
// uncertainty-weighted loss.

namespace bev {

/// Ordered, named parameter set. Iteration order is insertion order, which
/// fixes gradient accumulation order and checkpoint layout.
template <class S>
class ParamStore {
public:
    Tensor<S>& add(const std::string& name, Tensor<S> t) {
        BEV_CHECK(!has(name), "params: duplicate name '", name, "'");
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool has(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return true;
        return false;
    }

    const Tensor<S>& get(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        raise("params: unknown name '", name, "'");
    }

    Tensor<S>& get(const std::string& name) {
        for (auto& [n, t] : items_)
            if (n == name) return t;
        raise("params: unknown name '", name, "'");
    }

    size_t size() const { return items_.size(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }

    long long total_values() const {
        long long n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    /// Leaf-binds every parameter to a tape; payloads are shared, not copied.
    ParamStore bind(Tape<S>& tape) const {
        ParamStore out;
        for (const auto& [name, t] : items_) out.add(name, tape.leaf(t));
        return out;
    }

    template <class T>
    ParamStore<T> cast() const {
        ParamStore<T> out;
        for (const auto& [name, t] : items_) {
            Tensor<T> c(t.shape());
            for (long long i = 0; i < t.numel(); ++i)
                c.data()[i] = static_cast<T>(t.data()[i]);
            out.add(name, std::move(c));
        }
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<S>>> items_;
};

/// Architecture knobs. `raster_channels` is the channel count of the fused
/// sensor raster: 0 (camera only), 1 (radar occupancy), 15 (full radar
/// returns) or the grid's res_y (LiDAR occupancy).
struct ModelConfig {
    int channels = 32;          // C
    int featurizer_width = 16;  // width of the first conv block
    int featurizer_depth = 1;   // stride-1 refinement convs after downsampling
    int raster_channels = 0;    // R
    LiftConfig lift;

    void validate() const {
        BEV_CHECK(channels >= 1 && featurizer_width >= 1 && featurizer_depth >= 0,
                  "model config: non-positive sizes");
        BEV_CHECK(raster_channels >= 0, "model config: negative raster channels");
        lift.validate();
    }
};

/// Image featurizer downsample factor: two stride-2 convs.
inline constexpr int kFeatDownsample = 4;

namespace detail {

template <class S>
void add_conv(ParamStore<S>& p, const std::string& name, int c_out, int c_in, int k, Rng& rng) {
    Tensor<S> w({c_out, c_in, k, k});
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(c_in) * k * k));
    for (long long i = 0; i < w.numel(); ++i)
        w.data()[i] = static_cast<S>(rng.normal(0.0, std_dev));
    p.add(name + ".w", std::move(w));
    p.add(name + ".b", Tensor<S>({c_out}));
}

template <class S>
Tensor<S> conv_block(const Tensor<S>& x, const ParamStore<S>& p, const std::string& name,
                     int stride, int pad) {
    return conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, pad);
}

}  // namespace detail

/// Builds all model parameters for a configuration and grid; the compressor's
/// (C·Y + R) input arithmetic is fixed here. Initialization is deterministic
/// in the seed.
template <class S>
ParamStore<S> init_model_params(const ModelConfig& cfg, const VoxelGrid& grid, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParamStore<S> p;
    const int c = cfg.channels, w = cfg.featurizer_width;

    detail::add_conv(p, "feat.conv1", w, 3, 3, rng);
    detail::add_conv(p, "feat.conv2", c, w, 3, rng);
    for (int i = 0; i < cfg.featurizer_depth; ++i)
        detail::add_conv(p, "feat.ref" + std::to_string(i), c, c, 3, rng);
    if (cfg.lift.strategy == LiftStrategy::kDeformMultiscale)
        for (int l = 1; l < cfg.lift.pyramid_levels; ++l)
            detail::add_conv(p, "feat.pyr" + std::to_string(l), c, c, 3, rng);
    if (cfg.lift.strategy == LiftStrategy::kSplatDepth)
        detail::add_conv(p, "feat.depth", cfg.lift.depth_bins, c, 1, rng);

    detail::add_conv(p, "compress", c, c * grid.res_y + cfg.raster_channels, 3, rng);

    detail::add_conv(p, "bev.block1", c, c, 3, rng);
    detail::add_conv(p, "bev.block2", c, c, 3, rng);
    detail::add_conv(p, "bev.block3", c, c, 3, rng);
    detail::add_conv(p, "head.trunk", c, c, 3, rng);
    detail::add_conv(p, "head.seg", 1, c, 1, rng);
    detail::add_conv(p, "head.center", 1, c, 1, rng);
    detail::add_conv(p, "head.offset", 2, c, 1, rng);
    // vehicles cover a percent-level fraction of BEV cells; starting the
    // segmentation logit near the class prior avoids burning early steps on
    // suppressing the background
    p.get("head.seg.b").data()[0] = S(-4);

    if (cfg.lift.strategy == LiftStrategy::kDeform ||
        cfg.lift.strategy == LiftStrategy::kDeformMultiscale) {
        const int m = static_cast<int>(grid.num_cells());
        const int pt = cfg.lift.points_per_voxel;
        Tensor<S> offsets({m, pt, 2});
        for (long long i = 0; i < offsets.numel(); ++i)
            offsets.data()[i] = static_cast<S>(rng.uniform(-1.5, 1.5));
        p.add("deform.offsets", std::move(offsets));
        p.add("deform.logits", Tensor<S>({m, pt}));
    }

    p.add("loss.s_seg", Tensor<S>::scalar(S(0)));
    p.add("loss.s_center", Tensor<S>::scalar(S(0)));
    p.add("loss.s_offset", Tensor<S>::scalar(S(0)));
    return p;
}

template <class S>
struct FeaturizerOutput {
    std::vector<Tensor<S>> pyramid;  // level 0 is C×H/4×W/4; deeper levels halve
    Tensor<S> depth_logits;          // D×H/4×W/4, only for depth-weighted splatting
};

/// Conv stack featurizing one RGB image to 1/4 resolution. Emits extra
/// pyramid levels / per-pixel depth logits when the lifting strategy needs
/// them.
template <class S>
FeaturizerOutput<S> featurize(const Tensor<S>& image, const ParamStore<S>& params,
                              const ModelConfig& cfg) {
    BEV_CHECK(image.defined() && image.ndim() == 3 && image.dim(0) == 3,
              "featurize: image must be 3×H×W, got ", shape_str(image.shape()));
    BEV_CHECK(image.dim(1) % kFeatDownsample == 0 && image.dim(2) % kFeatDownsample == 0,
              "featurize: image extents ", image.dim(1), "×", image.dim(2),
              " are not divisible by ", kFeatDownsample);
    Tensor<S> x = relu(detail::conv_block(image, params, "feat.conv1", 2, 1));
    x = relu(detail::conv_block(x, params, "feat.conv2", 2, 1));
    for (int i = 0; i < cfg.featurizer_depth; ++i)
        x = relu(detail::conv_block(x, params, "feat.ref" + std::to_string(i), 1, 1));

    FeaturizerOutput<S> out;
    out.pyramid.push_back(x);
    if (cfg.lift.strategy == LiftStrategy::kDeformMultiscale) {
        for (int l = 1; l < cfg.lift.pyramid_levels; ++l) {
            x = relu(detail::conv_block(x, params, "feat.pyr" + std::to_string(l), 2, 1));
            out.pyramid.push_back(x);
        }
    }
    if (cfg.lift.strategy == LiftStrategy::kSplatDepth)
        out.depth_logits = conv2d(out.pyramid[0], params.get("feat.depth.w"),
                                  params.get("feat.depth.b"), 1, 0);
    return out;
}

/// Vertical-to-channel rearrangement C×Z×Y×X → (C·Y)×Z×X, optional sensor
/// raster concatenation, then a 3×3 conv back down to C channels.
template <class S>
Tensor<S> compress_vertical(const Tensor<S>& volume, const Tensor<S>& sensor_raster,
                            const ParamStore<S>& params) {
    BEV_CHECK(volume.defined() && volume.ndim() == 4, "compress_vertical: volume must be C×Z×Y×X");
    const int c = volume.dim(0), z = volume.dim(1), y = volume.dim(2), x = volume.dim(3);
    Tensor<S> flat = reshape(permute(volume, {0, 2, 1, 3}), {c * y, z, x});
    if (sensor_raster.defined()) {
        BEV_CHECK(sensor_raster.ndim() == 3 && sensor_raster.dim(1) == z &&
                      sensor_raster.dim(2) == x,
                  "compress_vertical: raster shape ", shape_str(sensor_raster.shape()),
                  " does not sit on the Z×X lattice [", z, ", ", x, "]");
        flat = concat<S>({flat, sensor_raster}, 0);
    }
    const Tensor<S>& w = params.get("compress.w");
    BEV_CHECK(w.dim(1) == flat.dim(0), "compress_vertical: got ", flat.dim(0),
              " input channels but the compressor expects ", w.dim(1));
    return conv2d(flat, w, params.get("compress.b"), 1, 1);
}

/// Bilinear 2× upsampling (align-corners lattice), built on the sampler so
/// it shares its gradient path.
template <class S>
Tensor<S> upsample2x(const Tensor<S>& x) {
    BEV_CHECK(x.defined() && x.ndim() == 3, "upsample2x: expected C×h×w");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int h2 = 2 * h, w2 = 2 * w;
    Tensor<S> coords({h2 * w2, 2});
    const double sx = w2 > 1 ? static_cast<double>(w - 1) / (w2 - 1) : 0.0;
    const double sy = h2 > 1 ? static_cast<double>(h - 1) / (h2 - 1) : 0.0;
    S* pc = coords.data();
    for (int i = 0; i < h2; ++i)
        for (int j = 0; j < w2; ++j) {
            *pc++ = static_cast<S>(j * sx);
            *pc++ = static_cast<S>(i * sy);
        }
    SampleResult<S> res = bilinear_sample_cm(x, coords);
    return reshape(res.values, {c, h2, w2});
}

template <class S>
struct HeadOutputs {
    Tensor<S> seg_logits;  // 1×Z×X, raw logits
    Tensor<S> centerness;  // 1×Z×X, after sigmoid
    Tensor<S> offset;      // 2×Z×X, unbounded (z, x) cell units
};

/// BEV network: three conv blocks (stride 1, 2, 2) with additive skip
/// connections through bilinear upsampling, then the three task heads.
template <class S>
HeadOutputs<S> bev_forward(const Tensor<S>& bev, const ParamStore<S>& params) {
    BEV_CHECK(bev.defined() && bev.ndim() == 3, "bev_forward: expected C×Z×X");
    BEV_CHECK(bev.dim(1) % 4 == 0 && bev.dim(2) % 4 == 0,
              "bev_forward: BEV extents must be divisible by 4, got ", shape_str(bev.shape()));
    Tensor<S> f1 = relu(detail::conv_block(bev, params, "bev.block1", 1, 1));
    Tensor<S> f2 = relu(detail::conv_block(f1, params, "bev.block2", 2, 1));
    Tensor<S> f3 = relu(detail::conv_block(f2, params, "bev.block3", 2, 1));
    Tensor<S> m2 = add(f2, upsample2x(f3));
    Tensor<S> m1 = add(f1, upsample2x(m2));
    Tensor<S> trunk = relu(detail::conv_block(m1, params, "head.trunk", 1, 1));

    HeadOutputs<S> out;
    out.seg_logits = conv2d(trunk, params.get("head.seg.w"), params.get("head.seg.b"), 1, 0);
    out.centerness = sigmoid(
        conv2d(trunk, params.get("head.center.w"), params.get("head.center.b"), 1, 0));
    out.offset = conv2d(trunk, params.get("head.offset.w"), params.get("head.offset.b"), 1, 0);
    return out;
}

/// One annotated vehicle footprint, in the grid reference frame. Heading is
/// (sin yaw, 0, cos yaw); length runs along the heading, width across it.
struct BoxAnnotation {
    double cx = 0.0, cz = 0.0;          // center, meters
    double length = 4.5, width = 1.9;   // meters
    double yaw = 0.0;                   // radians about the gravity axis
    double height = 1.7;                // meters, used by rendering/sensors
    double vx = 0.0, vz = 0.0;          // ground-plane velocity, m/s
    int color = 0;

    bool contains_xz(double x, double z) const {
        const double dx = x - cx, dz = z - cz;
        const double sy = std::sin(yaw), cy = std::cos(yaw);
        const double lon = dx * sy + dz * cy;
        const double lat = dx * cy - dz * sy;
        return std::abs(lon) <= 0.5 * length && std::abs(lat) <= 0.5 * width;
    }
};

/// Box under a change of (yaw-aligned) reference frame: rel maps old-frame
/// coordinates to new-frame coordinates. Footprints live on the ground, so
/// only the planar part of the transform applies.
inline BoxAnnotation reexpress_box(const BoxAnnotation& b, const Pose& rel) {
    BoxAnnotation out = b;
    const Eigen::Vector3d center = rel.apply(Eigen::Vector3d(b.cx, 0.0, b.cz));
    const Eigen::Vector3d vel = rel.rotate(Eigen::Vector3d(b.vx, 0.0, b.vz));
    out.cx = center.x();
    out.cz = center.z();
    out.yaw = b.yaw + rel.yaw_angle();
    out.vx = vel.x();
    out.vz = vel.z();
    return out;
}

/// Gaussian radius of the centerness peak, in cells.
inline constexpr double kCenternessSigma = 2.0;

template <class S>
struct TargetMaps {
    Tensor<S> seg;         // Z×X in {0,1}
    Tensor<S> centerness;  // Z×X in [0,1], peak 1.0 at instance center cells
    Tensor<S> offset;      // 2×Z×X, (z, x) cell units, zero outside instances
    std::vector<int> instance;  // Z×X ids, 0 = background, later boxes overwrite
};

template <class S = float>
TargetMaps<S> make_targets(const std::vector<BoxAnnotation>& boxes, const VoxelGrid& grid) {
    const int rz = grid.res_z, rx = grid.res_x;
    TargetMaps<S> t;
    t.seg = Tensor<S>({rz, rx});
    t.centerness = Tensor<S>({rz, rx});
    t.offset = Tensor<S>({2, rz, rx});
    t.instance.assign(static_cast<size_t>(rz) * rx, 0);

    std::vector<std::pair<int, int>> center_cells;  // (zi, xi), possibly off-grid
    for (const BoxAnnotation& b : boxes) {
        BEV_CHECK(std::isfinite(b.cx) && std::isfinite(b.cz) && std::isfinite(b.yaw),
                  "make_targets: non-finite box");
        BEV_CHECK(b.length > 0 && b.width > 0, "make_targets: non-positive box size");
        center_cells.emplace_back(
            static_cast<int>(std::floor((b.cz / grid.span_z + 0.5) * rz)),
            static_cast<int>(std::floor((b.cx / grid.span_x + 0.5) * rx)));
    }
    const long long cells = static_cast<long long>(rz) * rx;
    for (int zi = 0; zi < rz; ++zi) {
        for (int xi = 0; xi < rx; ++xi) {
            const Eigen::Vector3d c = grid.cell_center(zi, 0, xi);
            const long long i = static_cast<long long>(zi) * rx + xi;
            double best_center = 0.0;
            for (size_t k = 0; k < boxes.size(); ++k) {
                const auto [zc, xc] = center_cells[k];
                const double dz = zi - zc, dx = xi - xc;
                best_center = std::max(best_center,
                                       std::exp(-(dz * dz + dx * dx) /
                                                (2.0 * kCenternessSigma * kCenternessSigma)));
                if (boxes[k].contains_xz(c.x(), c.z())) {
                    t.seg.data()[i] = S(1);
                    t.instance[static_cast<size_t>(i)] = static_cast<int>(k) + 1;
                    t.offset.data()[i] = static_cast<S>(zc - zi);
                    t.offset.data()[cells + i] = static_cast<S>(xc - xi);
                }
            }
            t.centerness.data()[i] = static_cast<S>(best_center);
        }
    }
    return t;
}

enum class LossReduction { kMean, kSum };

template <class S>
struct LossParts {
    Tensor<S> total;  // scalar, on tape
    S seg = S(0), center = S(0), offset = S(0);  // component values
};

/// L = Σ_i exp(−s_i)·L_i + s_i with learnable log-variances s_i. L_seg is
/// cross-entropy on logits (with pos_weight), L_center an L1 over all cells,
/// L_offset an L1 masked to instance cells. Sum reduction rescales each
/// component by its own mean denominator.
template <class S>
LossParts<S> total_loss(const HeadOutputs<S>& preds, const TargetMaps<S>& targets,
                        const Tensor<S>& s_seg, const Tensor<S>& s_center,
                        const Tensor<S>& s_offset, S pos_weight,
                        LossReduction reduction = LossReduction::kMean) {
    const int rz = targets.seg.dim(0), rx = targets.seg.dim(1);
    BEV_CHECK(preds.seg_logits.shape() == std::vector<int>({1, rz, rx}),
              "total_loss: seg prediction shape ", shape_str(preds.seg_logits.shape()),
              " does not match targets [", rz, ", ", rx, "]");
    Tensor<S> seg_target = reshape(targets.seg, {1, rz, rx});
    Tensor<S> l_seg = bce_with_logits(preds.seg_logits, seg_target, pos_weight);
    Tensor<S> ones = Tensor<S>::full({1, rz, rx}, S(1));
    Tensor<S> l_center =
        l1_masked(preds.centerness, reshape(targets.centerness, {1, rz, rx}), ones);
    Tensor<S> mask({2, rz, rx});
    S mask_count = S(0);
    for (long long i = 0; i < static_cast<long long>(rz) * rx; ++i) {
        const S m = targets.instance[static_cast<size_t>(i)] != 0 ? S(1) : S(0);
        mask.data()[i] = m;
        mask.data()[static_cast<long long>(rz) * rx + i] = m;
        mask_count += m;
    }
    Tensor<S> l_offset = l1_masked(preds.offset, targets.offset, mask);

    if (reduction == LossReduction::kSum) {
        l_seg = mul(l_seg, static_cast<S>(static_cast<long long>(rz) * rx));
        l_center = mul(l_center, static_cast<S>(static_cast<long long>(rz) * rx));
        l_offset = mul(l_offset, std::max(S(2) * mask_count, S(1)));
    }

    LossParts<S> out;
    out.seg = l_seg.value();
    out.center = l_center.value();
    out.offset = l_offset.value();
    Tensor<S> total = add(mul(bev::exp(neg(s_seg)), l_seg), s_seg);
    total = add(total, add(mul(bev::exp(neg(s_center)), l_center), s_center));
    total = add(total, add(mul(bev::exp(neg(s_offset)), l_offset), s_offset));
    out.total = std::move(total);
    return out;
}

}  // namespace bev

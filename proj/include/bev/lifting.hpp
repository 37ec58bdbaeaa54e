#pragma once

#include <vector>

#include "bev/geometry.hpp"
#include "bev/ops.hpp"

// 2D-to-BEV lifting strategies. All of them emit per-camera (or fused)
// volumes shaped C×Z×Y×X so the downstream head is strategy-agnostic, and
// all are differentiable end-to-end w.r.t. the image features (and, for the
// deformable variants, the sampling offsets and kernel logits).

namespace bev {

/// Intrinsics + world-from-camera pose; the projection model behind lifting.
struct Camera {
    Intrinsics intr;
    Pose pose;
};

enum class LiftStrategy { kSample, kSplatUniform, kSplatDepth, kDeform, kDeformMultiscale };

inline const char* to_string(LiftStrategy s) {
    switch (s) {
        case LiftStrategy::kSample: return "sample";
        case LiftStrategy::kSplatUniform: return "splat_uniform";
        case LiftStrategy::kSplatDepth: return "splat_depth";
        case LiftStrategy::kDeform: return "deform";
        case LiftStrategy::kDeformMultiscale: return "deform_multiscale";
    }
    return "?";
}

inline LiftStrategy lift_strategy_from_string(const std::string& s) {
    if (s == "sample") return LiftStrategy::kSample;
    if (s == "splat_uniform") return LiftStrategy::kSplatUniform;
    if (s == "splat_depth") return LiftStrategy::kSplatDepth;
    if (s == "deform") return LiftStrategy::kDeform;
    if (s == "deform_multiscale") return LiftStrategy::kDeformMultiscale;
    raise("unknown lifting strategy '", s, "'");
}

struct LiftConfig {
    LiftStrategy strategy = LiftStrategy::kSample;
    int depth_bins = 64;       // splat strategies
    double depth_min = 1.0;    // meters
    double depth_max = 60.0;
    int points_per_voxel = 4;  // deform strategies
    int pyramid_levels = 3;    // deform_multiscale (1 for single-scale)

    void validate() const {
        BEV_CHECK(depth_bins >= 1, "lift config: depth_bins must be >= 1");
        BEV_CHECK(points_per_voxel >= 1, "lift config: points_per_voxel must be >= 1");
        BEV_CHECK(pyramid_levels >= 1, "lift config: pyramid_levels must be >= 1");
        BEV_CHECK(depth_min < depth_max, "lift config: depth range is empty");
    }
};

/// Learned per-voxel sampling kernel: P pixel offsets and P kernel logits per
/// voxel, tied to one grid resolution.
template <class S>
struct DeformParams {
    Tensor<S> offsets;  // (Z·Y·X)×P×2, pixels at the level-0 feature scale
    Tensor<S> logits;   // (Z·Y·X)×P, softmaxed into kernel weights
};

template <class S>
struct LiftVolumes {
    std::vector<Tensor<S>> volumes;  // per camera, C×Z×Y×X
    std::vector<Tensor<S>> valids;   // per camera, Z×Y×X in {0,1}, constant
};

template <class S>
struct SplatVolume {
    Tensor<S> volume;     // C×Z×Y×X, fused over cameras
    Tensor<S> hit_count;  // Z×Y×X, copies landed per voxel (constant)
};

namespace detail {

/// Feature-scale sampling coordinates of every voxel center for one camera,
/// plus the in-front mask. Behind-the-near-plane voxels get a finite
/// far-out-of-bounds coordinate so the sampler zeroes them.
template <class S>
std::pair<Tensor<S>, std::vector<uint8_t>> voxel_feature_coords(const Tensor<S>& centers,
                                                                const Camera& cam,
                                                                int downsample) {
    const int m = centers.dim(0);
    Tensor<S> coords({m, 2});
    std::vector<uint8_t> in_front(static_cast<size_t>(m), 0);
    const Eigen::Matrix3d rt = cam.pose.rotation().transpose();
    const Eigen::Vector3d t = cam.pose.translation();
    const double inv = 1.0 / downsample;
    const double fx = cam.intr.fx * inv, fy = cam.intr.fy * inv;
    const double cx = cam.intr.cx * inv, cy = cam.intr.cy * inv;
    const S* pp = centers.data();
    S* pc = coords.data();
    for (int i = 0; i < m; ++i) {
        const Eigen::Vector3d p = rt * (Eigen::Vector3d(pp[3 * i], pp[3 * i + 1], pp[3 * i + 2]) - t);
        if (p.z() > kFrustumZMin) {
            in_front[static_cast<size_t>(i)] = 1;
            pc[2 * i] = static_cast<S>(fx * p.x() / p.z() + cx);
            pc[2 * i + 1] = static_cast<S>(fy * p.y() / p.z() + cy);
        } else {
            pc[2 * i] = S(-1e6);
            pc[2 * i + 1] = S(-1e6);
        }
    }
    return {std::move(coords), std::move(in_front)};
}

template <class S>
Tensor<S> rows_to_volume(const Tensor<S>& rows, const VoxelGrid& grid, int channels) {
    return reshape(permute(rows, {1, 0}), {channels, grid.res_z, grid.res_y, grid.res_x});
}

template <class S>
Tensor<S> cm_to_volume(const Tensor<S>& values_cm, const VoxelGrid& grid, int channels) {
    return reshape(values_cm, {channels, grid.res_z, grid.res_y, grid.res_x});
}

template <class S>
Tensor<S> mask_to_tensor(const std::vector<uint8_t>& mask, const VoxelGrid& grid) {
    Tensor<S> t({grid.res_z, grid.res_y, grid.res_x});
    for (size_t i = 0; i < mask.size(); ++i) t.data()[i] = mask[i] ? S(1) : S(0);
    return t;
}

}  // namespace detail

/// Parameter-free lift: every voxel center projects into the camera and
/// pulls one bilinear sample. valid = in front of the camera AND inside the
/// feature map; invalid voxels carry zeros.
template <class S>
LiftVolumes<S> sample_lift(const std::vector<Tensor<S>>& features,
                           const std::vector<Camera>& cams, const VoxelGrid& grid,
                           int downsample = 4) {
    BEV_CHECK(!cams.empty(), "sample_lift: camera count is zero");
    BEV_CHECK(features.size() == cams.size(), "sample_lift: ", features.size(),
              " feature maps for ", cams.size(), " cameras");
    const Tensor<S> centers = voxel_centers<S>(grid);
    const int channels = features.front().dim(0);
    LiftVolumes<S> out;
    for (size_t c = 0; c < cams.size(); ++c) {
        BEV_CHECK(features[c].ndim() == 3 && features[c].dim(0) == channels,
                  "sample_lift: feature map ", c, " has shape ", shape_str(features[c].shape()));
        auto [coords, in_front] = detail::voxel_feature_coords(centers, cams[c], downsample);
        SampleResult<S> sampled = bilinear_sample_cm(features[c], coords);
        std::vector<uint8_t> valid(in_front.size());
        for (size_t i = 0; i < valid.size(); ++i) valid[i] = in_front[i] && sampled.valid[i];
        out.volumes.push_back(detail::cm_to_volume(sampled.values, grid, channels));
        out.valids.push_back(detail::mask_to_tensor<S>(valid, grid));
    }
    return out;
}

/// Valid-weighted average across cameras: per voxel, the mean of the
/// volumes that saw it; zero where no camera did.
template <class S>
Tensor<S> reduce_cameras(const LiftVolumes<S>& lifted) {
    BEV_CHECK(!lifted.volumes.empty(), "reduce_cameras: no cameras");
    BEV_CHECK(lifted.volumes.size() == lifted.valids.size(),
              "reduce_cameras: volume/valid count mismatch");
    Tensor<S> sum = add_n(lifted.volumes);

    const long long cells = lifted.valids.front().numel();
    const int channels = lifted.volumes.front().dim(0);
    Tensor<S> inv(lifted.volumes.front().shape());
    std::vector<const S*> masks;
    for (const Tensor<S>& v : lifted.valids) masks.push_back(v.data());
    S* pinv = inv.data();
    for (long long i = 0; i < cells; ++i) {
        S count = S(0);
        for (const S* m : masks) count += m[i];
        pinv[i] = count > S(0) ? S(1) / count : S(0);
    }
    for (int ch = 1; ch < channels; ++ch)
        std::copy(pinv, pinv + cells, pinv + static_cast<long long>(ch) * cells);
    return mul(sum, inv);
}

/// Push lift: every feature pixel is copied along its viewing ray at D
/// uniform metric depths; copies land in voxels by nearest cell and
/// accumulate over all cameras, then each voxel is normalized by its copy
/// count. Copies are weighted 1/D (uniform) or by a softmaxed per-pixel
/// depth distribution.
template <class S>
SplatVolume<S> splat_lift(const std::vector<Tensor<S>>& features,
                          const std::vector<Tensor<S>>& depth_logits,
                          const std::vector<Camera>& cams, const VoxelGrid& grid,
                          const LiftConfig& config, int downsample = 4) {
    config.validate();
    BEV_CHECK(!cams.empty(), "splat_lift: camera count is zero");
    BEV_CHECK(features.size() == cams.size(), "splat_lift: feature/camera count mismatch");
    const bool depth_weighted = config.strategy == LiftStrategy::kSplatDepth;
    if (depth_weighted)
        BEV_CHECK(depth_logits.size() == cams.size(),
                  "splat_lift: depth logits missing for some cameras");
    const int d = config.depth_bins;
    const int channels = features.front().dim(0);
    const long long cells = grid.num_cells();
    const Pose ref_inv = grid.reference.inverse();

    std::vector<Tensor<S>> all_rows;
    std::vector<long long> all_idx;
    for (size_t c = 0; c < cams.size(); ++c) {
        const Tensor<S>& f = features[c];
        BEV_CHECK(f.ndim() == 3 && f.dim(0) == channels, "splat_lift: feature map ", c,
                  " has shape ", shape_str(f.shape()));
        const int fh = f.dim(1), fw = f.dim(2);
        const int pixels = fh * fw;

        // P×C feature rows, each repeated D times (copies of one pixel stay
        // contiguous, depth-major within the block)
        Tensor<S> rows = permute(reshape(f, {channels, pixels}), {1, 0});
        Tensor<S> copies = repeat_rows(rows, d);

        Tensor<S> weights;
        if (depth_weighted) {
            const Tensor<S>& dl = depth_logits[c];
            BEV_CHECK(dl.ndim() == 3 && dl.dim(0) == d && dl.dim(1) == fh && dl.dim(2) == fw,
                      "splat_lift: depth logits for camera ", c, " have shape ",
                      shape_str(dl.shape()), ", expected [", d, ", ", fh, ", ", fw, "]");
            Tensor<S> dist = softmax(dl, 0);  // per-pixel depth distribution
            weights = reshape(permute(reshape(dist, {d, pixels}), {1, 0}), {pixels * d});
        } else {
            weights = Tensor<S>::full({pixels * d}, S(1) / static_cast<S>(d));
        }
        all_rows.push_back(scale_rows(copies, weights));

        // nearest-cell assignment of each (pixel, depth bin) copy
        for (int py = 0; py < fh; ++py) {
            for (int px = 0; px < fw; ++px) {
                const double u = static_cast<double>(px) * downsample;
                const double v = static_cast<double>(py) * downsample;
                for (int bin = 0; bin < d; ++bin) {
                    const double z =
                        d == 1 ? 0.5 * (config.depth_min + config.depth_max)
                               : config.depth_min + bin * (config.depth_max - config.depth_min) /
                                                        (d - 1);
                    const Eigen::Vector3d world = unproject(cams[c].intr, cams[c].pose, u, v, z);
                    all_idx.push_back(grid.cell_of(ref_inv.apply(world)));
                }
            }
        }
    }
    Tensor<S> stacked = all_rows.size() == 1 ? all_rows.front() : concat(all_rows, 0);
    Tensor<S> summed = scatter_add(stacked, all_idx, static_cast<int>(cells));

    SplatVolume<S> out;
    out.hit_count = Tensor<S>({grid.res_z, grid.res_y, grid.res_x});
    for (long long idx : all_idx)
        if (idx >= 0) out.hit_count.data()[idx] += S(1);
    Tensor<S> inv_hits({static_cast<int>(cells)});
    for (long long i = 0; i < cells; ++i)
        inv_hits.data()[i] = S(1) / std::max(out.hit_count.data()[i], S(1));
    out.volume = detail::rows_to_volume(scale_rows(summed, inv_hits), grid, channels);
    return out;
}

/// Bilinear sampling with a learned kernel: P samples per voxel at learned
/// pixel offsets, combined with softmaxed learned weights. Multi-scale
/// variants read sample p from pyramid level p mod L. With P = 1, L = 1 and
/// zero offsets this reduces exactly to sample_lift.
template <class S>
LiftVolumes<S> deform_lift(const std::vector<std::vector<Tensor<S>>>& pyramids,
                           const std::vector<Camera>& cams, const VoxelGrid& grid,
                           const DeformParams<S>& params, const LiftConfig& config,
                           int downsample = 4) {
    config.validate();
    BEV_CHECK(!cams.empty(), "deform_lift: camera count is zero");
    BEV_CHECK(pyramids.size() == cams.size(), "deform_lift: pyramid/camera count mismatch");
    const int levels =
        config.strategy == LiftStrategy::kDeformMultiscale ? config.pyramid_levels : 1;
    const int p_samples = config.points_per_voxel;
    const long long m = grid.num_cells();
    BEV_CHECK(params.offsets.defined() && params.offsets.ndim() == 3 &&
                  params.offsets.dim(0) == m && params.offsets.dim(1) == p_samples &&
                  params.offsets.dim(2) == 2,
              "deform_lift: offsets must be ", m, "×", p_samples, "×2, got ",
              shape_str(params.offsets.shape()));
    BEV_CHECK(params.logits.defined() && params.logits.ndim() == 2 &&
                  params.logits.dim(0) == m && params.logits.dim(1) == p_samples,
              "deform_lift: logits must be ", m, "×", p_samples, ", got ",
              shape_str(params.logits.shape()));

    const Tensor<S> centers = voxel_centers<S>(grid);
    const int channels = pyramids.front().front().dim(0);
    Tensor<S> weights = softmax(params.logits, 1);

    LiftVolumes<S> out;
    for (size_t c = 0; c < cams.size(); ++c) {
        const std::vector<Tensor<S>>& pyr = pyramids[c];
        BEV_CHECK(static_cast<int>(pyr.size()) >= levels, "deform_lift: camera ", c, " has ",
                  pyr.size(), " pyramid levels, config needs ", levels);
        for (int l = 1; l < levels; ++l) {
            BEV_CHECK(pyr[static_cast<size_t>(l)].dim(1) == (pyr[static_cast<size_t>(l - 1)].dim(1) + 1) / 2 &&
                          pyr[static_cast<size_t>(l)].dim(2) == (pyr[static_cast<size_t>(l - 1)].dim(2) + 1) / 2,
                      "deform_lift: pyramid level ", l, " of camera ", c,
                      " is not half the previous resolution");
        }
        auto [base, in_front] = detail::voxel_feature_coords(centers, cams[c], downsample);

        // validity follows the base projection against the level-0 map, the
        // same rule sample_lift uses
        std::vector<uint8_t> valid(static_cast<size_t>(m));
        {
            const int h0 = pyr[0].dim(1), w0 = pyr[0].dim(2);
            for (long long i = 0; i < m; ++i) {
                const S x = base.data()[2 * i], y = base.data()[2 * i + 1];
                valid[static_cast<size_t>(i)] =
                    in_front[static_cast<size_t>(i)] && x >= S(0) && x <= S(w0 - 1) && y >= S(0) &&
                    y <= S(h0 - 1);
            }
        }
        std::vector<Tensor<S>> contribs;
        for (int p = 0; p < p_samples; ++p) {
            const int level = p % levels;
            Tensor<S> offset_p = reshape(slice(params.offsets, 1, p, 1), {static_cast<int>(m), 2});
            Tensor<S> coords = add(base, offset_p);
            if (level > 0) {
                // pixel-center-consistent rescale to the coarser level
                const S factor = S(1) / static_cast<S>(1 << level);
                coords = add(mul(add(coords, S(0.5)), factor), S(-0.5));
            }
            SampleResult<S> sampled = bilinear_sample_cm(pyr[static_cast<size_t>(level)], coords);
            Tensor<S> w_p = reshape(slice(weights, 1, p, 1), {static_cast<int>(m)});
            contribs.push_back(scale_cols(sampled.values, w_p));
        }
        out.volumes.push_back(detail::cm_to_volume(add_n(contribs), grid, channels));
        out.valids.push_back(detail::mask_to_tensor<S>(valid, grid));
    }
    return out;
}

}  // namespace bev

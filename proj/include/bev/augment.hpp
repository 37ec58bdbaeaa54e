#pragma once

#include <vector>

#include "bev/heads.hpp"
#include "bev/sensors.hpp"

// Training-time augmentations. Each op is pure given an explicit rng, so a
// fixed (seed, sample index) pair reproduces the exact augmented sample.

namespace bev {

/// One training example. Boxes are expressed in the current reference frame;
/// radar sweeps and the LiDAR cloud stay anchored to their ego/world poses
/// and are re-expressed at rasterization time.
struct Sample {
    std::vector<Tensor<float>> images;  // per camera, 3×H×W
    std::vector<Camera> cams;           // aligned with images
    std::vector<RadarSweep> sweeps;     // newest first, sweeps[0] at sample time
    Tensor<float> lidar;                // N×3, world frame; undefined if absent
    std::vector<BoxAnnotation> boxes;   // current reference frame
    int reference_index = 0;
    Pose reference;                     // grid anchor, yaw-aligned
};

namespace detail {

/// out(u', v') = in((u' + dx) / s, (v' + dy) / s), zeros outside; the inverse
/// of the intrinsics update u' = s·u − dx, so pixel content stays aligned
/// with projections.
inline Tensor<float> resample_image(const Tensor<float>& img, double s, double dx, double dy,
                                    int out_h, int out_w) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<float> out({c, out_h, out_w});
    const long long plane_in = static_cast<long long>(h) * w;
    const long long plane_out = static_cast<long long>(out_h) * out_w;
    for (int v = 0; v < out_h; ++v) {
        const double sy = (v + dy) / s;
        for (int u = 0; u < out_w; ++u) {
            const double sx = (u + dx) / s;
            if (sx < 0 || sx > w - 1 || sy < 0 || sy > h - 1) continue;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int ch = 0; ch < c; ++ch) {
                const float* p = img.data() + ch * plane_in + static_cast<long long>(y0) * w + x0;
                double val = (1 - fy) * (1 - fx) * p[0];
                if (x0 + 1 < w) val += (1 - fy) * fx * p[1];
                if (y0 + 1 < h) val += fy * (1 - fx) * p[w];
                if (x0 + 1 < w && y0 + 1 < h) val += fy * fx * p[w + 1];
                out.data()[ch * plane_out + static_cast<long long>(v) * out_w + u] =
                    static_cast<float>(val);
            }
        }
    }
    return out;
}

}  // namespace detail

/// Deterministic resize of every camera image to (h, w), updating the
/// intrinsics; the preprocessing step behind the resolution knob.
inline Sample resize_sample(Sample sample, int h, int w) {
    for (size_t c = 0; c < sample.images.size(); ++c) {
        Intrinsics& intr = sample.cams[c].intr;
        if (intr.height == h && intr.width == w) continue;
        const double s = static_cast<double>(w) / intr.width;
        BEV_CHECK(std::abs(s - static_cast<double>(h) / intr.height) < 1e-9,
                  "resize_sample: aspect ratio change from ", intr.width, "×", intr.height,
                  " to ", w, "×", h);
        sample.images[c] = detail::resample_image(sample.images[c], s, 0.0, 0.0, h, w);
        sample.cams[c].intr = adjust_intrinsics(intr, s, 0.0, 0.0, w, h);
    }
    return sample;
}

/// Random resize (scale in `scale_range`) and crop back to the native size,
/// per camera, with the intrinsics updated to match. Scales below 1 leave
/// zero padding at the borders; the crop offset is clamped to keep the
/// window overlapping the resized image.
inline Sample random_resize_crop(Sample sample, Rng& rng,
                                 std::pair<double, double> scale_range = {0.8, 1.2}) {
    BEV_CHECK(scale_range.first > 0 && scale_range.first <= scale_range.second,
              "random_resize_crop: bad scale range");
    for (size_t c = 0; c < sample.images.size(); ++c) {
        Intrinsics& intr = sample.cams[c].intr;
        const int w = intr.width, h = intr.height;
        const double s = rng.uniform(scale_range.first, scale_range.second);
        const double span_x = s * w - w, span_y = s * h - h;
        const double dx = span_x >= 0 ? rng.uniform(0.0, span_x) : rng.uniform(span_x, 0.0);
        const double dy = span_y >= 0 ? rng.uniform(0.0, span_y) : rng.uniform(span_y, 0.0);
        sample.images[c] = detail::resample_image(sample.images[c], s, dx, dy, h, w);
        sample.cams[c].intr = adjust_intrinsics(intr, s, dx, dy, w, h);
    }
    return sample;
}

/// Picks a uniformly random reference camera; the grid follows its
/// yaw-aligned pose and the boxes are re-expressed in the new frame.
inline Sample randomize_reference(Sample sample, Rng& rng) {
    BEV_CHECK(!sample.cams.empty(), "randomize_reference: no cameras");
    const int idx = rng.uniform_int(0, static_cast<int>(sample.cams.size()) - 1);
    const Pose new_ref = yaw_align(sample.cams[static_cast<size_t>(idx)].pose);
    const Pose rel = new_ref.inverse().compose(sample.reference);
    for (BoxAnnotation& b : sample.boxes) b = reexpress_box(b, rel);
    sample.reference = new_ref;
    sample.reference_index = idx;
    return sample;
}

/// Removes exactly one uniformly chosen non-reference camera when enabled.
/// The reference camera anchors the grid and is never dropped.
inline Sample camera_dropout(Sample sample, Rng& rng, bool enabled) {
    if (!enabled) return sample;
    BEV_CHECK(sample.cams.size() >= 2, "camera_dropout: need at least two cameras");
    int victim = rng.uniform_int(0, static_cast<int>(sample.cams.size()) - 2);
    if (victim >= sample.reference_index) ++victim;  // skip the reference slot
    sample.images.erase(sample.images.begin() + victim);
    sample.cams.erase(sample.cams.begin() + victim);
    if (victim < sample.reference_index) --sample.reference_index;
    return sample;
}

}  // namespace bev

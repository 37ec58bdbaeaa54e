#pragma once

#include "bev/heads.hpp"
#include "bev/lifting.hpp"
#include "bev/sensors.hpp"

// Full forward pass: featurize every camera, lift with the configured
// strategy, fuse the sensor raster, and run the BEV network. The lifting
// strategies are interchangeable here — each emits C×Z×Y×X and the head
// never sees which one produced it.

namespace bev {

template <class S>
struct ModelInputs {
    std::vector<Tensor<S>> images;  // per camera, 3×H×W
    std::vector<Camera> cams;       // aligned with images
    Tensor<S> sensor_raster;        // R×Z×X or Y×Z×X; undefined = camera only
    VoxelGrid grid;
};

template <class S>
HeadOutputs<S> model_forward(const ModelInputs<S>& in, const ParamStore<S>& params,
                             const ModelConfig& cfg) {
    BEV_CHECK(!in.images.empty() && in.images.size() == in.cams.size(),
              "model_forward: need one image per camera");
    std::vector<std::vector<Tensor<S>>> pyramids;
    std::vector<Tensor<S>> depth_logits;
    for (const Tensor<S>& image : in.images) {
        FeaturizerOutput<S> f = featurize(image, params, cfg);
        pyramids.push_back(std::move(f.pyramid));
        if (cfg.lift.strategy == LiftStrategy::kSplatDepth)
            depth_logits.push_back(std::move(f.depth_logits));
    }

    Tensor<S> volume;
    switch (cfg.lift.strategy) {
        case LiftStrategy::kSample: {
            std::vector<Tensor<S>> features;
            for (auto& pyr : pyramids) features.push_back(pyr[0]);
            volume = reduce_cameras(sample_lift(features, in.cams, in.grid, kFeatDownsample));
            break;
        }
        case LiftStrategy::kSplatUniform:
        case LiftStrategy::kSplatDepth: {
            std::vector<Tensor<S>> features;
            for (auto& pyr : pyramids) features.push_back(pyr[0]);
            volume = splat_lift(features, depth_logits, in.cams, in.grid, cfg.lift,
                                kFeatDownsample)
                         .volume;
            break;
        }
        case LiftStrategy::kDeform:
        case LiftStrategy::kDeformMultiscale: {
            DeformParams<S> dp{params.get("deform.offsets"), params.get("deform.logits")};
            volume = reduce_cameras(
                deform_lift(pyramids, in.cams, in.grid, dp, cfg.lift, kFeatDownsample));
            break;
        }
    }
    Tensor<S> bev_map = compress_vertical(volume, in.sensor_raster, params);
    return bev_forward(bev_map, params);
}

}  // namespace bev

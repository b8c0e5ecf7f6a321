#pragma once

#include <memory>

#include "pcclip/dataset.hpp"
#include "pcclip/trainer.hpp"
#include "pcclip/translator.hpp"

namespace fixture {

// Toy-backend pipeline over a small random translator.
inline pcclip::Pipeline toy_pipeline(bool translate = true, int projection_res = 32, int encoder_res = 32,
                                     int feature_dim = 16) {
    pcclip::Pipeline p;
    p.projection.resolution = projection_res;
    p.projection.splat_radius = 1;
    p.encoders = pcclip::toy_encoder(feature_dim, 0, encoder_res);
    if (translate) {
        pcclip::TranslatorConfig cfg;
        cfg.depth_levels = 2;
        cfg.base_channels = 4;
        p.translator = std::make_shared<const pcclip::Translator>(pcclip::init_translator(cfg, 1));
    }
    return p;
}

inline pcclip::LabeledDataset shapes(std::size_t per_class, std::uint64_t seed = 0, std::size_t points = 512) {
    using pcclip::Primitive;
    return pcclip::make_synthetic_shapes({Primitive::sphere, Primitive::cube, Primitive::plane}, per_class, points,
                                         seed);
}

}  // namespace fixture

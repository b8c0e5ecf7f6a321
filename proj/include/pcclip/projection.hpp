#pragma once

#include <string>
#include <vector>

#include "pcclip/dataset.hpp"
#include "pcclip/image.hpp"

namespace pcclip {

enum class View { front, back, left, right, top, bottom };

std::string view_name(View v);
View parse_view(const std::string& s);
const std::vector<View>& all_views();

struct ProjectionConfig {
    std::vector<View> views = all_views();
    int resolution = 224;
    int splat_radius = 1;
    float background_value = 0.0f;

    void validate() const;
};

// One single-channel map per view, values in [0,1], background exactly 0.
struct DepthMapSet {
    std::vector<Image> maps;
    std::vector<View> view_ids;

    std::size_t size() const { return maps.size(); }
    friend bool operator==(const DepthMapSet&, const DepthMapSet&) = default;
};

// Orthographic z-buffer splatting. Nearer points are brighter: intensity (c+1)/2
// where c is the coordinate toward the viewer; collisions keep the maximum.
DepthMapSet project_views(const PointCloud& cloud, const ProjectionConfig& config);

Image render_view(const PointCloud& cloud, View view, int resolution, int splat_radius);

// Replicates to three channels and bilinearly resizes (corner-aligned).
Image depth_to_encoder_image(const Image& depth, int resolution);

Image resize_bilinear(const Image& src, int out_h, int out_w);

std::string depth_maps_fingerprint(const DepthMapSet& maps);

}  // namespace pcclip

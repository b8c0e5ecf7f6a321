#include "pcclip/projection.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"

namespace pcclip {

std::string view_name(View v) {
    switch (v) {
        case View::front: return "front";
        case View::back: return "back";
        case View::left: return "left";
        case View::right: return "right";
        case View::top: return "top";
        case View::bottom: return "bottom";
    }
    return "?";
}

View parse_view(const std::string& s) {
    for (View v : all_views())
        if (view_name(v) == s) return v;
    throw ValidationError("unknown view '" + s + "'");
}

const std::vector<View>& all_views() {
    static const std::vector<View> views{View::front, View::back, View::left,
                                         View::right, View::top,  View::bottom};
    return views;
}

void ProjectionConfig::validate() const {
    if (resolution < 8) throw ValidationError("projection resolution must be at least 8");
    if (splat_radius < 0) throw ValidationError("splat radius must be non-negative");
    if (views.empty()) throw ValidationError("projection view list is empty");
    std::set<View> unique(views.begin(), views.end());
    if (unique.size() != views.size()) throw ValidationError("projection view list has duplicates");
}

namespace {

struct ViewCoords {
    double a, b, c;
};

// (a, b) are column/row coordinates, c points toward the viewer.
// Row coordinates use -y so the world up axis appears at the top of the image.
ViewCoords to_view(const Point3& p, View v) {
    const double x = p[0], y = p[1], z = p[2];
    switch (v) {
        case View::front: return {x, -y, z};
        case View::back: return {-x, -y, -z};
        case View::right: return {-z, -y, x};
        case View::left: return {z, -y, -x};
        case View::top: return {x, z, y};
        case View::bottom: return {x, -z, -y};
    }
    return {0, 0, 0};
}

int to_pixel(double coord, int size) {
    const int px = static_cast<int>(std::floor((coord + 1.0) * 0.5 * size));
    return std::clamp(px, 0, size - 1);
}

}  // namespace

Image render_view(const PointCloud& cloud, View view, int resolution, int splat_radius) {
    Image img(resolution, resolution, 1, 0.0f);
    for (const auto& p : cloud.points) {
        const ViewCoords vc = to_view(p, view);
        const int u = to_pixel(vc.a, resolution);
        const int v = to_pixel(vc.b, resolution);
        const auto intensity = static_cast<float>((vc.c + 1.0) * 0.5);
        const int y0 = std::max(0, v - splat_radius), y1 = std::min(resolution - 1, v + splat_radius);
        const int x0 = std::max(0, u - splat_radius), x1 = std::min(resolution - 1, u + splat_radius);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                float& px = img.at(y, x);
                px = std::max(px, intensity);
            }
    }
    return img;
}

DepthMapSet project_views(const PointCloud& cloud, const ProjectionConfig& config) {
    config.validate();
    if (cloud.points.empty()) throw ValidationError("project_views: empty cloud");
    constexpr double kTol = 1e-6;
    for (const auto& p : cloud.points)
        for (double v : p)
            if (!(std::abs(v) <= 1.0 + kTol))
                throw ValidationError("project_views: cloud is not normalized to [-1,1]^3");

    DepthMapSet out;
    out.view_ids = config.views;
    out.maps.reserve(config.views.size());
    for (View v : config.views) out.maps.push_back(render_view(cloud, v, config.resolution, config.splat_radius));
    return out;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ValidationError("resize: output size must be positive");
    if (src.height == out_h && src.width == out_w) return src;
    Image dst(out_h, out_w, src.channels);
    const double sy = out_h > 1 ? static_cast<double>(src.height - 1) / (out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(src.width - 1) / (out_w - 1) : 0.0;
    for (int y = 0; y < out_h; ++y) {
        const double fy = y * sy;
        const int y0 = std::min(static_cast<int>(fy), src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = x * sx;
            const int x0 = std::min(static_cast<int>(fx), src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < src.channels; ++c) {
                const double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
                const double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
                dst.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return dst;
}

Image depth_to_encoder_image(const Image& depth, int resolution) {
    if (depth.channels != 1) throw ValidationError("depth_to_encoder_image: expected a single-channel map");
    for (float v : depth.pixels)
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("depth_to_encoder_image: values outside [0,1]");
    Image rgb(depth.height, depth.width, 3);
    for (std::size_t i = 0; i < depth.pixels.size(); ++i)
        for (int c = 0; c < 3; ++c) rgb.pixels[i * 3 + static_cast<std::size_t>(c)] = depth.pixels[i];
    Image out = resize_bilinear(rgb, resolution, resolution);
    for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

std::string depth_maps_fingerprint(const DepthMapSet& maps) {
    Fingerprint fp;
    for (std::size_t i = 0; i < maps.maps.size(); ++i) {
        fp.value(static_cast<int>(maps.view_ids[i]));
        fp.value(maps.maps[i].height);
        fp.value(maps.maps[i].width);
        fp.values(std::span<const float>(maps.maps[i].pixels));
    }
    return fp.hex();
}

}  // namespace pcclip

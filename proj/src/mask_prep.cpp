#include "pcclip/mask_prep.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "pcclip/dataset.hpp"
#include "pcclip/error.hpp"
#include "pcclip/png_io.hpp"
#include "pcclip/projection.hpp"
#include "pcclip/rng.hpp"

namespace fs = std::filesystem;

namespace pcclip {

NoiseMode parse_noise_mode(const std::string& s) {
    if (s == "exact") return NoiseMode::exact;
    if (s == "bernoulli") return NoiseMode::bernoulli;
    throw ValidationError("unknown noise mode '" + s + "' (expected exact or bernoulli)");
}

std::string noise_mode_name(NoiseMode m) { return m == NoiseMode::exact ? "exact" : "bernoulli"; }

BinaryMask extract_mask(const Image& rgba, float alpha_threshold) {
    if (rgba.channels != 4) throw ValidationError("extract_mask: expected a 4-channel RGBA image");
    if (!(alpha_threshold > 0.0f && alpha_threshold < 1.0f))
        throw ValidationError("extract_mask: alpha threshold must lie in (0,1)");
    BinaryMask mask{Image(rgba.height, rgba.width, 1)};
    for (int y = 0; y < rgba.height; ++y)
        for (int x = 0; x < rgba.width; ++x) mask.pixels.at(y, x) = rgba.at(y, x, 3) > alpha_threshold ? 1.0f : 0.0f;
    return mask;
}

NoiseImage make_noise_image(int h, int w, std::uint64_t seed, NoiseMode mode) {
    if (h < 1 || w < 1 || static_cast<long>(h) * w < 2) throw ValidationError("make_noise_image: need h*w >= 2");
    NoiseImage noise{Image(h, w, 1), seed};
    Rng rng(seed);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (mode == NoiseMode::exact) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < n / 2; ++i) noise.pixels.pixels[idx[i]] = 1.0f;
    } else {
        std::bernoulli_distribution coin(0.5);
        for (auto& v : noise.pixels.pixels) v = coin(rng) ? 1.0f : 0.0f;
    }
    return noise;
}

Image sparsify_mask(const Image& mask, const Image& noise) {
    if (mask.channels != 1 || noise.channels != 1) throw ValidationError("sparsify_mask: expected single-channel images");
    if (!mask.same_shape(noise)) throw ValidationError("sparsify_mask: resolution mismatch");
    Image out(mask.height, mask.width, 1);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = mask.pixels[i] * noise.pixels[i];
    return out;
}

Image sparsify_mask(const BinaryMask& mask, const NoiseImage& noise) { return sparsify_mask(mask.pixels, noise.pixels); }

RenderPair make_render_pair(const Image& rgba, int resolution, std::uint64_t noise_seed, NoiseMode mode,
                            std::string name) {
    if (rgba.channels != 4) throw ValidationError("render '" + name + "' is not RGBA");
    const Image resized = resize_bilinear(rgba, resolution, resolution);
    const BinaryMask mask = extract_mask(resized);
    RenderPair pair;
    pair.name = std::move(name);
    pair.target = Image(resolution, resolution, 3);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            const float a = std::clamp(resized.at(y, x, 3), 0.0f, 1.0f);
            for (int c = 0; c < 3; ++c) pair.target.at(y, x, c) = std::clamp(resized.at(y, x, c), 0.0f, 1.0f) * a;
        }
    pair.input = sparsify_mask(mask, make_noise_image(resolution, resolution, noise_seed, mode));
    return pair;
}

std::vector<RenderPair> build_pretraining_set(const std::vector<Image>& renders, int resolution, std::uint64_t seed,
                                              NoiseMode mode) {
    std::vector<RenderPair> pairs;
    pairs.reserve(renders.size());
    for (std::size_t i = 0; i < renders.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "render_%04zu", i);
        pairs.push_back(make_render_pair(renders[i], resolution, seed + i, mode, name));
    }
    return pairs;
}

std::vector<RenderPair> build_pretraining_set(const fs::path& render_dir, int resolution, std::uint64_t seed,
                                              NoiseMode mode) {
    if (!fs::is_directory(render_dir)) throw IoError("render directory not found: " + render_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(render_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<RenderPair> pairs;
    pairs.reserve(files.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        Image img;
        try {
            img = read_png(files[i]);
        } catch (const IoError& e) {
            throw IoError("unreadable render " + files[i].string() + ": " + e.what());
        }
        if (img.channels != 4) throw ValidationError("render " + files[i].string() + " has no alpha channel");
        pairs.push_back(make_render_pair(img, resolution, seed + i, mode, files[i].stem().string()));
    }
    return pairs;
}

void write_pair_cache(const fs::path& dir, const std::vector<RenderPair>& pairs) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    for (const auto& p : pairs) {
        write_png(dir / (p.name + "_mask.png"), p.input);
        write_png(dir / (p.name + "_rgb.png"), p.target);
    }
}

std::vector<Image> make_synthetic_renders(std::size_t count, int resolution, std::uint64_t seed) {
    static const Primitive kShapes[] = {Primitive::sphere, Primitive::cube, Primitive::plane, Primitive::cylinder};
    static const float kPalette[][3] = {
        {0.85f, 0.25f, 0.20f}, {0.20f, 0.55f, 0.85f}, {0.30f, 0.75f, 0.30f}, {0.90f, 0.75f, 0.20f}};
    std::vector<Image> renders;
    renders.reserve(count);
    const std::size_t n_points = static_cast<std::size_t>(resolution) * resolution * 4;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t shape = i % 4;
        const PointCloud cloud = make_primitive_cloud(kShapes[shape], n_points, derive_seed(seed, {0x72656e64ULL, i}));
        Rng rng(derive_seed(seed, {0x76696577ULL, i}));
        std::uniform_int_distribution<std::size_t> pick(0, all_views().size() - 1);
        // Dense splats close the silhouette; intensity shades the base color.
        const Image depth = render_view(cloud, all_views()[pick(rng)], resolution, 1);
        Image rgba(resolution, resolution, 4);
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x) {
                const float d = depth.at(y, x);
                if (d <= 0.0f) continue;
                const float shade = 0.55f + 0.45f * d;
                for (int c = 0; c < 3; ++c) rgba.at(y, x, c) = std::clamp(kPalette[shape][c] * shade, 0.0f, 1.0f);
                rgba.at(y, x, 3) = 1.0f;
            }
        renders.push_back(std::move(rgba));
    }
    return renders;
}

void write_renders(const fs::path& dir, const std::vector<Image>& renders) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    for (std::size_t i = 0; i < renders.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "render_%04zu.png", i);
        write_png(dir / name, renders[i]);
    }
}

std::size_t count_ones(const Image& binary) {
    return static_cast<std::size_t>(std::count(binary.pixels.begin(), binary.pixels.end(), 1.0f));
}

}  // namespace pcclip

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcclip/image.hpp"

namespace pcclip {

struct BinaryMask {
    Image pixels;  // single channel, values in {0,1}
};

enum class NoiseMode { exact, bernoulli };

NoiseMode parse_noise_mode(const std::string& s);
std::string noise_mode_name(NoiseMode m);

struct NoiseImage {
    Image pixels;  // single channel, values in {0,1}
    std::uint64_t seed = 0;
};

// Translator pre-training sample: sparse mask input, RGB target over black.
struct RenderPair {
    std::string name;
    Image input;   // H x W x 1
    Image target;  // H x W x 3
};

BinaryMask extract_mask(const Image& rgba, float alpha_threshold = 0.5f);

// exact: floor(h*w/2) ones placed by a seeded shuffle. bernoulli: i.i.d. p=0.5.
NoiseImage make_noise_image(int h, int w, std::uint64_t seed, NoiseMode mode = NoiseMode::exact);

Image sparsify_mask(const BinaryMask& mask, const NoiseImage& noise);
Image sparsify_mask(const Image& mask, const Image& noise);

// RGBA -> pair: resize, threshold alpha, composite RGB over black, multiply by noise.
RenderPair make_render_pair(const Image& rgba, int resolution, std::uint64_t noise_seed,
                            NoiseMode mode = NoiseMode::exact, std::string name = {});

// One pair per PNG in `render_dir` (sorted by filename); sample i uses noise seed `seed + i`.
std::vector<RenderPair> build_pretraining_set(const std::filesystem::path& render_dir, int resolution,
                                              std::uint64_t seed, NoiseMode mode = NoiseMode::exact);

std::vector<RenderPair> build_pretraining_set(const std::vector<Image>& renders, int resolution,
                                              std::uint64_t seed, NoiseMode mode = NoiseMode::exact);

// Writes `<stem>_mask.png` and `<stem>_rgb.png` per pair.
void write_pair_cache(const std::filesystem::path& dir, const std::vector<RenderPair>& pairs);

// Colored primitive renders (RGBA) standing in for a rendered-object corpus.
std::vector<Image> make_synthetic_renders(std::size_t count, int resolution, std::uint64_t seed);
void write_renders(const std::filesystem::path& dir, const std::vector<Image>& renders);

std::size_t count_ones(const Image& binary);

}  // namespace pcclip

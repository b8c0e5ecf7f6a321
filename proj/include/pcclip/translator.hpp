#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pcclip/image.hpp"
#include "pcclip/mask_prep.hpp"
#include "pcclip/optimizer.hpp"
#include "pcclip/unet.hpp"

namespace pcclip {

struct TranslatorParams {
    TranslatorConfig config;
    std::vector<float> values;
    std::uint64_t epoch = 0;
    std::uint64_t init_seed = 0;

    friend bool operator==(const TranslatorParams&, const TranslatorParams&) = default;
};

TranslatorParams init_translator(const TranslatorConfig& config, std::uint64_t seed);

// Frozen translation network used at feature-extraction time.
class Translator {
public:
    explicit Translator(TranslatorParams params);

    // 1- or 3-channel HWC image in [0,1] -> 3-channel image in (0,1).
    // Three-channel inputs are averaged to one channel first.
    Image forward(const Image& image) const;

    const TranslatorParams& params() const { return params_; }
    const TranslatorConfig& config() const { return params_.config; }
    std::string fingerprint() const;

private:
    TranslatorParams params_;
    UNet<float> net_;
};

Image translator_forward(const TranslatorParams& params, const Image& image);

template <typename T>
FeatureMap<T> to_feature_map(const Image& image);
template <typename T>
Image from_feature_map(const FeatureMap<T>& fm);

// Mean squared error over every element of every image.
double mse_loss(std::span<const Image> pred, std::span<const Image> target);

enum class LrSchedule { constant, cosine };

LrSchedule parse_lr_schedule(const std::string& s);
std::string lr_schedule_name(LrSchedule s);

struct PretrainOptions {
    OptimizerConfig opt = OptimizerConfig::pretraining();
    // cosine: lr * (1 + cos(pi * step / total)) / 2 over the planned step count.
    LrSchedule schedule = LrSchedule::constant;
    // Stop after this many optimizer steps (0: run opt.epochs full epochs).
    std::size_t max_steps = 0;
    // Write `checkpoint_path` every N epochs (0: never).
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_path;
    std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct PretrainResult {
    TranslatorParams params;
    std::vector<double> loss_curve;  // mean loss per epoch
    std::size_t steps = 0;
};

PretrainResult pretrain(const TranslatorConfig& config, const std::vector<RenderPair>& pairs,
                        const PretrainOptions& options);

// Binary container: "PCCLIPTR", u32 version, u64 header length, JSON header
// (config, epoch, init_seed, param_count, dtype), little-endian float32 values.
void save_translator(const std::filesystem::path& file, const TranslatorParams& params);
TranslatorParams load_translator(const std::filesystem::path& file);

void write_loss_csv(const std::filesystem::path& file, const std::vector<double>& curve);

}  // namespace pcclip

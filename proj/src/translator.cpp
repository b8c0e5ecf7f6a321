#include "pcclip/translator.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <numbers>
#include <sstream>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"
#include "pcclip/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace pcclip {

TranslatorParams init_translator(const TranslatorConfig& config, std::uint64_t seed) {
    UNet<float> net(config);
    return {config, net.init_params(seed), 0, seed};
}

template <typename T>
FeatureMap<T> to_feature_map(const Image& image) {
    FeatureMap<T> fm{image.height, image.width,
                     RowMat<T>(image.channels, static_cast<Eigen::Index>(image.height) * image.width)};
    const std::size_t n = static_cast<std::size_t>(image.height) * image.width;
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < image.channels; ++c)
            fm.data(c, static_cast<Eigen::Index>(i)) = static_cast<T>(image.pixels[i * image.channels + c]);
    return fm;
}

template <typename T>
Image from_feature_map(const FeatureMap<T>& fm) {
    Image img(fm.height, fm.width, fm.channels());
    const std::size_t n = static_cast<std::size_t>(fm.height) * fm.width;
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < fm.channels(); ++c)
            img.pixels[i * fm.channels() + c] = static_cast<float>(fm.data(c, static_cast<Eigen::Index>(i)));
    return img;
}

template FeatureMap<float> to_feature_map<float>(const Image&);
template FeatureMap<double> to_feature_map<double>(const Image&);
template Image from_feature_map<float>(const FeatureMap<float>&);
template Image from_feature_map<double>(const FeatureMap<double>&);

namespace {

Image to_single_channel(const Image& image) {
    if (image.channels == 1) return image;
    if (image.channels != 3) throw ValidationError("translator input must have 1 or 3 channels");
    Image gray(image.height, image.width, 1);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i)
        gray.pixels[i] = (image.pixels[i * 3] + image.pixels[i * 3 + 1] + image.pixels[i * 3 + 2]) / 3.0f;
    return gray;
}

}  // namespace

Translator::Translator(TranslatorParams params) : params_(std::move(params)), net_(params_.config) {
    if (params_.values.size() != net_.param_count())
        throw ValidationError("translator parameter count " + std::to_string(params_.values.size()) +
                              " does not match config (" + std::to_string(net_.param_count()) + ")");
}

Image Translator::forward(const Image& image) const {
    const FeatureMap<float> in = to_feature_map<float>(to_single_channel(image));
    return from_feature_map(net_.forward(params_.values, in));
}

std::string Translator::fingerprint() const {
    Fingerprint fp;
    fp.value(params_.config.depth_levels)
        .value(params_.config.base_channels)
        .value(params_.config.skip_connections)
        .value(params_.config.normalization)
        .values(std::span<const float>(params_.values));
    return fp.hex();
}

Image translator_forward(const TranslatorParams& params, const Image& image) { return Translator(params).forward(image); }

double mse_loss(std::span<const Image> pred, std::span<const Image> target) {
    if (pred.size() != target.size()) throw ValidationError("mse_loss: batch size mismatch");
    if (pred.empty()) throw ValidationError("mse_loss: empty batch");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!pred[i].same_shape(target[i])) throw ValidationError("mse_loss: shape mismatch");
        for (std::size_t j = 0; j < pred[i].pixels.size(); ++j) {
            const double d = static_cast<double>(pred[i].pixels[j]) - target[i].pixels[j];
            sum += d * d;
        }
        n += pred[i].pixels.size();
    }
    return sum / static_cast<double>(n);
}

LrSchedule parse_lr_schedule(const std::string& s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    throw ValidationError("unknown lr schedule '" + s + "' (expected constant or cosine)");
}

std::string lr_schedule_name(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

PretrainResult pretrain(const TranslatorConfig& config, const std::vector<RenderPair>& pairs,
                        const PretrainOptions& options) {
    options.opt.validate();
    if (pairs.empty()) throw ValidationError("pretrain: empty corpus");
    const int res = pairs.front().input.height;
    config.check_resolution(res);
    for (const auto& p : pairs) {
        if (p.input.height != res || p.input.width != res || p.input.channels != 1 || p.target.height != res ||
            p.target.width != res || p.target.channels != 3)
            throw ValidationError("pretrain: pair '" + p.name + "' does not match the corpus resolution");
    }

    const UNet<float> net(config);
    PretrainResult result;
    result.params = init_translator(config, derive_seed(options.opt.seed, {0x696e6974ULL}));
    std::vector<float>& params = result.params.values;

    std::vector<FeatureMap<float>> inputs, targets;
    for (const auto& p : pairs) {
        inputs.push_back(to_feature_map<float>(p.input));
        targets.push_back(to_feature_map<float>(p.target));
    }

    Adam<float> adam(params.size(), options.opt.algorithm, options.opt.learning_rate, options.opt.weight_decay);
    std::vector<float> grad(params.size());
    const std::size_t batch = static_cast<std::size_t>(options.opt.batch_size);
    const bool by_steps = options.max_steps > 0;
    const std::size_t per_epoch = (pairs.size() + batch - 1) / batch;
    const std::size_t total_steps =
        by_steps ? options.max_steps : per_epoch * static_cast<std::size_t>(options.opt.epochs);
    typename UNet<float>::Cache cache;

    for (std::size_t epoch = 0; by_steps || epoch < static_cast<std::size_t>(options.opt.epochs); ++epoch) {
        if (by_steps && result.steps >= options.max_steps) break;
        std::vector<std::size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(options.opt.seed, {0x65706f6368ULL, epoch}));
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_sum = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            if (by_steps && result.steps >= options.max_steps) break;
            const std::size_t end = std::min(order.size(), start + batch);
            std::fill(grad.begin(), grad.end(), 0.0f);
            double sq = 0.0;
            std::size_t elems = 0;
            for (std::size_t i = start; i < end; ++i) elems += static_cast<std::size_t>(targets[order[i]].data.size());
            const float scale = 2.0f / static_cast<float>(elems);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t k = order[i];
                const FeatureMap<float> out = net.forward(params, inputs[k], &cache);
                const RowMat<float> diff = out.data - targets[k].data;
                sq += diff.cast<double>().squaredNorm();
                net.backward(params, cache, diff * scale, grad);
            }
            const double loss = sq / static_cast<double>(elems);
            if (!std::isfinite(loss))
                throw TrainingError("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(result.steps));
            if (options.schedule == LrSchedule::cosine)
                adam.set_learning_rate(options.opt.learning_rate * 0.5 *
                                       (1.0 + std::cos(std::numbers::pi * static_cast<double>(result.steps) /
                                                       static_cast<double>(total_steps))));
            adam.step(params, grad);
            ++result.steps;
            epoch_sum += loss * static_cast<double>(end - start);
            epoch_count += end - start;
        }
        if (epoch_count == 0) break;
        const double epoch_loss = epoch_sum / static_cast<double>(epoch_count);
        result.loss_curve.push_back(epoch_loss);
        result.params.epoch = epoch + 1;
        if (options.on_epoch) options.on_epoch(epoch, epoch_loss);
        if (options.checkpoint_every > 0 && !options.checkpoint_path.empty() &&
            (epoch + 1) % static_cast<std::size_t>(options.checkpoint_every) == 0)
            save_translator(options.checkpoint_path, result.params);
    }
    return result;
}

namespace {

constexpr char kMagic[8] = {'P', 'C', 'C', 'L', 'I', 'P', 'T', 'R'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_translator(const fs::path& file, const TranslatorParams& params) {
    json header = {{"config",
                    {{"depth_levels", params.config.depth_levels},
                     {"base_channels", params.config.base_channels},
                     {"input_channels", params.config.input_channels},
                     {"output_channels", params.config.output_channels},
                     {"skip_connections", params.config.skip_connections},
                     {"normalization", normalization_name(params.config.normalization)},
                     {"architecture", "unet: 2x(conv3x3+norm+relu) per level, maxpool2, convT2x2, concat skip, "
                                      "conv1x1+sigmoid"}}},
                   {"epoch", params.epoch},
                   {"init_seed", params.init_seed},
                   {"param_count", params.values.size()},
                   {"dtype", "f32"}};
    const std::string h = header.dump();
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    const std::uint64_t hlen = h.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + file.string());
}

TranslatorParams load_translator(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open translator checkpoint " + file.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ParseError(file.string() + ": not a translator checkpoint");
    if (version != kVersion) throw ParseError(file.string() + ": unsupported checkpoint version");
    if (hlen > (1u << 24)) throw ParseError(file.string() + ": corrupt header length");
    std::string h(hlen, '\0');
    in.read(h.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ParseError(file.string() + ": truncated header");
    TranslatorParams p;
    try {
        const json header = json::parse(h);
        const auto& c = header.at("config");
        p.config.depth_levels = c.at("depth_levels").get<int>();
        p.config.base_channels = c.at("base_channels").get<int>();
        p.config.input_channels = c.at("input_channels").get<int>();
        p.config.output_channels = c.at("output_channels").get<int>();
        p.config.skip_connections = c.at("skip_connections").get<bool>();
        p.config.normalization = parse_normalization(c.at("normalization").get<std::string>());
        p.epoch = header.at("epoch").get<std::uint64_t>();
        p.init_seed = header.at("init_seed").get<std::uint64_t>();
        if (header.at("dtype").get<std::string>() != "f32") throw ParseError("unsupported dtype");
        p.values.resize(header.at("param_count").get<std::size_t>());
    } catch (const json::exception& e) {
        throw ParseError(file.string() + ": bad header: " + e.what());
    }
    in.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(float)));
    if (!in) throw ParseError(file.string() + ": truncated parameter array");
    if (UNet<float>(p.config).param_count() != p.values.size())
        throw ParseError(file.string() + ": parameter count does not match config");
    return p;
}

void write_loss_csv(const fs::path& file, const std::vector<double>& curve) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out.precision(17);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
}

}  // namespace pcclip

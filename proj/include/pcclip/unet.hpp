#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pcclip {

enum class Normalization { none, group };

Normalization parse_normalization(const std::string& s);
std::string normalization_name(Normalization n);

struct TranslatorConfig {
    int depth_levels = 4;
    int base_channels = 16;
    int input_channels = 1;
    int output_channels = 3;
    bool skip_connections = true;
    Normalization normalization = Normalization::group;

    void validate() const;
    // Throws ValidationError unless resolution is a positive multiple of 2^depth_levels.
    void check_resolution(int resolution) const;
    friend bool operator==(const TranslatorConfig&, const TranslatorConfig&) = default;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Activations of one sample: one row per channel, pixels row-major along columns.
template <typename T>
struct FeatureMap {
    int height = 0;
    int width = 0;
    RowMat<T> data;

    int channels() const { return static_cast<int>(data.rows()); }
};

// UNet: per level two (3x3 conv, GroupNorm, ReLU) blocks, 2x2 max-pool down,
// 2x2 stride-2 transposed conv up, skip concatenation, 1x1 conv head + sigmoid.
// Flat parameter layout, in construction order: conv weights [out][in][ky][kx]
// (followed by a bias only when the block has no normalization), norm gamma then
// beta, transposed-conv weights [in][out][ky][kx] then bias, head weights then bias.
template <typename T>
class UNet {
public:
    struct Conv {
        int cin = 0, cout = 0, k = 3;
        std::size_t w_off = 0;
        bool has_bias = true;
        std::size_t b_off = 0;
    };
    struct Norm {
        int channels = 0, groups = 0;
        std::size_t gamma_off = 0, beta_off = 0;
    };
    struct Block {
        Conv conv;
        bool normalized = false;
        Norm norm;
    };
    struct UpConv {
        int cin = 0, cout = 0;
        std::size_t w_off = 0, b_off = 0;
    };

    struct BlockCache {
        RowMat<T> xhat;             // normalized pre-activation
        std::vector<T> inv_std;     // per group
    };

    struct Cache {
        std::vector<FeatureMap<T>> enc_in, enc_mid, enc_out;
        std::vector<std::array<BlockCache, 2>> enc_bc, dec_bc;
        std::vector<std::vector<int>> pool_argmax;  // indexed by level, empty at level 0
        std::vector<FeatureMap<T>> up_in, dec_in, dec_mid, dec_out;
        FeatureMap<T> head_in;
        FeatureMap<T> output;
    };

    explicit UNet(TranslatorConfig config);

    const TranslatorConfig& config() const { return config_; }
    std::size_t param_count() const { return param_count_; }

    // He-uniform conv weights, zero biases, unit gamma, zero beta.
    std::vector<T> init_params(std::uint64_t seed) const;

    // Input has config().input_channels rows; output has output_channels rows in (0,1).
    FeatureMap<T> forward(std::span<const T> params, const FeatureMap<T>& input, Cache* cache = nullptr) const;

    // Accumulates dLoss/dparams into `grad` given dLoss/doutput and a cache from forward().
    void backward(std::span<const T> params, const Cache& cache, const RowMat<T>& d_output, std::span<T> grad) const;

    const Conv& head() const { return head_; }

private:
    TranslatorConfig config_;
    std::vector<std::array<Block, 2>> enc_;
    std::vector<UpConv> up_;
    std::vector<std::array<Block, 2>> dec_;
    Conv head_;
    std::size_t param_count_ = 0;
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace pcclip

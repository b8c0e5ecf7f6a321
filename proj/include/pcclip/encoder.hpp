#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcclip/image.hpp"

namespace pcclip {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Frozen image encoder: 3-channel image at input_resolution() -> C features.
class VisualEncoder {
public:
    virtual ~VisualEncoder() = default;
    virtual int feature_dim() const = 0;
    virtual int input_resolution() const = 0;
    virtual Vector encode(const Image& image) const = 0;
    virtual std::string identity() const = 0;
};

// Frozen text encoder: one feature row per input string, in order.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual int feature_dim() const = 0;
    virtual Matrix encode(const std::vector<std::string>& texts) const = 0;
    virtual std::string identity() const = 0;
};

struct EncoderPair {
    std::shared_ptr<const VisualEncoder> visual;
    std::shared_ptr<const TextEncoder> text;
};

// Text pattern with exactly one literal "[CLASS]" placeholder.
class PromptTemplate {
public:
    static constexpr const char* kPlaceholder = "[CLASS]";

    explicit PromptTemplate(std::string text);

    const std::string& text() const { return text_; }
    std::string instantiate(const std::string& class_name) const;

    friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;

private:
    std::string text_;
};

// M images -> M x C. Rows do not depend on how images are grouped.
Matrix encode_views(const VisualEncoder& encoder, std::span<const Image> images);

// K class names -> K x C, row i from template instantiated with class_names[i].
Matrix encode_prompts(const TextEncoder& encoder, const PromptTemplate& prompt,
                      const std::vector<std::string>& class_names);

// Each row scaled to unit L2 norm. Throws ValidationError on a zero row.
Matrix normalize_rows(const Matrix& m);

// Deterministic stand-in for a pretrained vision-language model.
// Visual: fixed Gaussian projection of the per-channel 8x8 average-pooled image
// plus a small fixed bias. Text: sum of per-token Gaussian vectors, each token's
// vector seeded from a hash of the token, so the map is a bag of tokens.
EncoderPair toy_encoder(int feature_dim, std::uint64_t seed, int input_resolution);

std::vector<std::string> tokenize_prompt(const std::string& text);

}  // namespace pcclip

#include "pcclip/encoder.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"
#include "pcclip/rng.hpp"

namespace pcclip {

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
    const std::string ph = kPlaceholder;
    const auto first = text_.find(ph);
    if (first == std::string::npos)
        throw ValidationError("prompt template '" + text_ + "' lacks the [CLASS] placeholder");
    if (text_.find(ph, first + ph.size()) != std::string::npos)
        throw ValidationError("prompt template '" + text_ + "' has more than one [CLASS] placeholder");
}

std::string PromptTemplate::instantiate(const std::string& class_name) const {
    std::string out = text_;
    out.replace(out.find(kPlaceholder), std::string(kPlaceholder).size(), class_name);
    return out;
}

Matrix encode_views(const VisualEncoder& encoder, std::span<const Image> images) {
    Matrix out(static_cast<Eigen::Index>(images.size()), encoder.feature_dim());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& img = images[i];
        if (img.channels != 3) throw ValidationError("encode_views: expected 3-channel images");
        if (img.height != encoder.input_resolution() || img.width != encoder.input_resolution())
            throw ValidationError("encode_views: image is " + std::to_string(img.height) + "x" +
                                  std::to_string(img.width) + ", encoder expects " +
                                  std::to_string(encoder.input_resolution()));
        out.row(static_cast<Eigen::Index>(i)) = encoder.encode(img).transpose();
    }
    return out;
}

Matrix encode_prompts(const TextEncoder& encoder, const PromptTemplate& prompt,
                      const std::vector<std::string>& class_names) {
    std::vector<std::string> texts;
    texts.reserve(class_names.size());
    for (const auto& name : class_names) texts.push_back(prompt.instantiate(name));
    return encoder.encode(texts);
}

Matrix normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (!(n > 0.0) || !std::isfinite(n))
            throw ValidationError("normalize_rows: row " + std::to_string(i) + " has zero or non-finite norm");
        out.row(i) /= n;
    }
    return out;
}

std::vector<std::string> tokenize_prompt(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

namespace {

constexpr int kPoolGrid = 8;

class ToyVisualEncoder final : public VisualEncoder {
public:
    ToyVisualEncoder(int dim, std::uint64_t seed, int resolution)
        : dim_(dim), seed_(seed), resolution_(resolution), proj_(dim, 3 * kPoolGrid * kPoolGrid), bias_(dim) {
        Rng rng(derive_seed(seed, {0x7669737561ULL}));
        std::normal_distribution<double> g(0.0, 1.0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(proj_.cols()));
        for (Eigen::Index r = 0; r < proj_.rows(); ++r)
            for (Eigen::Index c = 0; c < proj_.cols(); ++c) proj_(r, c) = g(rng) * scale;
        for (Eigen::Index r = 0; r < bias_.size(); ++r) bias_(r) = 0.01 * g(rng);
    }

    int feature_dim() const override { return dim_; }
    int input_resolution() const override { return resolution_; }

    Vector encode(const Image& image) const override {
        if (image.channels != 3 || image.height != resolution_ || image.width != resolution_)
            throw ValidationError("toy visual encoder: unexpected image shape");
        Vector pooled = Vector::Zero(3 * kPoolGrid * kPoolGrid);
        for (int gy = 0; gy < kPoolGrid; ++gy) {
            const int y0 = gy * resolution_ / kPoolGrid, y1 = (gy + 1) * resolution_ / kPoolGrid;
            for (int gx = 0; gx < kPoolGrid; ++gx) {
                const int x0 = gx * resolution_ / kPoolGrid, x1 = (gx + 1) * resolution_ / kPoolGrid;
                const double area = static_cast<double>(y1 - y0) * (x1 - x0);
                for (int c = 0; c < 3; ++c) {
                    double s = 0.0;
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x) s += image.at(y, x, c);
                    pooled((c * kPoolGrid + gy) * kPoolGrid + gx) = s / area;
                }
            }
        }
        return proj_ * pooled + bias_;
    }

    std::string identity() const override {
        std::ostringstream ss;
        ss << "toy-visual(dim=" << dim_ << ",seed=" << seed_ << ",res=" << resolution_ << ")";
        return ss.str();
    }

private:
    int dim_;
    std::uint64_t seed_;
    int resolution_;
    Matrix proj_;
    Vector bias_;
};

class ToyTextEncoder final : public TextEncoder {
public:
    ToyTextEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

    int feature_dim() const override { return dim_; }

    Matrix encode(const std::vector<std::string>& texts) const override {
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(texts.size()), dim_);
        for (std::size_t i = 0; i < texts.size(); ++i) {
            for (const auto& tok : tokenize_prompt(texts[i]))
                out.row(static_cast<Eigen::Index>(i)) += token_vector(tok).transpose();
        }
        return out;
    }

    std::string identity() const override {
        std::ostringstream ss;
        ss << "toy-text(dim=" << dim_ << ",seed=" << seed_ << ")";
        return ss.str();
    }

private:
    Vector token_vector(const std::string& token) const {
        Fingerprint fp;
        fp.text(token);
        Rng rng(derive_seed(seed_, {0x74657874ULL, fp.digest()}));
        std::normal_distribution<double> g(0.0, 1.0);
        Vector v(dim_);
        for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = g(rng);
        return v;
    }

    int dim_;
    std::uint64_t seed_;
};

}  // namespace

EncoderPair toy_encoder(int feature_dim, std::uint64_t seed, int input_resolution) {
    if (feature_dim < 4) throw ValidationError("toy encoder feature_dim must be at least 4");
    if (input_resolution < kPoolGrid) throw ValidationError("toy encoder resolution must be at least 8");
    return {std::make_shared<ToyVisualEncoder>(feature_dim, seed, input_resolution),
            std::make_shared<ToyTextEncoder>(feature_dim, seed)};
}

}  // namespace pcclip

#include "pcclip/clip.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pcclip {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;
using RowF = Eigen::RowVectorXf;

std::string read_all(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json_file(const fs::path& file) {
    try {
        return json::parse(read_all(file));
    } catch (const json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- safetensors

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1fu, mant = h & 0x3ffu, bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            exp = 127 - 15 + 1;
            while (!(mant & 0x400u)) {
                mant <<= 1;
                --exp;
            }
            bits = sign | (exp << 23) | ((mant & 0x3ffu) << 13);
        }
    } else if (exp == 31) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

class SafeTensors {
public:
    explicit SafeTensors(const fs::path& file) : name_(file.string()), blob_(read_all(file)) {
        if (blob_.size() < 8) throw ParseError(name_ + ": truncated safetensors file");
        std::uint64_t n = 0;
        for (int i = 7; i >= 0; --i) n = (n << 8) | static_cast<unsigned char>(blob_[static_cast<std::size_t>(i)]);
        if (n > blob_.size() - 8) throw ParseError(name_ + ": header length exceeds file size");
        try {
            header_ = json::parse(blob_.substr(8, n));
        } catch (const json::exception& e) {
            throw ParseError(name_ + ": bad header: " + e.what());
        }
        data_ = 8 + n;
    }

    bool has(const std::string& key) const { return header_.contains(key); }

    // Tensor flattened to rows = first dim, cols = product of the rest (1-D tensors: one column).
    MatF matrix(const std::string& key) const {
        if (!has(key)) throw ParseError(name_ + ": missing tensor " + key);
        const json& t = header_.at(key);
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        const auto off = t.at("data_offsets").get<std::vector<std::size_t>>();
        const std::string dtype = t.at("dtype").get<std::string>();
        std::size_t count = 1;
        for (auto s : shape) count *= s;
        const std::size_t width = dtype == "F32" ? 4 : (dtype == "F16" || dtype == "BF16") ? 2 : 0;
        if (width == 0) throw ParseError(name_ + ": unsupported dtype " + dtype + " for " + key);
        if (off.size() != 2 || off[1] - off[0] != count * width || data_ + off[1] > blob_.size())
            throw ParseError(name_ + ": bad offsets for " + key);
        const Eigen::Index rows = shape.empty() ? 1 : static_cast<Eigen::Index>(shape[0]);
        MatF m(rows, static_cast<Eigen::Index>(count) / std::max<Eigen::Index>(rows, 1));
        const char* src = blob_.data() + data_ + off[0];
        float* dst = m.data();
        for (std::size_t i = 0; i < count; ++i) {
            if (dtype == "F32") {
                std::memcpy(dst + i, src + 4 * i, 4);
            } else {
                std::uint16_t h;
                std::memcpy(&h, src + 2 * i, 2);
                if (dtype == "F16") {
                    dst[i] = half_to_float(h);
                } else {
                    const std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
                    std::memcpy(dst + i, &bits, 4);
                }
            }
        }
        return m;
    }

    VecF vector(const std::string& key) const {
        const MatF m = matrix(key);
        return Eigen::Map<const VecF>(m.data(), m.size());
    }

private:
    std::string name_;
    std::string blob_;
    json header_;
    std::size_t data_ = 0;
};

// ---------------------------------------------------------------- transformer

enum class Activation { quick_gelu, gelu };

Activation parse_activation(const std::string& s) {
    if (s == "quick_gelu") return Activation::quick_gelu;
    if (s == "gelu") return Activation::gelu;
    throw ValidationError("unsupported CLIP activation '" + s + "'");
}

struct Linear {
    MatF w;  // out x in
    VecF b;

    MatF operator()(const MatF& x) const {
        MatF y = x * w.transpose();
        if (b.size()) y.rowwise() += b.transpose();
        return y;
    }
};

struct LayerNorm {
    VecF gamma, beta;
    float eps = 1e-5f;

    MatF operator()(const MatF& x) const {
        MatF y(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const float mean = x.row(i).mean();
            const RowF c = x.row(i).array() - mean;
            const float var = c.squaredNorm() / static_cast<float>(x.cols());
            y.row(i) = (c.array() / std::sqrt(var + eps)) * gamma.transpose().array() + beta.transpose().array();
        }
        return y;
    }
};

struct Block {
    LayerNorm ln1, ln2;
    Linear q, k, v, out, fc1, fc2;
};

struct Tower {
    std::vector<Block> blocks;
    int heads = 1;
    Activation act = Activation::quick_gelu;

    void load(const SafeTensors& st, const std::string& prefix, int layers, float eps) {
        auto lin = [&](const std::string& p) {
            return Linear{st.matrix(p + ".weight"), st.has(p + ".bias") ? st.vector(p + ".bias") : VecF()};
        };
        auto norm = [&](const std::string& p) { return LayerNorm{st.vector(p + ".weight"), st.vector(p + ".bias"), eps}; };
        for (int l = 0; l < layers; ++l) {
            const std::string p = prefix + ".encoder.layers." + std::to_string(l);
            blocks.push_back({norm(p + ".layer_norm1"), norm(p + ".layer_norm2"), lin(p + ".self_attn.q_proj"),
                              lin(p + ".self_attn.k_proj"), lin(p + ".self_attn.v_proj"),
                              lin(p + ".self_attn.out_proj"), lin(p + ".mlp.fc1"), lin(p + ".mlp.fc2")});
        }
    }

    MatF forward(MatF x, bool causal) const {
        const Eigen::Index n = x.rows(), d = x.cols(), hd = d / heads;
        const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
        for (const Block& b : blocks) {
            const MatF h = b.ln1(x);
            const MatF q = b.q(h) * scale, k = b.k(h), v = b.v(h);
            MatF attn(n, d);
            for (int head = 0; head < heads; ++head) {
                const Eigen::Index c0 = head * hd;
                MatF s = q.middleCols(c0, hd) * k.middleCols(c0, hd).transpose();
                for (Eigen::Index i = 0; i < n; ++i) {
                    if (causal)
                        for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = -std::numeric_limits<float>::infinity();
                    const float mx = s.row(i).maxCoeff();
                    s.row(i) = (s.row(i).array() - mx).exp();
                    s.row(i) /= s.row(i).sum();
                }
                attn.middleCols(c0, hd) = s * v.middleCols(c0, hd);
            }
            x += b.out(attn);
            MatF m = b.fc1(b.ln2(x));
            if (act == Activation::quick_gelu)
                m = m.array() * (1.0f / (1.0f + (-1.702f * m.array()).exp()));
            else
                m = m.unaryExpr([](float t) { return 0.5f * t * (1.0f + std::erf(t / std::sqrt(2.0f))); });
            x += b.fc2(m);
        }
        return x;
    }
};

struct TowerConfig {
    int hidden = 0, layers = 0, heads = 0;
    float eps = 1e-5f;
    Activation act = Activation::quick_gelu;
};

TowerConfig tower_config(const json& c, const std::string& name) {
    try {
        TowerConfig t;
        t.hidden = c.at("hidden_size").get<int>();
        t.layers = c.at("num_hidden_layers").get<int>();
        t.heads = c.at("num_attention_heads").get<int>();
        t.eps = c.value("layer_norm_eps", 1e-5f);
        t.act = parse_activation(c.value("hidden_act", std::string("quick_gelu")));
        if (t.hidden <= 0 || t.layers < 0 || t.heads <= 0 || t.hidden % t.heads != 0)
            throw ValidationError("inconsistent CLIP " + name + " config");
        return t;
    } catch (const json::exception& e) {
        throw ParseError("CLIP " + name + " config: " + e.what());
    }
}

// ---------------------------------------------------------------- encoders

class ClipVisualEncoder final : public VisualEncoder {
public:
    ClipVisualEncoder(const SafeTensors& st, const json& config, const json& preprocess, std::string identity)
        : identity_(std::move(identity)) {
        const json& vc = config.at("vision_config");
        const TowerConfig tc = tower_config(vc, "vision");
        resolution_ = vc.at("image_size").get<int>();
        patch_ = vc.at("patch_size").get<int>();
        if (resolution_ % patch_ != 0) throw ValidationError("CLIP image_size is not a multiple of patch_size");
        tower_.heads = tc.heads;
        tower_.act = tc.act;
        tower_.load(st, "vision_model", tc.layers, tc.eps);
        class_embedding_ = st.vector("vision_model.embeddings.class_embedding");
        patch_weight_ = st.matrix("vision_model.embeddings.patch_embedding.weight");
        position_ = st.matrix("vision_model.embeddings.position_embedding.weight");
        pre_ = {st.vector("vision_model.pre_layrnorm.weight"), st.vector("vision_model.pre_layrnorm.bias"), tc.eps};
        post_ = {st.vector("vision_model.post_layernorm.weight"), st.vector("vision_model.post_layernorm.bias"), tc.eps};
        projection_ = st.matrix("visual_projection.weight");
        const int tokens = (resolution_ / patch_) * (resolution_ / patch_) + 1;
        if (patch_weight_.cols() != 3 * patch_ * patch_ || position_.rows() != tokens ||
            projection_.cols() != tc.hidden)
            throw ValidationError("CLIP vision weights do not match the config");
        mean_ = preprocess.value("image_mean", std::vector<float>{0.48145466f, 0.4578275f, 0.40821073f});
        std_ = preprocess.value("image_std", std::vector<float>{0.26862954f, 0.26130258f, 0.27577711f});
    }

    int feature_dim() const override { return static_cast<int>(projection_.rows()); }
    int input_resolution() const override { return resolution_; }
    std::string identity() const override { return identity_; }

    Vector encode(const Image& image) const override {
        if (image.height != resolution_ || image.width != resolution_ || image.channels != 3)
            throw ValidationError("CLIP visual encoder expects " + std::to_string(resolution_) + "x" +
                                  std::to_string(resolution_) + "x3, got " + std::to_string(image.height) + "x" +
                                  std::to_string(image.width) + "x" + std::to_string(image.channels));
        const int g = resolution_ / patch_, pp = patch_ * patch_;
        MatF patches(g * g, 3 * pp);
        for (int py = 0; py < g; ++py)
            for (int px = 0; px < g; ++px)
                for (int c = 0; c < 3; ++c)
                    for (int ky = 0; ky < patch_; ++ky)
                        for (int kx = 0; kx < patch_; ++kx)
                            patches(py * g + px, c * pp + ky * patch_ + kx) =
                                (image.at(py * patch_ + ky, px * patch_ + kx, c) - mean_[static_cast<std::size_t>(c)]) /
                                std_[static_cast<std::size_t>(c)];
        MatF x(g * g + 1, class_embedding_.size());
        x.row(0) = class_embedding_.transpose();
        x.bottomRows(g * g) = patches * patch_weight_.transpose();
        x += position_;
        x = tower_.forward(pre_(x), false);
        const MatF pooled = post_(x.topRows(1));
        return (pooled * projection_.transpose()).transpose().cast<double>();
    }

private:
    std::string identity_;
    int resolution_ = 0, patch_ = 0;
    Tower tower_;
    VecF class_embedding_;
    MatF patch_weight_, position_, projection_;
    LayerNorm pre_, post_;
    std::vector<float> mean_, std_;
};

class ClipTextEncoder final : public TextEncoder {
public:
    ClipTextEncoder(const SafeTensors& st, const json& config, ClipTokenizer tokenizer, std::string identity)
        : identity_(std::move(identity)), tokenizer_(std::move(tokenizer)) {
        const json& tcj = config.at("text_config");
        const TowerConfig tc = tower_config(tcj, "text");
        tower_.heads = tc.heads;
        tower_.act = tc.act;
        tower_.load(st, "text_model", tc.layers, tc.eps);
        token_ = st.matrix("text_model.embeddings.token_embedding.weight");
        position_ = st.matrix("text_model.embeddings.position_embedding.weight");
        final_ = {st.vector("text_model.final_layer_norm.weight"), st.vector("text_model.final_layer_norm.bias"), tc.eps};
        projection_ = st.matrix("text_projection.weight");
        if (token_.cols() != tc.hidden || position_.cols() != tc.hidden || projection_.cols() != tc.hidden)
            throw ValidationError("CLIP text weights do not match the config");
    }

    int feature_dim() const override { return static_cast<int>(projection_.rows()); }
    std::string identity() const override { return identity_; }

    Matrix encode(const std::vector<std::string>& texts) const override {
        Matrix out(static_cast<Eigen::Index>(texts.size()), feature_dim());
        for (std::size_t t = 0; t < texts.size(); ++t) {
            const auto ids = tokenizer_.encode(texts[t], static_cast<std::size_t>(position_.rows()));
            MatF x(static_cast<Eigen::Index>(ids.size()), token_.cols());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (ids[i] < 0 || ids[i] >= token_.rows()) throw ValidationError("token id outside the embedding table");
                x.row(static_cast<Eigen::Index>(i)) =
                    token_.row(ids[i]) + position_.row(static_cast<Eigen::Index>(i));
            }
            x = final_(tower_.forward(x, true));
            const auto eos = std::find(ids.begin(), ids.end(), tokenizer_.eos());
            const Eigen::Index at = static_cast<Eigen::Index>(eos - ids.begin());
            out.row(static_cast<Eigen::Index>(t)) = (x.row(at) * projection_.transpose()).cast<double>();
        }
        return out;
    }

private:
    std::string identity_;
    ClipTokenizer tokenizer_;
    Tower tower_;
    MatF token_, position_, projection_;
    LayerNorm final_;
};

// ---------------------------------------------------------------- tokenizer helpers

std::string utf8(std::uint32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s += static_cast<char>(cp);
    } else if (cp < 0x800) {
        s += static_cast<char>(0xc0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    } else {
        s += static_cast<char>(0xe0 | (cp >> 12));
        s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        s += static_cast<char>(0x80 | (cp & 0x3f));
    }
    return s;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_letter(unsigned char c) { return std::isalpha(c) || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

// Splits cleaned text into pre-tokens.
std::vector<std::string> split_words(const std::string& text) {
    static const char* contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (c == '\'') {
            bool matched = false;
            for (const char* k : contractions) {
                const std::size_t n = std::strlen(k);
                if (text.compare(i, n, k) == 0) {
                    out.emplace_back(k);
                    i += n;
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        std::size_t j = i + 1;
        if (is_letter(c)) {
            while (j < text.size() && is_letter(static_cast<unsigned char>(text[j]))) ++j;
        } else if (!is_digit(c)) {
            while (j < text.size()) {
                const auto d = static_cast<unsigned char>(text[j]);
                if (is_space(d) || is_letter(d) || is_digit(d)) break;
                ++j;
            }
        }
        out.push_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- tokenizer

ClipTokenizer::ClipTokenizer(const fs::path& vocab_json, const fs::path& merges_txt) {
    // GPT-2 byte-to-unicode table: printable bytes map to themselves, the rest to 256+.
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
        const bool printable = (b >= '!' && b <= '~') || (b >= 0xa1 && b <= 0xac) || (b >= 0xae && b <= 0xff);
        byte_char_[b] = utf8(printable ? static_cast<std::uint32_t>(b) : static_cast<std::uint32_t>(256 + extra++));
    }
    const json v = read_json_file(vocab_json);
    for (const auto& [token, id] : v.items()) vocab_[token] = id.get<int>();
    std::istringstream merges(read_all(merges_txt));
    std::string line;
    int rank = 0;
    while (std::getline(merges, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.rfind("#version", 0) == 0) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw ParseError(merges_txt.string() + ": bad merge line '" + line + "'");
        ranks_[{line.substr(0, sp), line.substr(sp + 1)}] = rank++;
    }
    auto special = [&](const char* name) {
        const auto it = vocab_.find(name);
        if (it == vocab_.end()) throw ParseError(vocab_json.string() + ": missing " + name);
        return it->second;
    };
    bos_ = special("<|startoftext|>");
    eos_ = special("<|endoftext|>");
}

std::vector<std::string> ClipTokenizer::bpe(const std::string& word) const {
    std::vector<std::string> sym;
    for (unsigned char c : word) sym.push_back(byte_char_[c]);
    sym.back() += "</w>";
    while (sym.size() > 1) {
        int best = std::numeric_limits<int>::max();
        std::size_t at = 0;
        for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
            const auto it = ranks_.find({sym[i], sym[i + 1]});
            if (it != ranks_.end() && it->second < best) {
                best = it->second;
                at = i;
            }
        }
        if (best == std::numeric_limits<int>::max()) break;
        const std::string a = sym[at], b = sym[at + 1];
        std::vector<std::string> merged;
        for (std::size_t i = 0; i < sym.size(); ++i) {
            if (i + 1 < sym.size() && sym[i] == a && sym[i + 1] == b) {
                merged.push_back(a + b);
                ++i;
            } else {
                merged.push_back(sym[i]);
            }
        }
        sym = std::move(merged);
    }
    return sym;
}

std::vector<int> ClipTokenizer::encode(const std::string& text, std::size_t max_length) const {
    std::string clean;
    for (unsigned char c : text) clean += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    std::vector<int> ids{bos_};
    for (const auto& word : split_words(clean))
        for (const auto& piece : bpe(word)) {
            const auto it = vocab_.find(piece);
            if (it == vocab_.end()) throw ValidationError("token '" + piece + "' is not in the CLIP vocabulary");
            ids.push_back(it->second);
        }
    if (max_length >= 2 && ids.size() + 1 > max_length) ids.resize(max_length - 1);
    ids.push_back(eos_);
    return ids;
}

// ---------------------------------------------------------------- loading

std::string clip_weights_fingerprint(const fs::path& dir) {
    Fingerprint fp;
    for (const char* f : {"config.json", "model.safetensors", "vocab.json", "merges.txt", "preprocessor_config.json"}) {
        const fs::path p = dir / f;
        fp.text(f).text(fs::exists(p) ? hash_file(p.string()) : "absent");
    }
    return fp.hex();
}

EncoderPair load_clip_encoders(const fs::path& dir) {
    for (const char* f : {"config.json", "model.safetensors", "vocab.json", "merges.txt"})
        if (!fs::exists(dir / f)) throw IoError("CLIP directory " + dir.string() + " lacks " + f);
    const json config = read_json_file(dir / "config.json");
    if (!config.contains("vision_config") || !config.contains("text_config"))
        throw ParseError((dir / "config.json").string() + ": expected vision_config and text_config");
    const json preprocess =
        fs::exists(dir / "preprocessor_config.json") ? read_json_file(dir / "preprocessor_config.json") : json::object();
    const SafeTensors st(dir / "model.safetensors");
    const std::string id = "clip:" + dir.filename().string() + ":" + clip_weights_fingerprint(dir);
    EncoderPair pair;
    pair.visual = std::make_shared<ClipVisualEncoder>(st, config, preprocess, id);
    pair.text = std::make_shared<ClipTextEncoder>(st, config, ClipTokenizer(dir / "vocab.json", dir / "merges.txt"), id);
    if (pair.visual->feature_dim() != pair.text->feature_dim())
        throw ValidationError("CLIP visual and text projections differ in width");
    return pair;
}

}  // namespace pcclip

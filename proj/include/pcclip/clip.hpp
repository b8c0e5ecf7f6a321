#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pcclip/encoder.hpp"

namespace pcclip {

// Pretrained CLIP (ViT image tower + causal text transformer) read from a
// Hugging Face style directory: model.safetensors, config.json, vocab.json and
// merges.txt, plus preprocessor_config.json for the pixel mean/std when present.
// Inference runs in float32 on the CPU. Features are the projected embeddings,
// not yet normalized.
EncoderPair load_clip_encoders(const std::filesystem::path& dir);

// Hash of the weight and tokenizer files, for manifests.
std::string clip_weights_fingerprint(const std::filesystem::path& dir);

// Byte-level BPE used by CLIP. Lower-cases, collapses whitespace, splits words,
// letter runs, single digits and punctuation runs, then merges by rank.
// Bytes >= 0x80 count as letters when splitting.
class ClipTokenizer {
public:
    ClipTokenizer(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);

    // <|startoftext|> ids... <|endoftext|>, truncated to max_length.
    std::vector<int> encode(const std::string& text, std::size_t max_length = 77) const;
    int bos() const { return bos_; }
    int eos() const { return eos_; }

private:
    std::vector<std::string> bpe(const std::string& word) const;

    std::map<std::string, int> vocab_;
    std::map<std::pair<std::string, std::string>, int> ranks_;
    std::string byte_char_[256];
    int bos_ = -1;
    int eos_ = -1;
};

}  // namespace pcclip

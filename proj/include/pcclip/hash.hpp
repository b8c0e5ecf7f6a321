#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace pcclip {

// FNV-1a 64-bit, used for fingerprints in manifests. Not cryptographic.
class Fingerprint {
public:
    Fingerprint& bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Fingerprint& text(std::string_view s) {
        std::uint64_t n = s.size();
        bytes(&n, sizeof n);
        return bytes(s.data(), s.size());
    }
    template <typename T>
    Fingerprint& values(std::span<const T> v) {
        std::uint64_t n = v.size();
        bytes(&n, sizeof n);
        return bytes(v.data(), v.size_bytes());
    }
    template <typename T>
    Fingerprint& value(const T& v) {
        return bytes(&v, sizeof v);
    }

    std::uint64_t digest() const { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);
std::string hash_file(const std::string& path);

}  // namespace pcclip

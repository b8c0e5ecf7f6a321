#include "pcclip/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "pcclip/error.hpp"

namespace pcclip {

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string Fingerprint::hex() const { return to_hex(state_); }

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    Fingerprint fp;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        fp.bytes(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return fp.hex();
}

}  // namespace pcclip

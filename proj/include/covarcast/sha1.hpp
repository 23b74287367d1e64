#pragma once
// SHA-1, one-shot, for provenance digests.  Not a security boundary — the
// hashes key run directories and tie reports to their input data the way git
// ties blobs to object ids.

#include <cstdint>
#include <string>

namespace covarcast {

namespace detail {

inline std::uint32_t rol32(std::uint32_t x, int c) {
    return (x << c) | (x >> (32 - c));
}

}  // namespace detail

inline std::string sha1_hex(const std::string& data) {
    std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u,
                          0xC3D2E1F0u};

    std::string msg = data;
    const std::uint64_t bit_len = static_cast<std::uint64_t>(msg.size()) * 8;
    msg.push_back(static_cast<char>(0x80));
    while (msg.size() % 64 != 56) msg.push_back('\0');
    for (int i = 7; i >= 0; --i)
        msg.push_back(static_cast<char>((bit_len >> (8 * i)) & 0xff));

    for (std::size_t chunk = 0; chunk + 64 <= msg.size(); chunk += 64) {
        std::uint32_t w[80];
        for (int i = 0; i < 16; ++i) {
            const std::size_t o = chunk + 4 * static_cast<std::size_t>(i);
            w[i] = (std::uint32_t(std::uint8_t(msg[o])) << 24) |
                   (std::uint32_t(std::uint8_t(msg[o + 1])) << 16) |
                   (std::uint32_t(std::uint8_t(msg[o + 2])) << 8) |
                   std::uint32_t(std::uint8_t(msg[o + 3]));
        }
        for (int i = 16; i < 80; ++i)
            w[i] = detail::rol32(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) {
                f = (b & c) | (~b & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            const std::uint32_t temp = detail::rol32(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = detail::rol32(b, 30);
            b = a;
            a = temp;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
    }

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(40);
    for (const std::uint32_t word : h)
        for (int shift = 28; shift >= 0; shift -= 4)
            out.push_back(hex[(word >> shift) & 0xf]);
    return out;
}

// Same value `git hash-object` would assign the content.
inline std::string git_blob_sha1(const std::string& content) {
    std::string framed = "blob " + std::to_string(content.size());
    framed.push_back('\0');
    framed += content;
    return sha1_hex(framed);
}

}  // namespace covarcast

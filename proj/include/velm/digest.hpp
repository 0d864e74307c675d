#pragma once

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace velm {

/// Incremental SHA-256 with length-prefixed fields, so ("ab","c") and ("a","bc") differ.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& bytes(std::span<const std::uint8_t> data) {
        field_length(data.size());
        EVP_DigestUpdate(ctx_, data.data(), data.size());
        return *this;
    }
    Sha256& text(std::string_view s) {
        return bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
    }
    Sha256& u64(std::uint64_t v) {
        std::uint8_t le[8];
        for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
        EVP_DigestUpdate(ctx_, le, 8);
        return *this;
    }

    std::string hex() {
        unsigned char out[SHA256_DIGEST_LENGTH];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, out, &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string s;
        s.reserve(2 * SHA256_DIGEST_LENGTH);
        for (unsigned char c : out) {
            s.push_back(digits[c >> 4]);
            s.push_back(digits[c & 0xf]);
        }
        return s;
    }

private:
    void field_length(std::size_t n) { u64(static_cast<std::uint64_t>(n)); }

    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) {
    unsigned char out[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(s.data()), s.size(), out);
    static constexpr char digits[] = "0123456789abcdef";
    std::string hex;
    for (unsigned char c : out) {
        hex.push_back(digits[c >> 4]);
        hex.push_back(digits[c & 0xf]);
    }
    return hex;
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) return {};
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    if (!text.empty() && text.back() == '=') --len;
    if (text.size() > 1 && text[text.size() - 2] == '=') --len;
    out.resize(len);
    return out;
}

}  // namespace velm

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mgm/errors.hpp"

namespace mgm {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
public:
    void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

    void u32(std::uint32_t v) { raw(&v, sizeof v); }

    void f32(float v) { raw(&v, sizeof v); }

    void f32s(const float* data, std::size_t n) { raw(data, n * sizeof(float)); }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }

    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    void expect_magic(std::string_view tag) {
        need(tag.size(), "magic");
        if (std::memcmp(bytes_.data() + pos_, tag.data(), tag.size()) != 0)
            throw FormatError("bad magic, expected '" + std::string(tag) + "'", pos_);
        pos_ += tag.size();
    }

    std::uint32_t u32(const char* field) {
        std::uint32_t v;
        read(&v, sizeof v, field);
        return v;
    }

    void f32s(float* out, std::size_t n, const char* field) { read(out, n * sizeof(float), field); }

    std::string str(const char* field) {
        const std::uint32_t n = u32(field);
        need(n, field);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* field) const {
        if (remaining() < n)
            throw FormatError(std::string("truncated payload reading ") + field + ": need " +
                                  std::to_string(n) + " bytes, have " +
                                  std::to_string(remaining()),
                              pos_);
    }

private:
    void read(void* out, std::size_t n, const char* field) {
        need(n, field);
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace mgm

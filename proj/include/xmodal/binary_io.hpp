#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal::bin {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; add byte swapping for big-endian hosts");

class Writer {
public:
    void bytes(const void* src, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(src);
        buf_.insert(buf_.end(), p, p + n);
    }
    template <typename T>
    void pod(T value) {
        bytes(&value, sizeof value);
    }
    void u32(std::uint32_t v) { pod(v); }
    void u64(std::uint64_t v) { pod(v); }
    void f32(float v) { pod(v); }
    void f64(double v) { pod(v); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::size_t size() const noexcept { return buf_.size(); }
    const std::vector<unsigned char>& buffer() const noexcept { return buf_; }
    void patch_u64(std::size_t offset, std::uint64_t v) { std::memcpy(buf_.data() + offset, &v, sizeof v); }

private:
    std::vector<unsigned char> buf_;
};

/// Bounds-checked cursor. Short reads throw TruncatedPayload (the format
/// layer may translate).
class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& data) : data_(data) {}

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }
    void seek(std::size_t pos) {
        if (pos > data_.size()) throw TruncatedPayload("seek past end of file");
        pos_ = pos;
    }
    void bytes(void* dst, std::size_t n) {
        if (n > remaining()) throw TruncatedPayload("need " + std::to_string(n) + " bytes, have " +
                                                    std::to_string(remaining()));
        std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
    T pod() {
        T v{};
        bytes(&v, sizeof v);
        return v;
    }
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    float f32() { return pod<float>(); }
    double f64() { return pod<double>(); }
    std::string str() {
        const auto n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    const std::vector<unsigned char>& data_;
    std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size);

inline void write_file_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    write_file_atomic(path, bytes.data(), bytes.size());
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, text.data(), text.size());
}

}  // namespace xmodal::bin

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace edd {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::string hex64(std::uint64_t v);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void atomic_write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write_text(const std::filesystem::path& path, std::string_view text);

// Little-endian binary encoding used by the checkpoint and teacher-cache files.
class ByteWriter {
public:
    void raw(std::string_view bytes);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    // Appends the FNV-1a checksum of everything written so far.
    void seal();
    const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    // Verifies and strips the trailing checksum.
    explicit ByteReader(std::span<const std::uint8_t> sealed, std::string what);

    std::string raw(std::size_t n);
    std::uint32_t u32();
    float f32();
    bool done() const noexcept { return pos_ == body_.size(); }
    void expect_done() const;

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> body_;
    std::size_t pos_ = 0;
    std::string what_;
};

} // namespace edd

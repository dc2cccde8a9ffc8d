#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace icrl {

// CRC-32 (IEEE 802.3 polynomial, reflected).
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);
inline uint32_t crc32(std::string_view bytes, uint32_t seed = 0) {
    return crc32(bytes.data(), bytes.size(), seed);
}

// Little-endian append-only buffer.
class ByteWriter {
  public:
    void put_u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void put_u16(uint16_t v);
    void put_u32(uint32_t v);
    void put_u64(uint64_t v);
    void put_f32(float v);
    void put_f64(double v);
    void put_bytes(std::string_view bytes) { buf_.append(bytes); }

    const std::string& bytes() const { return buf_; }
    std::string take() { return std::move(buf_); }
    size_t size() const { return buf_.size(); }

  private:
    std::string buf_;
};

// Little-endian cursor over a byte range. Throws TruncatedError on overrun.
class ByteReader {
  public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    uint8_t get_u8();
    uint16_t get_u16();
    uint32_t get_u32();
    uint64_t get_u64();
    float get_f32();
    double get_f64();
    std::string_view get_bytes(size_t n);

    size_t offset() const { return pos_; }
    size_t remaining() const { return bytes_.size() - pos_; }

  private:
    void need(size_t n) const;

    std::string_view bytes_;
    size_t pos_ = 0;
};

std::string read_file(const std::string& path);

// Write via temp file + rename so readers never observe partial content.
void write_file_atomic(const std::string& path, std::string_view bytes);

void ensure_dir(const std::string& path);

}  // namespace icrl

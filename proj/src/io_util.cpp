#include "icrl/io_util.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "icrl/errors.hpp"

namespace icrl {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1) ? (0xedb88320u ^ (c >> 1)) : (c >> 1);
        }
        table[i] = c;
    }
    return table;
}

}  // namespace

uint32_t crc32(const void* data, size_t len, uint32_t seed) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    const auto* p = static_cast<const uint8_t*>(data);
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < len; ++i) {
        c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
    }
    return c ^ 0xffffffffu;
}

void ByteWriter::put_u16(uint16_t v) {
    put_u8(static_cast<uint8_t>(v));
    put_u8(static_cast<uint8_t>(v >> 8));
}

void ByteWriter::put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        put_u8(static_cast<uint8_t>(v >> (8 * i)));
    }
}

void ByteWriter::put_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        put_u8(static_cast<uint8_t>(v >> (8 * i)));
    }
}

void ByteWriter::put_f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(bits);
}

void ByteWriter::put_f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(bits);
}

void ByteReader::need(size_t n) const {
    if (pos_ + n > bytes_.size()) {
        throw TruncatedError("unexpected end of data at offset " + std::to_string(pos_));
    }
}

uint8_t ByteReader::get_u8() {
    need(1);
    return static_cast<uint8_t>(bytes_[pos_++]);
}

uint16_t ByteReader::get_u16() {
    uint16_t v = get_u8();
    v |= static_cast<uint16_t>(get_u8()) << 8;
    return v;
}

uint32_t ByteReader::get_u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<uint32_t>(get_u8()) << (8 * i);
    }
    return v;
}

uint64_t ByteReader::get_u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<uint64_t>(get_u8()) << (8 * i);
    }
    return v;
}

float ByteReader::get_f32() {
    const uint32_t bits = get_u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double ByteReader::get_f64() {
    const uint64_t bits = get_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string_view ByteReader::get_bytes(size_t n) {
    need(n);
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path);
    }
    std::string out;
    in.seekg(0, std::ios::end);
    out.resize(static_cast<size_t>(in.tellg()));
    in.seekg(0);
    in.read(out.data(), static_cast<std::streamsize>(out.size()));
    if (!in) {
        throw IoError("read failed: " + path);
    }
    return out;
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open for writing: " + tmp);
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            throw IoError("write failed: " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("rename failed: " + tmp + " -> " + path + " (" + ec.message() + ")");
    }
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) {
        throw IoError("cannot create directory: " + path + " (" + ec.message() + ")");
    }
}

}  // namespace icrl

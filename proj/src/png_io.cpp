#include "mfv/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>

namespace mfv {

namespace {

const uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const uint8_t* data, size_t len) {
    put_be32(out, static_cast<uint32_t>(len));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_be32(out, crc);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t size, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf out_len = static_cast<uLongf>(expected);
    int rc = ::uncompress(out.data(), &out_len, data, static_cast<uLong>(size));
    check(rc == Z_OK && out_len == expected, "format", "PNG pixel data failed to inflate");
    return out;
}

std::vector<uint8_t> zlib_deflate(const uint8_t* data, size_t size) {
    uLongf bound = ::compressBound(static_cast<uLong>(size));
    std::vector<uint8_t> out(bound);
    int rc = ::compress2(out.data(), &bound, data, static_cast<uLong>(size), 6);
    check(rc == Z_OK, "io", "PNG pixel data failed to deflate");
    out.resize(bound);
    return out;
}

}  // namespace

Image8 decode_png(const std::vector<uint8_t>& file) {
    check(file.size() > 8 && std::memcmp(file.data(), kSignature, 8) == 0, "format",
          "not a PNG file (bad signature)");

    int64_t width = 0, height = 0;
    int color_type = -1, bit_depth = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_end = false;
    while (pos + 8 <= file.size() && !saw_end) {
        uint32_t len = be32(&file[pos]);
        check(pos + 12 + len <= file.size(), "format", "truncated PNG chunk");
        const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
        const uint8_t* data = &file[pos + 8];
        uint32_t crc_expect = be32(&file[pos + 8 + len]);
        uint32_t crc_actual =
            static_cast<uint32_t>(::crc32(0, &file[pos + 4], static_cast<uInt>(len + 4)));
        check(crc_expect == crc_actual, "format", "PNG chunk CRC mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            check(len == 13, "format", "malformed IHDR");
            width = be32(data);
            height = be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            check(data[10] == 0 && data[11] == 0, "format", "unsupported PNG compression/filter method");
            check(data[12] == 0, "format", "interlaced PNG is not supported");
            check(bit_depth == 8, "format", "only 8-bit PNG is supported");
            check(color_type == 0 || color_type == 2 || color_type == 4 || color_type == 6, "format",
                  "palette PNG is not supported");
            check(width >= 1 && height >= 1, "format", "empty PNG");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
        }
        pos += 12 + len;
    }
    check(color_type >= 0, "format", "PNG has no IHDR");
    check(saw_end, "format", "PNG has no IEND");
    check(!idat.empty(), "format", "PNG has no pixel data");

    int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
    size_t stride = static_cast<size_t>(width) * static_cast<size_t>(channels);
    std::vector<uint8_t> raw =
        zlib_inflate(idat.data(), idat.size(), (stride + 1) * static_cast<size_t>(height));

    // undo per-row filters in place
    std::vector<uint8_t> pixels(stride * static_cast<size_t>(height));
    int bpp = channels;
    for (int64_t y = 0; y < height; ++y) {
        uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
        uint8_t* dst = &pixels[static_cast<size_t>(y) * stride];
        const uint8_t* prev = y > 0 ? &pixels[static_cast<size_t>(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= static_cast<size_t>(bpp) ? dst[x - static_cast<size_t>(bpp)] : 0;
            int b = prev ? prev[x] : 0;
            int c = (prev && x >= static_cast<size_t>(bpp)) ? prev[x - static_cast<size_t>(bpp)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: fail("format", "unknown PNG row filter " + std::to_string(filter));
            }
            dst[x] = static_cast<uint8_t>(v);
        }
    }

    Image8 img;
    img.width = width;
    img.height = height;
    img.rgb.resize(static_cast<size_t>(width) * static_cast<size_t>(height) * 3);
    for (int64_t i = 0; i < width * height; ++i) {
        const uint8_t* p = &pixels[static_cast<size_t>(i) * static_cast<size_t>(channels)];
        uint8_t r, g, b;
        if (channels <= 2) {
            r = g = b = p[0];
        } else {
            r = p[0];
            g = p[1];
            b = p[2];
        }
        img.rgb[static_cast<size_t>(i) * 3 + 0] = r;
        img.rgb[static_cast<size_t>(i) * 3 + 1] = g;
        img.rgb[static_cast<size_t>(i) * 3 + 2] = b;
    }
    return img;
}

std::vector<uint8_t> encode_png(const Image8& img) {
    check(img.width >= 1 && img.height >= 1, "shape", "cannot encode an empty image");
    check(img.rgb.size() == static_cast<size_t>(img.width * img.height * 3), "shape",
          "image byte count does not match extents");

    size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<uint8_t> raw((stride + 1) * static_cast<size_t>(img.height));
    for (int64_t y = 0; y < img.height; ++y) {
        raw[static_cast<size_t>(y) * (stride + 1)] = 0;  // filter: none
        std::memcpy(&raw[static_cast<size_t>(y) * (stride + 1) + 1],
                    &img.rgb[static_cast<size_t>(y) * stride], stride);
    }
    std::vector<uint8_t> compressed = zlib_deflate(raw.data(), raw.size());

    std::vector<uint8_t> out(kSignature, kSignature + 8);
    uint8_t ihdr[13];
    ihdr[0] = static_cast<uint8_t>(img.width >> 24);
    ihdr[1] = static_cast<uint8_t>(img.width >> 16);
    ihdr[2] = static_cast<uint8_t>(img.width >> 8);
    ihdr[3] = static_cast<uint8_t>(img.width);
    ihdr[4] = static_cast<uint8_t>(img.height >> 24);
    ihdr[5] = static_cast<uint8_t>(img.height >> 16);
    ihdr[6] = static_cast<uint8_t>(img.height >> 8);
    ihdr[7] = static_cast<uint8_t>(img.height);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter method
    ihdr[12] = 0;  // no interlace
    put_chunk(out, "IHDR", ihdr, sizeof ihdr);
    put_chunk(out, "IDAT", compressed.data(), compressed.size());
    put_chunk(out, "IEND", nullptr, 0);
    return out;
}

Image8 read_png(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    check(f != nullptr, "io", "cannot open '" + path + "' for reading");
    std::fseek(f, 0, SEEK_END);
    long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> data(static_cast<size_t>(size));
    size_t got = size > 0 ? std::fread(data.data(), 1, data.size(), f) : 0;
    std::fclose(f);
    check(got == data.size(), "io", "short read from '" + path + "'");
    return decode_png(data);
}

void write_png(const std::string& path, const Image8& img) {
    std::vector<uint8_t> bytes = encode_png(img);
    write_file_atomic(path, bytes.data(), bytes.size());
}

Tensor image_to_tensor(const Image8& img) {
    Tensor t = Tensor::zeros({1, 3, img.height, img.width});
    float* p = t.mut_f32();
    int64_t hw = img.height * img.width;
    for (int64_t i = 0; i < hw; ++i)
        for (int64_t c = 0; c < 3; ++c)
            p[c * hw + i] = static_cast<float>(img.rgb[static_cast<size_t>(i * 3 + c)]) / 255.0f;
    return t;
}

Image8 tensor_to_image(const Tensor& t) {
    check(t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 3, "shape",
          "tensor_to_image expects [1,3,H,W], got " + shape_str(t.shape()));
    Image8 img;
    img.height = t.dim(2);
    img.width = t.dim(3);
    img.rgb.resize(static_cast<size_t>(img.height * img.width * 3));
    int64_t hw = img.height * img.width;
    for (int64_t i = 0; i < hw; ++i)
        for (int64_t c = 0; c < 3; ++c) {
            double v = std::min(1.0, std::max(0.0, t.at(c * hw + i)));
            img.rgb[static_cast<size_t>(i * 3 + c)] =
                static_cast<uint8_t>(std::lround(v * 255.0));
        }
    return img;
}

}  // namespace mfv

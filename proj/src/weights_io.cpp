#include "mfv/weights_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <vector>

namespace mfv {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'V', 'W'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& out, float f) {
    uint32_t v = std::bit_cast<uint32_t>(f);
    put_u32(out, v);
}

struct Reader {
    const uint8_t* p;
    size_t remaining;
    std::string where;

    void need(size_t n) {
        check(remaining >= n, "format", "truncated weight file while reading " + where);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        remaining -= 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
        p += 8;
        remaining -= 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        uint8_t v = *p;
        ++p;
        --remaining;
        return v;
    }
    void bytes(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, p, n);
        p += n;
        remaining -= n;
    }
};

std::vector<uint8_t> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    check(f != nullptr, "io", "cannot open '" + path + "' for reading");
    std::fseek(f, 0, SEEK_END);
    long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> data(static_cast<size_t>(size));
    size_t got = size > 0 ? std::fread(data.data(), 1, data.size(), f) : 0;
    std::fclose(f);
    check(got == data.size(), "io", "short read from '" + path + "'");
    return data;
}

}  // namespace

void write_file_atomic(const std::string& path, const void* data, size_t size) {
    std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    check(f != nullptr, "io", "cannot open '" + tmp + "' for writing");
    size_t wrote = size > 0 ? std::fwrite(data, 1, size, f) : 0;
    int close_rc = std::fclose(f);
    if (wrote != size || close_rc != 0) {
        std::remove(tmp.c_str());
        fail("io", "failed writing '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.c_str());
        fail("io", "failed to move '" + tmp + "' into place: " + ec.message());
    }
}

void save_weights(const std::string& path, const ModelWeights& weights) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(weights.entries.size()));
    for (const auto& [name, t] : weights.entries) {
        check(t.dtype() == DType::f32, "format", "weight file stores float32 tensors only");
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
        out.push_back(0);  // dtype float32
        const float* p = t.f32();
        for (int64_t i = 0; i < t.numel(); ++i) put_f32(out, p[i]);
    }
    write_file_atomic(path, out.data(), out.size());
}

ModelWeights load_weights(const std::string& path) {
    std::vector<uint8_t> data = read_file(path);
    Reader r{data.data(), data.size(), "header"};
    char magic[4];
    r.bytes(magic, 4);
    check(std::memcmp(magic, kMagic, 4) == 0, "format",
          "'" + path + "' is not a weight file (bad magic)");
    uint32_t version = r.u32();
    check(version == kVersion, "format",
          "unsupported weight file version " + std::to_string(version));
    uint32_t count = r.u32();

    ModelWeights w;
    for (uint32_t i = 0; i < count; ++i) {
        r.where = "entry " + std::to_string(i);
        uint32_t name_len = r.u32();
        r.need(name_len);
        std::string name(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        r.remaining -= name_len;
        r.where = "tensor '" + name + "'";
        uint32_t rank = r.u32();
        check(rank >= 1 && rank <= 8, "format", "implausible rank in " + r.where);
        Shape shape;
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint64_t e = r.u64();
            check(e >= 1 && e <= (1ULL << 32), "format", "implausible extent in " + r.where);
            shape.push_back(static_cast<int64_t>(e));
            numel *= static_cast<int64_t>(e);
        }
        uint8_t dtype = r.u8();
        check(dtype == 0, "format", "unknown dtype byte in " + r.where);
        std::vector<float> values(static_cast<size_t>(numel));
        r.need(static_cast<size_t>(numel) * 4);
        for (int64_t j = 0; j < numel; ++j) {
            uint32_t bits = r.u32();
            values[static_cast<size_t>(j)] = std::bit_cast<float>(bits);
        }
        w.entries.emplace_back(std::move(name), Tensor::from_f32(std::move(shape), std::move(values)));
    }
    check(r.remaining == 0, "format", "trailing bytes after the last weight entry");
    return w;
}

}  // namespace mfv

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mfv/model.hpp"
#include "mfv/png_io.hpp"
#include "mfv/weights_io.hpp"
#include "oracles.hpp"

using namespace mfv;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

ModelConfig tiny_config(int flows) {
    ModelConfig c;
    c.levels = 2;
    c.coarsest_flow_level = 0;
    c.flows = flows;
    c.feature_channels = {6, 8};
    c.mfb_width = 8;
    c.mfb_depth = 1;
    c.context_channels = 4;
    c.synth_channels = {6};
    return c;
}

}  // namespace

TEST_CASE("weight save/load round trip is bitwise identical") {
    Model model(tiny_config(3), 9);
    ModelWeights w = model.snapshot();
    std::string path = temp_path("mfv_roundtrip.mfvw");
    save_weights(path, w);
    ModelWeights r = load_weights(path);
    REQUIRE(r.entries.size() == w.entries.size());
    for (size_t i = 0; i < w.entries.size(); ++i) {
        CHECK(r.entries[i].first == w.entries[i].first);
        const Tensor& a = w.entries[i].second;
        const Tensor& b = r.entries[i].second;
        REQUIRE(a.shape() == b.shape());
        for (int64_t j = 0; j < a.numel(); ++j) CHECK(a.f32()[j] == b.f32()[j]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("weight file byte layout is stable (save twice, compare bytes)") {
    Model model(tiny_config(3), 9);
    std::string p1 = temp_path("mfv_bytes1.mfvw");
    std::string p2 = temp_path("mfv_bytes2.mfvw");
    save_weights(p1, model.snapshot());
    save_weights(p2, model.snapshot());
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(b1.substr(0, 4) == "MFVW");
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("corrupted magic is rejected before any entry is read") {
    Model model(tiny_config(3), 9);
    std::string path = temp_path("mfv_badmagic.mfvw");
    save_weights(path, model.snapshot());
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    try {
        load_weights(path);
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.code() == "format");
    }
    std::filesystem::remove(path);
}

TEST_CASE("truncated weight files are rejected") {
    Model model(tiny_config(3), 9);
    std::string path = temp_path("mfv_trunc.mfvw");
    save_weights(path, model.snapshot());
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    try {
        load_weights(path);
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.code() == "format");
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("loading across configurations names the conflicting parameter") {
    Model m9(tiny_config(9), 3);
    Model m25(tiny_config(25), 3);
    std::string path = temp_path("mfv_conflict.mfvw");
    save_weights(path, m9.snapshot());
    try {
        m25.load(load_weights(path));
        FAIL("expected a shape-conflict error");
    } catch (const Error& e) {
        CHECK(e.code() == "shape-conflict");
        // the first M-dependent parameter in traversal order is the MFB stack
        CHECK(std::string(e.what()).find("mfb.0.stack.0.kernel") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("png encode/decode: rasters survive exactly, files re-encode byte-identically") {
    Rng rng(401);
    Image8 img;
    img.width = 23;
    img.height = 17;
    img.rgb.resize(static_cast<size_t>(23 * 17 * 3));
    for (auto& b : img.rgb) b = static_cast<uint8_t>(rng.next_u64() & 0xff);

    std::vector<uint8_t> file = encode_png(img);
    Image8 back = decode_png(file);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.rgb == img.rgb);

    // encode(decode(f)) == f for files this encoder produced
    std::vector<uint8_t> file2 = encode_png(back);
    CHECK(file == file2);
}

TEST_CASE("png decoder handles every row filter type") {
    // hand-built stream: 3x5 RGB image, rows filtered with types 0..4
    auto build_png = [](const std::vector<uint8_t>& raw, int w, int h) {
        uLongf bound = compressBound(static_cast<uLong>(raw.size()));
        std::vector<uint8_t> comp(bound);
        REQUIRE(compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) ==
                Z_OK);
        comp.resize(bound);
        std::vector<uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
        auto be32 = [&](uint32_t v) {
            out.push_back(static_cast<uint8_t>(v >> 24));
            out.push_back(static_cast<uint8_t>(v >> 16));
            out.push_back(static_cast<uint8_t>(v >> 8));
            out.push_back(static_cast<uint8_t>(v));
        };
        auto chunk = [&](const char* type, const std::vector<uint8_t>& data) {
            be32(static_cast<uint32_t>(data.size()));
            size_t start = out.size();
            out.insert(out.end(), type, type + 4);
            out.insert(out.end(), data.begin(), data.end());
            uint32_t crc = static_cast<uint32_t>(
                crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
            be32(crc);
        };
        std::vector<uint8_t> ihdr = {
            0, 0, 0, static_cast<uint8_t>(w), 0, 0, 0, static_cast<uint8_t>(h), 8, 2, 0, 0, 0};
        chunk("IHDR", ihdr);
        chunk("IDAT", comp);
        chunk("IEND", {});
        return out;
    };

    // 3x5 image, rows filtered with None/Sub/Up/Average/Paeth against known pixels
    int w = 3, h = 5;
    std::vector<std::vector<uint8_t>> rows(static_cast<size_t>(h), std::vector<uint8_t>(static_cast<size_t>(w * 3)));
    Rng rng(403);
    for (auto& r : rows)
        for (auto& v : r) v = static_cast<uint8_t>(rng.next_u64() & 0xff);

    auto paeth = [](int a, int b, int c) {
        int p = a + b - c;
        int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
        if (pa <= pb && pa <= pc) return a;
        if (pb <= pc) return b;
        return c;
    };
    std::vector<uint8_t> raw;
    for (int y = 0; y < h; ++y) {
        uint8_t filter = static_cast<uint8_t>(y);  // 0..4
        raw.push_back(filter);
        for (int x = 0; x < w * 3; ++x) {
            int cur = rows[static_cast<size_t>(y)][static_cast<size_t>(x)];
            int a = x >= 3 ? rows[static_cast<size_t>(y)][static_cast<size_t>(x - 3)] : 0;
            int b = y > 0 ? rows[static_cast<size_t>(y - 1)][static_cast<size_t>(x)] : 0;
            int c = (y > 0 && x >= 3) ? rows[static_cast<size_t>(y - 1)][static_cast<size_t>(x - 3)] : 0;
            int enc = cur;
            switch (filter) {
                case 0: break;
                case 1: enc = cur - a; break;
                case 2: enc = cur - b; break;
                case 3: enc = cur - (a + b) / 2; break;
                case 4: enc = cur - paeth(a, b, c); break;
            }
            raw.push_back(static_cast<uint8_t>(enc & 0xff));
        }
    }
    Image8 got = decode_png(build_png(raw, w, h));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w * 3; ++x)
            CHECK(got.rgb[static_cast<size_t>(y * w * 3 + x)] ==
                  rows[static_cast<size_t>(y)][static_cast<size_t>(x)]);
}

TEST_CASE("png decoder rejects garbage, bad CRCs, interlacing") {
    std::vector<uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    CHECK_THROWS_AS(decode_png(junk), Error);

    Image8 img;
    img.width = 4;
    img.height = 4;
    img.rgb.assign(48, 128);
    std::vector<uint8_t> file = encode_png(img);
    file[file.size() - 5] ^= 0xff;  // corrupt IEND CRC
    try {
        decode_png(file);
        FAIL("expected CRC error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("CRC") != std::string::npos);
    }
}

TEST_CASE("tensor<->image round trip stays within the quantization bound") {
    Rng rng(409);
    Tensor t = random_uniform({1, 3, 9, 11}, 0, 1, rng);
    Image8 img = tensor_to_image(t);
    Tensor back = image_to_tensor(img);
    CHECK(oracle::max_abs_diff(t, back) <= 1.0 / 510.0 + 1e-9);

    // u8 -> float -> u8 is exact
    Image8 img2 = tensor_to_image(back);
    CHECK(img2.rgb == img.rgb);
}

TEST_CASE("write_png goes through a temp file and leaves no partial output") {
    Image8 img;
    img.width = 6;
    img.height = 6;
    img.rgb.assign(108, 42);
    std::string path = temp_path("mfv_atomic.png");
    write_png(path, img);
    CHECK(std::filesystem::exists(path));
    CHECK(!std::filesystem::exists(path + ".tmp"));
    Image8 back = read_png(path);
    CHECK(back.rgb == img.rgb);
    std::filesystem::remove(path);
}

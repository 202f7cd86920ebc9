#include "plantcount/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "plantcount/common.hpp"

namespace plantcount {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

uint32_t get_u32_be(const uint8_t* p) {
    return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32_be(out, uint32_t(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = uint32_t(::crc32(0, out.data() + start, uInt(out.size() - start)));
    put_u32_be(out, crc);
}

std::vector<uint8_t> zlib_compress(const std::vector<uint8_t>& raw) {
    uLongf bound = ::compressBound(uLong(raw.size()));
    std::vector<uint8_t> out(bound);
    if (::compress2(out.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw NumericError("png: deflate failed");
    out.resize(bound);
    return out;
}

std::vector<uint8_t> zlib_uncompress(const std::vector<uint8_t>& comp, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf len = uLongf(expected);
    if (::uncompress(out.data(), &len, comp.data(), uLong(comp.size())) != Z_OK || len != expected)
        throw InvalidArgument("png: corrupt compressed data");
    return out;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw InvalidArgument("write failed: " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    std::vector<uint8_t> bytes(size_t(in.tellg()));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    return bytes;
}

const uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::vector<uint8_t> make_ihdr(uint32_t w, uint32_t h, uint8_t bit_depth, uint8_t color_type) {
    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, w);
    put_u32_be(ihdr, h);
    ihdr.push_back(bit_depth);
    ihdr.push_back(color_type);
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    return ihdr;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace

void write_png_rgb(const std::string& path, const Image& img) {
    if (img.height < 1 || img.width < 1) throw InvalidArgument("write_png_rgb: empty image");
    const size_t stride = size_t(img.width) * 3;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        const uint8_t* row = img.data.data() + size_t(y) * stride;
        raw.insert(raw.end(), row, row + stride);
    }
    std::vector<uint8_t> png(kPngSig, kPngSig + 8);
    append_chunk(png, "IHDR", make_ihdr(uint32_t(img.width), uint32_t(img.height), 8, 2));
    append_chunk(png, "IDAT", zlib_compress(raw));
    append_chunk(png, "IEND", {});
    write_file(path, png);
}

void write_png_gray16(const std::string& path, int height, int width,
                      const std::vector<double>& values, double scale_max) {
    if (int64_t(values.size()) != int64_t(height) * width)
        throw InvalidArgument("write_png_gray16: size mismatch");
    const double denom = scale_max > 0.0 ? scale_max : 1.0;
    std::vector<uint8_t> raw;
    raw.reserve((size_t(width) * 2 + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < width; ++x) {
            double v = values[size_t(y) * width + x] / denom;
            v = std::clamp(v, 0.0, 1.0);
            const uint16_t q = uint16_t(std::lround(v * 65535.0));
            raw.push_back(uint8_t(q >> 8));
            raw.push_back(uint8_t(q & 0xff));
        }
    }
    std::vector<uint8_t> png(kPngSig, kPngSig + 8);
    append_chunk(png, "IHDR", make_ihdr(uint32_t(width), uint32_t(height), 16, 0));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", scale_max);
    std::vector<uint8_t> text;
    const char* key = "countmap_max";
    text.insert(text.end(), key, key + std::strlen(key));
    text.push_back(0);
    text.insert(text.end(), buf, buf + std::strlen(buf));
    append_chunk(png, "tEXt", text);
    append_chunk(png, "IDAT", zlib_compress(raw));
    append_chunk(png, "IEND", {});
    write_file(path, png);
}

Image read_png(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw InvalidArgument("not a PNG file: " + path);

    uint32_t w = 0, h = 0;
    int bit_depth = 0, color_type = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = get_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw InvalidArgument("truncated PNG: " + path);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = get_u32_be(payload);
            h = get_u32_be(payload + 4);
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw InvalidArgument("interlaced PNG not supported: " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w == 0 || h == 0) throw InvalidArgument("bad PNG header: " + path);
    if (bit_depth != 8) throw InvalidArgument("only 8-bit PNG input supported: " + path);

    int nch = 0;
    switch (color_type) {
        case 0: nch = 1; break;
        case 2: nch = 3; break;
        case 4: nch = 2; break;
        case 6: nch = 4; break;
        default: throw InvalidArgument("unsupported PNG color type: " + path);
    }

    const size_t stride = size_t(w) * nch;
    std::vector<uint8_t> raw = zlib_uncompress(idat, (stride + 1) * h);

    // Undo per-row filters in place.
    std::vector<uint8_t> prev(stride, 0);
    Image img{int(h), int(w)};
    for (uint32_t y = 0; y < h; ++y) {
        uint8_t* row = raw.data() + size_t(y) * (stride + 1);
        const uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= size_t(nch) ? cur[i - nch] : 0;
            const int b = prev[i];
            const int c = i >= size_t(nch) ? prev[i - nch] : 0;
            int v = cur[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw InvalidArgument("bad PNG filter byte: " + path);
            }
            cur[i] = uint8_t(v);
        }
        std::copy(cur, cur + stride, prev.begin());
        for (uint32_t x = 0; x < w; ++x) {
            const uint8_t* px = cur + size_t(x) * nch;
            uint8_t r, g, bch;
            if (nch <= 2) r = g = bch = px[0];
            else {
                r = px[0];
                g = px[1];
                bch = px[2];
            }
            img.at(int(y), int(x), 0) = r;
            img.at(int(y), int(x), 1) = g;
            img.at(int(y), int(x), 2) = bch;
        }
    }
    return img;
}

FeatureGrid image_to_grid(const Image& img) {
    FeatureGrid grid(img.height, img.width, 3);
    for (size_t i = 0; i < img.data.size(); ++i) grid.data[i] = img.data[i] / 255.0;
    return grid;
}

Image grid_to_image(const FeatureGrid& grid) {
    if (grid.channels != 3) throw InvalidArgument("grid_to_image: expected 3 channels");
    Image img(grid.height_p, grid.width_p);
    for (size_t i = 0; i < grid.data.size(); ++i) {
        const double v = std::clamp(grid.data[i], 0.0, 1.0);
        img.data[i] = uint8_t(std::lround(v * 255.0));
    }
    return img;
}

Image pad_reflect(const Image& img, int multiple) {
    const int oh = (img.height + multiple - 1) / multiple * multiple;
    const int ow = (img.width + multiple - 1) / multiple * multiple;
    if (oh == img.height && ow == img.width) return img;
    Image out(oh, ow);
    for (int y = 0; y < oh; ++y) {
        int sy = y < img.height ? y : 2 * img.height - 2 - y;
        sy = std::clamp(sy, 0, img.height - 1);
        for (int x = 0; x < ow; ++x) {
            int sx = x < img.width ? x : 2 * img.width - 2 - x;
            sx = std::clamp(sx, 0, img.width - 1);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw InvalidArgument("resize_bilinear: bad output dims");
    Image out(out_h, out_w);
    const double sy = double(img.height) / out_h;
    const double sx = double(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(img.height - 1));
        const int y0 = int(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(img.width - 1));
            const int x0 = int(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                                 wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
                out.at(y, x, c) = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

} // namespace plantcount

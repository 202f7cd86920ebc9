#include "plantcount/count_map.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace plantcount {

double RedundantCountMap::sum() const {
    double total = 0.0;
    for (double v : values) total += v;
    return total;
}

void check_geometry(int image_h, int image_w, int r, int s) {
    if (s < 1) throw InvalidArgument("count map: stride s must be >= 1");
    if (r < s) throw InvalidArgument("count map: window size r must be >= stride s");
    if (image_h < s || image_w < s || image_h % s != 0 || image_w % s != 0)
        throw InvalidArgument("count map: image dims must be positive multiples of s");
}

CoverageMap coverage_map(int image_h, int image_w, int r, int s) {
    check_geometry(image_h, image_w, r, s);
    CoverageMap cov;
    cov.height = image_h;
    cov.width = image_w;
    cov.r = r;
    cov.s = s;
    cov.values.assign(size_t(image_h) * image_w, 0);

    // 1D coverage factors: windows are axis-aligned products, so the pixel
    // count factorizes per axis.
    auto axis_cov = [r, s](int extent, int pixel) {
        // Anchors a*s with a in [0, extent/s) such that a*s <= pixel < a*s + r,
        // i.e. a*s >= pixel - r + 1. Ceil division must round toward -inf for
        // negative numerators.
        const int hi = std::min(pixel / s, extent / s - 1);
        const int n = pixel - r + 1;
        const int lo = std::max(0, n >= 0 ? (n + s - 1) / s : -((-n) / s));
        return (hi >= lo) ? (hi - lo + 1) : 0;
    };

    std::vector<int32_t> row_cov(image_h), col_cov(image_w);
    for (int y = 0; y < image_h; ++y) row_cov[y] = axis_cov(image_h, y);
    for (int x = 0; x < image_w; ++x) col_cov[x] = axis_cov(image_w, x);

    for (int y = 0; y < image_h; ++y)
        for (int x = 0; x < image_w; ++x)
            cov.values[size_t(y) * image_w + x] = row_cov[y] * col_cov[x];
    return cov;
}

RedundantCountMap make_count_map(int image_h, int image_w, int r, int s) {
    check_geometry(image_h, image_w, r, s);
    RedundantCountMap cr;
    cr.map_h = image_h / s;
    cr.map_w = image_w / s;
    cr.image_h = image_h;
    cr.image_w = image_w;
    cr.r = r;
    cr.s = s;
    cr.values.assign(size_t(cr.map_h) * cr.map_w, 0.0);
    return cr;
}

RedundantCountMap window_counts_from_dots(const std::vector<std::pair<double, double>>& dots,
                                          int image_h, int image_w, int r, int s) {
    RedundantCountMap cr = make_count_map(image_h, image_w, r, s);
    for (const auto& [x, y] : dots) {
        if (!(x >= 0.0 && x < image_w && y >= 0.0 && y < image_h))
            throw InvalidArgument("window_counts_from_dots: dot out of image bounds");
        // Windows containing (x, y): anchors in (coord - r, coord] per axis.
        const int a_hi = std::min(int(y / s), cr.map_h - 1);
        const int a_lo = std::max(0, int(std::floor((y - r) / s)) + 1);
        const int b_hi = std::min(int(x / s), cr.map_w - 1);
        const int b_lo = std::max(0, int(std::floor((x - r) / s)) + 1);
        for (int a = a_lo; a <= a_hi; ++a)
            for (int b = b_lo; b <= b_hi; ++b) cr.at(a, b) += 1.0;
    }
    return cr;
}

NormalizedCountMap normalize_map(const RedundantCountMap& cr) {
    const int H = cr.image_h, W = cr.image_w, r = cr.r, s = cr.s;
    check_geometry(H, W, r, s);

    NormalizedCountMap cn;
    cn.height = H;
    cn.width = W;
    cn.values.assign(size_t(H) * W, 0.0);

    // Spread each window count uniformly over its clipped pixels.
    for (int a = 0; a < cr.map_h; ++a) {
        const int y0 = a * s, y1 = std::min(y0 + r, H);
        for (int b = 0; b < cr.map_w; ++b) {
            const double v = cr.at(a, b);
            if (v == 0.0) continue;
            const int x0 = b * s, x1 = std::min(x0 + r, W);
            const double share = v / (double(y1 - y0) * double(x1 - x0));
            for (int y = y0; y < y1; ++y) {
                double* row = cn.values.data() + size_t(y) * W;
                for (int x = x0; x < x1; ++x) row[x] += share;
            }
        }
    }

    const CoverageMap cov = coverage_map(H, W, r, s);
    for (size_t i = 0; i < cn.values.size(); ++i) cn.values[i] /= cov.values[i];
    return cn;
}

double image_count(const NormalizedCountMap& cn) {
    double total = 0.0;
    for (double v : cn.values) total += v;
    return total;
}

std::vector<double> count_weights(int image_h, int image_w, int r, int s) {
    check_geometry(image_h, image_w, r, s);
    const CoverageMap cov = coverage_map(image_h, image_w, r, s);

    const int map_h = image_h / s, map_w = image_w / s;
    std::vector<double> weights(size_t(map_h) * map_w, 0.0);
    for (int a = 0; a < map_h; ++a) {
        const int y0 = a * s, y1 = std::min(y0 + r, image_h);
        for (int b = 0; b < map_w; ++b) {
            const int x0 = b * s, x1 = std::min(x0 + r, image_w);
            double acc = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) acc += 1.0 / cov.at(y, x);
            weights[size_t(a) * map_w + b] = acc / (double(y1 - y0) * double(x1 - x0));
        }
    }
    return weights;
}

std::string count_map_to_text(const NormalizedCountMap& cn) {
    std::ostringstream out;
    char buf[48];
    for (int y = 0; y < cn.height; ++y) {
        for (int x = 0; x < cn.width; ++x) {
            std::snprintf(buf, sizeof(buf), "%.9g", cn.at(y, x));
            if (x) out << ' ';
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

NormalizedCountMap count_map_from_text(const std::string& text) {
    NormalizedCountMap cn;
    std::istringstream in(text);
    std::string line;
    int width = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        double v;
        int n = 0;
        while (row >> v) {
            cn.values.push_back(v);
            ++n;
        }
        if (width < 0) width = n;
        else if (n != width) throw InvalidArgument("count map text: ragged rows");
        ++cn.height;
    }
    cn.width = std::max(width, 0);
    return cn;
}

} // namespace plantcount

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "plantcount/common.hpp"

namespace plantcount {

// Local-count map over r x r windows anchored on the stride-s lattice.
// Window (a, b) has its top-left corner at pixel (a*s, b*s) (row a*s, col b*s)
// and is clipped to the image bounds, so the map shape is exactly
// (H/s) x (W/s). Requires r >= s; overlapping windows make the map redundant.
struct RedundantCountMap {
    int map_h = 0;  // H / s
    int map_w = 0;  // W / s
    int image_h = 0;
    int image_w = 0;
    int r = 0;
    int s = 0;
    std::vector<double> values;  // row-major (a, b)

    double& at(int a, int b) { return values[size_t(a) * map_w + b]; }
    double at(int a, int b) const { return values[size_t(a) * map_w + b]; }
    double sum() const;
};

// Pixel-level map; sums to the image count.
struct NormalizedCountMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major (y, x)

    double& at(int y, int x) { return values[size_t(y) * width + x]; }
    double at(int y, int x) const { return values[size_t(y) * width + x]; }
};

// Per-pixel number of windows containing that pixel. Every value >= 1; equals
// (r/s)^2 in the interior when s divides r.
struct CoverageMap {
    int height = 0;
    int width = 0;
    int r = 0;
    int s = 0;
    std::vector<int32_t> values;

    int32_t at(int y, int x) const { return values[size_t(y) * width + x]; }
};

// Window geometry shared by the ground-truth builder and the normalizer.
// check_geometry throws InvalidArgument unless r >= s, s >= 1 and s divides H and W.
void check_geometry(int image_h, int image_w, int r, int s);

CoverageMap coverage_map(int image_h, int image_w, int r, int s);

RedundantCountMap make_count_map(int image_h, int image_w, int r, int s);

// Ground truth: window (a, b) counts the dots inside its clipped extent.
// Dots are (x, y) pixel coordinates, x = column; must lie in [0, W) x [0, H).
RedundantCountMap window_counts_from_dots(const std::vector<std::pair<double, double>>& dots,
                                          int image_h, int image_w, int r, int s);

// Redistribute each window count uniformly over its clipped pixels, then divide
// every pixel by its coverage.
NormalizedCountMap normalize_map(const RedundantCountMap& cr);

double image_count(const NormalizedCountMap& cn);

// Per-window contribution of the normalized sum: image_count(normalize_map(cr))
// == dot(cr.values, count_weights). Linear in cr, so this is also the exact
// gradient of the image count with respect to each window value.
std::vector<double> count_weights(int image_h, int image_w, int r, int s);

// Exports. Text format: one map row per line, space-separated "%.9g" decimals.
std::string count_map_to_text(const NormalizedCountMap& cn);
NormalizedCountMap count_map_from_text(const std::string& text);

} // namespace plantcount

#pragma once

#include <cstddef>
#include <vector>

#include "plantcount/common.hpp"

namespace plantcount {

// Dense 2D grid of feature vectors, row-major (i, j, c).
struct FeatureGrid {
    int height_p = 0;
    int width_p = 0;
    int channels = 0;
    std::vector<double> data;

    FeatureGrid() = default;
    FeatureGrid(int h, int w, int c)
        : height_p(h), width_p(w), channels(c), data(size_t(h) * w * c, 0.0) {
        if (h < 1 || w < 1 || c < 1) throw InvalidArgument("FeatureGrid: dimensions must be positive");
    }

    int cells() const { return height_p * width_p; }

    double& at(int i, int j, int c) { return data[(size_t(i) * width_p + j) * channels + c]; }
    double at(int i, int j, int c) const { return data[(size_t(i) * width_p + j) * channels + c]; }

    // Pointer to the channel vector of cell k (row-major cell index).
    double* cell(int k) { return data.data() + size_t(k) * channels; }
    const double* cell(int k) const { return data.data() + size_t(k) * channels; }
};

// Flattened grid: one feature vector per scan step.
struct FeatureSeq {
    int length = 0;
    int channels = 0;
    std::vector<double> data;

    FeatureSeq() = default;
    FeatureSeq(int len, int c) : length(len), channels(c), data(size_t(len) * c, 0.0) {}

    double* step(int t) { return data.data() + size_t(t) * channels; }
    const double* step(int t) const { return data.data() + size_t(t) * channels; }
};

} // namespace plantcount

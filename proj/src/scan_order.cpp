#include "plantcount/scan_order.hpp"

#include <cstring>
#include <sstream>

namespace plantcount {

const char* direction_name(ScanDirection d) {
    switch (d) {
        case ScanDirection::Horizontal: return "Horizontal";
        case ScanDirection::Vertical: return "Vertical";
        case ScanDirection::Diagonal: return "Diagonal";
        case ScanDirection::AntiDiagonal: return "AntiDiagonal";
    }
    return "?";
}

ScanDirection direction_from_name(const std::string& name) {
    if (name == "Horizontal" || name == "horizontal" || name == "H" || name == "h")
        return ScanDirection::Horizontal;
    if (name == "Vertical" || name == "vertical" || name == "V" || name == "v")
        return ScanDirection::Vertical;
    if (name == "Diagonal" || name == "diagonal" || name == "D" || name == "d")
        return ScanDirection::Diagonal;
    if (name == "AntiDiagonal" || name == "antidiagonal" || name == "A" || name == "a")
        return ScanDirection::AntiDiagonal;
    throw InvalidArgument("unknown scan direction: " + name);
}

ScanOrder build_order(ScanDirection direction, int height_p, int width_p) {
    if (height_p < 1 || width_p < 1)
        throw InvalidArgument("build_order: grid dimensions must be positive");

    const int n = height_p * width_p;
    ScanOrder order;
    order.direction = direction;
    order.height_p = height_p;
    order.width_p = width_p;
    order.forward.reserve(n);

    auto idx = [width_p](int i, int j) { return int32_t(i * width_p + j); };

    switch (direction) {
        case ScanDirection::Horizontal:
            for (int i = 0; i < height_p; ++i)
                for (int j = 0; j < width_p; ++j) order.forward.push_back(idx(i, j));
            break;
        case ScanDirection::Vertical:
            for (int j = 0; j < width_p; ++j)
                for (int i = 0; i < height_p; ++i) order.forward.push_back(idx(i, j));
            break;
        case ScanDirection::Diagonal:
            // Lines of constant j - i, ascending from -(h-1) to (w-1); ascending i inside a line.
            for (int d = -(height_p - 1); d <= width_p - 1; ++d)
                for (int i = 0; i < height_p; ++i) {
                    const int j = i + d;
                    if (j >= 0 && j < width_p) order.forward.push_back(idx(i, j));
                }
            break;
        case ScanDirection::AntiDiagonal:
            // Lines of constant i + j, ascending; ascending i inside a line.
            for (int s = 0; s <= height_p + width_p - 2; ++s)
                for (int i = 0; i < height_p; ++i) {
                    const int j = s - i;
                    if (j >= 0 && j < width_p) order.forward.push_back(idx(i, j));
                }
            break;
    }

    order.inverse.assign(n, 0);
    for (int k = 0; k < n; ++k) order.inverse[order.forward[k]] = int32_t(k);
    return order;
}

FeatureSeq apply_order(const FeatureGrid& grid, const ScanOrder& order) {
    if (grid.height_p != order.height_p || grid.width_p != order.width_p)
        throw InvalidArgument("apply_order: grid dimensions do not match order");

    const int n = order.cells();
    const int c = grid.channels;
    FeatureSeq seq(n, c);
    for (int k = 0; k < n; ++k)
        std::memcpy(seq.step(k), grid.cell(order.forward[k]), sizeof(double) * c);
    return seq;
}

FeatureGrid restore_grid(const FeatureSeq& seq, const ScanOrder& order) {
    if (seq.length != order.cells())
        throw InvalidArgument("restore_grid: sequence length does not match order");

    FeatureGrid grid(order.height_p, order.width_p, seq.channels);
    for (int k = 0; k < seq.length; ++k)
        std::memcpy(grid.cell(order.forward[k]), seq.step(k), sizeof(double) * seq.channels);
    return grid;
}

std::string order_to_csv(const ScanOrder& order) {
    std::ostringstream out;
    out << "k,row,col\n";
    for (int k = 0; k < order.cells(); ++k) {
        const int cell = order.forward[k];
        out << k << ',' << cell / order.width_p << ',' << cell % order.width_p << '\n';
    }
    return out.str();
}

} // namespace plantcount

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plantcount/grid.hpp"

namespace plantcount {

enum class ScanDirection { Horizontal, Vertical, Diagonal, AntiDiagonal };

const char* direction_name(ScanDirection d);
ScanDirection direction_from_name(const std::string& name); // accepts long names and H/V/D/A

// Total ordering of the cells of a height_p x width_p grid. `forward[k]` is the
// row-major index of the cell visited at step k; `inverse` undoes it.
// Immutable after construction.
struct ScanOrder {
    ScanDirection direction = ScanDirection::Horizontal;
    int height_p = 0;
    int width_p = 0;
    std::vector<int32_t> forward;
    std::vector<int32_t> inverse;

    int cells() const { return height_p * width_p; }
};

ScanOrder build_order(ScanDirection direction, int height_p, int width_p);

// Sequence position k receives the features of cell forward[k].
FeatureSeq apply_order(const FeatureGrid& grid, const ScanOrder& order);

// Inverse scatter: restore_grid(apply_order(g, o), o) == g.
FeatureGrid restore_grid(const FeatureSeq& seq, const ScanOrder& order);

// Debug export: one "k,row,col" line per step, with a header.
std::string order_to_csv(const ScanOrder& order);

} // namespace plantcount

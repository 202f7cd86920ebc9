#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "plantcount/scan_order.hpp"

using namespace plantcount;

namespace {

const ScanDirection kAllDirections[] = {ScanDirection::Horizontal, ScanDirection::Vertical,
                                        ScanDirection::Diagonal, ScanDirection::AntiDiagonal};

FeatureGrid index_grid(int h, int w) {
    FeatureGrid g(h, w, 1);
    for (int k = 0; k < h * w; ++k) g.data[k] = double(k);
    return g;
}

} // namespace

TEST_SUITE("scan_order") {

TEST_CASE("fixed enumerations on a 2x3 grid") {
    CHECK(build_order(ScanDirection::Horizontal, 2, 3).forward ==
          std::vector<int32_t>{0, 1, 2, 3, 4, 5});
    CHECK(build_order(ScanDirection::Vertical, 2, 3).forward ==
          std::vector<int32_t>{0, 3, 1, 4, 2, 5});
    CHECK(build_order(ScanDirection::Diagonal, 2, 3).forward ==
          std::vector<int32_t>{3, 0, 4, 1, 5, 2});
    CHECK(build_order(ScanDirection::AntiDiagonal, 2, 3).forward ==
          std::vector<int32_t>{0, 1, 3, 2, 4, 5});
}

TEST_CASE("invalid dimensions are rejected") {
    CHECK_THROWS_AS(build_order(ScanDirection::Horizontal, 0, 3), InvalidArgument);
    CHECK_THROWS_AS(build_order(ScanDirection::Diagonal, 2, -1), InvalidArgument);
}

TEST_CASE("permutation and inverse properties, exhaustive up to 8x8") {
    for (ScanDirection dir : kAllDirections)
        for (int h = 1; h <= 8; ++h)
            for (int w = 1; w <= 8; ++w) {
                const ScanOrder order = build_order(dir, h, w);
                std::vector<int32_t> sorted = order.forward;
                std::sort(sorted.begin(), sorted.end());
                std::vector<int32_t> expect(size_t(h) * w);
                std::iota(expect.begin(), expect.end(), 0);
                REQUIRE(sorted == expect);
                for (int k = 0; k < h * w; ++k) REQUIRE(order.inverse[order.forward[k]] == k);
            }
}

TEST_CASE("apply_order on 2x2 index grids") {
    const FeatureGrid g = index_grid(2, 2);
    CHECK(apply_order(g, build_order(ScanDirection::Horizontal, 2, 2)).data ==
          std::vector<double>{0, 1, 2, 3});
    CHECK(apply_order(g, build_order(ScanDirection::Vertical, 2, 2)).data ==
          std::vector<double>{0, 2, 1, 3});
}

TEST_CASE("restore_grid inverts apply_order exactly") {
    // the vertical 2x3 sequence scatters back to the index grid
    FeatureSeq seq(6, 1);
    seq.data = {0, 3, 1, 4, 2, 5};
    const FeatureGrid g = restore_grid(seq, build_order(ScanDirection::Vertical, 2, 3));
    CHECK(g.data == std::vector<double>{0, 1, 2, 3, 4, 5});

    for (ScanDirection dir : kAllDirections) {
        const FeatureGrid src = index_grid(3, 5);
        const ScanOrder order = build_order(dir, 3, 5);
        CHECK(restore_grid(apply_order(src, order), order).data == src.data);
    }
}

TEST_CASE("round trip on random grids, all dims up to 6") {
    Rng rng(42);
    for (ScanDirection dir : kAllDirections)
        for (int h = 1; h <= 6; ++h)
            for (int w = 1; w <= 6; ++w) {
                FeatureGrid g(h, w, 3);
                for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
                const ScanOrder order = build_order(dir, h, w);
                const FeatureGrid back = restore_grid(apply_order(g, order), order);
                REQUIRE(back.data == g.data);
            }
}

TEST_CASE("transpose duality of vertical and horizontal") {
    for (int h = 1; h <= 8; ++h)
        for (int w = 1; w <= 8; ++w) {
            const ScanOrder vert = build_order(ScanDirection::Vertical, h, w);
            const ScanOrder horiz_t = build_order(ScanDirection::Horizontal, w, h);
            for (int k = 0; k < h * w; ++k) {
                const int cell = vert.forward[k];
                const int i = cell / w, j = cell % w;
                const int cell_t = horiz_t.forward[k];
                REQUIRE(cell_t / h == j);
                REQUIRE(cell_t % h == i);
            }
        }
}

TEST_CASE("backward orientation is plain reversal") {
    const ScanOrder order = build_order(ScanDirection::Diagonal, 4, 5);
    std::vector<int32_t> rev(order.forward.rbegin(), order.forward.rend());
    std::vector<int32_t> rev2(rev.rbegin(), rev.rend());
    CHECK(rev2 == order.forward);
}

TEST_CASE("shape mismatches are rejected") {
    const FeatureGrid g = index_grid(2, 3);
    CHECK_THROWS_AS(apply_order(g, build_order(ScanDirection::Horizontal, 3, 2)), InvalidArgument);
    FeatureSeq short_seq(5, 1);
    CHECK_THROWS_AS(restore_grid(short_seq, build_order(ScanDirection::Horizontal, 2, 3)),
                    InvalidArgument);
}

TEST_CASE("csv export lists k,row,col") {
    const std::string csv = order_to_csv(build_order(ScanDirection::Vertical, 2, 2));
    CHECK(csv == "k,row,col\n0,0,0\n1,1,0\n2,0,1\n3,1,1\n");
}

} // TEST_SUITE

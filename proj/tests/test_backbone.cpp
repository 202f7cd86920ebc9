#include <doctest.h>

#include <cmath>

#include "plantcount/backbone.hpp"

using namespace plantcount;

namespace {

ad::Tensor random_grid(int cells, int channels, Rng& rng) {
    ad::Tensor t({cells, channels});
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

std::vector<ad::Param*> block_param_list(BlockParams& b) {
    std::vector<ad::Param*> out;
    collect_params(b, out);
    return out;
}

ScanParamVars lease_frozen(ad::Tape& t, SsmParamSet& s) {
    ScanParamVars v;
    v.a_log = t.leaf(s.a_log.value, false);
    v.d_skip = t.leaf(s.d_skip.value, false);
    v.w_delta = t.leaf(s.w_delta.value, false);
    v.b_delta = t.leaf(s.b_delta.value, false);
    v.w_b = t.leaf(s.w_b.value, false);
    v.b_b = t.leaf(s.b_b.value, false);
    v.w_c = t.leaf(s.w_c.value, false);
    v.b_c = t.leaf(s.b_c.value, false);
    return v;
}

} // namespace

TEST_SUITE("backbone") {

TEST_CASE("block preserves the grid shape") {
    Rng rng(1);
    BlockParams block = init_block(5, 2, 3, 4, {ScanDirection::Diagonal}, true, rng);
    ad::Tape tape;
    const ad::VarId x = tape.leaf(random_grid(4 * 6, 5, rng), false);
    const ad::VarId y = directional_block_forward(tape, x, {4, 6}, block);
    CHECK(tape.val(y).rows() == 24);
    CHECK(tape.val(y).cols() == 5);
}

TEST_CASE("zeroed output projection makes the block an identity map") {
    Rng rng(2);
    BlockParams block = init_block(4, 2, 2, 4, {ScanDirection::AntiDiagonal}, true, rng);
    std::fill(block.out_w.value.data.begin(), block.out_w.value.data.end(), 0.0);
    ad::Tape tape;
    const ad::Tensor grid = random_grid(3 * 5, 4, rng);
    const ad::VarId x = tape.leaf(grid, false);
    const ad::VarId y = directional_block_forward(tape, x, {3, 5}, block);
    for (size_t i = 0; i < grid.data.size(); ++i)
        REQUIRE(tape.val(y).data[i] == grid.data[i]);
}

TEST_CASE("vertical block equals horizontal block on the transposed grid") {
    Rng rng(3);
    const int h = 3, w = 5, c = 4;
    BlockParams vert = init_block(c, 2, 2, 4, {ScanDirection::Vertical}, true, rng);
    Rng rng2(3);
    BlockParams horiz = init_block(c, 2, 2, 4, {ScanDirection::Horizontal}, true, rng2);
    // identical weights (same init stream), only the scan direction differs
    ad::Tensor grid = random_grid(h * w, c, rng);
    ad::Tensor grid_t({w * h, c});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k)
                grid_t.data[(size_t(j) * h + i) * c + k] = grid.data[(size_t(i) * w + j) * c + k];

    ad::Tape tape;
    const ad::VarId yv = directional_block_forward(tape, tape.leaf(grid, false), {h, w}, vert);
    const ad::VarId yh = directional_block_forward(tape, tape.leaf(grid_t, false), {w, h}, horiz);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k)
                REQUIRE(tape.val(yv).data[(size_t(i) * w + j) * c + k] ==
                        doctest::Approx(tape.val(yh).data[(size_t(j) * h + i) * c + k])
                            .epsilon(1e-12));
}

TEST_CASE("block matches a step-by-step trace of its pieces") {
    Rng rng(4);
    BlockParams block = init_block(2, 2, 1, 2, {ScanDirection::Horizontal}, true, rng);
    const ad::Tensor grid = random_grid(4, 2, rng);

    ad::Tape tape;
    const ad::VarId y = directional_block_forward(tape, tape.leaf(grid, false), {2, 2}, block);

    // same pipeline spelled out op by op (horizontal order on 2x2 is the identity)
    ad::Tape t2;
    const ad::VarId x2 = t2.leaf(grid, false);
    const ad::VarId xn = t2.layer_norm(x2, t2.leaf(block.ln_gamma.value, false),
                                       t2.leaf(block.ln_beta.value, false));
    const ad::VarId u = t2.linear(xn, t2.leaf(block.in_w.value, false), ad::kNoVar);
    const ad::VarId seq =
        t2.silu(t2.dw_conv1d_causal(u, t2.leaf(block.paths[0].conv_w.value, false),
                                    t2.leaf(block.paths[0].conv_b.value, false)));
    const ScanParamVars fv = lease_frozen(t2, block.paths[0].fwd);
    const ScanParamVars bv = lease_frozen(t2, block.paths[0].bwd);
    const ad::VarId fwd = selective_scan_op(t2, seq, fv, 1, true);
    const ad::VarId rev = t2.gather_rows(seq, {3, 2, 1, 0});
    const ad::VarId bwd = t2.gather_rows(selective_scan_op(t2, rev, bv, 1, true), {3, 2, 1, 0});
    const ad::VarId s2 =
        t2.linear(t2.add(fwd, bwd), t2.leaf(block.ssm_out_w.value, false), ad::kNoVar);
    const ad::VarId z = t2.silu(t2.linear(xn, t2.leaf(block.gate_w.value, false), ad::kNoVar));
    const ad::VarId out =
        t2.add(x2, t2.linear(t2.mul(z, s2), t2.leaf(block.out_w.value, false), ad::kNoVar));

    for (size_t i = 0; i < grid.data.size(); ++i)
        REQUIRE(tape.val(y).data[i] == doctest::Approx(t2.val(out).data[i]).epsilon(1e-13));
}

TEST_CASE("downsample halves the grid and doubles the channels") {
    Rng rng(5);
    DownsampleParams merge = init_downsample(3, rng);
    ad::Tape tape;
    const ad::VarId x = tape.leaf(random_grid(4 * 6, 3, rng), false);
    const ad::VarId y = downsample_forward(tape, x, {4, 6}, merge);
    CHECK(tape.val(y).rows() == 2 * 3);
    CHECK(tape.val(y).cols() == 6);
    const ad::VarId odd = tape.leaf(random_grid(3 * 8, 3, rng), false);
    CHECK_THROWS_AS(downsample_forward(tape, odd, {3, 8}, merge), InvalidArgument);
}

TEST_CASE("downsample of a zero grid is zero") {
    Rng rng(6);
    DownsampleParams merge = init_downsample(2, rng);
    ad::Tape tape;
    const ad::VarId x = tape.leaf(ad::Tensor({4, 2}), false);
    const ad::VarId y = downsample_forward(tape, x, {2, 2}, merge);
    for (double v : tape.val(y).data) REQUIRE(v == 0.0);
}

TEST_CASE("downsample hand trace on a 2x2 single-channel grid") {
    Rng rng(7);
    DownsampleParams merge = init_downsample(1, rng);
    merge.w.value = ad::Tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    ad::Tape tape;
    const ad::VarId x = tape.leaf(ad::Tensor({4, 1}, {1, 2, 3, 4}), false);
    const ad::VarId y = downsample_forward(tape, x, {2, 2}, merge);
    const double mean = 2.5, var = 1.25;
    const double istd = 1.0 / std::sqrt(var + 1e-5);
    CHECK(tape.val(y).data[0] == doctest::Approx((1 - mean) * istd).epsilon(1e-9));
    CHECK(tape.val(y).data[1] == doctest::Approx((2 - mean) * istd).epsilon(1e-9));
}

TEST_CASE("patch embedding shapes and hand evaluation") {
    Rng rng(8);
    PatchEmbedParams embed = init_patch_embed(2, 5, rng);
    CHECK_THROWS_AS(extract_patches(FeatureGrid(7, 6, 3), 2), InvalidArgument);

    FeatureGrid image(8, 6, 3);
    for (double& v : image.data) v = 0.25;
    embed.w.value = ad::Tensor({5, 12}, std::vector<double>(60, 1.0));
    embed.b.value = ad::Tensor({5});
    ad::Tape tape;
    const ad::VarId y = patch_embed_forward(tape, extract_patches(image, 2), embed);
    CHECK(tape.val(y).rows() == 4 * 3);
    CHECK(tape.val(y).cols() == 5);
    for (double v : tape.val(y).data) REQUIRE(v == doctest::Approx(12 * 0.25).epsilon(1e-12));
}

TEST_CASE("zero image with zero bias embeds to zero") {
    Rng rng(9);
    PatchEmbedParams embed = init_patch_embed(2, 4, rng);
    FeatureGrid image(4, 4, 3);
    ad::Tape tape;
    const ad::VarId y = patch_embed_forward(tape, extract_patches(image, 2), embed);
    for (double v : tape.val(y).data) REQUIRE(v == 0.0);
}

TEST_CASE("branch applies two merges from an embedded grid") {
    Rng rng(10);
    BranchParams branch;
    branch.stages.resize(3);
    branch.stages[0].push_back(init_block(2, 2, 1, 2, {ScanDirection::Horizontal}, true, rng));
    branch.merges.push_back(init_downsample(2, rng));
    branch.merges.push_back(init_downsample(4, rng));
    ad::Tape tape;
    GridShape shape{8, 8};
    const ad::VarId x = tape.leaf(random_grid(64, 2, rng), false);
    const ad::VarId y = branch_forward(tape, x, shape, branch);
    CHECK(shape.height_p == 2);
    CHECK(shape.width_p == 2);
    CHECK(tape.val(y).rows() == 4);
    CHECK(tape.val(y).cols() == 8);
}

TEST_CASE("block gradients match finite differences") {
    Rng rng(11);
    BlockParams block = init_block(2, 2, 1, 3, {ScanDirection::Vertical}, true, rng);
    const ad::Tensor grid = random_grid(3 * 3, 2, rng);
    std::vector<double> mix(grid.data.size());
    for (size_t i = 0; i < mix.size(); ++i) mix[i] = std::cos(0.3 * double(i + 1));

    auto eval = [&]() {
        ad::Tape tape;
        const ad::VarId y = directional_block_forward(tape, tape.leaf(grid, false), {3, 3}, block);
        return tape.val(tape.dot_const(y, mix)).data[0];
    };

    ad::Tape tape;
    for (ad::Param* p : block_param_list(block)) p->zero_grad();
    const ad::VarId y = directional_block_forward(tape, tape.leaf(grid, false), {3, 3}, block);
    tape.backward(tape.dot_const(y, mix));

    const double h = 1e-5;
    for (ad::Param* p : block_param_list(block)) {
        for (size_t j = 0; j < p->value.data.size(); ++j) {
            const double keep = p->value.data[j];
            p->value.data[j] = keep + h;
            const double fp = eval();
            p->value.data[j] = keep - h;
            const double fm = eval();
            p->value.data[j] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double got = p->grad.data[j];
            const double denom = std::max({std::abs(fd), std::abs(got), 1e-2});
            REQUIRE(std::abs(fd - got) / denom < 1e-5);
        }
    }
}

} // TEST_SUITE

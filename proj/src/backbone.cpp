#include "plantcount/backbone.hpp"

#include <cmath>

namespace plantcount {

namespace {

ad::Tensor uniform_tensor(std::vector<int> shape, double bound, Rng& rng) {
    ad::Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

ad::Param make_param(std::string name, ad::Tensor value) {
    ad::Param p;
    p.name = std::move(name);
    p.value = std::move(value);
    return p;
}

SsmParamSet init_ssm_set(int channels, int state_dim, bool use_skip, Rng& rng) {
    SSMParams ref = init_ssm_params(channels, state_dim, rng, use_skip);
    SsmParamSet s;
    s.a_log = make_param("ssm.a_log", ad::Tensor({channels, state_dim}, std::move(ref.a_log)));
    if (!use_skip) ref.d_skip.clear();
    const int skip_len = int(ref.d_skip.size());
    s.d_skip = make_param("ssm.d_skip", ad::Tensor({skip_len}, std::move(ref.d_skip)));
    s.w_delta = make_param("ssm.w_delta", ad::Tensor({channels}, std::move(ref.w_delta)));
    s.b_delta = make_param("ssm.b_delta", ad::Tensor({1}, {ref.b_delta}));
    s.w_b = make_param("ssm.w_b", ad::Tensor({state_dim, channels}, std::move(ref.w_b)));
    s.b_b = make_param("ssm.b_b", ad::Tensor({state_dim}, std::move(ref.b_b)));
    s.w_c = make_param("ssm.w_c", ad::Tensor({state_dim, channels}, std::move(ref.w_c)));
    s.b_c = make_param("ssm.b_c", ad::Tensor({state_dim}, std::move(ref.b_c)));
    return s;
}

ScanParamVars lease_ssm(ad::Tape& tape, SsmParamSet& s, bool use_skip) {
    auto lease = [&](ad::Param& p) { return tape.param(p); };
    ScanParamVars v;
    v.a_log = lease(s.a_log);
    if (use_skip) v.d_skip = lease(s.d_skip);
    v.w_delta = lease(s.w_delta);
    v.b_delta = lease(s.b_delta);
    v.w_b = lease(s.w_b);
    v.b_b = lease(s.b_b);
    v.w_c = lease(s.w_c);
    v.b_c = lease(s.b_c);
    return v;
}

std::vector<int32_t> reversed_indices(int n) {
    std::vector<int32_t> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = int32_t(n - 1 - i);
    return idx;
}

} // namespace

BlockParams init_block(int channels, int expand, int state_dim, int k_conv,
                       const std::vector<ScanDirection>& directions, bool use_skip, Rng& rng) {
    if (directions.empty()) throw InvalidArgument("init_block: no scan directions");
    BlockParams b;
    b.channels = channels;
    b.hidden = channels * expand;
    b.state_dim = state_dim;
    b.k_conv = k_conv;
    b.use_skip = use_skip;

    const double lin_in = 1.0 / std::sqrt(double(channels));
    const double lin_hidden = 1.0 / std::sqrt(double(b.hidden));
    b.ln_gamma = make_param("ln.gamma", ad::Tensor({channels}, std::vector<double>(channels, 1.0)));
    b.ln_beta = make_param("ln.beta", ad::Tensor({channels}));
    b.in_w = make_param("in_proj.w", uniform_tensor({b.hidden, channels}, lin_in, rng));
    b.gate_w = make_param("gate.w", uniform_tensor({b.hidden, channels}, lin_in, rng));
    b.ssm_out_w = make_param("ssm_out.w", uniform_tensor({b.hidden, b.hidden}, lin_hidden, rng));
    b.out_w = make_param("out_proj.w", uniform_tensor({channels, b.hidden}, lin_hidden, rng));

    const double conv_bound = 1.0 / std::sqrt(double(k_conv));
    for (ScanDirection dir : directions) {
        DirPathParams path;
        path.direction = dir;
        path.conv_w = make_param("conv.w", uniform_tensor({b.hidden, k_conv}, conv_bound, rng));
        path.conv_b = make_param("conv.b", ad::Tensor({b.hidden}));
        path.fwd = init_ssm_set(b.hidden, state_dim, use_skip, rng);
        path.bwd = init_ssm_set(b.hidden, state_dim, use_skip, rng);
        b.paths.push_back(std::move(path));
    }
    return b;
}

DownsampleParams init_downsample(int in_channels, Rng& rng) {
    DownsampleParams d;
    d.in_channels = in_channels;
    const int cat = 4 * in_channels;
    d.ln_gamma = make_param("merge.ln.gamma", ad::Tensor({cat}, std::vector<double>(cat, 1.0)));
    d.ln_beta = make_param("merge.ln.beta", ad::Tensor({cat}));
    d.w = make_param("merge.w", uniform_tensor({2 * in_channels, cat}, 1.0 / std::sqrt(double(cat)), rng));
    return d;
}

PatchEmbedParams init_patch_embed(int patch, int out_channels, Rng& rng) {
    PatchEmbedParams p;
    p.in_dim = patch * patch * 3;
    p.out_channels = out_channels;
    p.w = make_param("embed.w", uniform_tensor({out_channels, p.in_dim}, 1.0 / std::sqrt(double(p.in_dim)), rng));
    p.b = make_param("embed.b", ad::Tensor({out_channels}));
    return p;
}

ad::Tensor extract_patches(const FeatureGrid& image, int patch) {
    if (image.channels != 3) throw InvalidArgument("extract_patches: image must have 3 channels");
    if (image.height_p % patch != 0 || image.width_p % patch != 0)
        throw InvalidArgument("extract_patches: image dims must be divisible by patch size");
    const int gh = image.height_p / patch, gw = image.width_p / patch;
    const int pd = patch * patch * 3;
    ad::Tensor out({gh * gw, pd});
    for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
            double* row = out.data.data() + (size_t(i) * gw + j) * pd;
            int k = 0;
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                    for (int c = 0; c < 3; ++c)
                        row[k++] = image.at(i * patch + dy, j * patch + dx, c);
        }
    return out;
}

ad::VarId patch_embed_forward(ad::Tape& tape, const ad::Tensor& patches, PatchEmbedParams& p) {
    ad::VarId x = tape.leaf(patches, false);
    return tape.linear(x, tape.param(p.w), tape.param(p.b));
}

ad::VarId directional_block_forward(ad::Tape& tape, ad::VarId x, const GridShape& shape,
                                    BlockParams& block) {
    const ad::Tensor& vx = tape.val(x);
    if (vx.rows() != shape.height_p * shape.width_p || vx.cols() != block.channels)
        throw InvalidArgument("directional_block: grid shape mismatch");

    const ad::VarId xn = tape.layer_norm(x, tape.param(block.ln_gamma), tape.param(block.ln_beta));
    const ad::VarId u = tape.linear(xn, tape.param(block.in_w), ad::kNoVar);
    const int n = shape.height_p * shape.width_p;

    ad::VarId path_sum = ad::kNoVar;
    for (DirPathParams& path : block.paths) {
        const ScanOrder order = build_order(path.direction, shape.height_p, shape.width_p);
        ad::VarId seq = tape.gather_rows(u, {order.forward.begin(), order.forward.end()});
        seq = tape.silu(tape.dw_conv1d_causal(seq, tape.param(path.conv_w), tape.param(path.conv_b)));

        const bool use_skip = block.use_skip;
        const ScanParamVars fwd = lease_ssm(tape, path.fwd, use_skip);
        const ScanParamVars bwd = lease_ssm(tape, path.bwd, use_skip);

        ad::VarId s_fwd = selective_scan_op(tape, seq, fwd, block.state_dim, use_skip);
        ad::VarId rev = tape.gather_rows(seq, reversed_indices(n));
        ad::VarId s_bwd = selective_scan_op(tape, rev, bwd, block.state_dim, use_skip);
        s_bwd = tape.gather_rows(s_bwd, reversed_indices(n));
        ad::VarId s = tape.add(s_fwd, s_bwd);

        ad::VarId restored = tape.gather_rows(s, {order.inverse.begin(), order.inverse.end()});
        path_sum = path_sum == ad::kNoVar ? restored : tape.add(path_sum, restored);
    }

    const ad::VarId s2 = tape.linear(path_sum, tape.param(block.ssm_out_w), ad::kNoVar);
    const ad::VarId z = tape.silu(tape.linear(xn, tape.param(block.gate_w), ad::kNoVar));
    const ad::VarId gated = tape.mul(z, s2);
    return tape.add(x, tape.linear(gated, tape.param(block.out_w), ad::kNoVar));
}

ad::VarId downsample_forward(ad::Tape& tape, ad::VarId x, const GridShape& shape,
                             DownsampleParams& p) {
    if (shape.height_p % 2 != 0 || shape.width_p % 2 != 0)
        throw InvalidArgument("downsample: grid dims must be even");
    const int oh = shape.height_p / 2, ow = shape.width_p / 2;
    std::vector<int32_t> corners[4];
    for (auto& c : corners) c.resize(size_t(oh) * ow);
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
            const size_t k = size_t(i) * ow + j;
            corners[0][k] = int32_t((2 * i) * shape.width_p + 2 * j);
            corners[1][k] = int32_t((2 * i) * shape.width_p + 2 * j + 1);
            corners[2][k] = int32_t((2 * i + 1) * shape.width_p + 2 * j);
            corners[3][k] = int32_t((2 * i + 1) * shape.width_p + 2 * j + 1);
        }
    const ad::VarId cat = tape.concat_cols({tape.gather_rows(x, corners[0]),
                                            tape.gather_rows(x, corners[1]),
                                            tape.gather_rows(x, corners[2]),
                                            tape.gather_rows(x, corners[3])});
    const ad::VarId normed = tape.layer_norm(cat, tape.param(p.ln_gamma), tape.param(p.ln_beta));
    return tape.linear(normed, tape.param(p.w), ad::kNoVar);
}

ad::VarId branch_forward(ad::Tape& tape, ad::VarId x, GridShape& shape, BranchParams& branch) {
    for (size_t stage = 0; stage < branch.stages.size(); ++stage) {
        for (BlockParams& block : branch.stages[stage])
            x = directional_block_forward(tape, x, shape, block);
        if (stage + 1 < branch.stages.size()) {
            x = downsample_forward(tape, x, shape, branch.merges[stage]);
            shape.height_p /= 2;
            shape.width_p /= 2;
        }
    }
    return x;
}

void collect_params(SsmParamSet& s, std::vector<ad::Param*>& out) {
    out.push_back(&s.a_log);
    if (s.d_skip.value.numel() > 0) out.push_back(&s.d_skip);
    out.push_back(&s.w_delta);
    out.push_back(&s.b_delta);
    out.push_back(&s.w_b);
    out.push_back(&s.b_b);
    out.push_back(&s.w_c);
    out.push_back(&s.b_c);
}

void collect_params(BlockParams& b, std::vector<ad::Param*>& out) {
    out.push_back(&b.ln_gamma);
    out.push_back(&b.ln_beta);
    out.push_back(&b.in_w);
    out.push_back(&b.gate_w);
    out.push_back(&b.ssm_out_w);
    out.push_back(&b.out_w);
    for (DirPathParams& p : b.paths) {
        out.push_back(&p.conv_w);
        out.push_back(&p.conv_b);
        collect_params(p.fwd, out);
        collect_params(p.bwd, out);
    }
}

void collect_params(DownsampleParams& d, std::vector<ad::Param*>& out) {
    out.push_back(&d.ln_gamma);
    out.push_back(&d.ln_beta);
    out.push_back(&d.w);
}

void collect_params(PatchEmbedParams& p, std::vector<ad::Param*>& out) {
    out.push_back(&p.w);
    out.push_back(&p.b);
}

void collect_params(BranchParams& b, std::vector<ad::Param*>& out) {
    for (auto& stage : b.stages)
        for (BlockParams& block : stage) collect_params(block, out);
    for (DownsampleParams& m : b.merges) collect_params(m, out);
}

} // namespace plantcount

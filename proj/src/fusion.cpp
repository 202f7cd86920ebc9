#include "plantcount/fusion.hpp"

#include <cmath>

namespace plantcount {

FusionParams init_fusion(int num_experts, int channels) {
    FusionParams f;
    f.num_experts = num_experts;
    f.w.name = "fusion.w";
    f.w.value = ad::Tensor({num_experts, num_experts * channels});
    return f;
}

FusionResult fuse_experts(ad::Tape& tape, const std::vector<ad::VarId>& branch_feats,
                          FusionParams& params, FusionMode mode, bool adaptive) {
    const int k = int(branch_feats.size());
    if (k != params.num_experts) throw InvalidArgument("fuse_experts: expert count mismatch");
    const int m = tape.val(branch_feats[0]).rows();

    FusionResult out;
    if (k == 1) {
        out.fused = branch_feats[0];
        out.weights = tape.leaf(ad::Tensor({m, 1}, std::vector<double>(m, 1.0)), false);
        return out;
    }

    if (!adaptive) {
        ad::Tensor uniform({m, k});
        for (double& v : uniform.data) v = 1.0 / k;
        out.weights = tape.leaf(std::move(uniform), false);
        out.fused = tape.convex_blend(branch_feats, out.weights);
        return out;
    }

    ad::VarId cat = tape.concat_cols(branch_feats);
    if (mode == FusionMode::Pooled) {
        ad::VarId pooled = tape.mean_rows(cat);
        ad::VarId logits = tape.linear(pooled, tape.param(params.w), ad::kNoVar);
        out.weights = tape.broadcast_rows(tape.softmax_rows(logits), m);
    } else {
        ad::VarId logits = tape.linear(cat, tape.param(params.w), ad::kNoVar);
        out.weights = tape.softmax_rows(logits);
    }
    out.fused = tape.convex_blend(branch_feats, out.weights);
    return out;
}

std::vector<double> mean_fusion_weights(const ad::Tape& tape, ad::VarId weights) {
    const ad::Tensor& w = tape.val(weights);
    const int m = w.rows(), k = w.cols();
    std::vector<double> mean(k, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) mean[j] += w.data[size_t(i) * k + j];
    for (double& v : mean) v /= m;
    return mean;
}

CnnBranchParams init_cnn_branch(const std::vector<int>& channels, Rng& rng) {
    CnnBranchParams cnn;
    int in = 3;
    for (int out_c : channels) {
        CnnStageParams s;
        s.in_channels = in;
        s.out_channels = out_c;
        const double bound = 1.0 / std::sqrt(double(9 * in));
        s.conv_w.name = "cnn.conv.w";
        s.conv_w.value = ad::Tensor({out_c, 9 * in});
        for (double& v : s.conv_w.value.data) v = rng.uniform(-bound, bound);
        s.bn_gamma.name = "cnn.bn.gamma";
        s.bn_gamma.value = ad::Tensor({out_c}, std::vector<double>(out_c, 1.0));
        s.bn_beta.name = "cnn.bn.beta";
        s.bn_beta.value = ad::Tensor({out_c});
        cnn.stages.push_back(std::move(s));
        in = out_c;
    }
    return cnn;
}

ad::VarId cnn_branch_forward(ad::Tape& tape, ad::VarId image, int h, int w,
                             CnnBranchParams& params) {
    const int total_pool = 1 << int(params.stages.size());
    if (h % total_pool != 0 || w % total_pool != 0)
        throw InvalidArgument("cnn_branch: image dims not divisible by the pooling factor");
    ad::VarId x = image;
    ad::VarId zero_bias = ad::kNoVar;
    for (CnnStageParams& s : params.stages) {
        zero_bias = tape.leaf(ad::Tensor({s.out_channels}), false);
        x = tape.conv2d_3x3(x, h, w, tape.param(s.conv_w), zero_bias);
        x = tape.batch_norm_train(x, tape.param(s.bn_gamma), tape.param(s.bn_beta),
                                  params.bn_eps, nullptr, nullptr);
        x = tape.silu(x);
        x = tape.maxpool2x2(x, h, w);
        h /= 2;
        w /= 2;
    }
    return x;
}

void collect_params(FusionParams& f, std::vector<ad::Param*>& out) { out.push_back(&f.w); }

void collect_params(CnnBranchParams& c, std::vector<ad::Param*>& out) {
    for (CnnStageParams& s : c.stages) {
        out.push_back(&s.conv_w);
        out.push_back(&s.bn_gamma);
        out.push_back(&s.bn_beta);
    }
}

} // namespace plantcount

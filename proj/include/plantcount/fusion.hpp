#pragma once

#include <vector>

#include "plantcount/autograd.hpp"
#include "plantcount/backbone.hpp"

namespace plantcount {

enum class FusionMode { PositionWise, Pooled };

// Softmax weighting of the expert branch outputs. W maps the concatenated
// branch features to one logit per branch; zero-initialized so fusion starts
// uniform. In Pooled mode features are mean-pooled before the linear map and
// one weight vector applies to the whole image.
struct FusionParams {
    int num_experts = 0;
    ad::Param w;  // [num_experts, num_experts * channels]
};

FusionParams init_fusion(int num_experts, int channels);

struct FusionResult {
    ad::VarId fused = ad::kNoVar;    // convex combination of the branch grids
    ad::VarId weights = ad::kNoVar;  // [M, num_experts] (broadcast rows in Pooled mode)
};

// adaptive = false fixes uniform weights (plain mean of the branches).
FusionResult fuse_experts(ad::Tape& tape, const std::vector<ad::VarId>& branch_feats,
                          FusionParams& params, FusionMode mode, bool adaptive);

// Mean weight per expert over positions; for the fusion-weight CSV dump.
std::vector<double> mean_fusion_weights(const ad::Tape& tape, ad::VarId weights);

// Local CNN branch: stages of [3x3 conv, batch norm, SiLU, 2x2 max pool].
// Convolutions are bias-free; batch norm provides the shift. The trainer runs
// one image at a time, so batch statistics are per-image statistics; inference
// uses the same semantics, which keeps the trained function and the deployed
// function identical.
struct CnnStageParams {
    int in_channels = 0;
    int out_channels = 0;
    ad::Param conv_w;  // [out, 9*in]
    ad::Param bn_gamma, bn_beta;
};

struct CnnBranchParams {
    std::vector<CnnStageParams> stages;
    double bn_eps = 1e-5;
};

CnnBranchParams init_cnn_branch(const std::vector<int>& channels, Rng& rng);

// Input: image rows [H*W, 3]; output [H/8 * W/8, C_f].
ad::VarId cnn_branch_forward(ad::Tape& tape, ad::VarId image, int h, int w,
                             CnnBranchParams& params);

void collect_params(FusionParams& f, std::vector<ad::Param*>& out);
void collect_params(CnnBranchParams& c, std::vector<ad::Param*>& out);

} // namespace plantcount

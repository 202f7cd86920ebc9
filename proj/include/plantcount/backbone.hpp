#pragma once

#include <vector>

#include "plantcount/autograd.hpp"
#include "plantcount/scan_order.hpp"
#include "plantcount/ssm.hpp"

namespace plantcount {

// One selective-scan parameter set as trainable tensors.
struct SsmParamSet {
    ad::Param a_log;    // [channels, N]
    ad::Param d_skip;   // [channels]
    ad::Param w_delta;  // [channels]
    ad::Param b_delta;  // [1]
    ad::Param w_b;      // [N, channels]
    ad::Param b_b;      // [N]
    ad::Param w_c;      // [N, channels]
    ad::Param b_c;      // [N]
};

// Per-direction path inside a block: depthwise causal conv + forward/backward scans.
struct DirPathParams {
    ScanDirection direction = ScanDirection::Horizontal;
    ad::Param conv_w;  // [hidden, k_conv]
    ad::Param conv_b;  // [hidden]
    SsmParamSet fwd;
    SsmParamSet bwd;
};

// Directional state-space block. The scan path is
//   norm -> in_proj -> flatten -> causal depthwise conv + SiLU -> bidirectional
//   scan -> restore -> post-scan linear,
// gated by SiLU(gate_proj(norm)), projected back and added to the input.
struct BlockParams {
    int channels = 0;
    int hidden = 0;
    int state_dim = 0;
    int k_conv = 0;
    bool use_skip = true;
    ad::Param ln_gamma, ln_beta;
    ad::Param in_w;       // [hidden, channels]
    ad::Param gate_w;     // [hidden, channels]
    ad::Param ssm_out_w;  // [hidden, hidden]
    ad::Param out_w;      // [channels, hidden]
    std::vector<DirPathParams> paths;
};

// 2x2 patch merge: concat 4 cells, layer norm, linear to 2x channels.
struct DownsampleParams {
    int in_channels = 0;
    ad::Param ln_gamma, ln_beta;  // [4*in_channels]
    ad::Param w;                  // [2*in_channels, 4*in_channels]
};

struct PatchEmbedParams {
    int in_dim = 0;  // patch*patch*3
    int out_channels = 0;
    ad::Param w;  // [out_channels, in_dim]
    ad::Param b;  // [out_channels]
};

// One expert: stage blocks with downsampling between stages.
struct BranchParams {
    std::vector<std::vector<BlockParams>> stages;
    std::vector<DownsampleParams> merges;  // stages.size() - 1
};

struct GridShape {
    int height_p = 0;
    int width_p = 0;
};

BlockParams init_block(int channels, int expand, int state_dim, int k_conv,
                       const std::vector<ScanDirection>& directions, bool use_skip, Rng& rng);
DownsampleParams init_downsample(int in_channels, Rng& rng);
PatchEmbedParams init_patch_embed(int patch, int out_channels, Rng& rng);

// Image rows [H*W, 3] are rearranged into flattened patch rows and projected.
// Pure data prep (patch extraction) happens outside the tape.
ad::Tensor extract_patches(const FeatureGrid& image, int patch);
ad::VarId patch_embed_forward(ad::Tape& tape, const ad::Tensor& patches, PatchEmbedParams& p);

ad::VarId directional_block_forward(ad::Tape& tape, ad::VarId x, const GridShape& shape,
                                    BlockParams& block);

ad::VarId downsample_forward(ad::Tape& tape, ad::VarId x, const GridShape& shape,
                             DownsampleParams& p);  // shape must be even

// Runs the branch from an embedded grid; updates shape to the output resolution.
ad::VarId branch_forward(ad::Tape& tape, ad::VarId x, GridShape& shape, BranchParams& branch);

void collect_params(SsmParamSet& s, std::vector<ad::Param*>& out);
void collect_params(BlockParams& b, std::vector<ad::Param*>& out);
void collect_params(DownsampleParams& d, std::vector<ad::Param*>& out);
void collect_params(PatchEmbedParams& p, std::vector<ad::Param*>& out);
void collect_params(BranchParams& b, std::vector<ad::Param*>& out);

} // namespace plantcount

#pragma once

#include "plantcount/autograd.hpp"
#include "plantcount/common.hpp"

namespace plantcount {

// Counter: two 1x1 convolutions (SiLU between) mapping fused features to one
// window count per position, clamped nonnegative by a final ReLU.
struct HeadParams {
    int in_channels = 0;
    int hidden = 0;
    ad::Param w1, b1;  // [hidden, in], [hidden]
    ad::Param w2, b2;  // [1, hidden], [1]
};

HeadParams init_head(int in_channels, int hidden, Rng& rng);

// feats: [M, in_channels] -> [M, 1], all values >= 0.
ad::VarId head_forward(ad::Tape& tape, ad::VarId feats, HeadParams& p);

void collect_params(HeadParams& h, std::vector<ad::Param*>& out);

} // namespace plantcount

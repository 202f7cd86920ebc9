#include "plantcount/count_head.hpp"

#include <cmath>

namespace plantcount {

HeadParams init_head(int in_channels, int hidden, Rng& rng) {
    HeadParams h;
    h.in_channels = in_channels;
    h.hidden = hidden;
    h.w1.name = "head.w1";
    h.w1.value = ad::Tensor({hidden, in_channels});
    const double b1 = 1.0 / std::sqrt(double(in_channels));
    for (double& v : h.w1.value.data) v = rng.uniform(-b1, b1);
    h.b1.name = "head.b1";
    h.b1.value = ad::Tensor({hidden});
    h.w2.name = "head.w2";
    h.w2.value = ad::Tensor({1, hidden});
    const double b2 = 1.0 / std::sqrt(double(hidden));
    for (double& v : h.w2.value.data) v = rng.uniform(-b2, b2);
    h.b2.name = "head.b2";
    // Backbone features are spatially correlated, so a zero-centered final bias
    // leaves the whole ReLU-clamped map negative for about half of the seeds and
    // the head starts dead. A positive bias keeps the clamp alive at init.
    h.b2.value = ad::Tensor({1}, {0.5});
    return h;
}

ad::VarId head_forward(ad::Tape& tape, ad::VarId feats, HeadParams& p) {
    ad::VarId x = tape.silu(tape.linear(feats, tape.param(p.w1), tape.param(p.b1)));
    return tape.relu(tape.linear(x, tape.param(p.w2), tape.param(p.b2)));
}

void collect_params(HeadParams& h, std::vector<ad::Param*>& out) {
    out.push_back(&h.w1);
    out.push_back(&h.b1);
    out.push_back(&h.w2);
    out.push_back(&h.b2);
}

} // namespace plantcount

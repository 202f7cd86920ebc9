#pragma once

#include <vector>

#include "plantcount/autograd.hpp"
#include "plantcount/common.hpp"
#include "plantcount/grid.hpp"

namespace plantcount {

// Parameters of one selective scan module over sequences of channel vectors.
// The continuous evolution values are A = -exp(a_log), strictly negative, one
// diagonal N-vector per channel. The timescale is shared across channels:
// delta_t = softplus(w_delta . x_t + b_delta). B and C projections map the
// step's channel vector to N-vectors shared by all channels.
struct SSMParams {
    int channels = 0;
    int state_dim = 0;
    std::vector<double> a_log;    // [channels, N]
    std::vector<double> d_skip;   // [channels]
    std::vector<double> w_delta;  // [channels]
    double b_delta = 0.0;
    std::vector<double> w_b;      // [N, channels]
    std::vector<double> b_b;      // [N], zero-initialized; lets the projection degenerate to a constant
    std::vector<double> w_c;      // [N, channels]
    std::vector<double> b_c;      // [N]
    bool use_skip = true;
};

// Time-invariant discretization of a diagonal system, one value per state.
struct DiscreteParams {
    std::vector<double> a_bar;
    std::vector<double> b_bar;
};

// Threshold below which |delta * a| uses the first-order limit b_bar = delta * b.
constexpr double kZohTaylorThreshold = 1e-6;

// Zero-order hold: a_bar = exp(delta a), b_bar = (delta a)^-1 (exp(delta a) - 1) delta b.
DiscreteParams discretize_zoh(const std::vector<double>& a, const std::vector<double>& b, double delta);

// y_t = c . h_t with h_t = a_bar o h_{t-1} + b_bar x_t, h_0 = 0.
std::vector<double> lti_scan_recurrent(const DiscreteParams& disc, const std::vector<double>& c,
                                       const std::vector<double>& x);

// k[j] = c . a_bar^j o b_bar; causal convolution with this kernel reproduces the recurrence.
std::vector<double> lti_kernel(const DiscreteParams& disc, const std::vector<double>& c, int length);

// Causal convolution oracle: y_t = sum_{j<=t} k[j] x_{t-j}.
std::vector<double> causal_convolve(const std::vector<double>& kernel, const std::vector<double>& x);

// Input-dependent scan, sequential reference semantics. Throws NumericError on
// non-finite inputs.
FeatureSeq selective_scan(const SSMParams& params, const FeatureSeq& x);

// selective_scan(fwd, x) + reverse(selective_scan(bwd, reverse(x))).
FeatureSeq bidirectional_scan(const SSMParams& fwd, const SSMParams& bwd, const FeatureSeq& x);

// Deterministic initialization: a_log[c][n] = ln(n+1), skip gain 1, delta bias
// chosen so the initial timescale lies in [1e-3, 0.1].
SSMParams init_ssm_params(int channels, int state_dim, Rng& rng, bool use_skip = true);

// --- tape integration ---

struct ScanParamVars {
    ad::VarId a_log = ad::kNoVar;
    ad::VarId d_skip = ad::kNoVar;
    ad::VarId w_delta = ad::kNoVar;
    ad::VarId b_delta = ad::kNoVar;
    ad::VarId w_b = ad::kNoVar;
    ad::VarId b_b = ad::kNoVar;
    ad::VarId w_c = ad::kNoVar;
    ad::VarId b_c = ad::kNoVar;
};

// Differentiable selective scan over x ([L, channels]); forward matches
// selective_scan exactly, backward is hand-derived BPTT.
ad::VarId selective_scan_op(ad::Tape& tape, ad::VarId x, const ScanParamVars& p,
                            int state_dim, bool use_skip);

} // namespace plantcount

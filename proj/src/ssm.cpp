#include "plantcount/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace plantcount {

namespace {

double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Everything the backward pass needs from a forward scan.
struct ScanCache {
    int L = 0, C = 0, N = 0;
    std::vector<double> a;      // [C,N], -exp(a_log)
    std::vector<double> delta;  // [L]
    std::vector<double> dsig;   // [L], sigmoid of the pre-softplus value
    std::vector<double> bseq;   // [L,N]
    std::vector<double> cseq;   // [L,N]
    std::vector<double> a_bar;  // [L,C,N]
    std::vector<double> h;      // [L,C,N]
};

// b_bar from a cached a_bar value; must mirror the forward branch choice.
inline double b_bar_from(double a, double a_bar, double delta, double b) {
    const double u = delta * a;
    if (std::abs(u) < kZohTaylorThreshold) return delta * b;
    return (a_bar - 1.0) / a * b;
}

void scan_forward(const SSMParams& p, const double* x, int L, std::vector<double>& y,
                  ScanCache* cache) {
    const int C = p.channels, N = p.state_dim;
    y.assign(size_t(L) * C, 0.0);

    std::vector<double> a(size_t(C) * N);
    for (size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(p.a_log[i]);

    if (cache) {
        cache->L = L;
        cache->C = C;
        cache->N = N;
        cache->a = a;
        cache->delta.resize(L);
        cache->dsig.resize(L);
        cache->bseq.resize(size_t(L) * N);
        cache->cseq.resize(size_t(L) * N);
        cache->a_bar.resize(size_t(L) * C * N);
        cache->h.resize(size_t(L) * C * N);
    }

    std::vector<double> h(size_t(C) * N, 0.0);
    std::vector<double> bt(N), ct(N);
    for (int t = 0; t < L; ++t) {
        const double* xt = x + size_t(t) * C;

        double d_raw = p.b_delta;
        for (int c = 0; c < C; ++c) d_raw += p.w_delta[c] * xt[c];
        const double delta = softplus(d_raw);

        for (int n = 0; n < N; ++n) {
            double accb = p.b_b[n], accc = p.b_c[n];
            const double* wb = p.w_b.data() + size_t(n) * C;
            const double* wc = p.w_c.data() + size_t(n) * C;
            for (int c = 0; c < C; ++c) {
                accb += wb[c] * xt[c];
                accc += wc[c] * xt[c];
            }
            bt[n] = accb;
            ct[n] = accc;
        }

        double* yrow = y.data() + size_t(t) * C;
        double* abar_row = cache ? cache->a_bar.data() + size_t(t) * C * N : nullptr;
        double* h_row = cache ? cache->h.data() + size_t(t) * C * N : nullptr;
        for (int c = 0; c < C; ++c) {
            const double xc = xt[c];
            const double* ac = a.data() + size_t(c) * N;
            double* hc = h.data() + size_t(c) * N;
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                const double u = delta * ac[n];
                const double a_bar = std::exp(u);
                const double b_bar = std::abs(u) < kZohTaylorThreshold
                                         ? delta * bt[n]
                                         : (a_bar - 1.0) / ac[n] * bt[n];
                hc[n] = a_bar * hc[n] + b_bar * xc;
                acc += ct[n] * hc[n];
                if (abar_row) abar_row[size_t(c) * N + n] = a_bar;
                if (h_row) h_row[size_t(c) * N + n] = hc[n];
            }
            if (p.use_skip) acc += p.d_skip[c] * xc;
            yrow[c] = acc;
        }

        if (cache) {
            cache->delta[t] = delta;
            cache->dsig[t] = sigmoid(d_raw);
            std::copy(bt.begin(), bt.end(), cache->bseq.begin() + size_t(t) * N);
            std::copy(ct.begin(), ct.end(), cache->cseq.begin() + size_t(t) * N);
        }
    }
}

struct ScanGrads {
    std::vector<double> x;        // [L,C]
    std::vector<double> a_log;    // [C,N]
    std::vector<double> d_skip;   // [C]
    std::vector<double> w_delta;  // [C]
    double b_delta = 0.0;
    std::vector<double> w_b;      // [N,C]
    std::vector<double> b_b;      // [N]
    std::vector<double> w_c;      // [N,C]
    std::vector<double> b_c;      // [N]
};

// BPTT through the selective scan, reusing the cached forward state.
void scan_backward(const SSMParams& p, const double* x, const ScanCache& cc,
                   const double* gy, ScanGrads& g) {
    const int L = cc.L, C = cc.C, N = cc.N;
    g.x.assign(size_t(L) * C, 0.0);
    g.a_log.assign(size_t(C) * N, 0.0);
    g.d_skip.assign(C, 0.0);
    g.w_delta.assign(C, 0.0);
    g.b_delta = 0.0;
    g.w_b.assign(size_t(N) * C, 0.0);
    g.b_b.assign(N, 0.0);
    g.w_c.assign(size_t(N) * C, 0.0);
    g.b_c.assign(N, 0.0);

    std::vector<double> ga(size_t(C) * N, 0.0);  // grads wrt continuous a
    std::vector<double> gh(size_t(C) * N, 0.0);  // running dL/dh_t
    std::vector<double> gbt(N), gct(N);

    for (int t = L - 1; t >= 0; --t) {
        const double* xt = x + size_t(t) * C;
        const double* gyt = gy + size_t(t) * C;
        const double delta = cc.delta[t];
        const double* bt = cc.bseq.data() + size_t(t) * N;
        const double* ct = cc.cseq.data() + size_t(t) * N;
        const double* abar_row = cc.a_bar.data() + size_t(t) * C * N;
        const double* h_row = cc.h.data() + size_t(t) * C * N;
        const double* hprev_row = t > 0 ? cc.h.data() + size_t(t - 1) * C * N : nullptr;

        std::fill(gbt.begin(), gbt.end(), 0.0);
        std::fill(gct.begin(), gct.end(), 0.0);
        double gdelta = 0.0;

        for (int c = 0; c < C; ++c) {
            const double xc = xt[c];
            const double gyc = gyt[c];
            const double* ac = cc.a.data() + size_t(c) * N;
            double* ghc = gh.data() + size_t(c) * N;
            double gx_c = 0.0;

            if (p.use_skip) {
                g.d_skip[c] += gyc * xc;
                gx_c += gyc * p.d_skip[c];
            }

            for (int n = 0; n < N; ++n) {
                const size_t cn = size_t(c) * N + n;
                const double a_bar = abar_row[cn];
                const double hcur = h_row[cn];
                const double hprev = hprev_row ? hprev_row[cn] : 0.0;

                gct[n] += gyc * hcur;
                double ghn = ghc[n] + gyc * ct[n];

                const double ga_bar = ghn * hprev;
                const double gb_bar = ghn * xc;
                gx_c += ghn * b_bar_from(ac[n], a_bar, delta, bt[n]);

                const double u = delta * ac[n];
                if (std::abs(u) < kZohTaylorThreshold) {
                    // b_bar = delta * b in this branch
                    gdelta += ga_bar * ac[n] * a_bar + gb_bar * bt[n];
                    ga[cn] += ga_bar * delta * a_bar;
                    gbt[n] += gb_bar * delta;
                } else {
                    const double an = ac[n];
                    gdelta += ga_bar * an * a_bar + gb_bar * bt[n] * a_bar;
                    ga[cn] += ga_bar * delta * a_bar +
                              gb_bar * bt[n] * (delta * a_bar * an - a_bar + 1.0) / (an * an);
                    gbt[n] += gb_bar * (a_bar - 1.0) / an;
                }

                ghc[n] = ghn * a_bar;  // flows to h_{t-1}
            }
            g.x[size_t(t) * C + c] += gx_c;
        }

        const double gd_raw = gdelta * cc.dsig[t];
        g.b_delta += gd_raw;
        for (int c = 0; c < C; ++c) {
            g.w_delta[c] += gd_raw * xt[c];
            g.x[size_t(t) * C + c] += gd_raw * p.w_delta[c];
        }
        for (int n = 0; n < N; ++n) {
            const double* wb = p.w_b.data() + size_t(n) * C;
            const double* wc = p.w_c.data() + size_t(n) * C;
            double* gwb = g.w_b.data() + size_t(n) * C;
            double* gwc = g.w_c.data() + size_t(n) * C;
            const double gb = gbt[n], gc = gct[n];
            g.b_b[n] += gb;
            g.b_c[n] += gc;
            for (int c = 0; c < C; ++c) {
                gwb[c] += gb * xt[c];
                gwc[c] += gc * xt[c];
                g.x[size_t(t) * C + c] += gb * wb[c] + gc * wc[c];
            }
        }
    }

    // a = -exp(a_log)  =>  da/da_log = a
    for (size_t i = 0; i < ga.size(); ++i) g.a_log[i] = ga[i] * cc.a[i];
}

void check_finite(const double* x, size_t n, const char* what) {
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) throw NumericError(std::string(what) + ": non-finite value");
}

} // namespace

DiscreteParams discretize_zoh(const std::vector<double>& a, const std::vector<double>& b,
                              double delta) {
    if (!(delta > 0.0)) throw InvalidArgument("discretize_zoh: delta must be positive");
    if (a.size() != b.size()) throw InvalidArgument("discretize_zoh: size mismatch");
    DiscreteParams out;
    out.a_bar.resize(a.size());
    out.b_bar.resize(a.size());
    for (size_t n = 0; n < a.size(); ++n) {
        const double u = delta * a[n];
        out.a_bar[n] = std::exp(u);
        out.b_bar[n] = std::abs(u) < kZohTaylorThreshold ? delta * b[n]
                                                         : (out.a_bar[n] - 1.0) / a[n] * b[n];
    }
    return out;
}

std::vector<double> lti_scan_recurrent(const DiscreteParams& disc, const std::vector<double>& c,
                                       const std::vector<double>& x) {
    const size_t n = disc.a_bar.size();
    if (c.size() != n) throw InvalidArgument("lti_scan_recurrent: C size mismatch");
    std::vector<double> h(n, 0.0), y(x.size(), 0.0);
    for (size_t t = 0; t < x.size(); ++t) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            h[i] = disc.a_bar[i] * h[i] + disc.b_bar[i] * x[t];
            acc += c[i] * h[i];
        }
        y[t] = acc;
    }
    return y;
}

std::vector<double> lti_kernel(const DiscreteParams& disc, const std::vector<double>& c,
                               int length) {
    if (length <= 0) throw InvalidArgument("lti_kernel: length must be positive");
    const size_t n = disc.a_bar.size();
    if (c.size() != n) throw InvalidArgument("lti_kernel: C size mismatch");
    std::vector<double> kernel(length, 0.0), power(n);
    for (size_t i = 0; i < n; ++i) power[i] = disc.b_bar[i];
    for (int j = 0; j < length; ++j) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += c[i] * power[i];
        kernel[j] = acc;
        for (size_t i = 0; i < n; ++i) power[i] *= disc.a_bar[i];
    }
    return kernel;
}

std::vector<double> causal_convolve(const std::vector<double>& kernel, const std::vector<double>& x) {
    std::vector<double> y(x.size(), 0.0);
    for (size_t t = 0; t < x.size(); ++t) {
        double acc = 0.0;
        const size_t jmax = std::min(t + 1, kernel.size());
        for (size_t j = 0; j < jmax; ++j) acc += kernel[j] * x[t - j];
        y[t] = acc;
    }
    return y;
}

FeatureSeq selective_scan(const SSMParams& params, const FeatureSeq& x) {
    if (x.length < 1) throw InvalidArgument("selective_scan: empty sequence");
    if (x.channels != params.channels) throw InvalidArgument("selective_scan: channel mismatch");
    check_finite(x.data.data(), x.data.size(), "selective_scan input");

    FeatureSeq y(x.length, x.channels);
    scan_forward(params, x.data.data(), x.length, y.data, nullptr);
    return y;
}

FeatureSeq bidirectional_scan(const SSMParams& fwd, const SSMParams& bwd, const FeatureSeq& x) {
    FeatureSeq out = selective_scan(fwd, x);

    FeatureSeq rev(x.length, x.channels);
    for (int t = 0; t < x.length; ++t)
        std::copy_n(x.step(x.length - 1 - t), x.channels, rev.step(t));
    const FeatureSeq back = selective_scan(bwd, rev);
    for (int t = 0; t < x.length; ++t) {
        const double* src = back.step(x.length - 1 - t);
        double* dst = out.step(t);
        for (int c = 0; c < x.channels; ++c) dst[c] += src[c];
    }
    return out;
}

SSMParams init_ssm_params(int channels, int state_dim, Rng& rng, bool use_skip) {
    if (channels < 1 || state_dim < 1) throw InvalidArgument("init_ssm_params: bad dimensions");
    SSMParams p;
    p.channels = channels;
    p.state_dim = state_dim;
    p.use_skip = use_skip;
    p.a_log.resize(size_t(channels) * state_dim);
    for (int c = 0; c < channels; ++c)
        for (int n = 0; n < state_dim; ++n) p.a_log[size_t(c) * state_dim + n] = std::log(double(n + 1));
    p.d_skip.assign(channels, 1.0);

    const double ws = 0.1 / std::sqrt(double(channels));
    p.w_delta.resize(channels);
    for (auto& v : p.w_delta) v = rng.uniform(-ws, ws);
    // softplus(b_delta) lands in [1e-3, 0.1], log-uniform
    const double dt0 = std::exp(rng.uniform(std::log(1e-3), std::log(0.1)));
    p.b_delta = std::log(std::expm1(dt0));

    const double s = 1.0 / std::sqrt(double(channels));
    p.w_b.resize(size_t(state_dim) * channels);
    p.w_c.resize(size_t(state_dim) * channels);
    for (auto& v : p.w_b) v = rng.uniform(-s, s);
    for (auto& v : p.w_c) v = rng.uniform(-s, s);
    p.b_b.assign(state_dim, 0.0);
    p.b_c.assign(state_dim, 0.0);
    return p;
}

ad::VarId selective_scan_op(ad::Tape& tape, ad::VarId x, const ScanParamVars& pv,
                            int state_dim, bool use_skip) {
    const ad::Tensor& vx = tape.val(x);
    const int L = vx.rows(), C = vx.cols();

    // Assemble a value-level parameter view from the tape nodes.
    SSMParams p;
    p.channels = C;
    p.state_dim = state_dim;
    p.use_skip = use_skip;
    p.a_log = tape.val(pv.a_log).data;
    p.d_skip = use_skip ? tape.val(pv.d_skip).data : std::vector<double>(C, 0.0);
    p.w_delta = tape.val(pv.w_delta).data;
    p.b_delta = tape.val(pv.b_delta).data[0];
    p.w_b = tape.val(pv.w_b).data;
    p.b_b = tape.val(pv.b_b).data;
    p.w_c = tape.val(pv.w_c).data;
    p.b_c = tape.val(pv.b_c).data;

    check_finite(vx.data.data(), vx.data.size(), "selective_scan input");

    std::vector<ad::VarId> inputs = {x, pv.a_log, pv.w_delta, pv.b_delta,
                                     pv.w_b, pv.b_b, pv.w_c, pv.b_c};
    if (use_skip) inputs.push_back(pv.d_skip);
    bool needs_grad = false;
    for (ad::VarId v : inputs)
        if (v != ad::kNoVar && tape.requires_grad(v)) needs_grad = true;

    auto cache = std::make_shared<ScanCache>();
    auto params = std::make_shared<SSMParams>(std::move(p));
    ad::Tensor out({L, C});
    scan_forward(*params, vx.data.data(), L, out.data, needs_grad ? cache.get() : nullptr);

    ad::VarId id = tape.make_node(std::move(out), inputs, nullptr);

    tape.set_backward(id, [id, x, pv, params, cache, use_skip](ad::Tape& t) {
        const ad::Tensor& g = t.grad(id);
        ScanGrads sg;
        scan_backward(*params, t.val(x).data.data(), *cache, g.data.data(), sg);

        auto accum = [&t](ad::VarId v, const std::vector<double>& src) {
            if (v == ad::kNoVar || !t.requires_grad(v)) return;
            double* dst = t.grad_buffer(v).data.data();
            for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        };
        accum(x, sg.x);
        accum(pv.a_log, sg.a_log);
        if (use_skip) accum(pv.d_skip, sg.d_skip);
        accum(pv.w_delta, sg.w_delta);
        accum(pv.w_b, sg.w_b);
        accum(pv.b_b, sg.b_b);
        accum(pv.w_c, sg.w_c);
        accum(pv.b_c, sg.b_c);
        if (t.requires_grad(pv.b_delta)) t.grad_buffer(pv.b_delta).data[0] += sg.b_delta;
    });
    return id;
}

} // namespace plantcount

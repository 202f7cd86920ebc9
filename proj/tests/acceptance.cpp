// Acceptance suite: one self-contained check per criterion, each printing a
// single [PASS]/[FAIL] line with the measured figures. Criterion 9 is
// informational (trend check) and does not affect the exit code.
//
// Run everything: ./acceptance       Run one: ./acceptance --only 5

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "plantcount/count_map.hpp"
#include "plantcount/data.hpp"
#include "plantcount/metrics.hpp"
#include "plantcount/model.hpp"
#include "plantcount/scan_order.hpp"
#include "plantcount/ssm.hpp"
#include "plantcount/trainer.hpp"

using namespace plantcount;
namespace fs = std::filesystem;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

double rel_err(double got, double want, double floor_ = 1e-2) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor_});
}

// --- 1: recurrence vs convolution kernel ---------------------------------
bool lti_equivalence(std::string& detail) {
    Timer timer;
    Rng rng(1001);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + int(rng.uniform_int(0, 7));
        const int len = 1 + int(rng.uniform_int(0, 63));
        std::vector<double> a(n), b(n), c(n), x(len);
        for (int i = 0; i < n; ++i) {
            a[i] = rng.uniform(-3.0, -0.05);
            b[i] = rng.uniform(-1.0, 1.0);
            c[i] = rng.uniform(-1.0, 1.0);
        }
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        const DiscreteParams d = discretize_zoh(a, b, rng.uniform(0.01, 1.0));
        const auto rec = lti_scan_recurrent(d, c, x);
        const auto conv = causal_convolve(lti_kernel(d, c, len), x);
        for (int t = 0; t < len; ++t)
            worst = std::max(worst, std::abs(rec[t] - conv[t]) /
                                        std::max({std::abs(rec[t]), std::abs(conv[t]), 1e-6}));
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "100 systems, worst relative gap %.3g, %.2f s", worst,
                  timer.seconds());
    detail = buf;
    return worst < 1e-5 && timer.seconds() < 10.0;
}

// --- 2: selective scan degenerates to the LTI oracle ----------------------
bool scan_degeneration(std::string& detail) {
    Rng rng(1002);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int channels = 1 + int(rng.uniform_int(0, 3));
        const int n = 1 + int(rng.uniform_int(0, 3));
        const int len = 1 + int(rng.uniform_int(0, 47));
        SSMParams p = init_ssm_params(channels, n, rng);
        for (auto& v : p.a_log) v = rng.uniform(-1.0, 1.0);
        for (auto& v : p.d_skip) v = rng.uniform(-0.5, 0.5);
        for (auto& v : p.b_b) v = rng.uniform(-0.8, 0.8);
        for (auto& v : p.b_c) v = rng.uniform(-0.8, 0.8);
        p.b_delta = rng.uniform(-1.0, 0.5);
        std::fill(p.w_delta.begin(), p.w_delta.end(), 0.0);
        std::fill(p.w_b.begin(), p.w_b.end(), 0.0);
        std::fill(p.w_c.begin(), p.w_c.end(), 0.0);

        FeatureSeq x(len, channels);
        for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
        const FeatureSeq y = selective_scan(p, x);

        const double delta = std::log1p(std::exp(p.b_delta));
        for (int c = 0; c < channels; ++c) {
            std::vector<double> a(n), xc(len);
            for (int i = 0; i < n; ++i) a[i] = -std::exp(p.a_log[size_t(c) * n + i]);
            for (int t = 0; t < len; ++t) xc[t] = x.step(t)[c];
            const auto oracle = lti_scan_recurrent(discretize_zoh(a, p.b_b, delta), p.b_c, xc);
            for (int t = 0; t < len; ++t) {
                const double want = oracle[t] + p.d_skip[c] * xc[t];
                worst = std::max(worst, std::abs(y.step(t)[c] - want) /
                                            std::max({std::abs(want), std::abs(y.step(t)[c]), 1e-6}));
            }
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "50 frozen-projection cases, worst relative gap %.3g", worst);
    detail = buf;
    return worst < 1e-5;
}

// --- 3: scan-order properties ---------------------------------------------
bool scan_orders_suite(std::string& detail) {
    const ScanDirection dirs[] = {ScanDirection::Horizontal, ScanDirection::Vertical,
                                  ScanDirection::Diagonal, ScanDirection::AntiDiagonal};
    int grids = 0;
    for (ScanDirection dir : dirs)
        for (int h = 1; h <= 8; ++h)
            for (int w = 1; w <= 8; ++w) {
                const ScanOrder order = build_order(dir, h, w);
                std::vector<int32_t> sorted = order.forward;
                std::sort(sorted.begin(), sorted.end());
                for (int k = 0; k < h * w; ++k) {
                    if (sorted[k] != k) { detail = "permutation violated"; return false; }
                    if (order.inverse[order.forward[k]] != k) { detail = "inverse violated"; return false; }
                }
                FeatureGrid g(h, w, 2);
                Rng rng(uint64_t(h * 97 + w));
                for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
                if (restore_grid(apply_order(g, order), order).data != g.data) {
                    detail = "round trip violated";
                    return false;
                }
                ++grids;
            }
    // transpose duality
    for (int h = 1; h <= 8; ++h)
        for (int w = 1; w <= 8; ++w) {
            const ScanOrder v = build_order(ScanDirection::Vertical, h, w);
            const ScanOrder ht = build_order(ScanDirection::Horizontal, w, h);
            for (int k = 0; k < h * w; ++k) {
                const int cell = v.forward[k];
                if (ht.forward[k] != (cell % w) * h + cell / w) {
                    detail = "transpose duality violated";
                    return false;
                }
            }
        }
    const bool diag_ok = build_order(ScanDirection::Diagonal, 2, 3).forward ==
                         std::vector<int32_t>{3, 0, 4, 1, 5, 2};
    const bool anti_ok = build_order(ScanDirection::AntiDiagonal, 2, 3).forward ==
                         std::vector<int32_t>{0, 1, 3, 2, 4, 5};
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d grids x 4 directions, fixed 2x3 enumerations %s", grids,
                  diag_ok && anti_ok ? "exact" : "WRONG");
    detail = buf;
    return diag_ok && anti_ok;
}

// --- 4: model gradients vs finite differences -----------------------------
bool gradient_check(std::string& detail) {
    Timer timer;
    ModelConfig mc = ModelConfig::from_preset("micro");
    mc.r = 16;
    mc.directions = {ScanDirection::Horizontal, ScanDirection::Vertical};
    mc.init_seed = 404;
    Model model(mc);
    if (model.param_count() > 2000) {
        detail = "model exceeds the 2k parameter budget";
        return false;
    }

    Rng rng(405);
    FeatureGrid img(16, 16, 3);
    for (double& v : img.data) v = rng.uniform(0.05, 0.95);

    auto eval = [&]() {
        ad::Tape tape;
        const Model::ForwardResult fr = model.forward(tape, img);
        return tape.val(fr.count).data[0];
    };

    for (ad::Param* p : model.params()) p->zero_grad();
    ad::Tape tape;
    const Model::ForwardResult fr = model.forward(tape, img);
    tape.backward(fr.count);

    const double h = 1e-4;
    double worst = 0.0;
    int64_t checked = 0;
    std::string worst_name;
    for (ad::Param* p : model.params()) {
        for (size_t j = 0; j < p->value.data.size(); ++j) {
            const double keep = p->value.data[j];
            p->value.data[j] = keep + h;
            const double fp = eval();
            p->value.data[j] = keep - h;
            const double fm = eval();
            p->value.data[j] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double err = rel_err(p->grad.data[j], fd);
            if (err > worst) {
                worst = err;
                worst_name = p->name;
            }
            ++checked;
        }
    }
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%lld params, worst relative gap %.3g (%s), %.1f s",
                  (long long)checked, worst, worst_name.c_str(), timer.seconds());
    detail = buf;
    return worst < 1e-5 && timer.seconds() < 120.0;
}

// --- 5: normalizer exactness ----------------------------------------------
bool normalizer_exactness(std::string& detail) {
    Timer timer;
    const int H = 64, W = 64, r = 8, s = 2;
    Rng rng(1005);
    double worst_count = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + int(rng.uniform_int(0, 11));
        std::vector<std::pair<double, double>> dots;
        // at least r from every border (drawn at 2r so every containing window
        // is fully covered)
        for (int i = 0; i < n; ++i)
            dots.emplace_back(double(rng.uniform_int(2 * r, W - 1 - 2 * r)),
                              double(rng.uniform_int(2 * r, H - 1 - 2 * r)));
        const double got = image_count(normalize_map(window_counts_from_dots(dots, H, W, r, s)));
        worst_count = std::max(worst_count, std::abs(got - double(n)));
    }

    // conservation at uniform coverage K = (r/s)^2
    const double K = double(r / s) * double(r / s);
    double worst_cons = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        RedundantCountMap cr = make_count_map(H, W, r, s);
        for (int a = 4; a < cr.map_h - 4; ++a)
            for (int b = 4; b < cr.map_w - 4; ++b) cr.at(a, b) = rng.uniform(0.0, 2.0);
        const double total = image_count(normalize_map(cr));
        worst_cons = std::max(worst_cons, std::abs(total - cr.sum() / K) /
                                              std::max(cr.sum() / K, 1e-9));
    }
    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "100 dot sets: worst |count-n| %.3g; conservation gap %.3g; %.2f s",
                  worst_count, worst_cons, timer.seconds());
    detail = buf;
    return worst_count < 1e-4 && worst_cons < 1e-6 && timer.seconds() < 30.0;
}

// --- 6: metrics oracle ------------------------------------------------------
bool metrics_oracle(std::string& detail) {
    const MetricsReport m = compute_metrics({10, 20}, {12, 16});
    const bool exact = std::abs(m.mae - 3.0) < 1e-12 &&
                       std::abs(m.rmse - std::sqrt(10.0)) < 1e-12 &&
                       std::abs(m.rmae_pct - 20.0) < 1e-12 &&
                       std::abs(m.rrmse_pct - 20.0) < 1e-12 && std::abs(m.r2 - 0.6) < 1e-12;

    Rng rng(1006);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + int(rng.uniform_int(0, 18));
        std::vector<double> gt(n), pred(n);
        for (int i = 0; i < n; ++i) {
            gt[i] = rng.uniform(1.0, 40.0);
            pred[i] = rng.uniform(0.0, 40.0);
        }
        const double c = rng.uniform(0.25, 8.0);
        std::vector<double> gt_s = gt, pred_s = pred;
        for (double& v : gt_s) v *= c;
        for (double& v : pred_s) v *= c;
        const MetricsReport a = compute_metrics(gt, pred);
        const MetricsReport b = compute_metrics(gt_s, pred_s);
        worst = std::max({worst, rel_err(b.mae, c * a.mae, 1e-9),
                          rel_err(b.rmse, c * a.rmse, 1e-9),
                          rel_err(b.rmae_pct, a.rmae_pct, 1e-9),
                          rel_err(b.rrmse_pct, a.rrmse_pct, 1e-9), rel_err(b.r2, a.r2, 1e-9)});
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "hand case %s; scale equivariance worst gap %.3g over 100 vectors",
                  exact ? "exact" : "WRONG", worst);
    detail = buf;
    return exact && worst < 1e-9;
}

// --- 7: overfit sanity -------------------------------------------------------
bool overfit_sanity(std::string& detail) {
    Timer timer;
    ModelConfig mc = ModelConfig::from_preset("tiny");
    mc.r = 16;
    mc.init_seed = 7;
    Model model(mc);

    SynthConfig sc;
    sc.height = 64;
    sc.width = 64;
    sc.count_min = 2;
    sc.count_max = 12;
    sc.seed = 5;
    const auto samples = gen_synthetic(sc, 4);

    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 200;
    tc.batch_size = 4;
    tc.seed = 3;
    train(model, tc, samples, nullptr, "");

    double mae = 0.0;
    for (const Sample& s : samples)
        mae += std::abs(model.predict_count(image_to_grid(s.image)) - s.count());
    mae /= double(samples.size());

    char buf[128];
    std::snprintf(buf, sizeof(buf), "tiny preset, 4 samples, 200 epochs: train MAE %.3f, %.0f s",
                  mae, timer.seconds());
    detail = buf;
    return mae < 0.5 && timer.seconds() < 300.0;
}

// --- 8: desk-scale generalization -------------------------------------------
bool generalization(std::string& detail) {
    Timer timer;
    SynthConfig sc;
    sc.height = 128;
    sc.width = 128;
    sc.count_min = 0;
    sc.count_max = 15;
    sc.seed = 11;
    const auto train_set = gen_synthetic(sc, 200);
    sc.seed = 12;
    const auto test_set = gen_synthetic(sc, 50);

    double train_mean = 0.0;
    for (const Sample& s : train_set) train_mean += s.count();
    train_mean /= double(train_set.size());

    ModelConfig mc = ModelConfig::from_preset("small");
    mc.r = 16;
    mc.init_seed = 21;
    Model model(mc);

    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 30;
    tc.batch_size = 8;
    tc.crop = 64;
    tc.seed = 13;
    train(model, tc, train_set, nullptr, "");

    const EvalResult er = evaluate(model, test_set);
    EvalOptions bo;
    bo.baseline_mean = train_mean;
    const EvalResult br = evaluate(model, test_set, bo);

    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "200 train / 50 test @128px: MAE %.3f (need <= %.3f = 0.5 x baseline %.3f), "
                  "R2 %.3f (need >= 0.7), %.0f s",
                  er.metrics.mae, 0.5 * br.metrics.mae, br.metrics.mae, er.metrics.r2,
                  timer.seconds());
    detail = buf;
    return er.metrics.mae <= 0.5 * br.metrics.mae && er.metrics.r2 >= 0.7 &&
           timer.seconds() < 2700.0;
}

// --- 9: ablation trend (informational) ---------------------------------------
bool ablation_trend(std::string& detail) {
    auto run_one = [](bool all_dirs, uint64_t seed, const std::vector<Sample>& tr,
                      const std::vector<Sample>& te) {
        ModelConfig mc = ModelConfig::from_preset("tiny");
        mc.r = 16;
        mc.init_seed = seed;
        mc.cnn_branch = false;  // isolate the directional backbone
        if (!all_dirs) mc.directions = {ScanDirection::Horizontal};
        Model model(mc);
        TrainConfig tc;
        tc.lr = 1e-3;
        tc.epochs = 60;
        tc.batch_size = 8;
        tc.seed = seed + 7;
        train(model, tc, tr, nullptr, "");
        return evaluate(model, te).metrics.mae;
    };

    SynthConfig sc;
    sc.height = 64;
    sc.width = 64;
    sc.count_min = 1;
    sc.count_max = 8;
    sc.placement = Placement::DiagonalBand;
    sc.band_frac = 0.15;

    int wins = 0;
    std::string runs;
    for (uint64_t seed : {101ull, 102ull, 103ull}) {
        sc.seed = seed;
        const auto tr = gen_synthetic(sc, 120);
        sc.seed = seed + 1000;
        const auto te = gen_synthetic(sc, 30);
        const double mae4 = run_one(true, seed, tr, te);
        const double mae1 = run_one(false, seed, tr, te);
        if (mae4 <= mae1) ++wins;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "[seed %llu: 4-dir %.2f vs H-only %.2f] ",
                      (unsigned long long)seed, mae4, mae1);
        runs += buf;
    }
    char buf[320];
    std::snprintf(buf, sizeof(buf), "diagonal-band data, %s=> %d/3 seeds favor four directions",
                  runs.c_str(), wins);
    detail = buf;
    return wins >= 2;
}

// --- 10: determinism -----------------------------------------------------------
bool determinism(std::string& detail) {
    SynthConfig sc;
    sc.height = 64;
    sc.width = 64;
    sc.count_min = 1;
    sc.count_max = 6;
    sc.seed = 77;
    const auto a = gen_synthetic(sc, 8);
    const auto b = gen_synthetic(sc, 8);
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].image.data != b[i].image.data || a[i].dots != b[i].dots) {
            detail = "synthetic generation diverged for identical seeds";
            return false;
        }

    const fs::path dir_a = fs::temp_directory_path() / "pc_acc_det_a";
    const fs::path dir_b = fs::temp_directory_path() / "pc_acc_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    save_dataset(dir_a.string(), a, "det");
    save_dataset(dir_b.string(), b, "det");
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    for (const Sample& s : a)
        if (slurp(dir_a / "images" / s.id) != slurp(dir_b / "images" / s.id)) {
            detail = "dataset files not byte-identical";
            return false;
        }

    ModelConfig mc = ModelConfig::from_preset("micro");
    mc.r = 16;
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 9;
    Model m1(mc), m2(mc);
    const TrainResult r1 = train(m1, tc, a, nullptr, "");
    const TrainResult r2 = train(m2, tc, a, nullptr, "");
    if (train_log_to_csv(r1.log) != train_log_to_csv(r2.log)) {
        detail = "training loss logs diverged for identical seeds";
        return false;
    }
    for (size_t i = 0; i < m1.params().size(); ++i)
        if (m1.params()[i]->value.data != m2.params()[i]->value.data) {
            detail = "trained weights diverged for identical seeds";
            return false;
        }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    detail = "byte-identical datasets, loss logs and trained weights across reruns";
    return true;
}

struct Criterion {
    int id;
    const char* name;
    bool blocking;
    std::function<bool(std::string&)> run;
};

} // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

    const std::vector<Criterion> criteria = {
        {1, "LTI recurrence/kernel equivalence", true, lti_equivalence},
        {2, "selective-scan LTI degeneration", true, scan_degeneration},
        {3, "scan-order property suite", true, scan_orders_suite},
        {4, "reverse-mode vs finite-difference gradients", true, gradient_check},
        {5, "count-map normalizer exactness", true, normalizer_exactness},
        {6, "metrics oracle and scale equivariance", true, metrics_oracle},
        {7, "overfit sanity (tiny preset)", true, overfit_sanity},
        {8, "desk-scale generalization (small preset)", true, generalization},
        {9, "direction-ablation trend (informational)", false, ablation_trend},
        {10, "seeded determinism", true, determinism},
    };

    bool all_ok = true;
    for (const Criterion& c : criteria) {
        if (only != 0 && c.id != only) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %2d: %s — %s\n", ok ? "PASS" : (c.blocking ? "FAIL" : "INFO"),
                    c.id, c.name, detail.c_str());
        std::fflush(stdout);
        if (!ok && c.blocking) all_ok = false;
    }
    return all_ok ? 0 : 1;
}

#include "plantcount/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "plantcount/common.hpp"

namespace plantcount {

MetricsReport compute_metrics(const std::vector<double>& gt, const std::vector<double>& pred) {
    if (gt.empty()) throw InvalidArgument("compute_metrics: empty input");
    if (gt.size() != pred.size()) throw InvalidArgument("compute_metrics: length mismatch");

    const int n = int(gt.size());
    MetricsReport r;
    r.n_images = n;

    double abs_sum = 0.0, sq_sum = 0.0, gt_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double e = gt[i] - pred[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        gt_sum += gt[i];
    }
    r.mae = abs_sum / n;
    r.rmse = std::sqrt(sq_sum / n);

    // Relative metrics: division by G_i, so zero-count images are skipped and counted.
    double rel_abs = 0.0, rel_sq = 0.0;
    int n_rel = 0;
    for (int i = 0; i < n; ++i) {
        if (gt[i] == 0.0) {
            ++r.n_skipped_relative;
            continue;
        }
        const double q = (gt[i] - pred[i]) / gt[i];
        rel_abs += std::abs(q);
        rel_sq += q * q;
        ++n_rel;
    }
    if (n_rel > 0) {
        r.rmae_pct = 100.0 * rel_abs / n_rel;
        r.rrmse_pct = 100.0 * std::sqrt(rel_sq / n_rel);
    }

    const double gt_mean = gt_sum / n;
    double ss_tot = 0.0;
    for (int i = 0; i < n; ++i) ss_tot += (gt[i] - gt_mean) * (gt[i] - gt_mean);
    if (ss_tot == 0.0) {
        r.r2_defined = false;
        r.r2 = 0.0;
    } else {
        r.r2 = 1.0 - sq_sum / ss_tot;
    }
    return r;
}

static std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string metrics_to_text(const MetricsReport& r) {
    std::ostringstream out;
    out << "mae = " << fmt(r.mae) << '\n'
        << "rmse = " << fmt(r.rmse) << '\n'
        << "rmae_pct = " << fmt(r.rmae_pct) << '\n'
        << "rrmse_pct = " << fmt(r.rrmse_pct) << '\n'
        << "r2 = " << (r.r2_defined ? fmt(r.r2) : std::string("undefined")) << '\n'
        << "n_images = " << r.n_images << '\n'
        << "n_skipped_relative = " << r.n_skipped_relative << '\n';
    return out.str();
}

std::string metrics_to_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << "mae,rmse,rmae_pct,rrmse_pct,r2,n_images,n_skipped_relative\n"
        << fmt(r.mae) << ',' << fmt(r.rmse) << ',' << fmt(r.rmae_pct) << ','
        << fmt(r.rrmse_pct) << ',' << (r.r2_defined ? fmt(r.r2) : std::string("nan")) << ','
        << r.n_images << ',' << r.n_skipped_relative << '\n';
    return out.str();
}

} // namespace plantcount

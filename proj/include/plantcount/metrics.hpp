#pragma once

#include <string>
#include <vector>

namespace plantcount {

// Count-regression metrics over a set of images. Relative metrics are computed
// over the subset with nonzero ground truth; n_skipped_relative reports how
// many images that excluded. R^2 is undefined when the ground truth has zero
// variance (r2_defined == false).
struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    double rmae_pct = 0.0;
    double rrmse_pct = 0.0;
    double r2 = 0.0;
    bool r2_defined = true;
    int n_images = 0;
    int n_skipped_relative = 0;
};

MetricsReport compute_metrics(const std::vector<double>& gt, const std::vector<double>& pred);

// "key = value" lines, one metric per line.
std::string metrics_to_text(const MetricsReport& r);

// Machine-readable CSV: header + one row.
std::string metrics_to_csv(const MetricsReport& r);

} // namespace plantcount

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plantcount/data.hpp"
#include "plantcount/metrics.hpp"
#include "plantcount/model.hpp"

namespace plantcount {

// Image-level L1: (1/B) sum |pred_i - gt_i|.
double l1_count_loss(const std::vector<double>& pred, const std::vector<double>& gt);

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 4;
    int epochs = 10;
    int crop = 0;  // pixels; 0 trains on full images
    bool aux_window_loss = false;
    double aux_weight = 1.0;
    uint64_t seed = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mae = 0.0;
    bool has_val = false;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_score = 0.0;  // val MAE when a val set is given, else train loss
};

// Adam on the image-level count loss. Writes <out_dir>/final.ckpt,
// <out_dir>/best.ckpt and <out_dir>/train_log.csv when out_dir is nonempty.
// Deterministic given the config seed.
TrainResult train(Model& model, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>* val_set, const std::string& out_dir);

std::string train_log_to_csv(const std::vector<EpochLog>& log);

struct EvalOptions {
    bool oracle = false;                 // predict from gt dots through the count-map geometry
    std::optional<double> baseline_mean; // predict a constant instead of running the model
    bool collect_fusion = false;
};

struct EvalRow {
    std::string id;
    double gt = 0.0;
    double pred = 0.0;
};

struct EvalResult {
    MetricsReport metrics;
    std::vector<EvalRow> rows;
    std::vector<std::vector<double>> fusion_means;  // per image, when collect_fusion
};

EvalResult evaluate(Model& model, const std::vector<Sample>& samples, const EvalOptions& opt = {});

// One Adam step from already-accumulated gradients (exposed for tests).
void adam_step(std::vector<ad::Param*>& params, const TrainConfig& cfg, int64_t t);

} // namespace plantcount

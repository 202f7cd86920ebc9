#include "plantcount/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "plantcount/count_map.hpp"

namespace fs = std::filesystem;

namespace plantcount {

double l1_count_loss(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.empty()) throw InvalidArgument("l1_count_loss: empty batch");
    if (pred.size() != gt.size()) throw InvalidArgument("l1_count_loss: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
    return acc / double(pred.size());
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw InvalidArgument("train config: lr must be positive");
    if (batch_size < 1) throw InvalidArgument("train config: batch_size must be >= 1");
    if (epochs < 0) throw InvalidArgument("train config: negative epochs");
    if (crop < 0 || (crop > 0 && crop % 8 != 0))
        throw InvalidArgument("train config: crop must be 0 or a multiple of 8");
}

void adam_step(std::vector<ad::Param*>& params, const TrainConfig& cfg, int64_t t) {
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(t));
    for (ad::Param* p : params) {
        p->ensure_state();
        double* w = p->value.data.data();
        double* g = p->grad.data.data();
        double* m = p->adam_m.data.data();
        double* v = p->adam_v.data.data();
        const size_t n = p->value.data.size();
        for (size_t i = 0; i < n; ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

namespace {

double eval_mae(Model& model, const std::vector<Sample>& samples) {
    double acc = 0.0;
    for (const Sample& s : samples)
        acc += std::abs(model.predict_count(image_to_grid(s.image)) - double(s.count()));
    return acc / double(samples.size());
}

// Per-sample loss node: |count - gt| (+ optional window-level L1 against the
// dot-derived ground-truth map).
ad::VarId sample_loss(ad::Tape& tape, Model& model, const Sample& s, const TrainConfig& cfg) {
    const FeatureGrid grid = image_to_grid(s.image);
    const Model::ForwardResult fr = model.forward(tape, grid);

    const ad::VarId gt = tape.constant(double(s.count()));
    ad::VarId loss = tape.abs(tape.add_scaled(fr.count, gt, -1.0));

    if (cfg.aux_window_loss) {
        const RedundantCountMap gt_map = window_counts_from_dots(
            s.dots, grid.height_p, grid.width_p, model.config().r, model.config().output_stride());
        ad::Tensor gt_tensor({int(gt_map.values.size()), 1}, gt_map.values);
        const ad::VarId gt_node = tape.leaf(std::move(gt_tensor), false);
        const ad::VarId diff = tape.abs(tape.add_scaled(fr.window_map, gt_node, -1.0));
        loss = tape.add(loss, tape.scale(tape.sum_all(diff),
                                         cfg.aux_weight / double(gt_map.values.size())));
    }
    return loss;
}

} // namespace

TrainResult train(Model& model, const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>* val_set, const std::string& out_dir) {
    cfg.validate();
    if (train_set.empty()) throw InvalidArgument("train: empty dataset");

    if (!out_dir.empty()) fs::create_directories(out_dir);
    for (ad::Param* p : model.params()) {
        p->ensure_state();
        p->zero_grad();
    }

    TrainResult result;
    Rng order_rng(cfg.seed);
    int64_t step_count = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = order_rng.fork(uint64_t(epoch) + 1);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_int(0, int64_t(i) - 1))]);

        double loss_sum = 0.0;
        size_t batch_fill = 0;
        for (size_t k = 0; k < order.size(); ++k) {
            const Sample& base = train_set[size_t(order[k])];
            Sample cropped;
            const Sample* s = &base;
            if (cfg.crop > 0 && (base.image.height > cfg.crop || base.image.width > cfg.crop)) {
                cropped = crop_augment(base, cfg.crop,
                                       cfg.seed ^ (uint64_t(epoch) * 0x9e3779b9ULL + k * 1315423911ULL));
                s = &cropped;
            }

            ad::Tape tape;
            const ad::VarId loss = sample_loss(tape, model, *s, cfg);
            const double loss_value = tape.val(loss).data[0];
            if (!std::isfinite(loss_value))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", sample " + s->id);
            loss_sum += loss_value;
            ++batch_fill;

            // The remaining batch slots determine the averaging factor: scale each
            // sample's contribution by 1/batch_n so that accumulated grads equal the
            // batch-mean gradient.
            const size_t remaining = order.size() - 1 - k;
            const size_t batch_n = std::min(size_t(cfg.batch_size),
                                            batch_fill + remaining);
            tape.backward(tape.scale(loss, 1.0 / double(batch_n)));

            if (batch_fill == size_t(cfg.batch_size) || k + 1 == order.size()) {
                ++step_count;
                adam_step(model.params(), cfg, step_count);
                for (ad::Param* p : model.params()) p->zero_grad();
                batch_fill = 0;
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / double(train_set.size());
        if (val_set && !val_set->empty()) {
            log.has_val = true;
            log.val_mae = eval_mae(model, *val_set);
        }
        result.log.push_back(log);

        const double score = log.has_val ? log.val_mae : log.train_loss;
        if (result.best_epoch < 0 || score < result.best_score) {
            result.best_epoch = epoch;
            result.best_score = score;
            if (!out_dir.empty())
                model.save_checkpoint((fs::path(out_dir) / "best.ckpt").string());
        }
    }

    if (!out_dir.empty()) {
        model.save_checkpoint((fs::path(out_dir) / "final.ckpt").string());
        if (result.best_epoch < 0)
            model.save_checkpoint((fs::path(out_dir) / "best.ckpt").string());
        std::ofstream log_file(fs::path(out_dir) / "train_log.csv");
        log_file << train_log_to_csv(result.log);
    }
    return result;
}

std::string train_log_to_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_mae\n";
    char buf[96];
    for (const EpochLog& e : log) {
        if (e.has_val)
            std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g\n", e.epoch, e.train_loss, e.val_mae);
        else
            std::snprintf(buf, sizeof(buf), "%d,%.10g,\n", e.epoch, e.train_loss);
        out += buf;
    }
    return out;
}

EvalResult evaluate(Model& model, const std::vector<Sample>& samples, const EvalOptions& opt) {
    if (samples.empty()) throw InvalidArgument("evaluate: empty dataset");
    EvalResult result;
    std::vector<double> gt, pred;
    for (const Sample& s : samples) {
        double p = 0.0;
        if (opt.baseline_mean) {
            p = *opt.baseline_mean;
        } else if (opt.oracle) {
            const RedundantCountMap cr = window_counts_from_dots(
                s.dots, s.image.height, s.image.width, model.config().r, model.config().output_stride());
            p = image_count(normalize_map(cr));
        } else if (opt.collect_fusion) {
            ad::Tape tape;
            const Model::ForwardResult fr = model.forward(tape, image_to_grid(s.image));
            p = tape.val(fr.count).data[0];
            result.fusion_means.push_back(mean_fusion_weights(tape, fr.fusion_weights));
        } else {
            p = model.predict_count(image_to_grid(s.image));
        }
        gt.push_back(double(s.count()));
        pred.push_back(p);
        result.rows.push_back({s.id, double(s.count()), p});
    }
    result.metrics = compute_metrics(gt, pred);
    return result;
}

} // namespace plantcount

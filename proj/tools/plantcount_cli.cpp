// Command-line front end: dataset synthesis, training, inference, evaluation,
// and scan-order export.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "plantcount/count_map.hpp"
#include "plantcount/data.hpp"
#include "plantcount/model.hpp"
#include "plantcount/trainer.hpp"

namespace fs = std::filesystem;
using namespace plantcount;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;
constexpr int kExitInternal = 2;

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument("config: bad line: " + line);
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t");
            const size_t b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::string default_out(const std::string& leaf) {
    const char* root = std::getenv("PLANTCOUNT_OUT");
    if (!root || !*root)
        throw InvalidArgument("no --out given and PLANTCOUNT_OUT is not set");
    return (fs::path(root) / leaf).string();
}

void require_empty_or_force(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw InvalidArgument("output directory is not empty (use --force): " + dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write: " + path);
    out << text;
}

std::vector<ScanDirection> parse_directions(const std::string& csv) {
    std::vector<ScanDirection> dirs;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) dirs.push_back(direction_from_name(tok));
    return dirs;
}

// Flat key space shared by the config file and the flags; flags win.
struct TrainSetup {
    ModelConfig model;
    TrainConfig train;

    static TrainSetup from_kv(const std::map<std::string, std::string>& kv) {
        TrainSetup s;
        auto it = kv.find("preset");
        s.model = ModelConfig::from_preset(it != kv.end() ? it->second : "small");
        for (const auto& [key, val] : kv) {
            if (key == "preset") continue;
            else if (key == "directions") s.model.directions = parse_directions(val);
            else if (key == "grouping") s.model.grouping = grouping_from_name(val);
            else if (key == "adaptive_fusion") s.model.adaptive_fusion = val != "0";
            else if (key == "cnn_branch") s.model.cnn_branch = val != "0";
            else if (key == "use_skip") s.model.use_skip = val != "0";
            else if (key == "fusion_mode")
                s.model.fusion_mode = val == "pooled" ? FusionMode::Pooled : FusionMode::PositionWise;
            else if (key == "beta") s.model.beta = std::stod(val);
            else if (key == "r") s.model.r = std::stoi(val);
            else if (key == "init_seed") s.model.init_seed = std::stoull(val);
            else if (key == "lr") s.train.lr = std::stod(val);
            else if (key == "batch_size") s.train.batch_size = std::stoi(val);
            else if (key == "epochs") s.train.epochs = std::stoi(val);
            else if (key == "crop") s.train.crop = std::stoi(val);
            else if (key == "aux_window_loss") s.train.aux_window_loss = val != "0";
            else if (key == "aux_weight") s.train.aux_weight = std::stod(val);
            else if (key == "seed") s.train.seed = std::stoull(val);
            else throw InvalidArgument("config: unknown key: " + key);
        }
        return s;
    }

    std::string to_text() const {
        std::ostringstream out;
        out << model.to_text();
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.10g", train.lr);
        out << "lr = " << buf << '\n'
            << "batch_size = " << train.batch_size << '\n'
            << "epochs = " << train.epochs << '\n'
            << "crop = " << train.crop << '\n'
            << "aux_window_loss = " << (train.aux_window_loss ? 1 : 0) << '\n'
            << "seed = " << train.seed << '\n';
        return out.str();
    }
};

// ---- synth ----

int cmd_synth(const std::string& config_path, std::string out_dir, int n, bool force,
              const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = read_kv_file(config_path);
    std::optional<int> n_from_file;
    if (auto it = kv.find("n"); it != kv.end()) {
        n_from_file = std::stoi(it->second);
        kv.erase(it);
    }
    for (const auto& [k, v] : overrides) kv[k] = v;

    std::string text;
    for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
    SynthConfig cfg = SynthConfig::from_text(text);
    if (n <= 0) n = n_from_file.value_or(16);

    if (out_dir.empty()) out_dir = default_out("synth");
    require_empty_or_force(out_dir, force);

    const std::vector<Sample> samples = gen_synthetic(cfg, n);
    std::string manifest = cfg.to_text();
    manifest += "n = " + std::to_string(n) + "\n";
    save_dataset(out_dir, samples, manifest);

    int total_dots = 0;
    for (const Sample& s : samples) total_dots += s.count();
    std::printf("wrote %d samples to %s\n", n, out_dir.c_str());
    std::printf("dots: total %d, mean %.3f per image\n", total_dots,
                n > 0 ? double(total_dots) / n : 0.0);
    return kExitOk;
}

// ---- train ----

int cmd_train(const std::string& config_path, const std::string& dataset_dir, std::string out_dir,
              const std::string& val_dir, const std::map<std::string, std::string>& overrides,
              bool force) {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = read_kv_file(config_path);
    for (const auto& [k, v] : overrides) kv[k] = v;
    TrainSetup setup = TrainSetup::from_kv(kv);
    setup.model.validate();
    setup.train.validate();

    if (out_dir.empty()) out_dir = default_out("train");
    require_empty_or_force(out_dir, force);
    fs::create_directories(out_dir);

    const std::vector<Sample> train_set = load_dataset(dataset_dir);
    if (train_set.empty()) throw InvalidArgument("train: dataset is empty: " + dataset_dir);
    std::vector<Sample> val_set;
    if (!val_dir.empty()) val_set = load_dataset(val_dir);

    write_text((fs::path(out_dir) / "config_effective.txt").string(), setup.to_text());

    Model model(setup.model);
    std::printf("model: %lld parameters\n", (long long)model.param_count());
    const TrainResult result =
        train(model, setup.train, train_set, val_set.empty() ? nullptr : &val_set, out_dir);

    if (!result.log.empty())
        std::printf("final train loss %.4f (best epoch %d)\n", result.log.back().train_loss,
                    result.best_epoch);
    std::printf("checkpoints in %s\n", out_dir.c_str());
    return kExitOk;
}

// ---- infer ----

int cmd_infer(const std::string& ckpt_path, const std::string& image_path,
              const std::string& emit_map, bool strict, bool resize) {
    auto model = Model::load_checkpoint(ckpt_path);
    Image img = read_png(image_path);

    const int stride = model->config().output_stride();
    if (img.height % stride != 0 || img.width % stride != 0) {
        if (strict)
            throw InvalidArgument("image dims not divisible by " + std::to_string(stride) +
                                  " (strict mode)");
        const int oh = img.height, ow = img.width;
        if (resize) {
            const int nh = std::max(stride, (img.height + stride / 2) / stride * stride);
            const int nw = std::max(stride, (img.width + stride / 2) / stride * stride);
            img = resize_bilinear(img, nh, nw);
            std::printf("resized %dx%d -> %dx%d\n", ow, oh, img.width, img.height);
        } else {
            img = pad_reflect(img, stride);
            std::printf("reflection-padded %dx%d -> %dx%d\n", ow, oh, img.width, img.height);
        }
    }

    const RedundantCountMap window_map = model->predict_window_map(image_to_grid(img));
    const NormalizedCountMap normalized = normalize_map(window_map);
    const double count = image_count(normalized);
    std::printf("count: %.2f (exact %.10g)\n", count, count);

    if (!emit_map.empty()) {
        write_text(emit_map + ".txt", count_map_to_text(normalized));
        double cmax = 0.0;
        for (double v : normalized.values) cmax = std::max(cmax, v);
        write_png_gray16(emit_map + ".png", normalized.height, normalized.width,
                         normalized.values, cmax);
        std::printf("wrote %s.txt and %s.png (map sum %.10g)\n", emit_map.c_str(),
                    emit_map.c_str(), image_count(normalized));
    }
    return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_dir, std::string out_dir,
             bool oracle, std::optional<double> baseline_mean, const std::string& baseline_from,
             const std::string& fusion_csv, bool force) {
    auto model = Model::load_checkpoint(ckpt_path);
    const std::vector<Sample> samples = load_dataset(dataset_dir);
    if (samples.empty()) throw InvalidArgument("eval: dataset is empty: " + dataset_dir);

    EvalOptions opt;
    opt.oracle = oracle;
    opt.collect_fusion = !fusion_csv.empty();
    if (!baseline_from.empty()) {
        const std::vector<Sample> ref = load_dataset(baseline_from);
        if (ref.empty()) throw InvalidArgument("eval: baseline dataset is empty: " + baseline_from);
        double mean = 0.0;
        for (const Sample& s : ref) mean += s.count();
        opt.baseline_mean = mean / double(ref.size());
    } else if (baseline_mean) {
        opt.baseline_mean = baseline_mean;
    }

    const EvalResult result = evaluate(*model, samples, opt);
    std::fputs(metrics_to_text(result.metrics).c_str(), stdout);

    if (out_dir.empty()) {
        const char* root = std::getenv("PLANTCOUNT_OUT");
        if (root && *root) out_dir = (fs::path(root) / "eval").string();
    }
    if (!out_dir.empty()) {
        require_empty_or_force(out_dir, force);
        fs::create_directories(out_dir);
        std::ostringstream inv;
        inv << "checkpoint = " << ckpt_path << '\n'
            << "dataset = " << dataset_dir << '\n'
            << "oracle = " << (oracle ? 1 : 0) << '\n';
        if (opt.baseline_mean) inv << "baseline_mean = " << *opt.baseline_mean << '\n';
        write_text((fs::path(out_dir) / "invocation.txt").string(), inv.str());
        write_text((fs::path(out_dir) / "metrics.txt").string(), metrics_to_text(result.metrics));
        write_text((fs::path(out_dir) / "metrics.csv").string(), metrics_to_csv(result.metrics));
        std::string rows = "id,gt,pred\n";
        char buf[160];
        for (const EvalRow& r : result.rows) {
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g\n", r.id.c_str(), r.gt, r.pred);
            rows += buf;
        }
        write_text((fs::path(out_dir) / "per_image.csv").string(), rows);
        std::printf("reports in %s\n", out_dir.c_str());
    }

    if (!fusion_csv.empty()) {
        std::string rows = "image_id";
        for (const std::string& label : model->branch_labels()) rows += ",alpha_" + label;
        rows += "\n";
        char buf[64];
        for (size_t i = 0; i < result.rows.size(); ++i) {
            rows += result.rows[i].id;
            for (double a : result.fusion_means[i]) {
                std::snprintf(buf, sizeof(buf), ",%.6f", a);
                rows += buf;
            }
            rows += "\n";
        }
        write_text(fusion_csv, rows);
    }
    return kExitOk;
}

// ---- scan-dump ----

int cmd_scan_dump(const std::string& direction, int height, int width, const std::string& out_path) {
    const ScanOrder order = build_order(direction_from_name(direction), height, width);
    const std::string csv = order_to_csv(order);
    if (out_path.empty()) std::fputs(csv.c_str(), stdout);
    else write_text(out_path, csv);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-directional state-space plant counter"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic counting dataset");
    std::string synth_config, synth_out;
    int synth_n = 0;
    bool synth_force = false;
    std::map<std::string, std::string> synth_overrides;
    synth->add_option("--config", synth_config, "key=value config file (SynthConfig schema)");
    synth->add_option("--out", synth_out, "output dataset directory");
    synth->add_option("--n", synth_n, "number of samples");
    synth->add_flag("--force", synth_force, "allow writing into a non-empty directory");
    std::string synth_seed, synth_placement, synth_size, synth_cmin, synth_cmax, synth_margin;
    synth->add_option("--seed", synth_seed, "override: seed");
    synth->add_option("--placement", synth_placement, "override: placement distribution");
    synth->add_option("--size", synth_size, "override: square image size");
    synth->add_option("--count-min", synth_cmin, "override: minimum count");
    synth->add_option("--count-max", synth_cmax, "override: maximum count");
    synth->add_option("--margin", synth_margin, "override: dot margin from borders");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a counting model");
    std::string train_config, train_dataset, train_out, train_val;
    bool train_force = false;
    std::string t_preset, t_lr, t_epochs, t_batch, t_seed, t_dirs, t_grouping, t_beta, t_r, t_crop;
    std::string t_adaptive, t_cnn, t_init_seed;
    train_cmd->add_option("--config", train_config, "key=value config file");
    train_cmd->add_option("--dataset", train_dataset, "training dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output directory (checkpoints, logs)");
    train_cmd->add_option("--val-dir", train_val, "validation dataset directory");
    train_cmd->add_flag("--force", train_force, "allow writing into a non-empty directory");
    train_cmd->add_option("--preset", t_preset, "model preset: default|small|tiny|micro");
    train_cmd->add_option("--lr", t_lr, "learning rate");
    train_cmd->add_option("--epochs", t_epochs, "training epochs");
    train_cmd->add_option("--batch-size", t_batch, "batch size");
    train_cmd->add_option("--seed", t_seed, "training seed");
    train_cmd->add_option("--init-seed", t_init_seed, "weight init seed");
    train_cmd->add_option("--directions", t_dirs, "scan direction subset, e.g. H,V,D,A");
    train_cmd->add_option("--grouping", t_grouping, "expert grouping: one|two|four");
    train_cmd->add_option("--adaptive-fusion", t_adaptive, "1|0 adaptive fusion");
    train_cmd->add_option("--cnn-branch", t_cnn, "1|0 local CNN branch");
    train_cmd->add_option("--beta", t_beta, "local-branch fusion weight");
    train_cmd->add_option("--r", t_r, "ground-truth window size in pixels");
    train_cmd->add_option("--crop", t_crop, "training crop size (0 = full image)");

    // infer
    auto* infer = app.add_subcommand("infer", "Predict the count for one image");
    std::string infer_ckpt, infer_image, infer_map;
    bool infer_strict = false, infer_resize = false;
    infer->add_option("--checkpoint", infer_ckpt, "model checkpoint")->required();
    infer->add_option("--image", infer_image, "input PNG image")->required();
    infer->add_option("--emit-map", infer_map, "write <base>.txt and <base>.png normalized maps");
    infer->add_flag("--strict", infer_strict, "error out on non-divisible dims instead of padding");
    infer->add_flag("--resize", infer_resize, "resize instead of reflection padding");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_dataset, eval_out, eval_baseline_from, eval_fusion_csv;
    bool eval_oracle = false, eval_force = false;
    double eval_baseline_mean = -1.0;
    bool eval_baseline_mean_set = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--dataset", eval_dataset, "evaluation dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "report output directory");
    eval_cmd->add_flag("--oracle", eval_oracle,
                       "predict from ground-truth dots through the count-map geometry");
    auto* bm = eval_cmd->add_option("--baseline-mean", eval_baseline_mean,
                                    "predict a constant value for every image");
    eval_cmd->add_option("--baseline-from", eval_baseline_from,
                         "predict the mean count of this dataset");
    eval_cmd->add_option("--fusion-csv", eval_fusion_csv, "write per-image mean fusion weights");
    eval_cmd->add_flag("--force", eval_force, "allow writing into a non-empty directory");

    // scan-dump
    auto* scan = app.add_subcommand("scan-dump", "Export a scan order as CSV");
    std::string scan_dir = "H", scan_out;
    int scan_h = 4, scan_w = 4;
    scan->add_option("--direction", scan_dir, "H|V|D|A");
    scan->add_option("--height", scan_h, "grid rows");
    scan->add_option("--width", scan_w, "grid cols");
    scan->add_option("--out", scan_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUserError;
    }

    try {
        if (synth->parsed()) {
            if (!synth_seed.empty()) synth_overrides["seed"] = synth_seed;
            if (!synth_placement.empty()) synth_overrides["placement"] = synth_placement;
            if (!synth_size.empty()) {
                synth_overrides["height"] = synth_size;
                synth_overrides["width"] = synth_size;
            }
            if (!synth_cmin.empty()) synth_overrides["count_min"] = synth_cmin;
            if (!synth_cmax.empty()) synth_overrides["count_max"] = synth_cmax;
            if (!synth_margin.empty()) synth_overrides["margin"] = synth_margin;
            return cmd_synth(synth_config, synth_out, synth_n, synth_force, synth_overrides);
        }
        if (train_cmd->parsed()) {
            std::map<std::string, std::string> ov;
            if (!t_preset.empty()) ov["preset"] = t_preset;
            if (!t_lr.empty()) ov["lr"] = t_lr;
            if (!t_epochs.empty()) ov["epochs"] = t_epochs;
            if (!t_batch.empty()) ov["batch_size"] = t_batch;
            if (!t_seed.empty()) ov["seed"] = t_seed;
            if (!t_init_seed.empty()) ov["init_seed"] = t_init_seed;
            if (!t_dirs.empty()) ov["directions"] = t_dirs;
            if (!t_grouping.empty()) ov["grouping"] = t_grouping;
            if (!t_adaptive.empty()) ov["adaptive_fusion"] = t_adaptive;
            if (!t_cnn.empty()) ov["cnn_branch"] = t_cnn;
            if (!t_beta.empty()) ov["beta"] = t_beta;
            if (!t_r.empty()) ov["r"] = t_r;
            if (!t_crop.empty()) ov["crop"] = t_crop;
            return cmd_train(train_config, train_dataset, train_out, train_val, ov, train_force);
        }
        if (infer->parsed())
            return cmd_infer(infer_ckpt, infer_image, infer_map, infer_strict, infer_resize);
        if (eval_cmd->parsed()) {
            eval_baseline_mean_set = bm->count() > 0;
            return cmd_eval(eval_ckpt, eval_dataset, eval_out, eval_oracle,
                            eval_baseline_mean_set ? std::optional<double>(eval_baseline_mean)
                                                   : std::nullopt,
                            eval_baseline_from, eval_fusion_csv, eval_force);
        }
        if (scan->parsed()) return cmd_scan_dump(scan_dir, scan_h, scan_w, scan_out);
    } catch (const InvalidArgument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUserError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitInternal;
    }
    return kExitUserError;
}

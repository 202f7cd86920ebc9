#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "plantcount/backbone.hpp"
#include "plantcount/count_head.hpp"
#include "plantcount/count_map.hpp"
#include "plantcount/fusion.hpp"

namespace plantcount {

enum class ExpertGrouping { One, Two, Four };

ExpertGrouping grouping_from_name(const std::string& name);
const char* grouping_name(ExpertGrouping g);

struct ModelConfig {
    std::string preset = "small";
    std::vector<int> stage_blocks{1, 1, 1};
    std::vector<int> stage_channels{16, 32, 64};
    std::vector<int> cnn_channels{16, 32};  // final CNN stage always matches stage_channels.back()
    int state_dim = 4;
    int expand = 2;
    int k_conv = 4;
    int patch = 2;
    int head_hidden = 32;
    std::vector<ScanDirection> directions{ScanDirection::Horizontal, ScanDirection::Vertical,
                                          ScanDirection::Diagonal, ScanDirection::AntiDiagonal};
    ExpertGrouping grouping = ExpertGrouping::Four;
    bool adaptive_fusion = true;
    bool cnn_branch = true;
    bool use_skip = true;
    FusionMode fusion_mode = FusionMode::PositionWise;
    double beta = 1.0;
    int r = 64;  // ground-truth window size in pixels
    uint64_t init_seed = 1;

    static ModelConfig from_preset(const std::string& name);
    // Pixels per output cell: patch embed stride times the two 2x merges.
    int output_stride() const { return patch * 4; }
    int final_channels() const { return stage_channels.back(); }
    void validate() const;

    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
};

// Full network: multi-directional expert branches, global-local fusion, counter.
class Model {
public:
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    std::vector<ad::Param*>& params() { return registry_; }
    int64_t param_count() const;
    // One label per expert branch, e.g. {"H","V","D","A"} or {"HV","DA"}.
    std::vector<std::string> branch_labels() const;

    struct ForwardResult {
        ad::VarId count = ad::kNoVar;          // scalar: normalized-map sum
        ad::VarId window_map = ad::kNoVar;     // [map_h*map_w, 1]
        ad::VarId fusion_weights = ad::kNoVar; // [cells, experts]
        int map_h = 0, map_w = 0;
        int image_h = 0, image_w = 0;
    };

    // Image values in [0,1], 3 channels, dims divisible by the output stride.
    ForwardResult forward(ad::Tape& tape, const FeatureGrid& image);

    // Inference helpers (no gradient bookkeeping beyond the tape build).
    double predict_count(const FeatureGrid& image);
    RedundantCountMap predict_window_map(const FeatureGrid& image);

    void save_checkpoint(const std::string& path) const;
    static std::unique_ptr<Model> load_checkpoint(const std::string& path);
    // Load weights into this model; shapes must match (error names the parameter).
    void load_weights(const std::string& path);

private:
    ModelConfig config_;
    PatchEmbedParams embed_;
    std::vector<BranchParams> branches_;
    FusionParams fusion_;
    CnnBranchParams cnn_;
    HeadParams head_;
    std::vector<ad::Param*> registry_;
    // (image_h, image_w) -> per-window weights for the normalized-count sum
    std::map<std::pair<int, int>, std::vector<double>> weight_cache_;

    void build(Rng& rng);
    void register_params();
    const std::vector<double>& cached_count_weights(int image_h, int image_w);

    friend struct ModelIo;
};

} // namespace plantcount

#include "plantcount/model.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace plantcount {

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

std::string join_directions(const std::vector<ScanDirection>& dirs) {
    std::string out;
    for (size_t i = 0; i < dirs.size(); ++i) {
        if (i) out += ',';
        out += direction_name(dirs[i])[0];
    }
    return out;
}

std::vector<ScanDirection> split_directions(const std::string& s) {
    std::vector<ScanDirection> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(direction_from_name(tok));
    return out;
}

} // namespace

ExpertGrouping grouping_from_name(const std::string& name) {
    if (name == "one") return ExpertGrouping::One;
    if (name == "two") return ExpertGrouping::Two;
    if (name == "four") return ExpertGrouping::Four;
    throw InvalidArgument("unknown expert grouping: " + name);
}

const char* grouping_name(ExpertGrouping g) {
    switch (g) {
        case ExpertGrouping::One: return "one";
        case ExpertGrouping::Two: return "two";
        case ExpertGrouping::Four: return "four";
    }
    return "?";
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
    ModelConfig c;
    c.preset = name;
    if (name == "default") {
        c.stage_blocks = {2, 2, 2};
        c.stage_channels = {48, 96, 192};
        c.cnn_channels = {48, 96};
        c.state_dim = 16;
        c.head_hidden = 96;
    } else if (name == "small") {
        c.stage_blocks = {1, 1, 1};
        c.stage_channels = {16, 32, 64};
        c.cnn_channels = {16, 32};
        c.state_dim = 4;
        c.head_hidden = 32;
    } else if (name == "tiny") {
        c.stage_blocks = {1, 1, 1};
        c.stage_channels = {8, 16, 32};
        c.cnn_channels = {8, 16};
        c.state_dim = 2;
        c.head_hidden = 16;
    } else if (name == "micro") {
        c.stage_blocks = {1, 0, 0};
        c.stage_channels = {3, 6, 12};
        c.cnn_channels = {2, 3};
        c.state_dim = 2;
        c.head_hidden = 4;
    } else {
        throw InvalidArgument("unknown model preset: " + name);
    }
    return c;
}

void ModelConfig::validate() const {
    if (stage_blocks.size() != 3 || stage_channels.size() != 3)
        throw InvalidArgument("model config: expected 3 stages");
    for (int c : stage_channels)
        if (c < 1) throw InvalidArgument("model config: channels must be positive");
    for (int b : stage_blocks)
        if (b < 0) throw InvalidArgument("model config: negative block count");
    if (state_dim < 1 || expand < 1 || k_conv < 1 || patch < 1 || head_hidden < 1)
        throw InvalidArgument("model config: bad dimension");
    if (directions.empty()) throw InvalidArgument("model config: directions subset is empty");
    for (size_t i = 0; i < directions.size(); ++i)
        for (size_t j = i + 1; j < directions.size(); ++j)
            if (directions[i] == directions[j])
                throw InvalidArgument("model config: duplicate scan direction");
    if (r < output_stride()) throw InvalidArgument("model config: r must be >= output stride");
    if (beta < 0.0) throw InvalidArgument("model config: beta must be nonnegative");
}

std::string ModelConfig::to_text() const {
    std::ostringstream out;
    char betabuf[48];
    std::snprintf(betabuf, sizeof(betabuf), "%.17g", beta);
    out << "preset = " << preset << '\n'
        << "stage_blocks = " << join_ints(stage_blocks) << '\n'
        << "stage_channels = " << join_ints(stage_channels) << '\n'
        << "cnn_channels = " << join_ints(cnn_channels) << '\n'
        << "state_dim = " << state_dim << '\n'
        << "expand = " << expand << '\n'
        << "k_conv = " << k_conv << '\n'
        << "patch = " << patch << '\n'
        << "head_hidden = " << head_hidden << '\n'
        << "directions = " << join_directions(directions) << '\n'
        << "grouping = " << grouping_name(grouping) << '\n'
        << "adaptive_fusion = " << (adaptive_fusion ? 1 : 0) << '\n'
        << "cnn_branch = " << (cnn_branch ? 1 : 0) << '\n'
        << "use_skip = " << (use_skip ? 1 : 0) << '\n'
        << "fusion_mode = " << (fusion_mode == FusionMode::PositionWise ? "positionwise" : "pooled") << '\n'
        << "beta = " << betabuf << '\n'
        << "r = " << r << '\n'
        << "init_seed = " << init_seed << '\n';
    return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument("model config: bad line: " + line);
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t");
            const size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "preset") c.preset = val;
        else if (key == "stage_blocks") c.stage_blocks = split_ints(val);
        else if (key == "stage_channels") c.stage_channels = split_ints(val);
        else if (key == "cnn_channels") c.cnn_channels = split_ints(val);
        else if (key == "state_dim") c.state_dim = std::stoi(val);
        else if (key == "expand") c.expand = std::stoi(val);
        else if (key == "k_conv") c.k_conv = std::stoi(val);
        else if (key == "patch") c.patch = std::stoi(val);
        else if (key == "head_hidden") c.head_hidden = std::stoi(val);
        else if (key == "directions") c.directions = split_directions(val);
        else if (key == "grouping") c.grouping = grouping_from_name(val);
        else if (key == "adaptive_fusion") c.adaptive_fusion = val != "0";
        else if (key == "cnn_branch") c.cnn_branch = val != "0";
        else if (key == "use_skip") c.use_skip = val != "0";
        else if (key == "fusion_mode")
            c.fusion_mode = val == "pooled" ? FusionMode::Pooled : FusionMode::PositionWise;
        else if (key == "beta") c.beta = std::stod(val);
        else if (key == "r") c.r = std::stoi(val);
        else if (key == "init_seed") c.init_seed = std::stoull(val);
        else throw InvalidArgument("model config: unknown key: " + key);
    }
    c.validate();
    return c;
}

// Directions grouped into expert branches. Four: one per direction. Two: the
// horizontal/vertical pair and the diagonal pair. One: a single branch scanning
// every requested direction.
static std::vector<std::vector<ScanDirection>> expert_partition(const ModelConfig& c) {
    std::vector<std::vector<ScanDirection>> groups;
    switch (c.grouping) {
        case ExpertGrouping::Four:
            for (ScanDirection d : c.directions) groups.push_back({d});
            break;
        case ExpertGrouping::Two: {
            std::vector<ScanDirection> hv, da;
            for (ScanDirection d : c.directions) {
                if (d == ScanDirection::Horizontal || d == ScanDirection::Vertical) hv.push_back(d);
                else da.push_back(d);
            }
            if (!hv.empty()) groups.push_back(hv);
            if (!da.empty()) groups.push_back(da);
            break;
        }
        case ExpertGrouping::One:
            groups.push_back(c.directions);
            break;
    }
    return groups;
}

Model::Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.init_seed);
    build(rng);
    register_params();
}

void Model::build(Rng& rng) {
    embed_ = init_patch_embed(config_.patch, config_.stage_channels[0], rng);

    const auto groups = expert_partition(config_);
    for (const auto& dirs : groups) {
        BranchParams branch;
        branch.stages.resize(3);
        for (int stage = 0; stage < 3; ++stage) {
            for (int b = 0; b < config_.stage_blocks[stage]; ++b)
                branch.stages[stage].push_back(init_block(config_.stage_channels[stage],
                                                          config_.expand, config_.state_dim,
                                                          config_.k_conv, dirs, config_.use_skip,
                                                          rng));
            if (stage < 2) branch.merges.push_back(init_downsample(config_.stage_channels[stage], rng));
        }
        branches_.push_back(std::move(branch));
    }

    fusion_ = init_fusion(int(groups.size()), config_.final_channels());

    std::vector<int> cnn_ch = config_.cnn_channels;
    cnn_ch.push_back(config_.final_channels());
    cnn_ = init_cnn_branch(cnn_ch, rng);

    head_ = init_head(config_.final_channels(), config_.head_hidden, rng);
}

void Model::register_params() {
    registry_.clear();
    auto add = [this](const std::vector<ad::Param*>& group) {
        for (ad::Param* p : group) registry_.push_back(p);
    };

    std::vector<ad::Param*> tmp;
    collect_params(embed_, tmp);
    tmp[0]->name = "embed.w";
    tmp[1]->name = "embed.b";
    add(tmp);

    for (size_t bi = 0; bi < branches_.size(); ++bi) {
        BranchParams& br = branches_[bi];
        const std::string bp = "branch" + std::to_string(bi) + ".";
        for (size_t stage = 0; stage < br.stages.size(); ++stage) {
            for (size_t blk = 0; blk < br.stages[stage].size(); ++blk) {
                BlockParams& b = br.stages[stage][blk];
                const std::string pre =
                    bp + "stage" + std::to_string(stage) + ".block" + std::to_string(blk) + ".";
                b.ln_gamma.name = pre + "ln.gamma";
                b.ln_beta.name = pre + "ln.beta";
                b.in_w.name = pre + "in_proj.w";
                b.gate_w.name = pre + "gate.w";
                b.ssm_out_w.name = pre + "ssm_out.w";
                b.out_w.name = pre + "out_proj.w";
                std::vector<ad::Param*> bg;
                collect_params(b, bg);
                for (DirPathParams& path : b.paths) {
                    const std::string dp = pre + "dir" + direction_name(path.direction)[0] + std::string(".");
                    path.conv_w.name = dp + "conv.w";
                    path.conv_b.name = dp + "conv.b";
                    auto name_ssm = [&dp](SsmParamSet& s, const char* which) {
                        const std::string sp = dp + which + std::string(".");
                        s.a_log.name = sp + "a_log";
                        s.d_skip.name = sp + "d_skip";
                        s.w_delta.name = sp + "w_delta";
                        s.b_delta.name = sp + "b_delta";
                        s.w_b.name = sp + "w_b";
                        s.b_b.name = sp + "b_b";
                        s.w_c.name = sp + "w_c";
                        s.b_c.name = sp + "b_c";
                    };
                    name_ssm(path.fwd, "fwd");
                    name_ssm(path.bwd, "bwd");
                }
                add(bg);
            }
            if (stage < br.merges.size()) {
                DownsampleParams& m = br.merges[stage];
                const std::string mp = bp + "merge" + std::to_string(stage) + ".";
                m.ln_gamma.name = mp + "ln.gamma";
                m.ln_beta.name = mp + "ln.beta";
                m.w.name = mp + "w";
                std::vector<ad::Param*> mg;
                collect_params(m, mg);
                add(mg);
            }
        }
    }

    fusion_.w.name = "fusion.w";
    if (branches_.size() > 1 && config_.adaptive_fusion) registry_.push_back(&fusion_.w);

    if (config_.cnn_branch) {
        for (size_t i = 0; i < cnn_.stages.size(); ++i) {
            CnnStageParams& s = cnn_.stages[i];
            const std::string cp = "cnn.stage" + std::to_string(i) + ".";
            s.conv_w.name = cp + "conv.w";
            s.bn_gamma.name = cp + "bn.gamma";
            s.bn_beta.name = cp + "bn.beta";
            registry_.push_back(&s.conv_w);
            registry_.push_back(&s.bn_gamma);
            registry_.push_back(&s.bn_beta);
        }
    }

    std::vector<ad::Param*> hg;
    collect_params(head_, hg);
    add(hg);

    for (ad::Param* p : registry_) p->ensure_state();
}

std::vector<std::string> Model::branch_labels() const {
    std::vector<std::string> labels;
    for (const auto& dirs : expert_partition(config_)) {
        std::string label;
        for (ScanDirection d : dirs) label += direction_name(d)[0];
        labels.push_back(label);
    }
    return labels;
}

int64_t Model::param_count() const {
    int64_t total = 0;
    for (const ad::Param* p : registry_) total += p->value.numel();
    return total;
}

const std::vector<double>& Model::cached_count_weights(int image_h, int image_w) {
    const auto key = std::make_pair(image_h, image_w);
    auto it = weight_cache_.find(key);
    if (it == weight_cache_.end())
        it = weight_cache_.emplace(key, count_weights(image_h, image_w, config_.r, config_.output_stride())).first;
    return it->second;
}

Model::ForwardResult Model::forward(ad::Tape& tape, const FeatureGrid& image) {
    const int stride = config_.output_stride();
    if (image.channels != 3) throw InvalidArgument("model forward: image must have 3 channels");
    if (image.height_p % stride != 0 || image.width_p % stride != 0)
        throw InvalidArgument("model forward: image dims must be divisible by " + std::to_string(stride));

    ForwardResult res;
    res.image_h = image.height_p;
    res.image_w = image.width_p;

    const ad::Tensor patches = extract_patches(image, config_.patch);
    const ad::VarId x0 = patch_embed_forward(tape, patches, embed_);

    std::vector<ad::VarId> branch_feats;
    GridShape final_shape;
    for (BranchParams& branch : branches_) {
        GridShape shape{image.height_p / config_.patch, image.width_p / config_.patch};
        branch_feats.push_back(branch_forward(tape, x0, shape, branch));
        final_shape = shape;
    }

    const FusionResult fusion =
        fuse_experts(tape, branch_feats, fusion_, config_.fusion_mode, config_.adaptive_fusion);
    res.fusion_weights = fusion.weights;

    ad::VarId fused = fusion.fused;
    if (config_.cnn_branch) {
        ad::Tensor img_rows({image.height_p * image.width_p, 3});
        img_rows.data = image.data;
        const ad::VarId img = tape.leaf(std::move(img_rows), false);
        const ad::VarId local = cnn_branch_forward(tape, img, image.height_p, image.width_p, cnn_);
        fused = tape.add_scaled(fused, local, config_.beta);
    }

    res.window_map = head_forward(tape, fused, head_);
    res.map_h = final_shape.height_p;
    res.map_w = final_shape.width_p;
    res.count = tape.dot_const(res.window_map, cached_count_weights(image.height_p, image.width_p));
    return res;
}

double Model::predict_count(const FeatureGrid& image) {
    ad::Tape tape;
    const ForwardResult res = forward(tape, image);
    return tape.val(res.count).data[0];
}

RedundantCountMap Model::predict_window_map(const FeatureGrid& image) {
    ad::Tape tape;
    const ForwardResult res = forward(tape, image);
    RedundantCountMap map = make_count_map(image.height_p, image.width_p, config_.r, config_.output_stride());
    map.values = tape.val(res.window_map).data;
    return map;
}

// ---- checkpoint I/O ----

struct ModelIo {
    static constexpr uint32_t kMagic = 0x4b434350;  // "PCCK"
    static constexpr uint32_t kVersion = 1;

    static void write_u32(std::ostream& out, uint32_t v) {
        unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8),
                              (unsigned char)(v >> 16), (unsigned char)(v >> 24)};
        out.write(reinterpret_cast<char*>(b), 4);
    }
    static uint32_t read_u32(std::istream& in) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
    }
    static void write_string(std::ostream& out, const std::string& s) {
        write_u32(out, uint32_t(s.size()));
        out.write(s.data(), std::streamsize(s.size()));
    }
    static std::string read_string(std::istream& in) {
        const uint32_t n = read_u32(in);
        std::string s(n, '\0');
        in.read(s.data(), n);
        return s;
    }
    static void write_doubles(std::ostream& out, const std::vector<double>& v) {
        write_u32(out, uint32_t(v.size()));
        out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
    }
    static std::vector<double> read_doubles(std::istream& in) {
        const uint32_t n = read_u32(in);
        std::vector<double> v(n);
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
        return v;
    }

    static void save(const Model& m, const std::string& path) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw InvalidArgument("cannot open checkpoint for writing: " + path);
        write_u32(out, kMagic);
        write_u32(out, kVersion);
        write_string(out, m.config_.to_text());

        write_u32(out, uint32_t(m.registry_.size()));
        for (const ad::Param* p : m.registry_) {
            write_string(out, p->name);
            write_u32(out, uint32_t(p->value.shape.size()));
            for (int d : p->value.shape) write_u32(out, uint32_t(d));
            write_doubles(out, p->value.data);
        }

        // reserved section for non-optimized buffers; none at present
        write_u32(out, 0);
        if (!out) throw InvalidArgument("checkpoint write failed: " + path);
    }

    static void load_into(Model& m, std::istream& in) {
        const uint32_t n_params = read_u32(in);
        std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> loaded;
        for (uint32_t i = 0; i < n_params; ++i) {
            const std::string name = read_string(in);
            const uint32_t nd = read_u32(in);
            std::vector<int> shape(nd);
            for (auto& d : shape) d = int(read_u32(in));
            loaded[name] = {shape, read_doubles(in)};
        }
        for (ad::Param* p : m.registry_) {
            auto it = loaded.find(p->name);
            if (it == loaded.end())
                throw InvalidArgument("checkpoint missing parameter: " + p->name);
            if (it->second.first != p->value.shape)
                throw InvalidArgument("checkpoint shape mismatch for parameter: " + p->name);
            p->value.data = it->second.second;
        }

        const uint32_t n_buffers = read_u32(in);
        for (uint32_t i = 0; i < n_buffers; ++i) {
            read_string(in);
            read_doubles(in);
        }
    }

    static std::pair<ModelConfig, std::streampos> read_header(std::istream& in, const std::string& path) {
        if (read_u32(in) != kMagic) throw InvalidArgument("not a checkpoint file: " + path);
        if (read_u32(in) != kVersion) throw InvalidArgument("unsupported checkpoint version: " + path);
        const ModelConfig cfg = ModelConfig::from_text(read_string(in));
        return {cfg, in.tellg()};
    }
};

void Model::save_checkpoint(const std::string& path) const { ModelIo::save(*this, path); }

std::unique_ptr<Model> Model::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open checkpoint: " + path);
    auto [cfg, pos] = ModelIo::read_header(in, path);
    auto model = std::make_unique<Model>(cfg);
    ModelIo::load_into(*model, in);
    if (!in) throw InvalidArgument("truncated checkpoint: " + path);
    return model;
}

void Model::load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open checkpoint: " + path);
    ModelIo::read_header(in, path);
    ModelIo::load_into(*this, in);
    if (!in) throw InvalidArgument("truncated checkpoint: " + path);
}

} // namespace plantcount

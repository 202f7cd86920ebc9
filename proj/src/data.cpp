#include "plantcount/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "plantcount/common.hpp"

namespace fs = std::filesystem;

namespace plantcount {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

constexpr double kSoil[3] = {0.32, 0.26, 0.18};
constexpr double kPlant[3] = {0.22, 0.62, 0.26};

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

Placement placement_from_name(const std::string& name) {
    const std::string n = lower(name);
    if (n == "uniform") return Placement::Uniform;
    if (n == "diagonalband" || n == "diagonal") return Placement::DiagonalBand;
    if (n == "antidiagonalband" || n == "antidiagonal") return Placement::AntiDiagonalBand;
    if (n == "rowband" || n == "row") return Placement::RowBand;
    if (n == "columnband" || n == "column") return Placement::ColumnBand;
    throw InvalidArgument("unknown placement: " + name);
}

const char* placement_name(Placement p) {
    switch (p) {
        case Placement::Uniform: return "Uniform";
        case Placement::DiagonalBand: return "DiagonalBand";
        case Placement::AntiDiagonalBand: return "AntiDiagonalBand";
        case Placement::RowBand: return "RowBand";
        case Placement::ColumnBand: return "ColumnBand";
    }
    return "?";
}

void SynthConfig::validate() const {
    if (height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0)
        throw InvalidArgument("synth config: image dims must be positive multiples of 8");
    if (count_min < 0 || count_max < count_min)
        throw InvalidArgument("synth config: bad count range");
    if (radius_min <= 0.0 || radius_max < radius_min)
        throw InvalidArgument("synth config: bad radius range");
    if (intensity_min < 0.0 || intensity_max < intensity_min)
        throw InvalidArgument("synth config: bad intensity range");
    if (noise_level < 0.0) throw InvalidArgument("synth config: negative noise level");
    if (band_frac <= 0.0 || band_frac > 0.5) throw InvalidArgument("synth config: band_frac out of (0, 0.5]");
    if (margin < 0 || 2 * margin >= std::min(height, width))
        throw InvalidArgument("synth config: margin leaves no room for dots");
}

std::string SynthConfig::to_text() const {
    std::ostringstream out;
    out << "height = " << height << '\n'
        << "width = " << width << '\n'
        << "count_min = " << count_min << '\n'
        << "count_max = " << count_max << '\n'
        << "radius_min = " << fmt_g(radius_min) << '\n'
        << "radius_max = " << fmt_g(radius_max) << '\n'
        << "intensity_min = " << fmt_g(intensity_min) << '\n'
        << "intensity_max = " << fmt_g(intensity_max) << '\n'
        << "noise_level = " << fmt_g(noise_level) << '\n'
        << "placement = " << placement_name(placement) << '\n'
        << "band_frac = " << fmt_g(band_frac) << '\n'
        << "margin = " << margin << '\n'
        << "seed = " << seed << '\n';
    return out.str();
}

SynthConfig SynthConfig::from_text(const std::string& text) {
    SynthConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument("synth config: bad line: " + line);
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t");
            const size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "height") c.height = std::stoi(val);
        else if (key == "width") c.width = std::stoi(val);
        else if (key == "count_min") c.count_min = std::stoi(val);
        else if (key == "count_max") c.count_max = std::stoi(val);
        else if (key == "radius_min") c.radius_min = std::stod(val);
        else if (key == "radius_max") c.radius_max = std::stod(val);
        else if (key == "intensity_min") c.intensity_min = std::stod(val);
        else if (key == "intensity_max") c.intensity_max = std::stod(val);
        else if (key == "noise_level") c.noise_level = std::stod(val);
        else if (key == "placement") c.placement = placement_from_name(val);
        else if (key == "band_frac") c.band_frac = std::stod(val);
        else if (key == "margin") c.margin = std::stoi(val);
        else if (key == "seed") c.seed = std::stoull(val);
        else throw InvalidArgument("synth config: unknown key: " + key);
    }
    c.validate();
    return c;
}

namespace {

std::pair<double, double> draw_dot(const SynthConfig& cfg, Rng& rng) {
    const int H = cfg.height, W = cfg.width;
    const int m = cfg.margin;
    const double bw = cfg.band_frac * std::min(H, W);
    double x = 0.0, y = 0.0;
    switch (cfg.placement) {
        case Placement::Uniform:
            x = double(rng.uniform_int(m, W - 1 - m));
            y = double(rng.uniform_int(m, H - 1 - m));
            return {x, y};
        case Placement::DiagonalBand: {
            // the +-o/2 split keeps |y - x| within the band half-width
            const double t = rng.next_double();
            const double o = rng.uniform(-bw, bw) / 2.0;
            x = t * (W - 1) + o;
            y = t * (H - 1) - o;
            break;
        }
        case Placement::AntiDiagonalBand: {
            const double t = rng.next_double();
            const double o = rng.uniform(-bw, bw) / 2.0;
            x = t * (W - 1) + o;
            y = (1.0 - t) * (H - 1) + o;
            break;
        }
        case Placement::RowBand:
            x = double(rng.uniform_int(0, W - 1));
            y = H / 2.0 + rng.uniform(-bw, bw);
            break;
        case Placement::ColumnBand:
            x = W / 2.0 + rng.uniform(-bw, bw);
            y = double(rng.uniform_int(0, H - 1));
            break;
    }
    x = std::clamp(std::round(x), double(m), double(W - 1 - m));
    y = std::clamp(std::round(y), double(m), double(H - 1 - m));
    return {x, y};
}

} // namespace

std::vector<Sample> gen_synthetic(const SynthConfig& cfg, int n) {
    cfg.validate();
    if (n < 0) throw InvalidArgument("gen_synthetic: negative sample count");

    std::vector<Sample> samples;
    samples.reserve(n);
    Rng base(cfg.seed);
    for (int i = 0; i < n; ++i) {
        Rng rng = base.fork(uint64_t(i));
        Sample s;
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04d.png", i);
        s.id = name;

        // background with per-pixel noise
        std::vector<double> px(size_t(cfg.height) * cfg.width * 3);
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    const double noise = rng.uniform(-cfg.noise_level, cfg.noise_level);
                    px[(size_t(y) * cfg.width + x) * 3 + c] = kSoil[c] + noise;
                }

        const int count = int(rng.uniform_int(cfg.count_min, cfg.count_max));
        for (int d = 0; d < count; ++d) {
            const auto [dx, dy] = draw_dot(cfg, rng);
            s.dots.emplace_back(dx, dy);
            const double radius = rng.uniform(cfg.radius_min, cfg.radius_max);
            const double intensity = rng.uniform(cfg.intensity_min, cfg.intensity_max);
            const double sigma = radius / 2.0;
            const int ext = int(std::ceil(3.0 * sigma));
            const int y0 = std::max(0, int(dy) - ext), y1 = std::min(cfg.height - 1, int(dy) + ext);
            const int x0 = std::max(0, int(dx) - ext), x1 = std::min(cfg.width - 1, int(dx) + ext);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double d2 = (x - dx) * (x - dx) + (y - dy) * (y - dy);
                    const double w = intensity * std::exp(-d2 / (2.0 * sigma * sigma));
                    double* p = px.data() + (size_t(y) * cfg.width + x) * 3;
                    for (int c = 0; c < 3; ++c) p[c] += w * (kPlant[c] - p[c]);
                }
        }

        s.image = Image(cfg.height, cfg.width);
        for (size_t k = 0; k < px.size(); ++k)
            s.image.data[k] = uint8_t(std::lround(std::clamp(px[k], 0.0, 1.0) * 255.0));
        samples.push_back(std::move(s));
    }
    return samples;
}

std::map<std::string, std::vector<std::pair<double, double>>> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open annotations: " + path);
    std::map<std::string, std::vector<std::pair<double, double>>> out;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            header_seen = true;
            if (line.rfind("image,", 0) == 0) continue;  // header row
        }
        std::vector<std::string> fields;
        std::istringstream row(line);
        std::string tok;
        while (std::getline(row, tok, ',')) fields.push_back(tok);
        try {
            if (fields.size() == 3) {
                out[fields[0]].emplace_back(std::stod(fields[1]), std::stod(fields[2]));
            } else if (fields.size() == 5) {
                const double x1 = std::stod(fields[1]), y1 = std::stod(fields[2]);
                const double x2 = std::stod(fields[3]), y2 = std::stod(fields[4]);
                out[fields[0]].emplace_back((x1 + x2) / 2.0, (y1 + y2) / 2.0);
            } else {
                throw InvalidArgument("wrong field count");
            }
        } catch (const std::exception&) {
            throw InvalidArgument(path + ": malformed annotation row at line " + std::to_string(line_no));
        }
    }
    return out;
}

void save_annotations(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write annotations: " + path);
    out << "image,x,y\n";
    char buf[64];
    for (const Sample& s : samples)
        for (const auto& [x, y] : s.dots) {
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g\n", s.id.c_str(), x, y);
            out << buf;
        }
}

Sample crop_augment(const Sample& sample, int size, uint64_t seed) {
    const int H = sample.image.height, W = sample.image.width;
    if (size > H || size > W) throw InvalidArgument("crop_augment: crop larger than image");
    if (size < 8 || size % 8 != 0) throw InvalidArgument("crop_augment: size must be a positive multiple of 8");

    Rng rng(seed);
    const int oy = int(rng.uniform_int(0, H - size));
    const int ox = int(rng.uniform_int(0, W - size));

    Sample out;
    out.id = sample.id;
    out.image = Image(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = sample.image.at(oy + y, ox + x, c);
    for (const auto& [x, y] : sample.dots)
        if (x >= ox && x < ox + size && y >= oy && y < oy + size)
            out.dots.emplace_back(x - ox, y - oy);
    return out;
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples, const std::string& manifest) {
    fs::create_directories(fs::path(dir) / "images");
    for (const Sample& s : samples)
        write_png_rgb((fs::path(dir) / "images" / s.id).string(), s.image);
    save_annotations((fs::path(dir) / "annotations.csv").string(), samples);
    std::ofstream mf(fs::path(dir) / "manifest");
    if (!mf) throw InvalidArgument("cannot write manifest in " + dir);
    mf << manifest;
}

std::vector<Sample> load_dataset(const std::string& dir) {
    const fs::path images = fs::path(dir) / "images";
    if (!fs::is_directory(images)) throw InvalidArgument("dataset has no images/ directory: " + dir);
    auto dots = load_annotations((fs::path(dir) / "annotations.csv").string());

    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(images))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());

    std::vector<Sample> out;
    out.reserve(names.size());
    for (const std::string& name : names) {
        Sample s;
        s.id = name;
        s.image = read_png((images / name).string());
        auto it = dots.find(name);
        if (it != dots.end()) s.dots = it->second;
        for (const auto& [x, y] : s.dots)
            if (!(x >= 0 && x < s.image.width && y >= 0 && y < s.image.height))
                throw InvalidArgument("dot out of bounds for " + name);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace plantcount

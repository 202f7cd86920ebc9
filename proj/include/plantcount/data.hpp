#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "plantcount/image.hpp"

namespace plantcount {

// One counting sample: raster plus plant-center dot annotations.
// Dots are (x, y) pixel coordinates, origin top-left, x = column.
struct Sample {
    std::string id;
    Image image;
    std::vector<std::pair<double, double>> dots;

    int count() const { return int(dots.size()); }
};

enum class Placement { Uniform, DiagonalBand, AntiDiagonalBand, RowBand, ColumnBand };

Placement placement_from_name(const std::string& name);
const char* placement_name(Placement p);

// Synthetic plant-field generator: Gaussian-profile blobs on a noisy soil
// background; exact centers recorded as dots.
struct SynthConfig {
    int height = 128;
    int width = 128;
    int count_min = 0;
    int count_max = 15;
    double radius_min = 2.5;
    double radius_max = 5.0;
    double intensity_min = 0.6;
    double intensity_max = 1.0;
    double noise_level = 0.03;
    Placement placement = Placement::Uniform;
    double band_frac = 0.125;  // half-width of band placements, fraction of min(H, W)
    int margin = 0;            // keep dots at least this many pixels from every border
    uint64_t seed = 1;

    void validate() const;
    std::string to_text() const;
    static SynthConfig from_text(const std::string& text);
};

// Deterministic: per-sample streams derived from (seed, index).
std::vector<Sample> gen_synthetic(const SynthConfig& cfg, int n);

// Annotation CSV. Dot rows: "image,x,y". Bounding-box rows "image,x1,y1,x2,y2"
// are accepted and converted to box centers.
std::map<std::string, std::vector<std::pair<double, double>>> load_annotations(const std::string& path);
void save_annotations(const std::string& path, const std::vector<Sample>& samples);

// Uniformly random crop window; dots are filtered and translated. Deterministic
// in the seed.
Sample crop_augment(const Sample& sample, int size, uint64_t seed);

// Dataset directory: images/*.png + annotations.csv + manifest.
void save_dataset(const std::string& dir, const std::vector<Sample>& samples, const std::string& manifest);
std::vector<Sample> load_dataset(const std::string& dir);

} // namespace plantcount

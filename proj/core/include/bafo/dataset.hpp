#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bafo/attributes.hpp"
#include "bafo/tensor.hpp"

namespace bafo {

// One training example: pixels in [0,1], its concealed-label encoding and a
// stable identifier (the source filename or synthetic id).
struct LabeledImage {
    Tensor pixels;  // [3, S, S]
    AttributeVector attrs;
    std::string source_id;
};

// 85/15 train/test partition, disjoint by source_id. |train| rounds half
// toward train.
struct DatasetSplit {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
    std::uint64_t seed = 0;
};

std::int64_t train_count_for(std::int64_t total);

// Parses the `<age>_<gender>_<race>_<tail>` label grammar of a dataset
// filename. Throws ParseError naming the malformed field.
AttributeVector parse_label_filename(const std::string& name);

struct LoadStats {
    int loaded = 0;
    int skipped = 0;
    std::vector<std::string> skip_reasons;
};

// Loads every parseable PNG/PPM/JPEG in `dir`, center-crops to square,
// area-averages down to image_side and splits 85/15 with the seeded shuffle.
// Malformed filenames or undecodable files are skipped and logged, not
// fatal; a directory with zero usable files is a ConfigError.
DatasetSplit load_dataset(const std::filesystem::path& dir, int image_side,
                          std::uint64_t split_seed,
                          LoadStats* stats = nullptr);

// Center-crop to square followed by coverage-weighted box downsampling.
Tensor crop_resize(const Tensor& image, int side);

// --- synthetic data ----------------------------------------------------------

// Deterministic attribute-to-image renderer for desk-scale experiments:
//   gender 0 -> filled circle, 1 -> filled square
//   age     -> glyph radius, linear from 20% to 45% of the image side
//   origin  -> one of 5 fixed saturated hues
// The background is mid-gray with per-pixel texture noise drawn from
// noise_seed only, so the noise field never depends on the attributes. Every
// attribute is trivially decodable from clean pixels, which is exactly what
// makes latent leakage measurable.
Tensor synth_render(const AttributeVector& attrs, int image_side,
                    std::uint64_t noise_seed);

// Samples n attribute vectors, renders them and returns the standard 85/15
// split. Bit-identical for identical (n, image_side, seed).
DatasetSplit synth_generate(int n, int image_side, std::uint64_t seed);

// Analytic ground-truth classifier for synthetic renders. Not learned: the
// glyph mask is recovered by color, the class by its corner occupancy, the
// radius from the mask area and the hue by nearest prototype. Recovers
// gender and origin exactly on clean renders; age up to rasterization error.
struct OracleReading {
    int gender = 0;
    int origin = 0;
    double age_norm = 0.0;
};
OracleReading synth_oracle_classify(const Tensor& image);

// The fixed glyph hues, exposed for tests.
const std::array<std::array<double, 3>, kOriginClasses>& synth_hues();

}  // namespace bafo

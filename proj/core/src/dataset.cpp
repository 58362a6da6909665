#include "bafo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "bafo/image_io.hpp"
#include "bafo/rng.hpp"

namespace bafo {

std::int64_t train_count_for(std::int64_t total) {
    // round(0.85 * N), half rounding toward train
    return static_cast<std::int64_t>(std::floor(0.85 * static_cast<double>(total) + 0.5));
}

namespace {

int parse_int_field(const std::string& token, const char* field, int lo,
                    int hi) {
    if (token.empty() ||
        !std::all_of(token.begin(), token.end(),
                     [](unsigned char c) { return std::isdigit(c); })) {
        throw ParseError(field, std::string("field '") + field + "' is not a number: '" +
                                    token + "'");
    }
    long v = 0;
    try {
        v = std::stol(token);
    } catch (const std::exception&) {
        throw ParseError(field, std::string("field '") + field + "' out of range: '" +
                                    token + "'");
    }
    if (v < lo || v > hi) {
        throw ParseError(field, std::string("field '") + field + "' value " +
                                    std::to_string(v) + " outside " +
                                    std::to_string(lo) + ".." + std::to_string(hi));
    }
    return static_cast<int>(v);
}

std::vector<std::string> split_fields(const std::string& stem) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (parts.size() < 3) {
        std::size_t next = stem.find('_', pos);
        if (next == std::string::npos) break;
        parts.push_back(stem.substr(pos, next - pos));
        pos = next + 1;
    }
    parts.push_back(stem.substr(pos));  // tail
    return parts;
}

void shuffle_indices(std::vector<std::size_t>& idx, Pcg32& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = rng.next_below(static_cast<std::uint32_t>(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

DatasetSplit split_85_15(std::vector<LabeledImage> items, std::uint64_t seed) {
    std::vector<std::size_t> idx(items.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Pcg32 rng(seed);
    shuffle_indices(idx, rng);
    std::int64_t n_train = train_count_for(static_cast<std::int64_t>(items.size()));
    DatasetSplit split;
    split.seed = seed;
    split.train.reserve(static_cast<std::size_t>(n_train));
    split.test.reserve(items.size() - static_cast<std::size_t>(n_train));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        auto& dst = (static_cast<std::int64_t>(k) < n_train) ? split.train : split.test;
        dst.push_back(std::move(items[idx[k]]));
    }
    return split;
}

}  // namespace

AttributeVector parse_label_filename(const std::string& name) {
    std::string base = std::filesystem::path(name).filename().string();
    std::vector<std::string> parts = split_fields(base);
    if (parts.size() != 4 || parts[3].empty()) {
        throw ParseError("name", "filename '" + base +
                                     "' does not match <age>_<gender>_<race>_<tail>");
    }
    int age = parse_int_field(parts[0], "age", 0, kMaxAge);
    int gender = parse_int_field(parts[1], "gender", 0, 1);
    int race = parse_int_field(parts[2], "race", 0, kOriginClasses - 1);
    return AttributeVector::from_labels(age, gender, race);
}

Tensor crop_resize(const Tensor& image, int side) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("crop_resize expects [3,H,W], got " +
                             shape_to_string(image.shape()));
    }
    std::int64_t h = image.dim(1), w = image.dim(2);
    std::int64_t crop = std::min(h, w);
    std::int64_t y0 = (h - crop) / 2;
    std::int64_t x0 = (w - crop) / 2;
    double scale = static_cast<double>(crop) / side;

    std::vector<double> out(static_cast<std::size_t>(3) * side * side);
    for (int c = 0; c < 3; ++c) {
        for (int ty = 0; ty < side; ++ty) {
            double sy0 = ty * scale, sy1 = (ty + 1) * scale;
            std::int64_t iy0 = static_cast<std::int64_t>(std::floor(sy0));
            std::int64_t iy1 = std::min<std::int64_t>(
                crop, static_cast<std::int64_t>(std::ceil(sy1)));
            for (int tx = 0; tx < side; ++tx) {
                double sx0 = tx * scale, sx1 = (tx + 1) * scale;
                std::int64_t ix0 = static_cast<std::int64_t>(std::floor(sx0));
                std::int64_t ix1 = std::min<std::int64_t>(
                    crop, static_cast<std::int64_t>(std::ceil(sx1)));
                double acc = 0.0;
                for (std::int64_t iy = iy0; iy < iy1; ++iy) {
                    double wy = std::min<double>(iy + 1, sy1) -
                                std::max<double>(iy, sy0);
                    for (std::int64_t ix = ix0; ix < ix1; ++ix) {
                        double wx = std::min<double>(ix + 1, sx1) -
                                    std::max<double>(ix, sx0);
                        acc += wy * wx *
                               image.at((c * h + (y0 + iy)) * w + (x0 + ix));
                    }
                }
                out[(static_cast<std::size_t>(c) * side + ty) * side + tx] =
                    acc / (scale * scale);
            }
        }
    }
    return Tensor::from_values({3, side, side}, out);
}

DatasetSplit load_dataset(const std::filesystem::path& dir, int image_side,
                          std::uint64_t split_seed, LoadStats* stats) {
    if (!std::filesystem::exists(dir) || !std::filesystem::is_directory(dir)) {
        throw IoError("dataset directory not readable: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".ppm" || ext == ".jpg" || ext == ".jpeg") {
            files.push_back(entry.path());
        }
    }
    // Canonical order before the seeded shuffle, so directory iteration
    // order never changes the split.
    std::sort(files.begin(), files.end());

    LoadStats local;
    std::vector<LabeledImage> items;
    for (const auto& path : files) {
        try {
            LabeledImage img;
            img.attrs = parse_label_filename(path.filename().string());
            img.pixels = crop_resize(image_read(path), image_side);
            img.source_id = path.filename().string();
            items.push_back(std::move(img));
            ++local.loaded;
        } catch (const Error& e) {
            ++local.skipped;
            local.skip_reasons.push_back(path.filename().string() + ": " +
                                         e.what());
            std::cerr << "skipping " << path.filename().string() << ": "
                      << e.what() << "\n";
        }
    }
    if (stats) *stats = local;
    if (items.empty()) {
        throw ConfigError("no usable labeled images in " + dir.string());
    }
    return split_85_15(std::move(items), split_seed);
}

// --- synthetic data ----------------------------------------------------------

const std::array<std::array<double, 3>, kOriginClasses>& synth_hues() {
    static const std::array<std::array<double, 3>, kOriginClasses> hues = {{
        {0.9, 0.1, 0.1},  // red
        {0.1, 0.9, 0.1},  // green
        {0.1, 0.1, 0.9},  // blue
        {0.9, 0.9, 0.1},  // yellow
        {0.9, 0.1, 0.9},  // magenta
    }};
    return hues;
}

namespace {

constexpr double kGlyphMinRadius = 0.20;  // fraction of image side
constexpr double kGlyphMaxRadius = 0.45;
constexpr double kNoiseAmplitude = 0.08;

double glyph_radius(double age_norm, int side) {
    return (kGlyphMinRadius + (kGlyphMaxRadius - kGlyphMinRadius) * age_norm) *
           side;
}

}  // namespace

Tensor synth_render(const AttributeVector& attrs, int image_side,
                    std::uint64_t noise_seed) {
    attrs.validate();
    const int side = image_side;
    const double c = side / 2.0;
    const double r = glyph_radius(attrs.age_norm, side);
    const bool square = attrs.gender >= 0.5;
    int hue_idx = 0;
    for (int i = 1; i < kOriginClasses; ++i) {
        if (attrs.origin[i] > attrs.origin[hue_idx]) hue_idx = i;
    }
    const auto& hue = synth_hues()[hue_idx];

    Pcg32 noise(noise_seed);
    std::vector<double> img(static_cast<std::size_t>(3) * side * side);
    // Background first so the noise stream is a pure function of noise_seed.
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            double gray = 0.5 + (2.0 * noise.next_double() - 1.0) * kNoiseAmplitude;
            for (int ch = 0; ch < 3; ++ch) {
                img[(static_cast<std::size_t>(ch) * side + y) * side + x] = gray;
            }
        }
    }
    for (int y = 0; y < side; ++y) {
        double dy = y + 0.5 - c;
        for (int x = 0; x < side; ++x) {
            double dx = x + 0.5 - c;
            bool inside = square ? (std::abs(dx) <= r && std::abs(dy) <= r)
                                 : (dx * dx + dy * dy <= r * r);
            if (inside) {
                for (int ch = 0; ch < 3; ++ch) {
                    img[(static_cast<std::size_t>(ch) * side + y) * side + x] =
                        hue[ch];
                }
            }
        }
    }
    return Tensor::from_values({3, side, side}, img);
}

OracleReading synth_oracle_classify(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("oracle expects [3,S,S], got " +
                             shape_to_string(image.shape()));
    }
    const std::int64_t side = image.dim(1);
    const double c = side / 2.0;

    double area = 0.0;
    double extent = 0.0;   // max per-axis offset of any glyph pixel
    double diagonal = 0.0; // max |dx|+|dy|, separates squares from circles
    double sum_rgb[3] = {0, 0, 0};
    for (std::int64_t y = 0; y < side; ++y) {
        double dy = y + 0.5 - c;
        for (std::int64_t x = 0; x < side; ++x) {
            double dx = x + 0.5 - c;
            double r = image.at((0 * side + y) * side + x);
            double g = image.at((1 * side + y) * side + x);
            double b = image.at((2 * side + y) * side + x);
            if (std::max({r, g, b}) < 0.75) continue;  // background
            area += 1.0;
            extent = std::max({extent, std::abs(dx), std::abs(dy)});
            diagonal = std::max(diagonal, std::abs(dx) + std::abs(dy));
            sum_rgb[0] += r;
            sum_rgb[1] += g;
            sum_rgb[2] += b;
        }
    }
    OracleReading out;
    if (area == 0.0) return out;

    // Circles top out at |dx|+|dy| = r*sqrt(2); square corners reach 2r.
    out.gender = (diagonal / extent > 1.65) ? 1 : 0;

    double radius = out.gender == 1 ? std::sqrt(area) / 2.0
                                    : std::sqrt(area / 3.14159265358979323846);
    double frac = radius / static_cast<double>(side);
    out.age_norm = std::clamp(
        (frac - kGlyphMinRadius) / (kGlyphMaxRadius - kGlyphMinRadius), 0.0, 1.0);

    double best = 1e9;
    for (int i = 0; i < kOriginClasses; ++i) {
        const auto& hue = synth_hues()[i];
        double d = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            double mean = sum_rgb[ch] / area;
            d += (mean - hue[ch]) * (mean - hue[ch]);
        }
        if (d < best) {
            best = d;
            out.origin = i;
        }
    }
    return out;
}

DatasetSplit synth_generate(int n, int image_side, std::uint64_t seed) {
    if (n < 20) {
        throw ConfigError("synthetic dataset needs at least 20 images, got " +
                          std::to_string(n));
    }
    if (image_side < 8) {
        throw ConfigError("image side too small: " + std::to_string(image_side));
    }
    Pcg32 master(seed);
    std::vector<LabeledImage> items;
    items.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        // Noise seed drawn before the attributes: relabeling an image leaves
        // its background texture untouched.
        std::uint64_t noise_seed = master.next_u64();
        int gender = static_cast<int>(master.next_below(2));
        int age = static_cast<int>(master.next_below(kMaxAge + 1));
        int race = static_cast<int>(master.next_below(kOriginClasses));
        LabeledImage img;
        img.attrs = AttributeVector::from_labels(age, gender, race);
        img.pixels = synth_render(img.attrs, image_side, noise_seed);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth_%05d", i);
        img.source_id = buf;
        items.push_back(std::move(img));
    }
    std::uint64_t split_seed = master.next_u64();
    return split_85_15(std::move(items), split_seed);
}

}  // namespace bafo

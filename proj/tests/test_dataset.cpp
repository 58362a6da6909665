#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "bafo/dataset.hpp"
#include "bafo/image_io.hpp"
#include "bafo/rng.hpp"

using namespace bafo;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / name;
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("filename label grammar") {
    AttributeVector a = parse_label_filename("40_1_2_x.jpg");
    CHECK(a.age_norm == doctest::Approx(40.0 / 116.0));
    CHECK(a.gender == 1.0);
    CHECK(a.origin[2] == 1.0);
    CHECK(a.origin[0] == 0.0);

    AttributeVector b = parse_label_filename("0_0_0_x.jpg");
    CHECK(b.age_norm == 0.0);
    CHECK(b.gender == 0.0);
    CHECK(b.origin[0] == 1.0);

    // ages above the dataset range are rejected, naming the field
    try {
        parse_label_filename("200_0_0_x.jpg");
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(e.field() == "age");
    }
    CHECK_THROWS_AS(parse_label_filename("41_7_0_x.jpg"), ParseError);
    CHECK_THROWS_AS(parse_label_filename("41_1_9_x.jpg"), ParseError);
    CHECK_THROWS_AS(parse_label_filename("banana.png"), ParseError);
    CHECK_THROWS_AS(parse_label_filename("12_1.png"), ParseError);

    // tails with underscores are fine
    AttributeVector c = parse_label_filename("86_1_0_20170120225751953.jpg.chip.jpg");
    CHECK(c.age_norm == doctest::Approx(86.0 / 116.0));
}

TEST_CASE("train/test split honors the 85/15 ratio") {
    CHECK(train_count_for(100) == 85);
    CHECK(train_count_for(20) == 17);
    CHECK(train_count_for(1000) == 850);
    // .5 cases round toward train
    CHECK(train_count_for(10) == 9);
    CHECK(train_count_for(30) == 26);  // 25.5 -> 26

    for (int n = 20; n <= 1000; n += 7) {
        std::int64_t t = train_count_for(n);
        double exact = 0.85 * n;
        CHECK(std::abs(t - exact) <= 0.5);
    }
}

TEST_CASE("synthetic generation is bit-deterministic") {
    set_engine_mode(NumericMode::f32);
    DatasetSplit a = synth_generate(40, 28, 5);
    DatasetSplit b = synth_generate(40, 28, 5);
    REQUIRE(a.train.size() == b.train.size());
    CHECK(a.train.size() == 34);  // 85% of 40
    CHECK(a.test.size() == 6);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].source_id == b.train[i].source_id);
        CHECK(a.train[i].pixels.same_values(b.train[i].pixels));
        CHECK(a.train[i].attrs == b.train[i].attrs);
    }
    DatasetSplit c = synth_generate(40, 28, 6);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        if (a.train[i].source_id != c.train[i].source_id) any_diff = true;
    }
    CHECK(any_diff);

    CHECK_THROWS_AS(synth_generate(19, 28, 1), ConfigError);
}

TEST_CASE("train and test are disjoint by source id") {
    DatasetSplit split = synth_generate(120, 28, 9);
    std::set<std::string> ids;
    for (const auto& img : split.train) ids.insert(img.source_id);
    for (const auto& img : split.test) CHECK(ids.count(img.source_id) == 0);
    CHECK(ids.size() == split.train.size());
}

TEST_CASE("renderer is pure and noise ignores the attributes") {
    AttributeVector attrs = AttributeVector::from_labels(50, 1, 3);
    Tensor r1 = synth_render(attrs, 28, 1234);
    Tensor r2 = synth_render(attrs, 28, 1234);
    CHECK(r1.same_values(r2));

    // flipping every attribute keeps the background texture bit-identical
    AttributeVector other = AttributeVector::from_labels(50, 0, 1);
    Tensor r3 = synth_render(other, 28, 1234);
    std::int64_t side = 28;
    for (std::int64_t y = 0; y < side; ++y) {
        for (std::int64_t x = 0; x < side; ++x) {
            bool glyph1 = false, glyph3 = false;
            for (int c = 0; c < 3; ++c) {
                if (r1.at((c * side + y) * side + x) > 0.75) glyph1 = true;
                if (r3.at((c * side + y) * side + x) > 0.75) glyph3 = true;
            }
            if (!glyph1 && !glyph3) {
                for (int c = 0; c < 3; ++c) {
                    CHECK(r1.at((c * side + y) * side + x) ==
                          r3.at((c * side + y) * side + x));
                }
            }
        }
    }
}

TEST_CASE("analytic oracle recovers every discrete attribute exactly") {
    // all gender x origin combinations over a spread of ages, both sides
    for (int side : {28, 56}) {
        int age_errors = 0;
        double age_se = 0.0;
        int count = 0;
        for (int gender = 0; gender <= 1; ++gender) {
            for (int origin = 0; origin < kOriginClasses; ++origin) {
                for (int age = 0; age <= 116; age += 4) {
                    AttributeVector attrs =
                        AttributeVector::from_labels(age, gender, origin);
                    Tensor img = synth_render(
                        attrs, side,
                        static_cast<std::uint64_t>(age * 31 + origin * 7 + gender));
                    OracleReading read = synth_oracle_classify(img);
                    CHECK(read.gender == gender);
                    CHECK(read.origin == origin);
                    double err_years = (read.age_norm - attrs.age_norm) * kMaxAge;
                    age_se += err_years * err_years;
                    if (std::abs(err_years) > 12.0) ++age_errors;
                    ++count;
                }
            }
        }
        double rmse = std::sqrt(age_se / count);
        CHECK(rmse < (side == 28 ? 6.0 : 3.5));  // rasterization floor
        CHECK(age_errors == 0);
    }
}

TEST_CASE("oracle example: max-radius square in hue 3") {
    AttributeVector attrs;
    attrs.age_norm = 1.0;
    attrs.gender = 1.0;
    attrs.origin.fill(0.0);
    attrs.origin[3] = 1.0;
    Tensor img = synth_render(attrs, 28, 77);
    OracleReading read = synth_oracle_classify(img);
    CHECK(read.gender == 1);
    CHECK(read.origin == 3);
    CHECK(read.age_norm > 0.9);
}

TEST_CASE("png round trip stays within one quantization step") {
    set_engine_mode(NumericMode::f32);
    TempDir dir("bafo_png_test");
    Pcg32 rng(3);
    std::vector<double> v(3 * 17 * 23);
    for (double& x : v) x = rng.next_double();
    Tensor img = Tensor::from_values({3, 17, 23}, v);

    fs::path png = dir.path / "t.png";
    image_write(png, img);
    Tensor back = image_read(png);
    REQUIRE(back.shape() == img.shape());
    for (std::int64_t i = 0; i < img.size(); ++i) {
        CHECK(std::abs(back.at(i) - img.at(i)) <= 1.0 / 255 + 1e-6);
    }
}

TEST_CASE("ppm round trip and cross-format agreement") {
    set_engine_mode(NumericMode::f32);
    TempDir dir("bafo_ppm_test");
    Pcg32 rng(4);
    std::vector<double> v(3 * 9 * 11);
    for (double& x : v) x = rng.next_double();
    Tensor img = Tensor::from_values({3, 9, 11}, v);

    fs::path ppm = dir.path / "t.ppm";
    fs::path png = dir.path / "t.png";
    image_write(ppm, img);
    image_write(png, img);
    Tensor from_ppm = image_read(ppm);
    Tensor from_png = image_read(png);
    for (std::int64_t i = 0; i < img.size(); ++i) {
        CHECK(std::abs(from_ppm.at(i) - img.at(i)) <= 1.0 / 255 + 1e-6);
        CHECK(std::abs(from_ppm.at(i) - from_png.at(i)) <= 1.0 / 255 + 1e-6);
    }
}

TEST_CASE("codec errors") {
    TempDir dir("bafo_codec_err");
    fs::path not_an_image = dir.path / "x.png";
    std::ofstream(not_an_image) << "this is not a png";
    CHECK_THROWS_AS(image_read(not_an_image), CodecError);
    CHECK_THROWS_AS(image_read(dir.path / "missing.png"), IoError);
    Tensor img = Tensor::zeros({3, 4, 4});
    CHECK_THROWS_AS(image_write(dir.path / "x.bmp", img), CodecError);

    fs::path bad_ppm = dir.path / "bad.ppm";
    std::ofstream(bad_ppm) << "P3\n2 2\n255\n1 2 3 4";  // truncated samples
    CHECK_THROWS_AS(image_read(bad_ppm), CodecError);
}

TEST_CASE("load_dataset skips malformed files and stays deterministic") {
    set_engine_mode(NumericMode::f32);
    TempDir dir("bafo_load_test");
    DatasetSplit synth = synth_generate(24, 28, 31);
    int idx = 0;
    auto write_all = [&](const std::vector<LabeledImage>& items) {
        for (const auto& img : items) {
            int race = 0;
            for (int i = 1; i < kOriginClasses; ++i) {
                if (img.attrs.origin[i] > img.attrs.origin[race]) race = i;
            }
            std::string name = std::to_string(img.attrs.age_years()) + "_" +
                               std::to_string(int(std::lround(img.attrs.gender))) +
                               "_" + std::to_string(race) + "_" +
                               std::to_string(idx++) + ".png";
            image_write(dir.path / name, img.pixels);
        }
    };
    write_all(synth.train);
    write_all(synth.test);
    // two malformed names and one corrupt file
    image_write(dir.path / "137_0_0_tooold.png", synth.train[0].pixels);
    image_write(dir.path / "nolabel.png", synth.train[0].pixels);
    std::ofstream(dir.path / "3_0_0_corrupt.png") << "junk";

    LoadStats stats;
    DatasetSplit split = load_dataset(dir.path, 28, 7, &stats);
    CHECK(stats.loaded == 24);
    CHECK(stats.skipped == 3);
    CHECK(split.train.size() == 20);  // 85% of 24 -> 20.4 -> 20
    CHECK(split.test.size() == 4);

    DatasetSplit again = load_dataset(dir.path, 28, 7);
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        CHECK(split.train[i].source_id == again.train[i].source_id);
    }
    DatasetSplit other = load_dataset(dir.path, 28, 8);
    bool differs = false;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        if (split.train[i].source_id != other.train[i].source_id) differs = true;
    }
    CHECK(differs);

    CHECK_THROWS_AS(load_dataset(dir.path / "nope", 28, 1), IoError);
}

TEST_CASE("crop_resize averages areas and keeps range") {
    set_engine_mode(NumericMode::f32);
    // 4x4 checkerboard of 0/1 halves both dims -> every target pixel 0.5
    std::vector<double> v(3 * 4 * 4);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                v[(c * 4 + y) * 4 + x] = (x + y) % 2;
            }
        }
    }
    Tensor img = Tensor::from_values({3, 4, 4}, v);
    Tensor small = crop_resize(img, 2);
    CHECK(small.shape() == Shape{3, 2, 2});
    for (std::int64_t i = 0; i < small.size(); ++i) {
        CHECK(small.at(i) == doctest::Approx(0.5));
    }

    // non-square input center-crops before resampling
    std::vector<double> wide(3 * 2 * 6, 1.0);
    Tensor w = Tensor::from_values({3, 2, 6}, wide);
    Tensor cropped = crop_resize(w, 2);
    CHECK(cropped.shape() == Shape{3, 2, 2});
    CHECK(cropped.at(0) == doctest::Approx(1.0));
}

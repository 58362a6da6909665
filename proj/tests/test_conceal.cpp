#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "bafo/conceal.hpp"
#include "bafo/cvae.hpp"
#include "bafo/dataset.hpp"

#include "../core/src/sha256.hpp"

using namespace bafo;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    CvaeModel model;
    Tensor image;

    Fixture() {
        set_engine_mode(NumericMode::f32);
        CvaeConfig config;
        config.latent_dim = 6;
        config.image_side = 28;
        config.seed = 19;
        config.numeric_mode = NumericMode::f32;
        model = make_cvae_model(config, 4);
        DatasetSplit data = synth_generate(20, 28, 42);
        image = stack_pixels({&data.train.front(), 1});
    }
};

double l2(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        double d = a.at(i) - b.at(i);
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("fingerprint hash matches the reference vectors") {
    auto hex = [](const std::array<std::uint8_t, 32>& h) {
        std::string s;
        char b[3];
        for (auto v : h) {
            std::snprintf(b, sizeof(b), "%02x", v);
            s += b;
        }
        return s;
    };
    auto digest = [&](const std::string& msg) {
        return hex(sha256(reinterpret_cast<const std::uint8_t*>(msg.data()),
                          msg.size()));
    };
    CHECK(digest("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(digest("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(digest("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("conceal mean mode is deterministic and attribute-free") {
    Fixture f;
    ConcealedRecord r1 = conceal(f.model, f.image);
    ConcealedRecord r2 = conceal(f.model, f.image);
    CHECK(r1 == r2);
    CHECK(r1.z.shape() == Shape{6});
    CHECK(!r1.sampled);

    // sample mode differs from mean mode and across seeds, reproduces per seed
    ConcealedRecord s1 = conceal(f.model, f.image, ConcealMode::Sample, 100);
    ConcealedRecord s2 = conceal(f.model, f.image, ConcealMode::Sample, 100);
    ConcealedRecord s3 = conceal(f.model, f.image, ConcealMode::Sample, 101);
    CHECK(s1 == s2);
    CHECK(!s1.z.same_values(s3.z));
    CHECK(!s1.z.same_values(r1.z));
    CHECK(s1.sampled);
}

TEST_CASE("record serialization carries latents and provenance only") {
    Fixture f;
    ConcealedRecord record = conceal(f.model, f.image, ConcealMode::Mean, 0,
                                     "sample_007", 1234);
    std::vector<std::uint8_t> bytes = serialize_record(record);

    // payload is exactly d little-endian floats after magic+fingerprint
    std::size_t header = 4 + 32 + 4;
    std::uint32_t d = 0;
    for (int i = 0; i < 4; ++i) d |= std::uint32_t(bytes[36 + i]) << (8 * i);
    CHECK(d == 6);
    CHECK(bytes.size() > header + 6 * 4);

    // scanned as generic key/value data: no attribute key anywhere
    auto meta = record_metadata(bytes);
    std::set<std::string> forbidden = {"age", "gender", "race", "origin",
                                       "age_norm"};
    for (const auto& [key, value] : meta) {
        CHECK(forbidden.count(key) == 0);
    }
    bool has_source = false;
    for (const auto& [key, value] : meta) {
        if (key == "source_id") {
            has_source = true;
            CHECK(value == "sample_007");
        }
    }
    CHECK(has_source);
}

TEST_CASE("record files round trip") {
    Fixture f;
    fs::path dir = fs::temp_directory_path() / "bafo_record_test";
    fs::create_directories(dir);
    ConcealedRecord record = conceal(f.model, f.image, ConcealMode::Mean, 0,
                                     "img.png", 99);
    fs::path path = dir / "r.bfr";
    save_record(record, path);
    ConcealedRecord back = load_record(path);
    CHECK(back == record);
    CHECK(back.created_at == 99);

    // truncated file is rejected with an offset
    std::vector<std::uint8_t> bytes = serialize_record(record);
    fs::path bad = dir / "bad.bfr";
    {
        std::ofstream out(bad, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_record(bad), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("reveal rejects records from another model") {
    Fixture f;
    ConcealedRecord record = conceal(f.model, f.image);

    CvaeConfig other_config = f.model.config;
    other_config.seed = 77;
    CvaeModel other = make_cvae_model(other_config, 4);
    AttributeVector target = AttributeVector::from_labels(40, 1, 2);
    CHECK_THROWS_AS(reveal(other, record, target), WrongModelError);
    CHECK_NOTHROW(reveal(f.model, record, target));
}

TEST_CASE("reveal is deterministic and distinct across targets") {
    Fixture f;
    ConcealedRecord record = conceal(f.model, f.image);

    AttributeVector target = AttributeVector::from_labels(40, 1, 2);
    Tensor a = reveal(f.model, record, target);
    Tensor b = reveal(f.model, record, target);
    CHECK(a.same_values(b));
    CHECK(a.shape() == Shape{1, 3, 28, 28});

    // the standard target sweep: 5 ages x 2 genders -> 10 distinct images
    std::vector<Tensor> images;
    for (int age : {1, 20, 40, 60, 80}) {
        for (int g = 0; g <= 1; ++g) {
            AttributeVector t = AttributeVector::from_labels(age, g, 2);
            images.push_back(reveal(f.model, record, t));
        }
    }
    CHECK(images.size() == 10);
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (std::size_t j = i + 1; j < images.size(); ++j) {
            CHECK(l2(images[i], images[j]) > 0.0);
        }
    }

    // neutral decoding is supported (quality caveats aside)
    AttributeVector neutral = AttributeVector::neutral_at_age(40);
    Tensor n = reveal(f.model, record, neutral);
    CHECK(n.all_finite());
}

TEST_CASE("grid layout and determinism") {
    Fixture f;
    AttributeVector origin = AttributeVector::from_labels(0, 0, 2);

    Tensor grid = render_grid(f.model, f.image, {1, 20, 40, 60, 80}, {0.0, 1.0},
                              origin);
    // one row per gender, ages plus the leading original column
    CHECK(grid.shape() == Shape{3, 2 * 28, 6 * 28});

    Tensor single = render_grid(f.model, f.image, {40}, {1.0}, origin);
    CHECK(single.shape() == Shape{3, 28, 2 * 28});

    Tensor again = render_grid(f.model, f.image, {40}, {1.0}, origin);
    CHECK(single.same_values(again));

    CHECK_THROWS_AS(render_grid(f.model, f.image, {}, {0.0}, origin),
                    ConfigError);
}
